//! Gain-design and sampling/trigger bounds.
//!
//! All bounds come from requiring the node-level passivity shortage
//! `l²/α²` (continuous) or `l²/α² + T_s·l/α` (sampled) to be compensated by
//! the coupling: per node, `β·(shortage)·d_in < ½`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::{laplacian, GraphSchedule, WeightedDigraph};

/// Relative threshold (against the largest eigenvalue) under which an
/// eigenvalue of `L + Lᵀ` is treated as zero.
pub const EIG_ZERO_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateMethod {
    Centralized,
    Distributed,
    Sampled,
    Heuristic,
}

impl CertificateMethod {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Centralized => "centralized",
            Self::Distributed => "distributed",
            Self::Sampled => "sampled",
            Self::Heuristic => "heuristic",
        }
    }
}

/// Per-node margins `½ - β(l²/α² + T_s·l/α)·d_in` for a gain choice.
#[derive(Debug, Clone, PartialEq)]
pub struct GainCertificate {
    pub alpha: f64,
    pub beta: f64,
    pub ts: f64,
    pub per_node_margin: Vec<f64>,
    pub method: CertificateMethod,
    /// Largest sampling period keeping every margin positive at this `β`
    /// (`None` when some node has no admissible period at all).
    pub ts_supremum: Option<f64>,
}

impl GainCertificate {
    pub fn is_valid(&self) -> bool {
        self.per_node_margin.iter().all(|&m| m > 0.0)
    }

    pub fn min_margin(&self) -> f64 {
        self.per_node_margin.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("alpha = {alpha} must be positive")))
    }
}

/// Smallest positive and largest eigenvalue of the symmetrised Laplacian,
/// and the largest eigenvalue of `Lᵀ diag(l²) L`, for one graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentSpectrum {
    pub sym_min_positive: f64,
    pub sym_max: f64,
    pub weighted_max: f64,
}

pub fn segment_spectrum(g: &WeightedDigraph, l: &[f64]) -> Result<SegmentSpectrum> {
    let lap = laplacian(g);
    let sym = &lap + lap.transpose();
    let eig = sym.symmetric_eigenvalues();
    let sym_max = eig.max();
    if !(sym_max > 0.0) {
        return Err(Error::InvalidQuery("condition undefined on edgeless segment".into()));
    }
    let zero = EIG_ZERO_REL_TOL * sym_max;
    let sym_min_positive = eig.iter().copied().filter(|&e| e > zero).fold(f64::INFINITY, f64::min);
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(l.len(), l.iter().map(|x| x * x)));
    let weighted = lap.transpose() * d * &lap;
    // Symmetrise against roundoff before the symmetric solver.
    let weighted = 0.5 * (&weighted + weighted.transpose());
    Ok(SegmentSpectrum {
        sym_min_positive,
        sym_max,
        weighted_max: weighted.symmetric_eigenvalues().max(),
    })
}

/// Supremum admissible `β` from the centralized eigenvalue condition,
/// minimised over all schedule segments.
pub fn beta_bound_centralized(schedule: &GraphSchedule, l: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if l.len() != schedule.n() {
        return Err(Error::Parameter(format!("{} Lipschitz values for {} nodes", l.len(), schedule.n())));
    }
    if l.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Parameter("Lipschitz values must be positive".into()));
    }
    let mut bound = f64::INFINITY;
    let mut seen: Vec<&WeightedDigraph> = Vec::new();
    for seg in schedule.segments() {
        if seen.contains(&&seg.graph) {
            continue;
        }
        seen.push(&seg.graph);
        let s = segment_spectrum(&seg.graph, l)?;
        bound = bound.min(alpha * alpha * s.sym_min_positive / (2.0 * s.weighted_max));
    }
    Ok(bound)
}

/// `min_i α² / (2 l_i² d_in_i)` over nodes that ever receive.
pub fn beta_bound_distributed(l: &[f64], din_sup: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if l.len() != din_sup.len() {
        return Err(Error::Parameter(format!("{} Lipschitz values, {} in-degrees", l.len(), din_sup.len())));
    }
    let bound = l
        .iter()
        .zip(din_sup)
        .filter(|(_, &d)| d > 0.0)
        .map(|(&li, &d)| alpha * alpha / (2.0 * li * li * d))
        .fold(f64::INFINITY, f64::min);
    if bound.is_infinite() {
        return Err(Error::InvalidQuery("no node ever has an in-neighbour".into()));
    }
    Ok(bound)
}

/// The offline heuristic `α² / (2·max_i l_i·(N - 1))` for weights `≤ 1`.
///
/// `l` enters unsquared, unlike [`beta_bound_distributed`], so the two are not
/// ordered in general.
pub fn beta_bound_heuristic(l: &[f64], n: usize, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if n < 2 {
        return Err(Error::Parameter(format!("heuristic needs n >= 2, got {n}")));
    }
    let lmax = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(alpha * alpha / (2.0 * lmax * (n as f64 - 1.0)))
}

/// Sampled-communication shortage `l²/α² + T_s·l/α`.
#[inline]
pub fn sampled_shortage(l: f64, alpha: f64, ts: f64) -> f64 {
    l * l / (alpha * alpha) + ts * l / alpha
}

/// Certificate for the sampled condition; `ts = 0` gives the continuous one.
pub fn sampling_admissible(l: &[f64], din_sup: &[f64], alpha: f64, beta: f64, ts: f64) -> Result<GainCertificate> {
    check_alpha(alpha)?;
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::Parameter(format!("beta = {beta} must be positive")));
    }
    if !(ts.is_finite() && ts >= 0.0) {
        return Err(Error::Parameter(format!("ts = {ts} must be >= 0")));
    }
    if l.len() != din_sup.len() {
        return Err(Error::Parameter(format!("{} Lipschitz values, {} in-degrees", l.len(), din_sup.len())));
    }
    let per_node_margin = l
        .iter()
        .zip(din_sup)
        .map(|(&li, &d)| 0.5 - beta * sampled_shortage(li, alpha, ts) * d)
        .collect();
    // Solve β(l²/α² + T·l/α)·d = ½ for T, node by node.
    let mut ts_supremum = Some(f64::INFINITY);
    for (&li, &d) in l.iter().zip(din_sup) {
        if d <= 0.0 || li <= 0.0 {
            continue;
        }
        let t = (1.0 / (2.0 * beta * d) - li * li / (alpha * alpha)) * alpha / li;
        ts_supremum = match ts_supremum {
            Some(cur) if t > 0.0 => Some(cur.min(t)),
            _ => None,
        };
    }
    Ok(GainCertificate {
        alpha,
        beta,
        ts,
        per_node_margin,
        method: if ts == 0.0 {
            CertificateMethod::Distributed
        } else {
            CertificateMethod::Sampled
        },
        ts_supremum,
    })
}

/// Admissible `β` supremum for the sampled condition as a function of `T_s`:
/// `min_i 1 / (2 d_in_i (l_i²/α² + T_s l_i/α))`.
pub fn beta_sup_sampled(l: &[f64], din_sup: &[f64], alpha: f64, ts: f64) -> f64 {
    l.iter()
        .zip(din_sup)
        .filter(|(_, &d)| d > 0.0)
        .map(|(&li, &d)| 1.0 / (2.0 * d * sampled_shortage(li, alpha, ts)))
        .fold(f64::INFINITY, f64::min)
}

/// Multiplier on `Σ_j a_ij ‖λ̂_j - λ̂_i‖²` in the event-trigger threshold:
/// `(c / d_in)·(½ - β d_in (l²/α² + T_s l/α))²`, and `0` for `d_in = 0`.
pub fn trigger_coefficient(l: f64, din: f64, alpha: f64, beta: f64, ts: f64, c: f64) -> Result<f64> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::Parameter(format!("trigger constant c = {c} must lie in (0, 1)")));
    }
    if din <= 0.0 {
        return Ok(0.0);
    }
    let margin = 0.5 - beta * din * sampled_shortage(l, alpha, ts);
    if margin < 0.0 {
        return Err(Error::Parameter(format!(
            "sampled gain condition violated at d_in = {din} (margin {margin})"
        )));
    }
    Ok(c / din * margin * margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{default_ten_node_schedule, Segment};
    use proptest::prelude::*;

    fn two_node_symmetric() -> GraphSchedule {
        let g = WeightedDigraph::from_row_major(2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        GraphSchedule::constant(g, 1.0).unwrap()
    }

    #[test]
    fn centralized_two_node_example() {
        // L + Lᵀ eigs {0, 4}, LᵀL eigs {0, 4}: 4 / (2·4)
        let b = beta_bound_centralized(&two_node_symmetric(), &[1.0, 1.0], 1.0).unwrap();
        assert!((b - 0.5).abs() < 1e-12);
        let b2 = beta_bound_centralized(&two_node_symmetric(), &[1.0, 1.0], 2.0).unwrap();
        assert!((b2 - 4.0 * b).abs() < 1e-12);
        let b3 = beta_bound_centralized(&two_node_symmetric(), &[2.0, 2.0], 1.0).unwrap();
        assert!((b3 - b / 4.0).abs() < 1e-12);
        // both conditions coincide here
        let d = beta_bound_distributed(&[1.0, 1.0], &[1.0, 1.0], 1.0).unwrap();
        assert!((d - b).abs() < 1e-12);
    }

    #[test]
    fn centralized_rejects_edgeless_segment() {
        let s = GraphSchedule::new(
            vec![
                Segment {
                    start: 0.0,
                    graph: WeightedDigraph::from_row_major(2, &[0.0, 1.0, 1.0, 0.0]).unwrap(),
                },
                Segment {
                    start: 0.5,
                    graph: WeightedDigraph::empty(2),
                },
            ],
            1.0,
        )
        .unwrap();
        assert!(matches!(beta_bound_centralized(&s, &[1.0, 1.0], 1.0), Err(Error::InvalidQuery(_))));
    }

    #[test]
    fn centralized_on_default_cycles() {
        let l = [2.21, 2.21, 2.0, 2.0, 2.21, 2.21, 2.0, 2.0, 1.21, 1.21];
        let s = default_ten_node_schedule();
        let b = beta_bound_centralized(&s, &l, 1.0).unwrap();
        assert!(b > 0.0 && b.is_finite());
        // For a directed unit cycle, σ_min⁺(L + Lᵀ) = 2 - 2cos(2π/N).
        let spec = segment_spectrum(&s.segments()[0].graph, &l).unwrap();
        let want = 2.0 - 2.0 * (2.0 * std::f64::consts::PI / 10.0).cos();
        assert!((spec.sym_min_positive - want).abs() < 1e-12);
        assert!((spec.sym_max - 4.0).abs() < 1e-12);
    }

    #[test]
    fn distributed_examples() {
        let b = beta_bound_distributed(&[2.21; 10], &[1.0; 10], 1.0).unwrap();
        assert!((b - 0.102_373_006_285_702_6).abs() < 1e-12);
        assert!((beta_bound_distributed(&[2.0], &[1.0], 2.0).unwrap() - 0.5).abs() < 1e-15);
        let b = beta_bound_distributed(&[1.0, 3.0], &[1.0, 1.0], 1.0).unwrap();
        assert!((b - 1.0 / 18.0).abs() < 1e-15);
        // nodes without in-neighbours do not constrain β
        let b = beta_bound_distributed(&[1.0, 3.0], &[1.0, 0.0], 1.0).unwrap();
        assert!((b - 0.5).abs() < 1e-15);
        assert!(beta_bound_distributed(&[1.0, 3.0], &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn heuristic_examples() {
        let l = [2.21, 2.21, 2.0, 2.0, 2.21, 2.21, 2.0, 2.0, 1.21, 1.21];
        let b = beta_bound_heuristic(&l, 10, 1.0).unwrap();
        assert!((b - 1.0 / (2.0 * 2.21 * 9.0)).abs() < 1e-15);
        assert!((b - 0.025_138).abs() < 1e-6);
        assert_eq!(beta_bound_heuristic(&[1.0, 1.0], 2, 1.0).unwrap(), 0.5);
        assert!(beta_bound_heuristic(&[1.0], 1, 1.0).is_err());
    }

    #[test]
    fn sampling_admissible_examples() {
        let cert = sampling_admissible(&[2.21], &[1.0], 1.0, 0.05, 0.0).unwrap();
        let ts_sup = cert.ts_supremum.unwrap();
        assert!((ts_sup - (10.0 - 2.21 * 2.21) / 2.21).abs() < 1e-12);
        assert!((ts_sup - 2.315).abs() < 1e-3);

        // β < 1 / (2l² + 2l·T_s)
        for ts in [0.0, 0.5, 1.0, 2.0] {
            let b = beta_sup_sampled(&[2.21], &[1.0], 1.0, ts);
            assert!((b - 1.0 / (2.0 * 2.21 * 2.21 + 2.0 * 2.21 * ts)).abs() < 1e-15);
        }

        // ts = 0 reproduces the continuous margins
        let c0 = sampling_admissible(&[1.0, 3.0], &[1.0, 2.0], 1.0, 0.05, 0.0).unwrap();
        assert_eq!(c0.method, CertificateMethod::Distributed);
        assert!((c0.per_node_margin[0] - (0.5 - 0.05)).abs() < 1e-15);
        assert!((c0.per_node_margin[1] - (0.5 - 0.05 * 9.0 * 2.0)).abs() < 1e-15);

        let bad = sampling_admissible(&[2.21], &[1.0], 1.0, 0.2, 0.0).unwrap();
        assert!(!bad.is_valid());
        assert!(bad.min_margin() < 0.0);
        assert_eq!(bad.ts_supremum, None);
    }

    #[test]
    fn trigger_coefficient_examples() {
        let k = trigger_coefficient(2.21, 1.0, 1.0, 0.09, 0.1, 0.5).unwrap();
        let margin: f64 = 0.5 - 0.09 * (4.8841 + 0.221);
        assert!((k - 0.5 * margin * margin).abs() < 1e-15);
        assert!((k - 8.218e-4).abs() < 1e-7);

        // margin exactly zero
        let beta = 0.5 / sampled_shortage(1.0, 1.0, 0.0);
        assert_eq!(trigger_coefficient(1.0, 1.0, 1.0, beta, 0.0, 0.5).unwrap(), 0.0);

        let k1 = trigger_coefficient(1.0, 1.0, 1.0, 0.1, 0.1, 0.2).unwrap();
        let k2 = trigger_coefficient(1.0, 1.0, 1.0, 0.1, 0.1, 0.4).unwrap();
        assert!((k2 - 2.0 * k1).abs() < 1e-15);

        assert_eq!(trigger_coefficient(1.0, 0.0, 1.0, 0.1, 0.1, 0.5).unwrap(), 0.0);
        assert!(trigger_coefficient(1.0, 1.0, 1.0, 0.1, 0.1, 0.0).is_err());
        assert!(trigger_coefficient(1.0, 1.0, 1.0, 0.1, 0.1, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn certificates_are_monotone(
            l in 0.1..5.0f64, din in 0.1..4.0f64, beta in 0.001..1.0f64, ts in 0.0..3.0f64,
            dbeta in 0.0..1.0f64, dts in 0.0..3.0f64,
        ) {
            let base = sampling_admissible(&[l], &[din], 1.0, beta, ts).unwrap();
            let worse = sampling_admissible(&[l], &[din], 1.0, beta + dbeta, ts + dts).unwrap();
            prop_assert!(!(worse.is_valid() && !base.is_valid()));
            prop_assert!(worse.per_node_margin[0] <= base.per_node_margin[0]);
        }

        #[test]
        fn trigger_coefficient_is_nonincreasing(
            l in 0.1..2.0f64, din in 0.1..2.0f64, beta in 0.001..0.05f64, ts in 0.0..0.5f64,
            scale in 1.0..1.5f64,
        ) {
            let k = |l: f64, din: f64, beta: f64, ts: f64| trigger_coefficient(l, din, 1.0, beta, ts, 0.5);
            let Ok(base) = k(l, din, beta, ts) else { return Ok(()); };
            for bumped in [k(l, din, beta * scale, ts), k(l, din, beta, ts * scale + 1e-3),
                           k(l * scale, din, beta, ts), k(l, din * scale, beta, ts)].into_iter().flatten() {
                prop_assert!(bumped <= base + 1e-15);
            }
        }
    }
}
