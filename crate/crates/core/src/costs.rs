//! Local cost functions and their dual objects.
//!
//! A node's cost `f` is strictly convex with an `l`-Lipschitz gradient. Its
//! inverse gradient `h = (∇f)^{-1}` maps a multiplier to the minimiser of
//! `f(x) - λᵀx`, and the dual function `J(λ) = -f(h(λ)) - λᵀ(d - h(λ))` has
//! gradient `h(λ) - d` on `Λ = range(∇f)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Absolute residual target `|∇f(x) - λ|` for the scalar Newton solves.
pub const INV_TOL: f64 = 1e-12;
/// Newton iteration cap for one scalar inverse.
pub const MAX_ITER: usize = 100;
/// Relative margin inside the open endpoints of a dual domain.
pub const BOUNDARY_MARGIN: f64 = 1e-9;

/// An open interval `(lo, hi)`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL_LINE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn intersect(self, other: Interval) -> Interval {
        Interval {
            lo: self.lo.max(other.lo),
            hi: self.hi.min(other.hi),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }

    /// `x` lies inside with the relative [`BOUNDARY_MARGIN`] to both ends.
    pub fn contains_with_margin(&self, x: f64) -> bool {
        let lo = self.lo + BOUNDARY_MARGIN * self.lo.abs().max(1.0);
        let hi = self.hi - BOUNDARY_MARGIN * self.hi.abs().max(1.0);
        x.is_finite() && (self.lo == f64::NEG_INFINITY || x > lo) && (self.hi == f64::INFINITY || x < hi)
    }

    /// Distance from `x` to the nearer finite endpoint (infinite if none).
    pub fn boundary_distance(&self, x: f64) -> f64 {
        (x - self.lo).min(self.hi - x)
    }

    /// Clamps `x` into `[lo + margin, hi - margin]`.
    pub fn clamp_inside(&self, x: f64, margin: f64) -> f64 {
        let mut y = x;
        if self.lo.is_finite() {
            y = y.max(self.lo + margin);
        }
        if self.hi.is_finite() {
            y = y.min(self.hi - margin);
        }
        y
    }
}

/// `ln Σ_k exp(slope_k x + offset_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSumExp {
    slopes: Vec<f64>,
    offsets: Vec<f64>,
}

impl LogSumExp {
    pub fn new(slopes: Vec<f64>, offsets: Vec<f64>) -> Result<Self> {
        if slopes.is_empty() {
            return Err(Error::InvalidCost("log-sum-exp term needs at least one exponent".into()));
        }
        if offsets.len() != slopes.len() {
            return Err(Error::InvalidCost(format!(
                "{} slopes but {} offsets",
                slopes.len(),
                offsets.len()
            )));
        }
        if slopes.iter().chain(&offsets).any(|v| !v.is_finite()) {
            return Err(Error::InvalidCost("log-sum-exp coefficients must be finite".into()));
        }
        Ok(Self { slopes, offsets })
    }

    pub fn with_slopes(slopes: Vec<f64>) -> Result<Self> {
        let offsets = vec![0.0; slopes.len()];
        Self::new(slopes, offsets)
    }

    /// Returns (value, first derivative, second derivative) at `x`.
    fn eval(&self, x: f64) -> (f64, f64, f64) {
        let shift = self
            .slopes
            .iter()
            .zip(&self.offsets)
            .map(|(a, b)| a * x + b)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let mut first = 0.0;
        for (a, b) in self.slopes.iter().zip(&self.offsets) {
            let w = (a * x + b - shift).exp();
            total += w;
            first += w * a;
        }
        let mean = first / total;
        let second = self
            .slopes
            .iter()
            .zip(&self.offsets)
            .map(|(a, b)| (a * x + b - shift).exp() * (a - mean).powi(2))
            .sum::<f64>()
            / total;
        (shift + total.ln(), mean, second)
    }

    fn slope_range(&self) -> (f64, f64) {
        let lo = self.slopes.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// One coordinate of a separable cost: `Σ terms(x) + quad·x² + lin·x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarCost {
    terms: Vec<LogSumExp>,
    quad: f64,
    lin: f64,
}

impl ScalarCost {
    pub fn new(terms: Vec<LogSumExp>, quad: f64, lin: f64) -> Result<Self> {
        if !(quad.is_finite() && quad >= 0.0 && lin.is_finite()) {
            return Err(Error::InvalidCost(format!("quad = {quad} must be >= 0, lin = {lin} finite")));
        }
        let curved = terms.iter().any(|t| {
            let (lo, hi) = t.slope_range();
            hi > lo
        });
        if quad == 0.0 && !curved {
            return Err(Error::InvalidCost(
                "coordinate is not strictly convex (needs quad > 0 or a term with distinct slopes)".into(),
            ));
        }
        Ok(Self { terms, quad, lin })
    }

    pub fn quadratic(quad: f64, lin: f64) -> Result<Self> {
        Self::new(Vec::new(), quad, lin)
    }

    fn eval(&self, x: f64) -> (f64, f64, f64) {
        let mut v = self.quad * x * x + self.lin * x;
        let mut d1 = 2.0 * self.quad * x + self.lin;
        let mut d2 = 2.0 * self.quad;
        for t in &self.terms {
            let (tv, t1, t2) = t.eval(x);
            v += tv;
            d1 += t1;
            d2 += t2;
        }
        (v, d1, d2)
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.eval(x).1
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        self.eval(x).2
    }

    /// Range of the derivative (the coordinate's dual domain).
    pub fn range(&self) -> Interval {
        if self.quad > 0.0 {
            return Interval::REAL_LINE;
        }
        let (lo, hi) = self.terms.iter().fold((self.lin, self.lin), |(lo, hi), t| {
            let (a, b) = t.slope_range();
            (lo + a, hi + b)
        });
        Interval { lo, hi }
    }

    /// Solves `φ'(x) = target` by Newton's method with a bisection safeguard.
    fn inverse(&self, target: f64) -> Result<f64> {
        let residual = |x: f64| self.derivative(x) - target;
        // Bracket the root by geometric expansion away from zero.
        let r0 = residual(0.0);
        if r0.abs() <= INV_TOL {
            return Ok(0.0);
        }
        let (mut a, mut b) = if r0 < 0.0 { (0.0, 1.0) } else { (-1.0, 0.0) };
        let mut step = 1.0;
        for _ in 0..2100 {
            let ok = if r0 < 0.0 { residual(b) > 0.0 } else { residual(a) < 0.0 };
            if ok {
                break;
            }
            step *= 2.0;
            if r0 < 0.0 {
                a = b;
                b += step;
            } else {
                b = a;
                a -= step;
            }
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::Numeric(format!("could not bracket inverse gradient at {target}")));
            }
        }
        let mut x = if r0 < 0.0 { a } else { b };
        for _ in 0..MAX_ITER {
            let (_, d1, d2) = self.eval(x);
            let r = d1 - target;
            // Stop once the residual is small and the next Newton correction
            // would be lost in rounding, so flat regions stay accurate in x.
            if r == 0.0 || (r.abs() <= INV_TOL && (r / d2).abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0)) {
                return Ok(x);
            }
            if r < 0.0 {
                a = x;
            } else {
                b = x;
            }
            let newton = x - r / d2;
            x = if d2 > 0.0 && newton > a && newton < b { newton } else { 0.5 * (a + b) };
            // Bracket collapsed to adjacent floats: machine precision reached.
            if b - a <= 4.0 * f64::EPSILON * a.abs().max(b.abs()).max(f64::MIN_POSITIVE) {
                return Ok(x);
            }
        }
        Err(Error::Numeric(format!(
            "inverse gradient did not converge within {MAX_ITER} iterations at {target}"
        )))
    }
}

#[derive(Debug, Clone)]
pub enum CostFamily {
    /// `½ xᵀQx + bᵀx + c` with `Q` symmetric positive definite.
    Quadratic {
        q: DMatrix<f64>,
        b: DVector<f64>,
        c: f64,
        chol: Cholesky<f64, Dyn>,
    },
    /// `Σ_k φ_k(x_k) + constant`.
    Separable { coords: Vec<ScalarCost>, constant: f64 },
}

/// A node's local cost with its demand `d` and declared gradient Lipschitz
/// bound `l`.
#[derive(Debug, Clone)]
pub struct CostSpec {
    family: CostFamily,
    demand: DVector<f64>,
    lipschitz: f64,
}

impl CostSpec {
    pub fn quadratic(q: DMatrix<f64>, b: DVector<f64>, c: f64, demand: DVector<f64>, lipschitz: f64) -> Result<Self> {
        let m = q.nrows();
        if q.ncols() != m || b.len() != m {
            return Err(Error::InvalidCost(format!(
                "Q is {}x{}, b has {} entries",
                q.nrows(),
                q.ncols(),
                b.len()
            )));
        }
        if (&q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) {
            return Err(Error::InvalidCost("Q must be symmetric".into()));
        }
        let chol = Cholesky::new(q.clone()).ok_or_else(|| Error::InvalidCost("Q must be positive definite".into()))?;
        Self::build(CostFamily::Quadratic { q, b, c, chol }, demand, lipschitz)
    }

    pub fn separable(coords: Vec<ScalarCost>, constant: f64, demand: DVector<f64>, lipschitz: f64) -> Result<Self> {
        Self::build(CostFamily::Separable { coords, constant }, demand, lipschitz)
    }

    fn build(family: CostFamily, demand: DVector<f64>, lipschitz: f64) -> Result<Self> {
        let spec = Self {
            family,
            demand,
            lipschitz,
        };
        if spec.dim() == 0 {
            return Err(Error::InvalidCost("dimension must be at least 1".into()));
        }
        if spec.demand.len() != spec.dim() {
            return Err(Error::InvalidCost(format!(
                "demand has {} entries, cost dimension is {}",
                spec.demand.len(),
                spec.dim()
            )));
        }
        if !(lipschitz.is_finite() && lipschitz >= 0.0) {
            return Err(Error::InvalidCost(format!("Lipschitz bound {lipschitz} must be >= 0")));
        }
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        match &self.family {
            CostFamily::Quadratic { b, .. } => b.len(),
            CostFamily::Separable { coords, .. } => coords.len(),
        }
    }

    pub fn family(&self) -> &CostFamily {
        &self.family
    }

    pub fn demand(&self) -> &DVector<f64> {
        &self.demand
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match &self.family {
            CostFamily::Quadratic { q, b, c, .. } => 0.5 * x.dot(&(q * x)) + b.dot(x) + c,
            CostFamily::Separable { coords, constant } => {
                constant + coords.iter().zip(x.iter()).map(|(f, &xi)| f.value(xi)).sum::<f64>()
            }
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.family {
            CostFamily::Quadratic { q, b, .. } => q * x + b,
            CostFamily::Separable { coords, .. } => {
                DVector::from_iterator(x.len(), coords.iter().zip(x.iter()).map(|(f, &xi)| f.derivative(xi)))
            }
        }
    }

    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.family {
            CostFamily::Quadratic { q, .. } => q.clone(),
            CostFamily::Separable { coords, .. } => DMatrix::from_diagonal(&DVector::from_iterator(
                x.len(),
                coords.iter().zip(x.iter()).map(|(f, &xi)| f.second_derivative(xi)),
            )),
        }
    }

    /// Per-coordinate dual domain `Λ = range(∇f)`.
    pub fn domain(&self) -> Vec<Interval> {
        match &self.family {
            CostFamily::Quadratic { b, .. } => vec![Interval::REAL_LINE; b.len()],
            CostFamily::Separable { coords, .. } => coords.iter().map(ScalarCost::range).collect(),
        }
    }

    /// Checks `λ` against the domain with [`BOUNDARY_MARGIN`].
    pub fn check_domain(&self, lambda: &DVector<f64>) -> Result<()> {
        if lambda.len() != self.dim() {
            return Err(Error::Parameter(format!(
                "multiplier has {} entries, cost dimension is {}",
                lambda.len(),
                self.dim()
            )));
        }
        for (coord, (iv, &value)) in self.domain().iter().zip(lambda.iter()).enumerate() {
            if !iv.contains_with_margin(value) {
                return Err(Error::Domain {
                    coord,
                    value,
                    lo: iv.lo,
                    hi: iv.hi,
                });
            }
        }
        Ok(())
    }

    /// Smallest distance from `λ` to the boundary of the domain.
    pub fn boundary_distance(&self, lambda: &DVector<f64>) -> f64 {
        self.domain()
            .iter()
            .zip(lambda.iter())
            .map(|(iv, &v)| iv.boundary_distance(v))
            .fold(f64::INFINITY, f64::min)
    }

    /// The inverse gradient `h(λ)`.
    pub fn inverse_gradient(&self, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_domain(lambda)?;
        match &self.family {
            CostFamily::Quadratic { b, chol, .. } => Ok(chol.solve(&(lambda - b))),
            CostFamily::Separable { coords, .. } => {
                let mut x = DVector::zeros(lambda.len());
                for (k, (f, &l)) in coords.iter().zip(lambda.iter()).enumerate() {
                    x[k] = f.inverse(l)?;
                }
                Ok(x)
            }
        }
    }

    /// Jacobian of `h` at `λ`, i.e. the inverse Hessian at `h(λ)`.
    pub fn inverse_gradient_jacobian(&self, lambda: &DVector<f64>) -> Result<DMatrix<f64>> {
        match &self.family {
            CostFamily::Quadratic { chol, .. } => {
                self.check_domain(lambda)?;
                Ok(chol.inverse())
            }
            CostFamily::Separable { coords, .. } => {
                let x = self.inverse_gradient(lambda)?;
                Ok(DMatrix::from_diagonal(&DVector::from_iterator(
                    x.len(),
                    coords.iter().zip(x.iter()).map(|(f, &xi)| 1.0 / f.second_derivative(xi)),
                )))
            }
        }
    }

    pub fn dual(&self) -> DualFunction<'_> {
        DualFunction { source: self }
    }
}

/// The dual function `J = -g` of a cost, defined on `Λ = range(∇f)`.
#[derive(Debug, Clone, Copy)]
pub struct DualFunction<'a> {
    source: &'a CostSpec,
}

impl<'a> DualFunction<'a> {
    pub fn new(source: &'a CostSpec) -> Self {
        Self { source }
    }

    pub fn source(&self) -> &'a CostSpec {
        self.source
    }

    /// `∇J(λ) = h(λ) - d`.
    pub fn gradient(&self, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.source.inverse_gradient(lambda)? - &self.source.demand)
    }

    /// `J(λ) = -f(h(λ)) - λᵀ(d - h(λ))`.
    pub fn value(&self, lambda: &DVector<f64>) -> Result<f64> {
        let x = self.source.inverse_gradient(lambda)?;
        Ok(-self.source.value(&x) - lambda.dot(&(&self.source.demand - &x)))
    }
}

/// Result of sampling Hessians over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureReport {
    pub pass: bool,
    pub samples: usize,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub declared_lipschitz: f64,
    /// First sample point at which a bound failed.
    pub violation: Option<Vec<f64>>,
}

/// Samples Hessians on a tensor grid over `sample_box` (at least `n_samples`
/// points) and checks `0 < ∇²f ≤ l·I`.
pub fn validate_curvature(cost: &CostSpec, sample_box: &[(f64, f64)], n_samples: usize) -> Result<CurvatureReport> {
    let m = cost.dim();
    if sample_box.len() != m {
        return Err(Error::Parameter(format!("sample box has {} axes, cost dimension is {m}", sample_box.len())));
    }
    if n_samples == 0 {
        return Err(Error::Parameter("n_samples must be at least 1".into()));
    }
    let per_axis = (n_samples as f64).powf(1.0 / m as f64).ceil().max(1.0) as usize;
    let per_axis = if per_axis.pow(m as u32) < n_samples { per_axis + 1 } else { per_axis };
    let axis_point = |k: usize, idx: usize| {
        let (lo, hi) = sample_box[k];
        if per_axis == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * idx as f64 / (per_axis - 1) as f64
        }
    };
    let tol = 1e-12 * cost.lipschitz.max(1.0);
    let total = per_axis.pow(m as u32);
    let mut report = CurvatureReport {
        pass: true,
        samples: total,
        min_eigenvalue: f64::INFINITY,
        max_eigenvalue: f64::NEG_INFINITY,
        declared_lipschitz: cost.lipschitz,
        violation: None,
    };
    for flat in 0..total {
        let mut rem = flat;
        let x = DVector::from_iterator(
            m,
            (0..m).map(|k| {
                let idx = rem % per_axis;
                rem /= per_axis;
                axis_point(k, idx)
            }),
        );
        let eig = cost.hessian(&x).symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        report.min_eigenvalue = report.min_eigenvalue.min(lo);
        report.max_eigenvalue = report.max_eigenvalue.max(hi);
        if !(lo > 0.0 && hi <= cost.lipschitz + tol) {
            report.pass = false;
            if report.violation.is_none() {
                report.violation = Some(x.iter().copied().collect());
            }
        }
    }
    Ok(report)
}

/// The ten-node, two-dimensional benchmark problem: five cost shapes, each
/// used by two consecutive nodes, with demands `[1, 1]` for nodes 0–4 and
/// `[2, 2]` for nodes 5–9.
pub fn ten_node_costs() -> Vec<CostSpec> {
    let v = |a: f64, b: f64| DVector::from_vec(vec![a, b]);
    let mat = |a: [f64; 4]| DMatrix::from_row_slice(2, 2, &a);
    let demand = |i: usize| if i < 5 { v(1.0, 1.0) } else { v(2.0, 2.0) };
    (0..10)
        .map(|i| {
            let d = demand(i);
            match i / 2 {
                // x1² + ½x1x2 + ½x2² + 1
                0 => CostSpec::quadratic(mat([2.0, 0.5, 0.5, 1.0]), v(0.0, 0.0), 1.0, d, 2.21),
                // ¼(x1 + 2)² + x2²
                1 => CostSpec::quadratic(mat([0.5, 0.0, 0.0, 2.0]), v(1.0, 0.0), 1.0, d, 2.0),
                // ½x1² - ½x1x2 + x2²
                2 => CostSpec::quadratic(mat([1.0, -0.5, -0.5, 2.0]), v(0.0, 0.0), 0.0, d, 2.21),
                // ln(e^{2x1} + 1) + x2²
                3 => CostSpec::separable(
                    vec![
                        ScalarCost::new(vec![LogSumExp::with_slopes(vec![2.0, 0.0])?], 0.0, 0.0)?,
                        ScalarCost::quadratic(1.0, 0.0)?,
                    ],
                    0.0,
                    d,
                    2.0,
                ),
                // ln(e^{2x1} + e^{-0.2x1}) + ln(e^{x2} + 1)
                _ => CostSpec::separable(
                    vec![
                        ScalarCost::new(vec![LogSumExp::with_slopes(vec![2.0, -0.2])?], 0.0, 0.0)?,
                        ScalarCost::new(vec![LogSumExp::with_slopes(vec![1.0, 0.0])?], 0.0, 0.0)?,
                    ],
                    0.0,
                    d,
                    1.21,
                ),
            }
        })
        .collect::<Result<Vec<_>>>()
        .expect("builtin costs are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn half_square(d: f64, l: f64) -> CostSpec {
        CostSpec::quadratic(DMatrix::identity(1, 1), v(&[0.0]), 0.0, v(&[d]), l).unwrap()
    }

    fn close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
        (a - b).amax() <= tol
    }

    #[test]
    fn gradient_examples() {
        let c = CostSpec::quadratic(DMatrix::identity(2, 2), v(&[0.0, 0.0]), 0.0, v(&[0.0, 0.0]), 1.0).unwrap();
        assert_eq!(c.gradient(&v(&[1.5, -2.0])), v(&[1.5, -2.0]));

        let costs = ten_node_costs();
        let f3 = &costs[2];
        let x = v(&[0.7, -1.3]);
        assert!(close(&f3.gradient(&x), &v(&[0.5 * (0.7 + 2.0), 2.0 * -1.3]), 1e-15));

        let f7 = &costs[6];
        assert!((f7.gradient(&v(&[0.0, 0.0]))[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn builtin_cost_values_match_closed_forms() {
        let costs = ten_node_costs();
        let x = v(&[0.3, -0.8]);
        let (a, b) = (x[0], x[1]);
        let want = [
            a * a + 0.5 * a * b + 0.5 * b * b + 1.0,
            0.25 * (a + 2.0).powi(2) + b * b,
            0.5 * a * a - 0.5 * a * b + b * b,
            ((2.0 * a).exp() + 1.0).ln() + b * b,
            ((2.0 * a).exp() + (-0.2 * a).exp()).ln() + (b.exp() + 1.0).ln(),
        ];
        for (k, w) in want.iter().enumerate() {
            assert!((costs[2 * k].value(&x) - w).abs() < 1e-14, "shape {k}");
            assert!((costs[2 * k + 1].value(&x) - w).abs() < 1e-14, "shape {k}");
        }
    }

    #[test]
    fn inverse_gradient_examples() {
        let c = half_square(0.0, 1.0);
        assert_eq!(c.inverse_gradient(&v(&[0.37])).unwrap(), v(&[0.37]));

        let costs = ten_node_costs();
        let lam = v(&[1.3, 0.6]);
        // h_1 = [4/7 λ1 - 2/7 λ2, 8/7 λ2 - 2/7 λ1]
        let h1 = v(&[4.0 / 7.0 * 1.3 - 2.0 / 7.0 * 0.6, 8.0 / 7.0 * 0.6 - 2.0 / 7.0 * 1.3]);
        assert!(close(&costs[0].inverse_gradient(&lam).unwrap(), &h1, 1e-14));
        // h_3 = [2λ1 - 2, ½λ2]
        assert!(close(&costs[2].inverse_gradient(&lam).unwrap(), &v(&[0.6, 0.3]), 1e-14));
        // h_5 = [8/7 λ1 + 2/7 λ2, 2/7 λ1 + 4/7 λ2]
        let h5 = v(&[8.0 / 7.0 * 1.3 + 2.0 / 7.0 * 0.6, 2.0 / 7.0 * 1.3 + 4.0 / 7.0 * 0.6]);
        assert!(close(&costs[4].inverse_gradient(&lam).unwrap(), &h5, 1e-14));
        // h_7 = [½ ln(λ1 / (2 - λ1)), ½ λ2]
        let h7 = v(&[0.5 * (1.3_f64 / 0.7).ln(), 0.3]);
        assert!(close(&costs[6].inverse_gradient(&lam).unwrap(), &h7, 1e-12));
        assert!(costs[6].inverse_gradient(&v(&[1.0, 0.0])).unwrap()[0].abs() < 1e-12);
        // h_9 = [5/11 ln((5λ1 + 1) / (10 - 5λ1)), ln(λ2 / (1 - λ2))]
        let h9 = v(&[5.0 / 11.0 * (7.5_f64 / 3.5).ln(), (0.6_f64 / 0.4).ln()]);
        assert!(close(&costs[8].inverse_gradient(&lam).unwrap(), &h9, 1e-12));
    }

    #[test]
    fn inverse_gradient_near_domain_edge() {
        let f9 = &ten_node_costs()[8];
        let lam = v(&[1.999_999, 1.0 - 1e-7]);
        let x = f9.inverse_gradient(&lam).unwrap();
        assert!((f9.gradient(&x) - &lam).amax() <= INV_TOL);
        assert!((x[1] - ((1.0 - 1e-7) / 1e-7_f64).ln()).abs() < 1e-6);
    }

    #[test]
    fn domain_errors_name_the_coordinate() {
        let f7 = &ten_node_costs()[6];
        match f7.inverse_gradient(&v(&[2.5, 0.0])) {
            Err(Error::Domain { coord, lo, hi, .. }) => {
                assert_eq!(coord, 0);
                assert_eq!((lo, hi), (0.0, 2.0));
            }
            other => panic!("expected domain error, got {other:?}"),
        }
        let f9 = &ten_node_costs()[8];
        assert!(matches!(
            f9.inverse_gradient(&v(&[1.0, 1.0 - 1e-12])),
            Err(Error::Domain { coord: 1, .. })
        ));
        assert!(matches!(
            f9.inverse_gradient(&v(&[-0.2, 0.5])),
            Err(Error::Domain { coord: 0, .. })
        ));
    }

    #[test]
    fn domains_of_builtin_costs() {
        let costs = ten_node_costs();
        assert_eq!(costs[0].domain(), vec![Interval::REAL_LINE; 2]);
        assert_eq!(costs[6].domain()[0], Interval { lo: 0.0, hi: 2.0 });
        assert_eq!(costs[6].domain()[1], Interval::REAL_LINE);
        assert_eq!(costs[8].domain()[0], Interval { lo: -0.2, hi: 2.0 });
        assert_eq!(costs[8].domain()[1], Interval { lo: 0.0, hi: 1.0 });
    }

    #[test]
    fn dual_gradient_examples() {
        let c = half_square(1.0, 1.0);
        assert!((c.dual().gradient(&v(&[1.0])).unwrap()[0]).abs() < 1e-15);
        assert!((c.dual().gradient(&v(&[3.0])).unwrap()[0] - 2.0).abs() < 1e-15);

        // f_3 with d = [1, 1]: [2·1 - 2 - 1, ½·2 - 1] = [-1, 0]
        let f3 = &ten_node_costs()[2];
        let g = f3.dual().gradient(&v(&[1.0, 2.0])).unwrap();
        assert!(close(&g, &v(&[-1.0, 0.0]), 1e-15));

        for c in ten_node_costs() {
            let lam = c.gradient(c.demand());
            assert!(c.dual().gradient(&lam).unwrap().amax() < 1e-9);
        }
    }

    #[test]
    fn dual_value_examples() {
        let c = half_square(0.0, 1.0);
        assert_eq!(c.dual().value(&v(&[0.0])).unwrap(), 0.0);
        assert!((c.dual().value(&v(&[3.0])).unwrap() - 4.5).abs() < 1e-14);

        // single node: J minimised at ∇f(d)
        for c in ten_node_costs() {
            let star = c.gradient(c.demand());
            let j_star = c.dual().value(&star).unwrap();
            for delta in [[0.01, 0.0], [0.0, -0.01], [0.005, 0.005]] {
                let lam = &star + v(&delta);
                assert!(c.dual().value(&lam).unwrap() > j_star);
            }
        }
    }

    #[test]
    fn dual_value_finite_differences_match_gradient() {
        let h = 1e-5;
        for c in ten_node_costs() {
            for x in [[-1.0, 0.5], [0.3, -0.2], [1.2, 1.7]] {
                let lam = c.gradient(&v(&x));
                let grad = c.dual().gradient(&lam).unwrap();
                for k in 0..2 {
                    let mut up = lam.clone();
                    let mut dn = lam.clone();
                    up[k] += h;
                    dn[k] -= h;
                    let fd = (c.dual().value(&up).unwrap() - c.dual().value(&dn).unwrap()) / (2.0 * h);
                    assert!((fd - grad[k]).abs() < 1e-6, "fd {fd} vs {}", grad[k]);
                }
            }
        }
    }

    #[test]
    fn curvature_examples() {
        let ok = validate_curvature(&half_square(0.0, 1.0), &[(-3.0, 3.0)], 11).unwrap();
        assert!(ok.pass);
        assert_eq!(ok.max_eigenvalue, 1.0);

        let bad = validate_curvature(&half_square(0.0, 0.5), &[(-3.0, 3.0)], 11).unwrap();
        assert!(!bad.pass);
        assert_eq!(bad.violation, Some(vec![-3.0]));

        let f7 = &ten_node_costs()[6];
        let r = validate_curvature(f7, &[(-4.0, 4.0), (-4.0, 4.0)], 401).unwrap();
        assert!(r.pass);
        assert_eq!(r.max_eigenvalue, 2.0);

        for c in ten_node_costs() {
            let r = validate_curvature(&c, &[(-5.0, 5.0), (-5.0, 5.0)], 2500).unwrap();
            assert!(r.pass, "{r:?}");
            assert!(r.max_eigenvalue > 0.9 * c.lipschitz());
        }
    }

    #[test]
    fn invalid_costs_are_rejected() {
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(CostSpec::quadratic(indefinite, v(&[0.0, 0.0]), 0.0, v(&[0.0, 0.0]), 3.0).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(CostSpec::quadratic(asym, v(&[0.0, 0.0]), 0.0, v(&[0.0, 0.0]), 3.0).is_err());
        assert!(CostSpec::quadratic(DMatrix::identity(1, 1), v(&[0.0]), 0.0, v(&[0.0, 1.0]), 1.0).is_err());
        assert!(ScalarCost::new(vec![LogSumExp::with_slopes(vec![1.0, 1.0]).unwrap()], 0.0, 0.0).is_err());
        assert!(ScalarCost::quadratic(-1.0, 0.0).is_err());
        assert!(LogSumExp::with_slopes(vec![]).is_err());
    }

    fn arb_point() -> impl Strategy<Value = DVector<f64>> {
        (-6.0..6.0f64, -6.0..6.0f64).prop_map(|(a, b)| v(&[a, b]))
    }

    proptest! {
        #[test]
        fn round_trip_through_inverse_gradient(x in arb_point()) {
            for c in ten_node_costs() {
                let back = c.inverse_gradient(&c.gradient(&x)).unwrap();
                prop_assert!((&back - &x).amax() <= 1e-8, "{back} vs {x}");
            }
        }

        #[test]
        fn gradients_are_strictly_monotone(x in arb_point(), y in arb_point()) {
            prop_assume!((&x - &y).norm() > 1e-6);
            for c in ten_node_costs() {
                prop_assert!((c.gradient(&x) - c.gradient(&y)).dot(&(&x - &y)) > 0.0);
            }
        }

        #[test]
        fn dual_is_strongly_convex(x in arb_point(), y in arb_point()) {
            for c in ten_node_costs() {
                let (a, b) = (c.gradient(&x), c.gradient(&y));
                let lhs = (c.dual().gradient(&a).unwrap() - c.dual().gradient(&b).unwrap()).dot(&(&a - &b));
                prop_assert!(lhs >= (&a - &b).norm_squared() / c.lipschitz() - 1e-8);
            }
        }

        #[test]
        fn quadratic_inverse_matches_argmin(
            q in (0.5..4.0f64, -0.4..0.4f64, 0.5..4.0f64),
            b in (-2.0..2.0f64, -2.0..2.0f64),
            lam in (-5.0..5.0f64, -5.0..5.0f64),
        ) {
            let qm = DMatrix::from_row_slice(2, 2, &[q.0, q.1, q.1, q.2]);
            let bv = v(&[b.0, b.1]);
            let lv = v(&[lam.0, lam.1]);
            let c = CostSpec::quadratic(qm.clone(), bv.clone(), 0.0, v(&[0.0, 0.0]), 5.0).unwrap();
            // Newton on f(x) - λᵀx from the origin, with an LU solve.
            let mut x = DVector::zeros(2);
            for _ in 0..3 {
                let g = &qm * &x + &bv - &lv;
                x -= qm.clone().lu().solve(&g).unwrap();
            }
            prop_assert!((c.inverse_gradient(&lv).unwrap() - x).amax() <= 1e-10);
        }
    }
}
