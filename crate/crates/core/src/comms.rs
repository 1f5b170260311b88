//! Communication regimes: continuous exchange, periodic sampling with
//! zero-order hold, and sampled event-triggered broadcast.

use nalgebra::DVector;

use crate::conditions::trigger_coefficient;
use crate::dynamics::{coupling, coupling_with, InputSource};
use crate::error::{Error, Result};
use crate::graph::WeightedDigraph;

/// Relative tolerance for "t is a sampling instant".
const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    /// Inputs refreshed at every integration step.
    Continuous,
    /// Every node samples and transmits every `ts` seconds.
    Periodic { ts: f64 },
    /// Nodes sample every `ts` seconds and broadcast only when the trigger
    /// condition fires. `coefficient_override` replaces the computed trigger
    /// coefficient for every node.
    Event {
        ts: f64,
        c: f64,
        coefficient_override: Option<f64>,
    },
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Continuous => "continuous",
            Regime::Periodic { .. } => "periodic",
            Regime::Event { .. } => "event",
        }
    }

    /// Sampling period, `None` for the continuous regime.
    pub fn ts(&self) -> Option<f64> {
        match *self {
            Regime::Continuous => None,
            Regime::Periodic { ts } | Regime::Event { ts, .. } => Some(ts),
        }
    }

    pub fn source(&self) -> InputSource {
        match self {
            Regime::Continuous => InputSource::Continuous,
            Regime::Periodic { .. } => InputSource::Sampled,
            Regime::Event { .. } => InputSource::Broadcast,
        }
    }
}

/// One evaluation of the trigger condition that fired.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerEvent {
    pub node: usize,
    pub k: u64,
    pub t: f64,
    /// `‖λ̄_i(k) - λ̂_i(k)‖²` before the update.
    pub e_norm_sq: f64,
    /// Right-hand side `coefficient · Σ_j a_ij ‖λ̂_j - λ̂_i‖²`.
    pub threshold: f64,
}

/// Node parameters needed to evaluate the trigger coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerParams {
    pub alpha: f64,
    pub lipschitz: f64,
}

#[derive(Debug, Clone)]
pub struct CommState {
    regime: Regime,
    sampled: Vec<DVector<f64>>,
    broadcast: Vec<DVector<f64>>,
    held_u: Vec<DVector<f64>>,
    trigger_log: Vec<TriggerEvent>,
    transmissions: Vec<u64>,
    /// Triggers that fired with `e = 0` and so left `λ̂` unchanged.
    idempotent: Vec<u64>,
    resyncs: u64,
    last_k: Option<u64>,
}

impl CommState {
    /// Starts the regime from the initial multipliers. In the event regime
    /// every node's initial state counts as already broadcast.
    pub fn new(regime: Regime, initial: &[DVector<f64>]) -> Result<Self> {
        if let Some(ts) = regime.ts() {
            if !(ts.is_finite() && ts > 0.0) {
                return Err(Error::Parameter(format!("ts = {ts} must be positive")));
            }
        }
        if let Regime::Event { c, .. } = regime {
            if !(c > 0.0 && c < 1.0) {
                return Err(Error::Parameter(format!("c = {c} must lie in (0, 1)")));
            }
        }
        let n = initial.len();
        let dim = initial.first().map_or(0, |v| v.len());
        Ok(Self {
            regime,
            sampled: initial.to_vec(),
            broadcast: initial.to_vec(),
            held_u: vec![DVector::zeros(dim); n],
            trigger_log: Vec::new(),
            transmissions: vec![0; n],
            idempotent: vec![0; n],
            resyncs: 0,
            last_k: None,
        })
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn held_u(&self) -> &[DVector<f64>] {
        &self.held_u
    }

    pub fn sampled(&self) -> &[DVector<f64>] {
        &self.sampled
    }

    pub fn broadcast(&self) -> &[DVector<f64>] {
        &self.broadcast
    }

    pub fn trigger_log(&self) -> &[TriggerEvent] {
        &self.trigger_log
    }

    pub fn into_trigger_log(self) -> Vec<TriggerEvent> {
        self.trigger_log
    }

    /// Transmissions per node: every sample in the periodic regime, every
    /// state-changing trigger in the event regime.
    pub fn transmissions(&self) -> &[u64] {
        &self.transmissions
    }

    pub fn idempotent_triggers(&self) -> &[u64] {
        &self.idempotent
    }

    /// Number of edge-establishment refreshes so far.
    pub fn resyncs(&self) -> u64 {
        self.resyncs
    }

    /// Refreshes the held inputs from the exact current multipliers.
    pub fn refresh_continuous(&mut self, lambda: &[DVector<f64>], g: &WeightedDigraph, beta: f64) {
        for i in 0..lambda.len() {
            self.held_u[i] = coupling(lambda, g, i, beta);
        }
    }

    fn check_grid(&mut self, k: u64, t: f64) -> Result<f64> {
        let ts = self
            .regime
            .ts()
            .ok_or_else(|| Error::Scheduling("continuous regime has no sampling instants".into()))?;
        let want = k as f64 * ts;
        if (t - want).abs() > GRID_TOL * want.abs().max(1.0) {
            return Err(Error::Scheduling(format!("t = {t} is not the sampling instant k·T_s = {want}")));
        }
        if let Some(last) = self.last_k {
            if k <= last {
                return Err(Error::Scheduling(format!("sampling index {k} does not advance past {last}")));
            }
        }
        self.last_k = Some(k);
        Ok(ts)
    }

    /// Periodic sampling at `t = kT_s`: `λ̄ ← λ`, `ū_i = β Σ_j a_ij(k)(λ̄_j - λ̄_i)`.
    pub fn sample_and_hold(
        &mut self,
        k: u64,
        t: f64,
        lambda: &[DVector<f64>],
        g: &WeightedDigraph,
        beta: f64,
    ) -> Result<()> {
        if !matches!(self.regime, Regime::Periodic { .. }) {
            return Err(Error::Scheduling("sample_and_hold requires the periodic regime".into()));
        }
        self.check_grid(k, t)?;
        self.sampled.clone_from_slice(lambda);
        for i in 0..lambda.len() {
            self.held_u[i] = coupling(&self.sampled, g, i, beta);
            self.transmissions[i] += 1;
        }
        Ok(())
    }

    /// Event-triggered sampling at `t = kT_s`. All nodes evaluate
    /// `‖λ̄_i - λ̂_i‖² ≥ coeff_i Σ_j a_ij ‖λ̂_j - λ̂_i‖²` on the pre-update
    /// broadcasts, then triggered nodes broadcast and the held inputs are
    /// rebuilt from `λ̂`. Returns the nodes that fired.
    pub fn event_step(
        &mut self,
        k: u64,
        t: f64,
        lambda: &[DVector<f64>],
        g: &WeightedDigraph,
        beta: f64,
        params: &[TriggerParams],
    ) -> Result<Vec<usize>> {
        let Regime::Event {
            c,
            coefficient_override,
            ..
        } = self.regime
        else {
            return Err(Error::Scheduling("event_step requires the event regime".into()));
        };
        if params.len() != lambda.len() || lambda.len() != self.broadcast.len() {
            return Err(Error::InvalidQuery(format!(
                "{} multipliers and {} trigger parameters for {} nodes",
                lambda.len(),
                params.len(),
                self.broadcast.len()
            )));
        }
        let ts = self.check_grid(k, t)?;
        self.sampled.clone_from_slice(lambda);

        let mut fired = Vec::new();
        let mut events = Vec::new();
        for (i, p) in params.iter().enumerate() {
            let coeff = match coefficient_override {
                Some(v) => v,
                None => trigger_coefficient(p.lipschitz, g.in_degree(i), p.alpha, beta, ts, c)?,
            };
            let e_norm_sq = (&self.sampled[i] - &self.broadcast[i]).norm_squared();
            let disagreement: f64 = g
                .in_neighbors(i)
                .map(|(j, a)| a * (&self.broadcast[j] - &self.broadcast[i]).norm_squared())
                .sum();
            let threshold = coeff * disagreement;
            if e_norm_sq >= threshold {
                fired.push(i);
                if e_norm_sq > 0.0 {
                    events.push(TriggerEvent {
                        node: i,
                        k,
                        t,
                        e_norm_sq,
                        threshold,
                    });
                } else {
                    self.idempotent[i] += 1;
                }
            }
        }
        for &i in &fired {
            self.broadcast[i].copy_from(&self.sampled[i]);
        }
        for ev in &events {
            self.transmissions[ev.node] += 1;
        }
        self.trigger_log.extend(events);
        for i in 0..lambda.len() {
            let own = &self.broadcast[i];
            self.held_u[i] = coupling_with(g, i, beta, own, |j| &self.broadcast[j]);
        }
        Ok(fired)
    }

    /// Applies a topology switch. A newly established edge `(j, i)` hands
    /// receiver `i` sender `j`'s last broadcast without counting a trigger.
    ///
    /// Receivers only ever combine `λ̂_j` over currently active edges, and
    /// an active edge either delivered every broadcast of `j` or was just
    /// refreshed here, so each receiver's copy equals `λ̂_j` and the single
    /// broadcast table serves all receivers. Returns the number of refreshed
    /// edges.
    pub fn on_edge_change(&mut self, old: &WeightedDigraph, new: &WeightedDigraph) -> usize {
        let n = new.n();
        let mut added = 0;
        for i in 0..n {
            for j in 0..n {
                if new.has_edge(j, i) && !old.has_edge(j, i) {
                    added += 1;
                }
            }
        }
        if matches!(self.regime, Regime::Event { .. }) {
            self.resyncs += added as u64;
        }
        added
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn pair() -> WeightedDigraph {
        WeightedDigraph::from_row_major(2, &[0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    fn event(c: f64, over: Option<f64>) -> Regime {
        Regime::Event {
            ts: 0.1,
            c,
            coefficient_override: over,
        }
    }

    const P: TriggerParams = TriggerParams {
        alpha: 1.0,
        lipschitz: 2.0,
    };

    #[test]
    fn sample_and_hold_examples() {
        let lam = vec![v(&[0.0]), v(&[2.0])];
        let mut s = CommState::new(Regime::Periodic { ts: 0.5 }, &lam).unwrap();
        s.sample_and_hold(0, 0.0, &lam, &pair(), 0.1).unwrap();
        assert!((s.held_u()[0][0] - 0.2).abs() < 1e-15);
        assert!((s.held_u()[1][0] + 0.2).abs() < 1e-15);
        assert_eq!(s.transmissions(), &[1, 1]);

        let same = vec![v(&[1.0, 2.0]); 3];
        let ring = WeightedDigraph::directed_cycle(3, &[0, 1, 2]).unwrap();
        let mut s = CommState::new(Regime::Periodic { ts: 0.5 }, &same).unwrap();
        s.sample_and_hold(3, 1.5, &same, &ring, 0.3).unwrap();
        assert!(s.held_u().iter().all(|u| u.amax() == 0.0));
    }

    #[test]
    fn held_inputs_sum_to_zero_on_balanced_graphs() {
        let ring = WeightedDigraph::directed_cycle(4, &[2, 0, 3, 1]).unwrap();
        let lam: Vec<_> = (0..4).map(|i| v(&[i as f64 * 0.7 - 1.0, (i * i) as f64])).collect();
        let mut s = CommState::new(Regime::Periodic { ts: 0.2 }, &lam).unwrap();
        s.sample_and_hold(1, 0.2, &lam, &ring, 0.05).unwrap();
        let total = s.held_u().iter().fold(v(&[0.0, 0.0]), |a, u| a + u);
        assert!(total.amax() < 1e-15);
    }

    #[test]
    fn off_grid_sampling_is_rejected() {
        let lam = vec![v(&[0.0]), v(&[1.0])];
        let mut s = CommState::new(Regime::Periodic { ts: 0.5 }, &lam).unwrap();
        assert!(matches!(
            s.sample_and_hold(1, 0.7, &lam, &pair(), 0.1),
            Err(Error::Scheduling(_))
        ));
        s.sample_and_hold(2, 1.0, &lam, &pair(), 0.1).unwrap();
        assert!(matches!(
            s.sample_and_hold(2, 1.0, &lam, &pair(), 0.1),
            Err(Error::Scheduling(_))
        ));
        let mut e = CommState::new(event(0.5, None), &lam).unwrap();
        assert!(e.sample_and_hold(0, 0.0, &lam, &pair(), 0.1).is_err());
        assert!(e.event_step(1, 0.15, &lam, &pair(), 0.1, &[P, P]).is_err());
    }

    #[test]
    fn bad_regime_parameters() {
        let lam = vec![v(&[0.0])];
        assert!(CommState::new(Regime::Periodic { ts: 0.0 }, &lam).is_err());
        assert!(CommState::new(event(1.0, None), &lam).is_err());
        assert!(CommState::new(event(0.0, None), &lam).is_err());
    }

    #[test]
    fn idempotent_tie_fires_without_transmission() {
        let lam = vec![v(&[1.0]), v(&[1.0])];
        let mut s = CommState::new(event(0.5, None), &lam).unwrap();
        let fired = s.event_step(0, 0.0, &lam, &pair(), 0.05, &[P, P]).unwrap();
        assert_eq!(fired, vec![0, 1]);
        assert!(s.trigger_log().is_empty());
        assert_eq!(s.idempotent_triggers(), &[1, 1]);
        assert_eq!(s.transmissions(), &[0, 0]);
        assert_eq!(s.broadcast(), &lam[..]);
    }

    #[test]
    fn isolated_node_broadcasts_any_change() {
        let start = vec![v(&[0.0]), v(&[1.0])];
        let g = WeightedDigraph::from_row_major(2, &[0.0, 1.0, 0.0, 0.0]).unwrap();
        let mut s = CommState::new(event(0.5, None), &start).unwrap();
        // node 1 has no in-edges; node 0 listens to node 1
        let now = vec![v(&[0.0]), v(&[1.001])];
        let fired = s.event_step(1, 0.1, &now, &g, 0.05, &[P, P]).unwrap();
        assert_eq!(fired, vec![1]);
        assert_eq!(s.broadcast()[1][0], 1.001);
        assert_eq!(s.trigger_log()[0].threshold, 0.0);
        assert!((s.held_u()[0][0] - 0.05 * 1.001).abs() < 1e-15);
        assert_eq!(s.held_u()[1][0], 0.0);
    }

    #[test]
    fn synchronous_evaluation_uses_pre_update_broadcasts() {
        // Both nodes drift by the same small amount: each sees the other's
        // old broadcast, so neither error is judged against an updated value.
        let start = vec![v(&[0.0]), v(&[1.0])];
        let mut s = CommState::new(event(0.5, Some(1.0)), &start).unwrap();
        let now = vec![v(&[0.9]), v(&[1.0])];
        // node 0: e² = 0.81 < 1·1 → silent; node 1: e² = 0 < 1 → silent
        assert!(s.event_step(1, 0.1, &now, &pair(), 0.1, &[P, P]).unwrap().is_empty());
        let now = vec![v(&[1.5]), v(&[1.0])];
        // node 0: e² = 2.25 ≥ 1 → fires; node 1 still compares against old λ̂_0 = 0
        let fired = s.event_step(2, 0.2, &now, &pair(), 0.1, &[P, P]).unwrap();
        assert_eq!(fired, vec![0]);
        assert!((s.held_u()[1][0] - 0.05).abs() < 1e-15);
        assert!((s.held_u()[0][0] + 0.05).abs() < 1e-15);
    }

    #[test]
    fn zero_coefficient_matches_periodic() {
        let ring = WeightedDigraph::directed_cycle(3, &[0, 2, 1]).unwrap();
        let mut per = CommState::new(Regime::Periodic { ts: 0.1 }, &[v(&[0.0]), v(&[0.0]), v(&[0.0])]).unwrap();
        let mut ev = CommState::new(event(0.5, Some(0.0)), &[v(&[0.0]), v(&[0.0]), v(&[0.0])]).unwrap();
        for k in 0..5u64 {
            let lam: Vec<_> = (0..3).map(|i| v(&[(k * 3 + i) as f64 * 0.31 % 1.7])).collect();
            let t = k as f64 * 0.1;
            per.sample_and_hold(k, t, &lam, &ring, 0.2).unwrap();
            ev.event_step(k, t, &lam, &ring, 0.2, &[P; 3]).unwrap();
            assert_eq!(per.held_u(), ev.held_u());
        }
    }

    #[test]
    fn edge_change_refreshes_without_logging() {
        let lam = vec![v(&[0.0]), v(&[1.0])];
        let mut s = CommState::new(event(0.5, None), &lam).unwrap();
        let one_way = WeightedDigraph::from_row_major(2, &[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.on_edge_change(&pair(), &pair()), 0);
        assert_eq!(s.on_edge_change(&one_way, &pair()), 1);
        assert_eq!(s.resyncs(), 1);
        assert!(s.trigger_log().is_empty());
        assert_eq!(s.transmissions(), &[0, 0]);
    }
}
