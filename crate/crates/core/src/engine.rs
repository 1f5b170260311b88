//! Fixed-step simulation of the network, the centralized dual oracle, and
//! convergence metrics.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::comms::{CommState, Regime, TriggerEvent, TriggerParams};
use crate::conditions::{sampling_admissible, GainCertificate};
use crate::costs::{CostSpec, Interval};
use crate::dynamics::{
    continuous_gap, sampled_gap, z_gain_gap, CouplingInput, NodeSample, NodeState, StoragePoint, StorageProbe,
};
use crate::error::{Error, Result};
use crate::graph::{GraphSchedule, WeightedDigraph};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_RECORD_EVERY: usize = 100;
/// Half-width of the box initial primal points are drawn from.
pub const INIT_BOX: f64 = 2.0;
pub const ORACLE_TOL: f64 = 1e-12;
/// Largest oracle residual accepted once Newton stagnates at roundoff.
pub const ORACLE_ACCEPT: f64 = 1e-9;
pub const ORACLE_MAX_ITER: usize = 100;
/// Distance kept from the dual-domain boundary by the oracle's start point.
pub const ORACLE_START_MARGIN: f64 = 1e-6;

const TIME_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub costs: Vec<CostSpec>,
    pub schedule: GraphSchedule,
    pub alpha: f64,
    pub beta: f64,
    pub regime: Regime,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    /// Initial primal points; drawn from the seeded generator when absent.
    pub x0: Option<Vec<DVector<f64>>>,
    /// Store every `record_every`-th step (the final step is always stored).
    pub record_every: usize,
}

/// Step counts derived from a validated configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    pub steps: u64,
    /// Integration steps per sampling period (1 for the continuous regime).
    pub steps_per_sample: u64,
}

fn as_multiple(x: f64, unit: f64) -> Option<u64> {
    let k = (x / unit).round();
    ((x - k * unit).abs() <= TIME_TOL * x.abs().max(1.0) && k >= 0.0).then_some(k as u64)
}

impl ScenarioConfig {
    /// Configuration with the default step, seed 0, the schedule's horizon
    /// and default recording stride.
    pub fn new(costs: Vec<CostSpec>, schedule: GraphSchedule, alpha: f64, beta: f64, regime: Regime) -> Self {
        let horizon = schedule.horizon();
        Self {
            costs,
            schedule,
            alpha,
            beta,
            regime,
            horizon,
            dt: DEFAULT_DT,
            seed: 0,
            x0: None,
            record_every: DEFAULT_RECORD_EVERY,
        }
    }

    pub fn n(&self) -> usize {
        self.costs.len()
    }

    pub fn dim(&self) -> usize {
        self.costs.first().map_or(0, CostSpec::dim)
    }

    pub fn lipschitz(&self) -> Vec<f64> {
        self.costs.iter().map(CostSpec::lipschitz).collect()
    }

    pub fn validate(&self) -> Result<Timing> {
        let n = self.n();
        if n == 0 {
            return Err(Error::Config("scenario has no nodes".into()));
        }
        if self.schedule.n() != n {
            return Err(Error::Config(format!("schedule has {} nodes, problem has {n}", self.schedule.n())));
        }
        let m = self.dim();
        if let Some(i) = self.costs.iter().position(|c| c.dim() != m) {
            return Err(Error::Config(format!("node {i} has dimension {}, node 0 has {m}", self.costs[i].dim())));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha = {} must be positive", self.alpha)));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config(format!("beta = {} must be positive", self.beta)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::Config(format!("horizon = {} must be positive", self.horizon)));
        }
        if self.horizon > self.schedule.horizon() * (1.0 + TIME_TOL) {
            return Err(Error::Config(format!(
                "horizon {} exceeds the schedule horizon {}",
                self.horizon,
                self.schedule.horizon()
            )));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        let steps = as_multiple(self.horizon, self.dt)
            .filter(|&s| s > 0)
            .ok_or_else(|| Error::Config(format!("horizon {} is not a multiple of dt = {}", self.horizon, self.dt)))?;
        let steps_per_sample = match self.regime.ts() {
            None => {
                for seg in self.schedule.segments() {
                    if seg.start < self.horizon && as_multiple(seg.start, self.dt).is_none() {
                        return Err(Error::Config(format!(
                            "switching time {} is not on the dt = {} grid",
                            seg.start, self.dt
                        )));
                    }
                }
                1
            }
            Some(ts) => as_multiple(ts, self.dt)
                .filter(|&s| s > 0)
                .ok_or_else(|| Error::Config(format!("ts = {ts} is not a positive multiple of dt = {}", self.dt)))?,
        };
        if let Some(x0) = &self.x0 {
            if x0.len() != n || x0.iter().any(|x| x.len() != m) {
                return Err(Error::Config(format!("x0 must hold {n} vectors of length {m}")));
            }
        }
        Ok(Timing { steps, steps_per_sample })
    }

    /// Gain certificate for the configured `α`, `β` and sampling period
    /// (`T_s = 0` for the continuous regime).
    pub fn certificate(&self) -> Result<GainCertificate> {
        let ts = self.regime.ts().unwrap_or(0.0);
        sampling_admissible(&self.lipschitz(), &self.schedule.in_degree_sup(), self.alpha, self.beta, ts)
    }
}

/// `λ_i(0) = ∇f_i(x_i(0))`, `γ_i(0) = 0`, with `x_i(0)` from `cfg.x0` or drawn
/// uniformly from `[-2, 2]^m` by a generator seeded with `cfg.seed`.
pub fn initialize(cfg: &ScenarioConfig) -> Result<Vec<NodeState>> {
    let m = cfg.dim();
    let x0 = match &cfg.x0 {
        Some(x0) => x0.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            (0..cfg.n())
                .map(|_| DVector::from_fn(m, |_, _| rng.random_range(-INIT_BOX..=INIT_BOX)))
                .collect()
        }
    };
    cfg.costs
        .iter()
        .zip(&x0)
        .enumerate()
        .map(|(i, (cost, x))| {
            let lambda = cost.gradient(x);
            cost.check_domain(&lambda).map_err(|e| Error::Aborted {
                node: i,
                t: 0.0,
                source: Box::new(e),
            })?;
            Ok(NodeState::new(lambda, DVector::zeros(m)))
        })
        .collect()
}

fn abort(node: usize, t: f64, e: Error) -> Error {
    Error::Aborted {
        node,
        t,
        source: Box::new(e),
    }
}

/// `h_i(λ_i)` for every node.
fn primal_points(costs: &[CostSpec], states: &[NodeState], t: f64) -> Result<Vec<DVector<f64>>> {
    costs
        .iter()
        .zip(states)
        .enumerate()
        .map(|(i, (c, s))| c.inverse_gradient(&s.lambda).map_err(|e| abort(i, t, e)))
        .collect()
}

fn rk4_node(
    cost: &CostSpec,
    alpha: f64,
    state: &NodeState,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
) -> Result<NodeState> {
    let d = cost.demand();
    // γ is affine in t under a held input, so it is advanced exactly.
    let gamma_at = |h: f64| &state.gamma - h * u;
    let rate = |lambda: &DVector<f64>, gamma: &DVector<f64>| -> Result<DVector<f64>> {
        let x = cost.inverse_gradient(lambda)?;
        Ok(-alpha * (x - d) - gamma)
    };
    let k1 = -alpha * (x - d) - &state.gamma;
    let k2 = rate(&(&state.lambda + 0.5 * dt * &k1), &gamma_at(0.5 * dt))?;
    let k3 = rate(&(&state.lambda + 0.5 * dt * &k2), &gamma_at(0.5 * dt))?;
    let k4 = rate(&(&state.lambda + dt * &k3), &gamma_at(dt))?;
    let lambda = &state.lambda + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    Ok(NodeState::new(lambda, gamma_at(dt)))
}

/// One classical Runge–Kutta step of all nodes with inputs `u` held over
/// `[t, t + dt)`.
pub fn step(
    costs: &[CostSpec],
    alpha: f64,
    states: &[NodeState],
    u: &[DVector<f64>],
    t: f64,
    dt: f64,
) -> Result<Vec<NodeState>> {
    let xs = primal_points(costs, states, t)?;
    step_with(costs, alpha, states, &xs, u, t, dt)
}

fn step_with(
    costs: &[CostSpec],
    alpha: f64,
    states: &[NodeState],
    xs: &[DVector<f64>],
    u: &[DVector<f64>],
    t: f64,
    dt: f64,
) -> Result<Vec<NodeState>> {
    (0..states.len())
        .map(|i| rk4_node(&costs[i], alpha, &states[i], &xs[i], &u[i], dt).map_err(|e| abort(i, t, e)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub lambda_star: DVector<f64>,
    pub x_star: Vec<DVector<f64>>,
    /// `‖Σ_i (h_i(λ*) - d_i)‖`.
    pub residual: f64,
    pub iterations: usize,
}

impl OracleSolution {
    /// `γ*_i = -α(h_i(λ*) - d_i)`.
    pub fn gamma_star(&self, costs: &[CostSpec], alpha: f64) -> Vec<DVector<f64>> {
        self.x_star
            .iter()
            .zip(costs)
            .map(|(x, c)| -alpha * (x - c.demand()))
            .collect()
    }
}

/// Intersection of all nodes' dual domains, per coordinate.
pub fn common_domain(costs: &[CostSpec]) -> Result<Vec<Interval>> {
    let m = costs.first().map_or(0, CostSpec::dim);
    let mut dom = vec![Interval::REAL_LINE; m];
    for c in costs {
        for (acc, iv) in dom.iter_mut().zip(c.domain()) {
            *acc = acc.intersect(iv);
        }
    }
    if let Some(k) = dom.iter().position(|iv| iv.lo >= iv.hi) {
        return Err(Error::Numeric(format!("dual domains have empty intersection in coordinate {k}")));
    }
    Ok(dom)
}

struct Residual {
    f: DVector<f64>,
    xs: Vec<DVector<f64>>,
}

fn residual(costs: &[CostSpec], lambda: &DVector<f64>) -> Result<Residual> {
    let mut f = DVector::zeros(lambda.len());
    let mut xs = Vec::with_capacity(costs.len());
    for c in costs {
        let x = c.inverse_gradient(lambda)?;
        f += &x - c.demand();
        xs.push(x);
    }
    Ok(Residual { f, xs })
}

fn total_dual(costs: &[CostSpec], lambda: &DVector<f64>) -> Result<f64> {
    costs.iter().map(|c| c.dual().value(lambda)).sum()
}

/// Solves `Σ_i (h_i(λ) - d_i) = 0` for the common multiplier by damped
/// Newton iteration on the total dual function, starting from the mean of
/// `∇f_i(d_i)` pulled inside the common domain.
pub fn solve_oracle(costs: &[CostSpec]) -> Result<OracleSolution> {
    if costs.is_empty() {
        return Err(Error::Config("oracle needs at least one node".into()));
    }
    let m = costs[0].dim();
    if costs.iter().any(|c| c.dim() != m) {
        return Err(Error::Config("all nodes must share the decision dimension".into()));
    }
    let dom = common_domain(costs)?;
    let mut lambda = costs.iter().fold(DVector::zeros(m), |acc, c| acc + c.gradient(c.demand())) / costs.len() as f64;
    for (k, iv) in dom.iter().enumerate() {
        let margin = ORACLE_START_MARGIN.min(0.25 * (iv.hi - iv.lo));
        lambda[k] = iv.clamp_inside(lambda[k], margin);
    }

    match newton(costs, lambda.clone()) {
        Ok(sol) => Ok(sol),
        Err(e) if m == 1 => bisection(costs, &dom[0], lambda[0]).map_err(|_| e),
        Err(e) => Err(e),
    }
}

fn finish(costs: &[CostSpec], lambda: DVector<f64>, iterations: usize) -> Result<OracleSolution> {
    let r = residual(costs, &lambda)?;
    Ok(OracleSolution {
        residual: r.f.norm(),
        x_star: r.xs,
        lambda_star: lambda,
        iterations,
    })
}

fn newton(costs: &[CostSpec], mut lambda: DVector<f64>) -> Result<OracleSolution> {
    let mut r = residual(costs, &lambda)?;
    let mut merit = total_dual(costs, &lambda)?;
    for it in 0..ORACLE_MAX_ITER {
        let norm = r.f.norm();
        if norm <= ORACLE_TOL {
            return finish(costs, lambda, it);
        }
        let mut jac = nalgebra::DMatrix::zeros(lambda.len(), lambda.len());
        for c in costs {
            jac += c.inverse_gradient_jacobian(&lambda)?;
        }
        let dir = jac
            .lu()
            .solve(&(-&r.f))
            .ok_or_else(|| Error::Numeric("singular oracle Jacobian".into()))?;
        let slope = r.f.dot(&dir);
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let trial = &lambda + t * &dir;
            if let (Ok(rt), Ok(mt)) = (residual(costs, &trial), total_dual(costs, &trial)) {
                if mt <= merit + 1e-4 * t * slope || rt.f.norm() < norm {
                    accepted = Some((trial, rt, mt));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, rt, mt)) => {
                let moved = (&trial - &lambda).amax();
                lambda = trial;
                r = rt;
                merit = mt;
                if moved <= 4.0 * f64::EPSILON * lambda.amax().max(1.0) {
                    break;
                }
            }
            None => break,
        }
    }
    let norm = r.f.norm();
    if norm <= ORACLE_ACCEPT {
        return finish(costs, lambda, ORACLE_MAX_ITER);
    }
    Err(Error::Numeric(format!("oracle Newton iteration stalled with residual {norm:e}")))
}

fn bisection(costs: &[CostSpec], dom: &Interval, start: f64) -> Result<OracleSolution> {
    let f = |l: f64| residual(costs, &DVector::from_element(1, l)).map(|r| r.f[0]);
    let margin = |x: f64| 1e-8 * x.abs().max(1.0);
    // F is increasing in λ; widen a bracket towards the domain ends.
    let (mut lo, mut hi) = (start, start);
    let mut width = 1.0;
    while f(lo)? > 0.0 {
        lo = (start - width).max(dom.lo + margin(dom.lo));
        width *= 2.0;
        if lo <= dom.lo + margin(dom.lo) && f(lo)? > 0.0 {
            return Err(Error::Numeric("oracle bisection found no sign change".into()));
        }
    }
    width = 1.0;
    while f(hi)? < 0.0 {
        hi = (start + width).min(dom.hi - margin(dom.hi));
        width *= 2.0;
        if hi >= dom.hi - margin(dom.hi) && f(hi)? < 0.0 {
            return Err(Error::Numeric("oracle bisection found no sign change".into()));
        }
    }
    let mut iterations = 0;
    while hi - lo > 4.0 * f64::EPSILON * hi.abs().max(1.0) && iterations < 200 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    finish(costs, DVector::from_element(1, 0.5 * (lo + hi)), iterations)
}

/// `max_{i,j} ‖λ_i - λ_j‖`.
pub fn consensus_error(lambda: &[DVector<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..lambda.len() {
        for j in i + 1..lambda.len() {
            worst = worst.max((&lambda[i] - &lambda[j]).norm());
        }
    }
    worst
}

/// `‖Σ_i (x_i - d_i)‖` for primal points `x_i = h_i(λ_i)`.
pub fn dual_residual(costs: &[CostSpec], xs: &[DVector<f64>]) -> f64 {
    let m = xs.first().map_or(0, |x| x.len());
    xs.iter()
        .zip(costs)
        .fold(DVector::zeros(m), |acc, (x, c)| acc + x - c.demand())
        .norm()
}

/// One stored time point of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub t: f64,
    pub states: Vec<NodeState>,
    /// Inputs held over `[t, t + dt)`; the final record repeats the last.
    pub inputs: Vec<CouplingInput>,
    pub storage: Vec<f64>,
    pub dist_to_lstar: Vec<f64>,
    pub consensus_err: f64,
    pub dual_residual: f64,
}

/// Extremes of the checks evaluated at every integration step.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Largest per-step violation of `V̇ ≤ Δλᵀu + (l²/α²)‖u‖²`.
    pub ifp_continuous: f64,
    /// Largest violation of the sampled dissipation inequality between
    /// consecutive sampling instants (period `dt` in the continuous regime).
    pub ifp_sampled: f64,
    /// Largest violation of the `u -> z` gain inequality per sampling interval.
    pub z_gain: f64,
    /// `max_t ‖Σγ(t) - Σγ(0)‖_∞`.
    pub conservation: f64,
    /// Smallest distance of any multiplier to its dual-domain boundary.
    pub min_boundary_distance: f64,
    /// Largest increase of `Σ_i V̄_i` between sampling instants.
    pub lyapunov_increase: f64,
    /// Largest `Σ_i V̄_i` seen, for scaling `lyapunov_increase`.
    pub lyapunov_scale: f64,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Self {
            ifp_continuous: f64::NEG_INFINITY,
            ifp_sampled: f64::NEG_INFINITY,
            z_gain: f64::NEG_INFINITY,
            conservation: 0.0,
            min_boundary_distance: f64::INFINITY,
            lyapunov_increase: f64::NEG_INFINITY,
            lyapunov_scale: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub regime: Regime,
    pub dt: f64,
    pub records: Vec<Record>,
    pub oracle: OracleSolution,
    pub gamma_star: Vec<DVector<f64>>,
    pub certificate: GainCertificate,
    pub events: Vec<TriggerEvent>,
    pub transmissions: Vec<u64>,
    pub idempotent_triggers: Vec<u64>,
    pub resyncs: u64,
    pub diagnostics: Diagnostics,
    pub steps_completed: u64,
    /// Set when a node's multiplier left its dual domain; the records stop
    /// at the last valid state.
    pub abort: Option<Error>,
}

impl Trajectory {
    pub fn n(&self) -> usize {
        self.oracle.x_star.len()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn last(&self) -> &Record {
        self.records.last().expect("a trajectory always holds its initial record")
    }

    pub fn node_samples(&self, i: usize) -> Vec<NodeSample> {
        self.records
            .iter()
            .map(|r| NodeSample {
                t: r.t,
                state: r.states[i].clone(),
                u: r.inputs[i].u.clone(),
            })
            .collect()
    }

    pub fn terminal_lambda(&self) -> Vec<DVector<f64>> {
        self.last().states.iter().map(|s| s.lambda.clone()).collect()
    }

    pub fn summary(&self) -> Summary {
        let last = self.last();
        let dist = &last.dist_to_lstar;
        let tx = &self.transmissions;
        Summary {
            regime: self.regime.name(),
            final_time: last.t,
            steps: self.steps_completed,
            aborted: self.abort.as_ref().map(ToString::to_string),
            certificate_valid: self.certificate.is_valid(),
            certificate_min_margin: self.certificate.min_margin(),
            lambda_star: self.oracle.lambda_star.iter().copied().collect(),
            terminal_consensus_err: last.consensus_err,
            terminal_dual_residual: last.dual_residual,
            max_dist_to_lstar: dist.iter().copied().fold(0.0, f64::max),
            dist_to_lstar: dist.clone(),
            transmissions: tx.clone(),
            total_transmissions: tx.iter().sum(),
            min_inter_event_samples: min_inter_event_samples(&self.events),
            diagnostics: self.diagnostics.clone(),
        }
    }
}

/// Reductions of a trajectory reported after a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub regime: &'static str,
    pub final_time: f64,
    pub steps: u64,
    pub aborted: Option<String>,
    pub certificate_valid: bool,
    pub certificate_min_margin: f64,
    pub lambda_star: Vec<f64>,
    pub terminal_consensus_err: f64,
    /// `‖Σ_i (h_i(λ_i) - d_i)‖`, which is also the primal feasibility gap
    /// `‖Σ x_i - Σ d_i‖` of the recovered allocation.
    pub terminal_dual_residual: f64,
    pub max_dist_to_lstar: f64,
    pub dist_to_lstar: Vec<f64>,
    pub transmissions: Vec<u64>,
    pub total_transmissions: u64,
    /// Smallest gap, in sampling periods, between two triggers of one node.
    pub min_inter_event_samples: Option<u64>,
    pub diagnostics: Diagnostics,
}

/// Smallest per-node gap between consecutive trigger indices.
pub fn min_inter_event_samples(events: &[TriggerEvent]) -> Option<u64> {
    let mut last: std::collections::HashMap<usize, u64> = std::collections::HashMap::new();
    let mut best: Option<u64> = None;
    for e in events {
        if let Some(prev) = last.insert(e.node, e.k) {
            let gap = e.k.saturating_sub(prev);
            best = Some(best.map_or(gap, |b| b.min(gap)));
        }
    }
    best
}

/// Index of the segment active at `t`, tolerant to roundoff in `t`.
fn segment_at(schedule: &GraphSchedule, t: f64) -> usize {
    let eps = TIME_TOL * t.abs().max(1.0);
    schedule
        .segments()
        .iter()
        .rposition(|s| s.start <= t + eps)
        .unwrap_or(0)
}

struct Monitor {
    probes: Vec<StorageProbe>,
    prev_step: Vec<StoragePoint>,
    prev_sample: Vec<StoragePoint>,
    prev_sample_u: Vec<DVector<f64>>,
    z_acc: Vec<f64>,
    sum_gamma0: DVector<f64>,
    lyapunov_prev: f64,
    ts_eff: f64,
    diag: Diagnostics,
}

impl Monitor {
    fn lyapunov(&self, pts: &[StoragePoint]) -> f64 {
        pts.iter().map(|p| p.sampled(self.ts_eff)).sum()
    }

    /// Per-step checks between the previous step point and `pts`, using the
    /// inputs that were held over the step.
    fn after_step(&mut self, pts: &[StoragePoint], held: &[DVector<f64>], dt: f64) {
        for (i, p) in pts.iter().enumerate() {
            let probe = &self.probes[i];
            let gap = continuous_gap(&self.prev_step[i], p, &held[i], dt, probe.nu());
            self.diag.ifp_continuous = self.diag.ifp_continuous.max(gap);
            self.z_acc[i] += z_gain_gap(&self.prev_step[i], p, &held[i], dt, probe.l_over_alpha());
        }
        self.prev_step = pts.to_vec();
    }

    /// Checks closing a sampling interval that ends at the points `pts`.
    fn at_sample(&mut self, pts: &[StoragePoint]) {
        for (i, p) in pts.iter().enumerate() {
            let probe = &self.probes[i];
            let gap = sampled_gap(
                &self.prev_sample[i],
                p,
                &self.prev_sample_u[i],
                self.ts_eff,
                probe.nu_sampled(self.ts_eff),
            );
            self.diag.ifp_sampled = self.diag.ifp_sampled.max(gap);
            self.diag.z_gain = self.diag.z_gain.max(self.z_acc[i]);
            self.z_acc[i] = 0.0;
        }
        let lyap = self.lyapunov(pts);
        self.diag.lyapunov_increase = self.diag.lyapunov_increase.max(lyap - self.lyapunov_prev);
        self.diag.lyapunov_scale = self.diag.lyapunov_scale.max(lyap);
        self.lyapunov_prev = lyap;
    }

    /// Starts a new sampling interval at the points `pts` with held inputs `u`.
    fn open_interval(&mut self, pts: &[StoragePoint], u: &[DVector<f64>]) {
        self.prev_sample = pts.to_vec();
        self.prev_sample_u = u.to_vec();
    }

    fn every_step(&mut self, costs: &[CostSpec], states: &[NodeState]) {
        let m = self.sum_gamma0.len();
        let sum = states.iter().fold(DVector::zeros(m), |acc, s| acc + &s.gamma);
        self.diag.conservation = self.diag.conservation.max((sum - &self.sum_gamma0).amax());
        for (c, s) in costs.iter().zip(states) {
            self.diag.min_boundary_distance = self.diag.min_boundary_distance.min(c.boundary_distance(&s.lambda));
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn make_record(
    t: f64,
    costs: &[CostSpec],
    states: &[NodeState],
    xs: &[DVector<f64>],
    u: &[DVector<f64>],
    source: crate::dynamics::InputSource,
    pts: &[StoragePoint],
    lambda_star: &DVector<f64>,
) -> Record {
    let lambdas: Vec<DVector<f64>> = states.iter().map(|s| s.lambda.clone()).collect();
    Record {
        t,
        states: states.to_vec(),
        inputs: u.iter().map(|u| CouplingInput { u: u.clone(), source }).collect(),
        storage: pts.iter().map(|p| p.v).collect(),
        dist_to_lstar: lambdas.iter().map(|l| (l - lambda_star).norm()).collect(),
        consensus_err: consensus_error(&lambdas),
        dual_residual: dual_residual(costs, xs),
    }
}

/// Simulates the scenario. Configuration problems are returned as errors; a
/// multiplier leaving its dual domain ends the run early and is reported in
/// [`Trajectory::abort`].
pub fn run(cfg: &ScenarioConfig) -> Result<Trajectory> {
    let timing = cfg.validate()?;
    let certificate = cfg.certificate()?;
    if matches!(cfg.regime, Regime::Event { .. }) && !certificate.is_valid() {
        return Err(Error::Config(format!(
            "event-triggered regime needs admissible gains; smallest margin is {:.6e}",
            certificate.min_margin()
        )));
    }
    let oracle = solve_oracle(&cfg.costs)?;
    let gamma_star = oracle.gamma_star(&cfg.costs, cfg.alpha);
    let probes = cfg
        .costs
        .iter()
        .map(|c| StorageProbe::new(c, &oracle.lambda_star, cfg.alpha))
        .collect::<Result<Vec<_>>>()?;
    let params: Vec<TriggerParams> = cfg
        .costs
        .iter()
        .map(|c| TriggerParams {
            alpha: cfg.alpha,
            lipschitz: c.lipschitz(),
        })
        .collect();

    let (costs, alpha, dt) = (&cfg.costs[..], cfg.alpha, cfg.dt);
    let sps = timing.steps_per_sample;
    let ts_eff = sps as f64 * dt;
    let source = cfg.regime.source();

    let mut states = initialize(cfg)?;
    let lambdas = |states: &[NodeState]| states.iter().map(|s| s.lambda.clone()).collect::<Vec<_>>();
    let mut comm = CommState::new(cfg.regime, &lambdas(&states))?;
    let mut xs = primal_points(costs, &states, 0.0)?;
    let pts: Vec<StoragePoint> = probes
        .iter()
        .zip(&states)
        .zip(&xs)
        .map(|((p, s), x)| p.evaluate_with(s, x))
        .collect();
    let m = cfg.dim();
    let mut monitor = Monitor {
        prev_step: pts.clone(),
        prev_sample: pts.clone(),
        prev_sample_u: vec![DVector::zeros(m); cfg.n()],
        z_acc: vec![0.0; cfg.n()],
        sum_gamma0: states.iter().fold(DVector::zeros(m), |acc, s| acc + &s.gamma),
        lyapunov_prev: 0.0,
        ts_eff,
        diag: Diagnostics::default(),
        probes,
    };
    monitor.lyapunov_prev = monitor.lyapunov(&pts);
    monitor.diag.lyapunov_scale = monitor.lyapunov_prev;
    monitor.every_step(costs, &states);

    let mut records = Vec::with_capacity((timing.steps / cfg.record_every as u64 + 2) as usize);
    let mut current_segment: Option<usize> = None;
    let mut abort_err = None;
    let mut pts = pts;
    let mut s: u64 = 0;
    loop {
        let t = s as f64 * dt;
        if s % sps == 0 && s < timing.steps {
            let k = s / sps;
            if s > 0 {
                monitor.at_sample(&pts);
            }
            let seg = segment_at(&cfg.schedule, t);
            let g: &WeightedDigraph = &cfg.schedule.segments()[seg].graph;
            if let Some(prev) = current_segment {
                if prev != seg {
                    comm.on_edge_change(&cfg.schedule.segments()[prev].graph, g);
                }
            }
            current_segment = Some(seg);
            let lam = lambdas(&states);
            match cfg.regime {
                Regime::Continuous => comm.refresh_continuous(&lam, g, cfg.beta),
                Regime::Periodic { .. } => comm.sample_and_hold(k, t, &lam, g, cfg.beta)?,
                Regime::Event { .. } => {
                    comm.event_step(k, t, &lam, g, cfg.beta, &params)?;
                }
            }
            monitor.open_interval(&pts, comm.held_u());
        } else if s == timing.steps && s % sps == 0 {
            monitor.at_sample(&pts);
        }

        if s % cfg.record_every as u64 == 0 || s == timing.steps {
            records.push(make_record(
                t,
                costs,
                &states,
                &xs,
                comm.held_u(),
                source,
                &pts,
                &oracle.lambda_star,
            ));
        }
        if s == timing.steps {
            break;
        }

        let next = step_with(costs, alpha, &states, &xs, comm.held_u(), t, dt)
            .and_then(|next| primal_points(costs, &next, t + dt).map(|x| (next, x)));
        match next {
            Ok((next, next_xs)) => {
                states = next;
                xs = next_xs;
            }
            Err(e) => {
                abort_err = Some(e);
                break;
            }
        }
        s += 1;
        pts = monitor
            .probes
            .iter()
            .zip(&states)
            .zip(&xs)
            .map(|((p, st), x)| p.evaluate_with(st, x))
            .collect();
        monitor.after_step(&pts, comm.held_u(), dt);
        monitor.every_step(costs, &states);
    }
    if abort_err.is_some() && records.last().map(|r| r.t) != Some(s as f64 * dt) {
        records.push(make_record(
            s as f64 * dt,
            costs,
            &states,
            &xs,
            comm.held_u(),
            source,
            &pts,
            &oracle.lambda_star,
        ));
    }

    Ok(Trajectory {
        regime: cfg.regime,
        dt,
        records,
        gamma_star,
        certificate,
        transmissions: comm.transmissions().to_vec(),
        idempotent_triggers: comm.idempotent_triggers().to_vec(),
        resyncs: comm.resyncs(),
        events: comm.into_trigger_log(),
        oracle,
        diagnostics: monitor.diag,
        steps_completed: s,
        abort: abort_err,
    })
}
