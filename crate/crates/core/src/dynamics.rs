//! Node dynamics and passivity diagnostics.
//!
//! Each node runs
//!
//! ```text
//! λ̇ = -α(h(λ) - d) - γ
//! γ̇ = -u
//! ```
//!
//! with a coupling input `u = β Σ_j a_ij (v_j - v_i)` built from whatever the
//! communication layer provides (`λ`, sampled `λ̄`, or broadcast `λ̂`).
//!
//! The error system around the equilibrium `(λ*, γ*)` is input feed-forward
//! passive from `u` to `Δλ = λ - λ*` with index `-l²/α²`, certified by the
//! storage function
//!
//! ```text
//! V = (η/2)‖z‖² - Δλᵀ Δγ + α (J(λ*) - J(λ) + ∇J(λ*)ᵀ Δλ),   z = λ̇,  η = 2l/α.
//! ```
//!
//! Under sampling with period `T_s` the shortage grows to `l²/α² + T_s l/α`
//! for `V̄ = (V + κ‖z‖²)/T_s`, `κ = T_s/2`. The residual functions below
//! measure how far a recorded trajectory is from violating these
//! dissipation inequalities (`≤ 0` means satisfied).

use nalgebra::DVector;

use crate::costs::CostSpec;
use crate::error::{Error, Result};
use crate::graph::WeightedDigraph;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub lambda: DVector<f64>,
    pub gamma: DVector<f64>,
}

impl NodeState {
    pub fn new(lambda: DVector<f64>, gamma: DVector<f64>) -> Self {
        Self { lambda, gamma }
    }
}

/// Which copy of the neighbours' multipliers produced a coupling input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputSource {
    Continuous,
    Sampled,
    Broadcast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingInput {
    pub u: DVector<f64>,
    pub source: InputSource,
}

/// Right-hand side `(λ̇, γ̇)` of one node for a fixed input `u`.
pub fn node_rhs(
    state: &NodeState,
    u: &DVector<f64>,
    cost: &CostSpec,
    alpha: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let x = cost.inverse_gradient(&state.lambda)?;
    Ok((lambda_rate(&state.gamma, &x, cost, alpha), -u))
}

/// `λ̇ = -α(x - d) - γ` with `x = h(λ)` already evaluated.
fn lambda_rate(gamma: &DVector<f64>, x: &DVector<f64>, cost: &CostSpec, alpha: f64) -> DVector<f64> {
    -alpha * (x - cost.demand()) - gamma
}

/// `β Σ_j a_ij (v_j - v_i)` where `neighbor(j)` yields node `i`'s copy of
/// `v_j`.
pub fn coupling_with<'a>(
    g: &WeightedDigraph,
    i: usize,
    beta: f64,
    own: &DVector<f64>,
    neighbor: impl Fn(usize) -> &'a DVector<f64>,
) -> DVector<f64> {
    let mut u = DVector::zeros(own.len());
    for (j, a) in g.in_neighbors(i) {
        u += a * (neighbor(j) - own);
    }
    u * beta
}

/// Consensus coupling `u_i = β Σ_j a_ij (v_j - v_i)` over a shared vector set.
pub fn coupling(values: &[DVector<f64>], g: &WeightedDigraph, i: usize, beta: f64) -> DVector<f64> {
    coupling_with(g, i, beta, &values[i], |j| &values[j])
}

/// Storage evaluation at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct StoragePoint {
    /// Storage `V`.
    pub v: f64,
    /// `z = Δλ̇`, taken from the analytic right-hand side.
    pub z: DVector<f64>,
    /// `Δλ = λ - λ*`.
    pub dlambda: DVector<f64>,
}

impl StoragePoint {
    /// Sampled storage `V̄ = (V + κ‖z‖²)/T_s` with `κ = T_s/2`.
    pub fn sampled(&self, ts: f64) -> f64 {
        (self.v + 0.5 * ts * self.z.norm_squared()) / ts
    }
}

/// Storage-function evaluator for one node around a fixed equilibrium.
#[derive(Debug, Clone)]
pub struct StorageProbe {
    cost: CostSpec,
    alpha: f64,
    eta: f64,
    lambda_star: DVector<f64>,
    gamma_star: DVector<f64>,
    j_star: f64,
    grad_star: DVector<f64>,
}

impl StorageProbe {
    /// Builds the probe for equilibrium multiplier `λ*`; the matching
    /// integral state is `γ* = -α(h(λ*) - d)`.
    pub fn new(cost: &CostSpec, lambda_star: &DVector<f64>, alpha: f64) -> Result<Self> {
        let dual = cost.dual();
        let grad_star = dual.gradient(lambda_star)?;
        Ok(Self {
            cost: cost.clone(),
            alpha,
            eta: 2.0 * cost.lipschitz() / alpha,
            lambda_star: lambda_star.clone(),
            gamma_star: -alpha * &grad_star,
            j_star: dual.value(lambda_star)?,
            grad_star,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn gamma_star(&self) -> &DVector<f64> {
        &self.gamma_star
    }

    /// `l/α`.
    pub fn l_over_alpha(&self) -> f64 {
        self.cost.lipschitz() / self.alpha
    }

    /// Continuous IFP shortage `l²/α²`.
    pub fn nu(&self) -> f64 {
        self.l_over_alpha().powi(2)
    }

    /// Sampled IFP shortage `l²/α² + T_s l/α`.
    pub fn nu_sampled(&self, ts: f64) -> f64 {
        self.nu() + ts * self.l_over_alpha()
    }

    pub fn evaluate(&self, state: &NodeState) -> Result<StoragePoint> {
        let x = self.cost.inverse_gradient(&state.lambda)?;
        Ok(self.evaluate_with(state, &x))
    }

    /// Same as [`StorageProbe::evaluate`] with `x = h(λ)` supplied.
    pub fn evaluate_with(&self, state: &NodeState, x: &DVector<f64>) -> StoragePoint {
        let d = self.cost.demand();
        let z = lambda_rate(&state.gamma, x, &self.cost, self.alpha);
        let dlambda = &state.lambda - &self.lambda_star;
        let dgamma = &state.gamma - &self.gamma_star;
        let j = -self.cost.value(x) - state.lambda.dot(&(d - x));
        let bregman = self.j_star - j + self.grad_star.dot(&dlambda);
        let v = 0.5 * self.eta * z.norm_squared() - dlambda.dot(&dgamma) + self.alpha * bregman;
        StoragePoint { v, z, dlambda }
    }
}

/// Storage `V` of one node at `state`.
pub fn storage_value(
    state: &NodeState,
    lambda_star: &DVector<f64>,
    cost: &CostSpec,
    alpha: f64,
) -> Result<f64> {
    Ok(StorageProbe::new(cost, lambda_star, alpha)?.evaluate(state)?.v)
}

/// `ΔV - ∫(Δλᵀu + ν‖u‖²)` over one step with `u` held, trapezoidal in `Δλ`.
pub fn continuous_gap(p0: &StoragePoint, p1: &StoragePoint, u: &DVector<f64>, dt: f64, nu: f64) -> f64 {
    let supply = 0.5 * u.dot(&(&p0.dlambda + &p1.dlambda)) * dt + nu * u.norm_squared() * dt;
    p1.v - p0.v - supply
}

/// `V̄(k+1) - V̄(k) - (Δλ̄ᵀū + ν̄‖ū‖²)` over one sampling period.
pub fn sampled_gap(pk: &StoragePoint, pk1: &StoragePoint, ubar: &DVector<f64>, ts: f64, nu_sampled: f64) -> f64 {
    pk1.sampled(ts) - pk.sampled(ts) - (pk.dlambda.dot(ubar) + nu_sampled * ubar.norm_squared())
}

/// `(l/α)Δ‖z‖² - ((l/α)²∫‖u‖² - ∫‖z‖²)` over one step, trapezoidal in `‖z‖²`.
pub fn z_gain_gap(p0: &StoragePoint, p1: &StoragePoint, u: &DVector<f64>, dt: f64, l_over_alpha: f64) -> f64 {
    let (z0, z1) = (p0.z.norm_squared(), p1.z.norm_squared());
    l_over_alpha * (z1 - z0) - (l_over_alpha.powi(2) * u.norm_squared() * dt - 0.5 * (z0 + z1) * dt)
}

/// One recorded point of a node trajectory; `u` is the input held over
/// `[t, t_next)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSample {
    pub t: f64,
    pub state: NodeState,
    pub u: DVector<f64>,
}

fn evaluate_all(samples: &[NodeSample], probe: &StorageProbe) -> Result<Vec<StoragePoint>> {
    samples.iter().map(|s| probe.evaluate(&s.state)).collect()
}

fn require_two(samples: &[NodeSample]) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::InvalidQuery(format!(
            "trajectory segment has {} points, need at least 2",
            samples.len()
        )));
    }
    Ok(())
}

/// Largest violation of `V̇ ≤ Δλᵀu + (l²/α²)‖u‖²` between consecutive
/// samples.
pub fn ifp_residual_continuous(samples: &[NodeSample], probe: &StorageProbe) -> Result<f64> {
    require_two(samples)?;
    let pts = evaluate_all(samples, probe)?;
    Ok(samples
        .windows(2)
        .zip(pts.windows(2))
        .map(|(s, p)| continuous_gap(&p[0], &p[1], &s[0].u, s[1].t - s[0].t, probe.nu()))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Largest violation of the sampled dissipation inequality over consecutive
/// sampling instants. `samples` must sit on consecutive points `kT_s` and
/// carry the held input `ū(k)`.
pub fn ifp_residual_sampled(samples: &[NodeSample], probe: &StorageProbe, ts: f64) -> Result<f64> {
    require_two(samples)?;
    if !(ts > 0.0) {
        return Err(Error::Parameter(format!("ts = {ts} must be positive")));
    }
    for s in samples {
        let k = s.t / ts;
        if (k - k.round()).abs() > 1e-9 * k.abs().max(1.0) {
            return Err(Error::Scheduling(format!("sample at t = {} is not on the T_s = {ts} grid", s.t)));
        }
    }
    for w in samples.windows(2) {
        if ((w[1].t - w[0].t) / ts - 1.0).abs() > 1e-9 {
            return Err(Error::Scheduling(format!(
                "samples at t = {} and {} are not consecutive sampling instants",
                w[0].t, w[1].t
            )));
        }
    }
    let pts = evaluate_all(samples, probe)?;
    let nu = probe.nu_sampled(ts);
    Ok(samples
        .windows(2)
        .zip(pts.windows(2))
        .map(|(s, p)| sampled_gap(&p[0], &p[1], &s[0].u, ts, nu))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Largest violation of the integrated `u -> z` gain inequality over
/// consecutive intervals of `steps_per_interval` samples.
pub fn z_gain_check(samples: &[NodeSample], probe: &StorageProbe, steps_per_interval: usize) -> Result<f64> {
    require_two(samples)?;
    if steps_per_interval == 0 {
        return Err(Error::Parameter("steps_per_interval must be positive".into()));
    }
    let pts = evaluate_all(samples, probe)?;
    let gaps: Vec<f64> = samples
        .windows(2)
        .zip(pts.windows(2))
        .map(|(s, p)| z_gain_gap(&p[0], &p[1], &s[0].u, s[1].t - s[0].t, probe.l_over_alpha()))
        .collect();
    Ok(gaps
        .chunks(steps_per_interval)
        .map(|c| c.iter().sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max))
}
