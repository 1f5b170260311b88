//! Fixtures shared by the benchmarks.

use ifp_dispatch::costs::ten_node_costs;
use ifp_dispatch::graph::default_ten_node_schedule;
use ifp_dispatch::{solve_oracle, CostSpec, NodeState, Regime, ScenarioConfig};
use nalgebra::DVector;

/// Ten-node states displaced from the optimum by a fixed, node-dependent
/// offset that stays inside every dual domain.
pub fn perturbed_states(costs: &[CostSpec]) -> Vec<NodeState> {
    let sol = solve_oracle(costs).expect("benchmark problem has an optimum");
    sol.gamma_star(costs, 1.0)
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            let shift = 1e-3 * (i as f64 - 4.5);
            let lambda = &sol.lambda_star + DVector::from_element(sol.lambda_star.len(), shift);
            NodeState::new(lambda, g)
        })
        .collect()
}

/// The ten-node benchmark shortened to `horizon` seconds.
pub fn ten_node_config(regime: Regime, beta: f64, horizon: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(ten_node_costs(), default_ten_node_schedule(), 1.0, beta, regime);
    cfg.horizon = horizon;
    cfg
}
