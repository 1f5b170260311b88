use ifp_dispatch::costs::ten_node_costs;
use ifp_dispatch::Regime;
use ifp_dispatch_bench::{perturbed_states, ten_node_config};

#[test]
fn perturbed_states_stay_in_domain() {
    let costs = ten_node_costs();
    for (cost, s) in costs.iter().zip(perturbed_states(&costs)) {
        assert!(cost.inverse_gradient(&s.lambda).is_ok());
    }
}

#[test]
fn short_config_validates() {
    let cfg = ten_node_config(Regime::Periodic { ts: 0.5 }, 0.05, 5.0);
    assert_eq!(cfg.validate().unwrap().steps, 5000);
}
