use ifp_dispatch::costs::{LogSumExp, ScalarCost};
use ifp_dispatch::{run, CostSpec, GraphSchedule, Regime, ScenarioConfig, Segment, Trajectory, WeightedDigraph};
use nalgebra::DVector;

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(x)
}

/// Scalar cost `ln(e^{2x} + 1) + x²/4` plus a linear term; its Hessian stays
/// within `(0.5, 1.5]`.
fn lse_cost(lin: f64, demand: f64) -> CostSpec {
    let term = LogSumExp::with_slopes(vec![2.0, 0.0]).unwrap();
    let coord = ScalarCost::new(vec![term], 0.5, lin).unwrap();
    CostSpec::separable(vec![coord], 0.0, v(&[demand]), 1.5).unwrap()
}

/// Three nonlinear nodes on a ring whose direction flips every second.
fn nonlinear_three(regime: Regime, horizon: f64, dt: f64) -> ScenarioConfig {
    let costs = vec![lse_cost(0.3, 1.0), lse_cost(-0.4, -0.5), lse_cost(0.0, 0.8)];
    let fwd = WeightedDigraph::directed_cycle(3, &[0, 1, 2]).unwrap();
    let back = WeightedDigraph::directed_cycle(3, &[0, 2, 1]).unwrap();
    let pattern = [
        Segment { start: 0.0, graph: fwd },
        Segment { start: 1.0, graph: back },
    ];
    let schedule = GraphSchedule::periodic(&pattern, 2.0, horizon).unwrap();
    let mut cfg = ScenarioConfig::new(costs, schedule, 1.0, 0.2, regime);
    cfg.dt = dt;
    cfg.x0 = Some(vec![v(&[1.5]), v(&[-1.0]), v(&[0.2])]);
    cfg
}

fn terminal_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    let (sa, sb) = (&a.last().states, &b.last().states);
    assert_eq!(a.last().t, b.last().t);
    sa.iter()
        .zip(sb)
        .map(|(x, y)| (&x.lambda - &y.lambda).amax().max((&x.gamma - &y.gamma).amax()))
        .fold(0.0, f64::max)
}

fn refinement_order(regime: Regime, horizon: f64, dts: [f64; 3]) -> f64 {
    let runs: Vec<_> = dts.iter().map(|&dt| run(&nonlinear_three(regime, horizon, dt)).unwrap()).collect();
    for r in &runs {
        assert!(r.abort.is_none());
    }
    let e1 = terminal_gap(&runs[0], &runs[1]);
    let e2 = terminal_gap(&runs[1], &runs[2]);
    (e1 / e2).log2()
}

#[test]
fn rk4_is_fourth_order_between_samples() {
    // Inputs are piecewise constant on the sampling grid, so each interval is
    // an autonomous ODE integrated by classical RK4.
    let order = refinement_order(Regime::Periodic { ts: 0.4 }, 2.0, [0.02, 0.01, 0.005]);
    assert!(order > 3.7 && order < 4.3, "observed order {order}");
}

#[test]
fn continuous_regime_converges_at_first_order() {
    // The coupling input is frozen over each step, which caps the order at one.
    let order = refinement_order(Regime::Continuous, 2.0, [0.004, 0.002, 0.001]);
    assert!(order > 0.9, "observed order {order}");
}

#[test]
fn periodic_with_one_step_period_matches_continuous() {
    let cont = run(&nonlinear_three(Regime::Continuous, 6.0, 1e-3)).unwrap();
    let per = run(&nonlinear_three(Regime::Periodic { ts: 1e-3 }, 6.0, 1e-3)).unwrap();
    assert!(terminal_gap(&cont, &per) <= 1e-6);
}

#[test]
fn event_with_zero_coefficient_matches_periodic() {
    let mut cfg = nonlinear_three(Regime::Periodic { ts: 0.1 }, 6.0, 1e-3);
    cfg.beta = 0.05;
    let per = run(&cfg).unwrap();
    cfg.regime = Regime::Event {
        ts: 0.1,
        c: 0.5,
        coefficient_override: Some(0.0),
    };
    let ev = run(&cfg).unwrap();
    assert!(terminal_gap(&per, &ev) <= 1e-12);
    for (a, b) in per.records.iter().zip(&ev.records) {
        for (x, y) in a.states.iter().zip(&b.states) {
            assert!((&x.lambda - &y.lambda).amax() <= 1e-12);
        }
    }
}

#[test]
fn small_trigger_constant_approaches_periodic() {
    let mut cfg = nonlinear_three(Regime::Periodic { ts: 0.1 }, 6.0, 1e-3);
    cfg.beta = 0.05;
    let per = run(&cfg).unwrap();
    let gap_for = |c: f64| {
        let mut e = cfg.clone();
        e.regime = Regime::Event {
            ts: 0.1,
            c,
            coefficient_override: None,
        };
        let traj = run(&e).unwrap();
        (terminal_gap(&per, &traj), traj.transmissions.iter().sum::<u64>())
    };
    let (coarse, tx_coarse) = gap_for(0.9);
    let (fine, tx_fine) = gap_for(1e-6);
    assert!(fine < coarse, "{fine} vs {coarse}");
    assert!(fine < 1e-4, "{fine}");
    assert!(tx_fine >= tx_coarse);
}

#[test]
fn seeded_runs_are_reproducible() {
    let mut cfg = nonlinear_three(Regime::Periodic { ts: 0.2 }, 4.0, 1e-3);
    cfg.x0 = None;
    cfg.seed = 42;
    let a = run(&cfg).unwrap();
    let b = run(&cfg).unwrap();
    assert_eq!(a.records, b.records);
    cfg.seed = 43;
    let c = run(&cfg).unwrap();
    assert_ne!(a.records[0], c.records[0]);
}
