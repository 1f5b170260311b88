//! CSV and summary writers. Floats use 17 significant digits, lines end in LF.

use std::io::{self, Write};

use ifp_dispatch::engine::Summary;
use ifp_dispatch::{Regime, ScenarioConfig, Trajectory};

/// Round-trippable scientific notation (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn trajectory_header(m: usize) -> String {
    let mut cols = vec!["t".to_string(), "node".to_string()];
    for prefix in ["lambda", "gamma", "u"] {
        cols.extend((0..m).map(|k| format!("{prefix}_{k}")));
    }
    cols.extend(["V", "consensus_err", "dual_residual", "dist_to_lstar"].map(String::from));
    cols.join(",")
}

/// One row per recorded time and node.
pub fn write_trajectory<W: Write>(mut w: W, traj: &Trajectory) -> io::Result<()> {
    let m = traj.oracle.lambda_star.len();
    writeln!(w, "{}", trajectory_header(m))?;
    for rec in &traj.records {
        for (i, state) in rec.states.iter().enumerate() {
            let mut row = vec![fmt_f64(rec.t), i.to_string()];
            row.extend(state.lambda.iter().map(|&x| fmt_f64(x)));
            row.extend(state.gamma.iter().map(|&x| fmt_f64(x)));
            row.extend(rec.inputs[i].u.iter().map(|&x| fmt_f64(x)));
            row.push(fmt_f64(rec.storage[i]));
            row.push(fmt_f64(rec.consensus_err));
            row.push(fmt_f64(rec.dual_residual));
            row.push(fmt_f64(rec.dist_to_lstar[i]));
            writeln!(w, "{}", row.join(","))?;
        }
    }
    Ok(())
}

pub fn write_events<W: Write>(mut w: W, traj: &Trajectory) -> io::Result<()> {
    writeln!(w, "node,k,t,e_norm_sq,threshold")?;
    for e in &traj.events {
        writeln!(
            w,
            "{},{},{},{},{}",
            e.node,
            e.k,
            fmt_f64(e.t),
            fmt_f64(e.e_norm_sq),
            fmt_f64(e.threshold)
        )?;
    }
    Ok(())
}

fn regime_params(regime: Regime) -> (Option<f64>, Option<f64>) {
    match regime {
        Regime::Continuous => (None, None),
        Regime::Periodic { ts } => (Some(ts), None),
        Regime::Event { ts, c, .. } => (Some(ts), Some(c)),
    }
}

/// Flat `key=value` report of a run.
pub fn summary_lines(cfg: &ScenarioConfig, traj: &Trajectory, s: &Summary) -> Vec<String> {
    let mut out = Vec::new();
    let mut kv = |k: &str, v: String| out.push(format!("{k}={v}"));
    let (ts, c) = regime_params(cfg.regime);
    kv("regime", s.regime.to_string());
    kv("nodes", cfg.n().to_string());
    kv("alpha", fmt_f64(cfg.alpha));
    kv("beta", fmt_f64(cfg.beta));
    if let Some(ts) = ts {
        kv("ts", fmt_f64(ts));
    }
    if let Some(c) = c {
        kv("c", fmt_f64(c));
    }
    kv("horizon", fmt_f64(cfg.horizon));
    kv("dt", fmt_f64(cfg.dt));
    kv("seed", cfg.seed.to_string());
    kv("steps", s.steps.to_string());
    kv("final_time", fmt_f64(s.final_time));
    kv("aborted", s.aborted.clone().unwrap_or_else(|| "none".into()));
    kv("certificate_valid", s.certificate_valid.to_string());
    kv("certificate_min_margin", fmt_f64(s.certificate_min_margin));
    for (k, x) in s.lambda_star.iter().enumerate() {
        kv(&format!("lambda_star_{k}"), fmt_f64(*x));
    }
    kv("oracle_residual", fmt_f64(traj.oracle.residual));
    kv("terminal_consensus_err", fmt_f64(s.terminal_consensus_err));
    kv("terminal_dual_residual", fmt_f64(s.terminal_dual_residual));
    kv("primal_feasibility", fmt_f64(s.terminal_dual_residual));
    kv("max_dist_to_lstar", fmt_f64(s.max_dist_to_lstar));
    for (i, d) in s.dist_to_lstar.iter().enumerate() {
        kv(&format!("dist_to_lstar_{i}"), fmt_f64(*d));
    }
    for (i, t) in s.transmissions.iter().enumerate() {
        kv(&format!("transmissions_{i}"), t.to_string());
    }
    kv("total_transmissions", s.total_transmissions.to_string());
    kv("idempotent_triggers", traj.idempotent_triggers.iter().sum::<u64>().to_string());
    kv("edge_resyncs", traj.resyncs.to_string());
    kv(
        "min_inter_event_samples",
        s.min_inter_event_samples.map_or("none".into(), |g| g.to_string()),
    );
    let d = &s.diagnostics;
    kv("ifp_continuous_max", fmt_f64(d.ifp_continuous));
    kv("ifp_sampled_max", fmt_f64(d.ifp_sampled));
    kv("z_gain_max", fmt_f64(d.z_gain));
    kv("conservation_max", fmt_f64(d.conservation));
    kv("min_boundary_distance", fmt_f64(d.min_boundary_distance));
    kv("lyapunov_max_increase", fmt_f64(d.lyapunov_increase));
    out
}

pub fn write_summary<W: Write>(mut w: W, cfg: &ScenarioConfig, traj: &Trajectory) -> io::Result<()> {
    for line in summary_lines(cfg, traj, &traj.summary()) {
        writeln!(w, "{line}")?;
    }
    Ok(())
}
