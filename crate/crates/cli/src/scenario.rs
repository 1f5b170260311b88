//! TOML scenario files.
//!
//! ```toml
//! [problem]
//! builtin = "ten_node_default"
//!
//! [gains]
//! alpha = 1.0
//! beta = 0.05
//!
//! [comm]
//! regime = "periodic"
//! ts = 0.5
//!
//! [sim]
//! horizon = 300.0
//! seed = 7
//! ```
//!
//! Custom problems list nodes under `[[problem.nodes]]` with
//! `family = "quadratic"` (`q`, optional `b` and `c`) or
//! `family = "separable"` (`coords`, optional `constant`), plus the demand
//! `d` and Lipschitz constant `l`. Custom graphs list
//! `[[graph.segments]]` with a `start` time and either a row-major `weights`
//! matrix (row `i` holds the weights of edges into node `i`) or a `cycle`
//! visiting order; an optional `period` repeats the segment pattern.

use std::ops::Range;
use std::path::Path;

use ifp_dispatch::costs::{ten_node_costs, LogSumExp, ScalarCost};
use ifp_dispatch::graph::{ten_node_schedule, GraphSchedule, Segment, WeightedDigraph, TEN_NODE_HORIZON};
use ifp_dispatch::{CostSpec, Regime, ScenarioConfig};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use toml::Spanned;

use crate::CliError;

pub const BUILTIN_PROBLEM: &str = "ten_node_default";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSpec {
    problem: Spanned<ProblemSpec>,
    graph: Option<Spanned<GraphSpec>>,
    gains: Spanned<GainsSpec>,
    comm: Option<Spanned<CommSpec>>,
    sim: Option<Spanned<SimSpec>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemSpec {
    builtin: Option<String>,
    m: Option<usize>,
    nodes: Option<Vec<Spanned<NodeSpec>>>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
enum NodeSpec {
    Quadratic {
        q: Vec<Vec<f64>>,
        b: Option<Vec<f64>>,
        c: Option<f64>,
        d: Vec<f64>,
        l: f64,
    },
    Separable {
        coords: Vec<CoordSpec>,
        constant: Option<f64>,
        d: Vec<f64>,
        l: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoordSpec {
    #[serde(default)]
    terms: Vec<TermSpec>,
    #[serde(default)]
    quad: f64,
    #[serde(default)]
    lin: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermSpec {
    slopes: Vec<f64>,
    offsets: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphSpec {
    builtin: Option<String>,
    period: Option<f64>,
    segments: Option<Vec<Spanned<SegmentSpec>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentSpec {
    start: f64,
    n: Option<usize>,
    weights: Option<Vec<f64>>,
    cycle: Option<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GainsSpec {
    #[serde(default = "one")]
    alpha: f64,
    beta: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CommSpec {
    regime: Spanned<String>,
    ts: Option<f64>,
    c: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimSpec {
    horizon: Option<f64>,
    dt: Option<f64>,
    seed: Option<u64>,
    record_every: Option<usize>,
    x0: Option<Vec<Vec<f64>>>,
}

/// Turns byte offsets into 1-based line numbers.
struct Lines<'a>(&'a str);

impl Lines<'_> {
    fn line(&self, span: Range<usize>) -> usize {
        let end = span.start.min(self.0.len());
        self.0[..end].bytes().filter(|&b| b == b'\n').count() + 1
    }

    fn err(&self, span: Range<usize>, message: impl Into<String>) -> CliError {
        CliError::Parse {
            line: Some(self.line(span)),
            message: message.into(),
        }
    }
}

pub fn load(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<ScenarioConfig, CliError> {
    let lines = Lines(text);
    let spec: FileSpec = toml::from_str(text).map_err(|e| CliError::Parse {
        line: e.span().map(|s| lines.line(s)),
        message: e.message().trim().to_string(),
    })?;

    let problem_span = spec.problem.span();
    let problem = spec.problem.into_inner();
    let costs = build_costs(&lines, problem_span.clone(), &problem)?;
    let is_builtin = problem.builtin.is_some();
    let n = costs.len();
    let m = costs[0].dim();

    let sim_span = spec.sim.as_ref().map_or(0..0, |s| s.span());
    let sim = spec.sim.map(Spanned::into_inner).unwrap_or_default();
    let horizon = sim.horizon.unwrap_or(TEN_NODE_HORIZON);
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(lines.err(sim_span, format!("horizon = {horizon} must be positive")));
    }

    let schedule = match spec.graph {
        None if is_builtin => ten_node_schedule(horizon).map_err(|e| lines.err(problem_span.clone(), e.to_string()))?,
        None => {
            return Err(lines.err(problem_span, "a [graph] section is required for custom problems"));
        }
        Some(g) => build_schedule(&lines, g.span(), g.into_inner(), horizon)?,
    };
    if schedule.n() != n {
        return Err(CliError::Parse {
            line: None,
            message: format!("graph has {} nodes but the problem has {n}", schedule.n()),
        });
    }

    let gains_span = spec.gains.span();
    let gains = spec.gains.into_inner();
    let regime = match spec.comm {
        None => Regime::Continuous,
        Some(c) => build_regime(&lines, c.span(), c.into_inner())?,
    };

    let mut cfg = ScenarioConfig::new(costs, schedule, gains.alpha, gains.beta, regime);
    cfg.horizon = horizon;
    if let Some(dt) = sim.dt {
        cfg.dt = dt;
    }
    if let Some(seed) = sim.seed {
        cfg.seed = seed;
    }
    if let Some(r) = sim.record_every {
        cfg.record_every = r;
    }
    if let Some(x0) = sim.x0 {
        if x0.len() != n || x0.iter().any(|x| x.len() != m) {
            return Err(lines.err(sim_span, format!("x0 must list {n} points of length {m}")));
        }
        cfg.x0 = Some(x0.into_iter().map(DVector::from_vec).collect());
    }
    cfg.validate().map_err(|e| {
        let span = match e {
            ifp_dispatch::Error::Config(ref msg) if msg.starts_with("alpha") || msg.starts_with("beta") => gains_span,
            _ => sim_span,
        };
        lines.err(span, e.to_string())
    })?;
    Ok(cfg)
}

fn build_costs(lines: &Lines, span: Range<usize>, p: &ProblemSpec) -> Result<Vec<CostSpec>, CliError> {
    let costs = match (&p.builtin, &p.nodes) {
        (Some(name), None) if name == BUILTIN_PROBLEM => ten_node_costs(),
        (Some(name), None) => {
            return Err(lines.err(span, format!("unknown builtin problem `{name}` (expected `{BUILTIN_PROBLEM}`)")));
        }
        (None, Some(nodes)) if !nodes.is_empty() => nodes
            .iter()
            .map(|node| build_node(node.get_ref()).map_err(|msg| lines.err(node.span(), msg)))
            .collect::<Result<Vec<_>, _>>()?,
        (Some(_), Some(_)) => return Err(lines.err(span, "give either `builtin` or `nodes`, not both")),
        _ => return Err(lines.err(span, "[problem] needs `builtin` or at least one node")),
    };
    let m = costs[0].dim();
    if let Some(i) = costs.iter().position(|c| c.dim() != m) {
        return Err(lines.err(span, format!("node {i} has dimension {}, node 0 has {m}", costs[i].dim())));
    }
    if let Some(want) = p.m {
        if want != m {
            return Err(lines.err(span, format!("m = {want} but the nodes have dimension {m}")));
        }
    }
    Ok(costs)
}

fn build_node(node: &NodeSpec) -> Result<CostSpec, String> {
    match node {
        NodeSpec::Quadratic { q, b, c, d, l } => {
            let m = q.len();
            if q.iter().any(|row| row.len() != m) {
                return Err(format!("q must be a square {m}x{m} matrix"));
            }
            let q = DMatrix::from_row_iterator(m, m, q.iter().flatten().copied());
            let b = DVector::from_vec(b.clone().unwrap_or_else(|| vec![0.0; m]));
            CostSpec::quadratic(q, b, c.unwrap_or(0.0), DVector::from_vec(d.clone()), *l).map_err(|e| e.to_string())
        }
        NodeSpec::Separable { coords, constant, d, l } => {
            let coords = coords
                .iter()
                .map(|c| {
                    let terms = c
                        .terms
                        .iter()
                        .map(|t| match &t.offsets {
                            Some(o) => LogSumExp::new(t.slopes.clone(), o.clone()),
                            None => LogSumExp::with_slopes(t.slopes.clone()),
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    ScalarCost::new(terms, c.quad, c.lin)
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?;
            CostSpec::separable(coords, constant.unwrap_or(0.0), DVector::from_vec(d.clone()), *l)
                .map_err(|e| e.to_string())
        }
    }
}

fn build_schedule(lines: &Lines, span: Range<usize>, g: GraphSpec, horizon: f64) -> Result<GraphSchedule, CliError> {
    match (g.builtin, g.segments) {
        (Some(name), None) if name == BUILTIN_PROBLEM => {
            if g.period.is_some() {
                return Err(lines.err(span, "`period` does not apply to the builtin graph"));
            }
            ten_node_schedule(horizon).map_err(|e| lines.err(span, e.to_string()))
        }
        (Some(name), None) => Err(lines.err(span, format!("unknown builtin graph `{name}`"))),
        (None, Some(segs)) if !segs.is_empty() => {
            let segments = segs
                .iter()
                .map(|s| build_segment(s.get_ref()).map_err(|msg| lines.err(s.span(), msg)))
                .collect::<Result<Vec<_>, _>>()?;
            let schedule = match g.period {
                Some(period) => GraphSchedule::periodic(&segments, period, horizon),
                None => GraphSchedule::new(segments, horizon),
            };
            schedule.map_err(|e| lines.err(span, e.to_string()))
        }
        (Some(_), Some(_)) => Err(lines.err(span, "give either `builtin` or `segments`, not both")),
        _ => Err(lines.err(span, "[graph] needs `builtin` or at least one segment")),
    }
}

fn build_segment(s: &SegmentSpec) -> Result<Segment, String> {
    let graph = match (&s.weights, &s.cycle) {
        (Some(w), None) => {
            let n = match s.n {
                Some(n) => n,
                None => {
                    let n = (w.len() as f64).sqrt().round() as usize;
                    if n * n != w.len() {
                        return Err(format!("{} weights do not form a square matrix", w.len()));
                    }
                    n
                }
            };
            WeightedDigraph::from_row_major(n, w)
        }
        (None, Some(order)) => WeightedDigraph::directed_cycle(s.n.unwrap_or(order.len()), order),
        _ => return Err("a segment needs exactly one of `weights` or `cycle`".into()),
    }
    .map_err(|e| e.to_string())?;
    Ok(Segment { start: s.start, graph })
}

fn build_regime(lines: &Lines, span: Range<usize>, c: CommSpec) -> Result<Regime, CliError> {
    let name = c.regime.get_ref().as_str();
    let need_ts = || c.ts.ok_or_else(|| lines.err(span.clone(), format!("regime `{name}` needs `ts`")));
    match name {
        "continuous" => {
            if c.ts.is_some() || c.c.is_some() {
                return Err(lines.err(span, "the continuous regime takes no `ts` or `c`"));
            }
            Ok(Regime::Continuous)
        }
        "periodic" => {
            if c.c.is_some() {
                return Err(lines.err(span, "the periodic regime takes no `c`"));
            }
            Ok(Regime::Periodic { ts: need_ts()? })
        }
        "event" => {
            let ts = need_ts()?;
            let cc = c.c.ok_or_else(|| lines.err(span.clone(), "regime `event` needs `c`"))?;
            if !(cc > 0.0 && cc < 1.0) {
                return Err(lines.err(span, format!("c = {cc} must lie in (0, 1)")));
            }
            Ok(Regime::Event {
                ts,
                c: cc,
                coefficient_override: None,
            })
        }
        other => Err(lines.err(
            c.regime.span(),
            format!("unknown regime `{other}` (expected continuous, periodic or event)"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE_NODE: &str = r#"
[problem]
[[problem.nodes]]
family = "quadratic"
q = [[1.0]]
d = [1.0]
l = 1.0

[[problem.nodes]]
family = "quadratic"
q = [[2.0]]
d = [-0.5]
l = 2.0

[[problem.nodes]]
family = "separable"
d = [0.5]
l = 1.0
coords = [{ terms = [{ slopes = [2.0, 0.0] }], quad = 0.5 }]

[graph]
period = 2.0
[[graph.segments]]
start = 0.0
cycle = [0, 1, 2]
[[graph.segments]]
start = 1.0
weights = [0, 1, 0,
           0, 0, 1,
           1, 0, 0]

[gains]
beta = 0.05

[comm]
regime = "periodic"
ts = 0.5

[sim]
horizon = 10.0
seed = 3
x0 = [[0.0], [1.0], [-1.0]]
"#;

    #[test]
    fn builtin_one_liner() {
        let cfg = parse("[problem]\nbuiltin = \"ten_node_default\"\n[gains]\nbeta = 0.05\n").unwrap();
        assert_eq!(cfg.n(), 10);
        assert_eq!(cfg.horizon, 300.0);
        assert_eq!(cfg.regime, Regime::Continuous);
        assert_eq!(cfg.alpha, 1.0);
        assert_eq!(cfg.schedule.segments().len(), 300);
    }

    #[test]
    fn custom_problem_and_graph() {
        let cfg = parse(THREE_NODE).unwrap();
        assert_eq!(cfg.n(), 3);
        assert_eq!(cfg.regime, Regime::Periodic { ts: 0.5 });
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.schedule.segments().len(), 10);
        let g1 = &cfg.schedule.segments()[1].graph;
        assert!(g1.has_edge(1, 0) && g1.has_edge(2, 1) && g1.has_edge(0, 2));
        let x0 = cfg.x0.as_ref().unwrap();
        assert_eq!(x0[2][0], -1.0);
    }

    fn line_of(text: &str) -> Option<usize> {
        match parse(text) {
            Err(CliError::Parse { line, .. }) => line,
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn errors_point_at_lines() {
        let bad_q = THREE_NODE.replace("q = [[2.0]]", "q = [[-2.0]]");
        assert_eq!(line_of(&bad_q), Some(9));
        let bad_regime = THREE_NODE.replace("regime = \"periodic\"", "regime = \"sometimes\"");
        assert_eq!(line_of(&bad_regime), Some(36));
        let typo = THREE_NODE.replace("beta = 0.05", "bta = 0.05");
        assert!(line_of(&typo).is_some());
        let syntax = THREE_NODE.replace("horizon = 10.0", "horizon = ");
        assert_eq!(line_of(&syntax), Some(40));
    }

    #[test]
    fn semantic_checks() {
        assert!(parse(&THREE_NODE.replace("ts = 0.5", "ts = 0.005")).is_ok());
        assert!(parse(&THREE_NODE.replace("ts = 0.5", "ts = 0.0025")).is_err());
        assert!(parse(&THREE_NODE.replace("cycle = [0, 1, 2]", "cycle = [0, 1]")).is_err());
        assert!(parse(&THREE_NODE.replace("x0 = [[0.0], [1.0], [-1.0]]", "x0 = [[0.0]]")).is_err());
        let no_graph = "[problem]\n[[problem.nodes]]\nfamily = \"quadratic\"\nq = [[1.0]]\nd = [0.0]\nl = 1.0\n[gains]\nbeta = 0.1\n";
        assert!(matches!(parse(no_graph), Err(CliError::Parse { line: Some(1), .. })));
        let event = "[problem]\nbuiltin = \"ten_node_default\"\n[gains]\nbeta = 0.09\n[comm]\nregime = \"event\"\nts = 0.1\n";
        assert!(parse(event).is_err());
        assert!(parse(&format!("{event}c = 0.5\n")).is_ok());
    }
}
