//! Weighted digraphs and piecewise-constant graph schedules.
//!
//! Weights follow the receiver-row convention: `a[(i, j)] > 0` means node `i`
//! receives from node `j` (edge `j -> i`). The in-degree of `i` is the row sum
//! and the out-degree is the column sum, so `L = D_in - A` has zero row sums
//! for every graph and zero column sums exactly when the graph is
//! weight-balanced.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Default tolerance for [`is_weight_balanced`].
pub const BALANCE_TOL: f64 = 1e-9;

/// A weighted digraph on `n` nodes with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    weights: DMatrix<f64>,
}

impl WeightedDigraph {
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        if weights.nrows() != weights.ncols() {
            return Err(Error::InvalidGraph(format!(
                "adjacency is {}x{}, expected square",
                weights.nrows(),
                weights.ncols()
            )));
        }
        if weights.nrows() == 0 {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        for i in 0..weights.nrows() {
            for j in 0..weights.ncols() {
                let w = weights[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvalidGraph(format!(
                        "a[{i}][{j}] = {w} must be finite and nonnegative"
                    )));
                }
                if i == j && w != 0.0 {
                    return Err(Error::InvalidGraph(format!("a[{i}][{i}] = {w}, diagonal must be zero")));
                }
            }
        }
        Ok(Self { weights })
    }

    /// Builds a graph from a dense row-major weight list.
    pub fn from_row_major(n: usize, weights: &[f64]) -> Result<Self> {
        if weights.len() != n * n {
            return Err(Error::InvalidGraph(format!(
                "expected {} weights for n = {n}, got {}",
                n * n,
                weights.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n, n, weights))
    }

    /// Builds a graph from directed edges `(from, to, weight)`.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut a = DMatrix::zeros(n, n);
        for &(from, to, w) in edges {
            if from >= n || to >= n {
                return Err(Error::InvalidGraph(format!("edge {from}->{to} out of range for n = {n}")));
            }
            a[(to, from)] = w;
        }
        Self::new(a)
    }

    pub fn empty(n: usize) -> Self {
        Self { weights: DMatrix::zeros(n, n) }
    }

    /// Unit-weight directed cycle visiting `order[0] -> order[1] -> ... -> order[0]`.
    pub fn directed_cycle(n: usize, order: &[usize]) -> Result<Self> {
        if order.len() != n {
            return Err(Error::InvalidGraph(format!("cycle order has {} entries, expected {n}", order.len())));
        }
        let mut seen = vec![false; n];
        for &v in order {
            if v >= n || std::mem::replace(&mut seen[v], true) {
                return Err(Error::InvalidGraph(format!("cycle order is not a permutation of 0..{n}")));
            }
        }
        let edges: Vec<_> = (0..n).map(|k| (order[k], order[(k + 1) % n], 1.0)).collect();
        Self::from_edges(n, &edges)
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Weight `a_ij` of the edge `j -> i`.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.weights[(to, from)] > 0.0
    }

    pub fn in_degree(&self, i: usize) -> f64 {
        self.weights.row(i).sum()
    }

    pub fn out_degree(&self, i: usize) -> f64 {
        self.weights.column(i).sum()
    }

    pub fn in_degrees(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.in_degree(i)).collect()
    }

    pub fn is_edgeless(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0)
    }

    /// In-neighbours of `i` (the nodes it receives from) with their weights.
    pub fn in_neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.n()).filter_map(move |j| {
            let w = self.weights[(i, j)];
            (w > 0.0).then_some((j, w))
        })
    }

    pub fn is_strongly_connected(&self) -> bool {
        strongly_connected(self.n(), |i, j| self.weights[(i, j)] > 0.0)
    }
}

/// Graph Laplacian `L = D_in - A`.
pub fn laplacian(g: &WeightedDigraph) -> DMatrix<f64> {
    let n = g.n();
    let mut l = -g.weights.clone();
    for i in 0..n {
        l[(i, i)] = g.in_degree(i);
    }
    l
}

/// Per-node balance report returned by [`is_weight_balanced`].
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    pub balanced: bool,
    /// `d_in - d_out` for every node.
    pub imbalance: Vec<f64>,
}

impl BalanceReport {
    pub fn worst(&self) -> f64 {
        self.imbalance.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

pub fn is_weight_balanced(g: &WeightedDigraph, tol: f64) -> BalanceReport {
    let imbalance: Vec<f64> = (0..g.n()).map(|i| g.in_degree(i) - g.out_degree(i)).collect();
    BalanceReport {
        balanced: imbalance.iter().all(|d| d.abs() <= tol),
        imbalance,
    }
}

/// Strong connectivity of the relation `edge(i, j)` meaning "i receives from
/// j": every node must reach and be reached from node 0.
fn strongly_connected(n: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for (w, seen_w) in seen.iter_mut().enumerate() {
                // forward: information flows v -> w, i.e. w receives from v.
                let linked = if forward { edge(w, v) } else { edge(v, w) };
                if linked && !*seen_w {
                    *seen_w = true;
                    queue.push_back(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub graph: WeightedDigraph,
}

/// A piecewise-constant graph `A(t)` on half-open segments
/// `[start_k, start_{k+1})`, the last one ending at `horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSchedule {
    segments: Vec<Segment>,
    horizon: f64,
}

impl GraphSchedule {
    pub fn new(segments: Vec<Segment>, horizon: f64) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::InvalidGraph("schedule has no segments".into()))?;
        if first.start != 0.0 {
            return Err(Error::InvalidGraph(format!("first segment starts at {}, expected 0", first.start)));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGraph(format!("horizon {horizon} must be positive")));
        }
        let n = first.graph.n();
        for (k, pair) in segments.windows(2).enumerate() {
            if !(pair[1].start > pair[0].start) {
                return Err(Error::InvalidGraph(format!(
                    "segment {} start {} not after {}",
                    k + 1,
                    pair[1].start,
                    pair[0].start
                )));
            }
        }
        for (k, seg) in segments.iter().enumerate() {
            if seg.graph.n() != n {
                return Err(Error::InvalidGraph(format!("segment {k} has n = {}, expected {n}", seg.graph.n())));
            }
            if seg.start >= horizon {
                return Err(Error::InvalidGraph(format!("segment {k} starts at {} beyond horizon {horizon}", seg.start)));
            }
        }
        Ok(Self { segments, horizon })
    }

    /// A single graph held over `[0, horizon)`.
    pub fn constant(graph: WeightedDigraph, horizon: f64) -> Result<Self> {
        Self::new(vec![Segment { start: 0.0, graph }], horizon)
    }

    /// Repeats `pattern` (segments with starts in `[0, period)`) every
    /// `period` seconds until `horizon`.
    pub fn periodic(pattern: &[Segment], period: f64, horizon: f64) -> Result<Self> {
        if !(period > 0.0) {
            return Err(Error::InvalidGraph(format!("period {period} must be positive")));
        }
        if let Some(seg) = pattern.iter().find(|s| s.start >= period) {
            return Err(Error::InvalidGraph(format!("pattern segment at {} not inside period {period}", seg.start)));
        }
        let mut segments = Vec::new();
        let mut rep = 0usize;
        'outer: loop {
            let offset = rep as f64 * period;
            for seg in pattern {
                let start = offset + seg.start;
                if start >= horizon {
                    break 'outer;
                }
                segments.push(Segment { start, graph: seg.graph.clone() });
            }
            rep += 1;
        }
        Self::new(segments, horizon)
    }

    pub fn n(&self) -> usize {
        self.segments[0].graph.n()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// End of segment `k`.
    pub fn segment_end(&self, k: usize) -> f64 {
        self.segments.get(k + 1).map_or(self.horizon, |s| s.start)
    }

    pub fn segment_index_at(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0 && t < self.horizon) {
            return Err(Error::OutOfRange {
                what: "t",
                value: t,
                lo: 0.0,
                hi: self.horizon,
            });
        }
        Ok(self.segments.partition_point(|s| s.start <= t) - 1)
    }

    pub fn graph_at(&self, t: f64) -> Result<&WeightedDigraph> {
        Ok(&self.segments[self.segment_index_at(t)?].graph)
    }

    /// Tests strong connectivity of the union of every segment intersecting
    /// the window `[from, to)`.
    pub fn union_strongly_connected(&self, from: f64, to: f64) -> Result<bool> {
        if !(to > from) {
            return Err(Error::InvalidQuery(format!("empty window [{from}, {to})")));
        }
        if from < 0.0 || to > self.horizon {
            return Err(Error::InvalidQuery(format!(
                "window [{from}, {to}) not within [0, {})",
                self.horizon
            )));
        }
        let active: Vec<&WeightedDigraph> = (0..self.segments.len())
            .filter(|&k| self.segments[k].start < to && self.segment_end(k) > from)
            .map(|k| &self.segments[k].graph)
            .collect();
        Ok(strongly_connected(self.n(), |i, j| active.iter().any(|g| g.weight(i, j) > 0.0)))
    }

    /// Per-node supremum of the in-degree over all segments.
    pub fn in_degree_sup(&self) -> Vec<f64> {
        let mut sup = vec![0.0_f64; self.n()];
        for seg in &self.segments {
            for (i, s) in sup.iter_mut().enumerate() {
                *s = s.max(seg.graph.in_degree(i));
            }
        }
        sup
    }

    /// Balance report for every segment whose graph is not balanced.
    pub fn unbalanced_segments(&self, tol: f64) -> Vec<(usize, BalanceReport)> {
        self.segments
            .iter()
            .enumerate()
            .map(|(k, s)| (k, is_weight_balanced(&s.graph, tol)))
            .filter(|(_, r)| !r.balanced)
            .collect()
    }
}

/// Node visiting orders of the two directed 10-cycles used by the default
/// schedule. With these orders the network converges for small gains but its
/// linearization at the optimum is unstable at `β = 0.5`.
pub const TEN_NODE_CYCLES: [[usize; 10]; 2] = [
    [0, 8, 7, 9, 1, 5, 3, 4, 6, 2],
    [0, 7, 9, 8, 1, 6, 2, 5, 3, 4],
];

/// Default horizon of the ten-node scenario in seconds.
pub const TEN_NODE_HORIZON: f64 = 300.0;

/// Two unit-weight directed 10-cycles alternating every second over
/// `[0, horizon)`.
pub fn ten_node_schedule(horizon: f64) -> Result<GraphSchedule> {
    let pattern = [
        Segment {
            start: 0.0,
            graph: WeightedDigraph::directed_cycle(10, &TEN_NODE_CYCLES[0])?,
        },
        Segment {
            start: 1.0,
            graph: WeightedDigraph::directed_cycle(10, &TEN_NODE_CYCLES[1])?,
        },
    ];
    GraphSchedule::periodic(&pattern, 2.0, horizon)
}

pub fn default_ten_node_schedule() -> GraphSchedule {
    ten_node_schedule(TEN_NODE_HORIZON).expect("builtin schedule is valid")
}
