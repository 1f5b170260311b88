use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// A multiplier left (or grazed) the open domain of an inverse-gradient map.
    #[error("coordinate {coord}: value {value} outside dual domain ({lo}, {hi})")]
    Domain {
        coord: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// An iterative solver failed to converge or produced a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed graph or schedule.
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    /// A time or index outside the valid range.
    #[error("{what} = {value} outside [{lo}, {hi})")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// A query that cannot be answered (empty window, edgeless segment, ...).
    #[error("invalid query: {0}")]
    InvalidQuery(String),

    /// Invalid parameter value.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Scenario or simulation configuration problem.
    #[error("configuration error: {0}")]
    Config(String),

    /// A communication operation invoked off the sampling grid.
    #[error("scheduling error: {0}")]
    Scheduling(String),

    /// Malformed cost specification.
    #[error("invalid cost: {0}")]
    InvalidCost(String),

    /// A run aborted because a node's state became invalid.
    #[error("node {node} at t = {t}: {source}")]
    Aborted {
        node: usize,
        t: f64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
