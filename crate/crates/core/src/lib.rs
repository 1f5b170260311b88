//! Distributed resource allocation by multiplier consensus over switching
//! directed graphs, with continuous, periodic and event-triggered
//! communication.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod comms;
pub mod conditions;
pub mod costs;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod graph;

pub use comms::{CommState, Regime, TriggerEvent};
pub use conditions::{CertificateMethod, GainCertificate};
pub use costs::{CostSpec, Interval, LogSumExp, ScalarCost};
pub use dynamics::{CouplingInput, InputSource, NodeSample, NodeState, StorageProbe};
pub use engine::{run, solve_oracle, OracleSolution, ScenarioConfig, Summary, Trajectory};
pub use error::{Error, Result};
pub use graph::{GraphSchedule, Segment, WeightedDigraph};
