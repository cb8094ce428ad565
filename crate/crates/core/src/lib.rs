//! Verification toolkit for neural-network-controlled spacecraft docking.

pub mod certificate;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod kinduction;
pub mod linalg;
pub mod netgraph;
pub mod properties;
pub mod reachability;
pub mod report;
pub mod run;
pub mod simulation;
pub mod verifier;

pub use dynamics::{Control, DynParams, LinearPlant, State};
pub use config::{parse_config, Override, RunConfig};
pub use error::{Error, Result};
pub use report::{emit_report, strip_timing, Format, Outcome, Report};
pub use netgraph::{compose_closed_loop, ClosedLoop, Mlp, PwlGraph};
pub use verifier::{check, Budget, Hyperbox, LinearConstraint, Query, Relation, Status, Verdict};
