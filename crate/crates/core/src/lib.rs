//! Power-system stress assessment toolkit.
//!
//! The pipeline: parse a grid case ([`netmodel`]), solve AC power flow
//! ([`powerflow`]), score post-contingency line loading with a composite
//! security index ([`stress`]), sweep operating conditions and N-1
//! contingencies into a labeled pattern database ([`scenario`]), train a
//! from-scratch CNN plus MLP/CART baselines on it ([`neural`], [`models`]),
//! and evaluate/benchmark the result ([`eval`]).
//!
//! All electrical quantities are per-unit on the case MVA base after
//! parsing; angles are radians.

pub mod eval;
pub mod models;
pub mod netmodel;
pub mod neural;
pub mod powerflow;
pub mod scenario;
pub mod stress;

pub use models::{Checkpoint, CnnConfig, Head, MlpConfig, PaperlikeCnn, TrainOptions};
pub use netmodel::{Branch, Bus, BusKind, CaseFormat, Generator, GridCase};
pub use powerflow::{BranchFlows, SolvedState};
pub use scenario::{Contingency, Dataset, OperatingCondition, Pattern};
pub use stress::{StressLimits, StressReport, StressState};
