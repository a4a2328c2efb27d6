//! Simulation, harmonic-transfer-function theory, empirical estimation and
//! parametric identification for a clock-driven hybrid spring-mass-damper.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod banded;
pub mod config;
pub mod error;
pub mod estimate;
pub mod excite;
pub mod fit;
pub mod hss;
pub mod model;
pub mod pipeline;
pub mod sim;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use estimate::{EstimateResult, EstimationProblem, SpectrumRecord};
pub use excite::{ChirpPlan, ExperimentRecord, RecordStart};
pub use fit::{FitContext, FitResult};
pub use hss::{FourierMatrixSeries, HarmonicTransferSet, TruncatedHSS};
pub use model::{Chart, ChartPolicy, HybridModel, ModelParams, State, SwitchedLinearization};
pub use sim::{LimitCycle, Trajectory};
