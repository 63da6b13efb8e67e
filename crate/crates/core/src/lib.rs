//! Analytical cost model and mapspace explorer for fused-layer dataflow
//! accelerators.

pub mod arch;
pub mod geometry;
pub mod mapping;
pub mod workload;
pub mod analysis;
pub mod metrics;
pub mod oracle;
pub mod templates;
pub mod fuzz;
pub mod mapper;
pub mod report;

pub use arch::{Architecture, Compute, Level};
pub use mapper::{MapspaceSpec, Objective, Point, Study};
pub use mapping::{bind, validate_mapping, BoundMapping, Depth, Mapping, Parallelism, Violation};
pub use metrics::{evaluate, EvalError, Evaluation, Metrics};
pub use oracle::{compare, simulate, Mismatch, OracleResult};
pub use workload::{FusionSet, RankId, WorkloadError};
