//! Ground-truth data: analytic flows, scalar transport on the periodic
//! square and scattered sampling.

mod flows;
mod sampling;
mod spectral;

pub use crate::dataset::{export_dataset, import_dataset, DatasetMetadata, SampledDataset};
pub use flows::{analytic_eval, AnalyticFlow, FlowKind};
pub use sampling::{sample_points, uniform_collocation};
pub use spectral::{solve_transport, GridField2D, InitialCondition, SolverConfig, Term};
