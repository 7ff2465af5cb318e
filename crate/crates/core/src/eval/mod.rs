//! Error metrics, IDM calibration and the intra-/inter-driver validation protocol.

mod ga;
mod metrics;
mod validate;

pub use ga::{ga_calibrate_idm, idm_fitness, GaConfig, GaOutcome, COLLISION_PENALTY};
pub use metrics::{
    accumulate_trajectory, evaluate_model, rmspe, Quantity, RmspeAccumulator, RolloutErrors,
};
pub use validate::{
    compare_models, inter_driver_validate, intra_driver_validate, ErrorMatrix, EvalReport, EvalRow,
    InterDriverResult, ModelEntry, ModelSummary, EVAL_REPORT_HEADER,
};
