//! Comparison car-following models sharing the [`Policy`](crate::kinematics::Policy) interface.

mod idm;
mod loess;
mod nna;
mod rnn;

pub use idm::{idm_acceleration, IdmParams, IdmPolicy, IDM_BOUNDS};
pub use loess::{
    loess_predict, tricube_weight, LoessFit, LoessModel, LoessPolicy, LoessPrediction, DEFAULT_SPAN,
};
pub use nna::{
    nna_fit, nna_fit_periods, training_pairs, NnaConfig, NnaModel, NnaPolicy, NNA_STATE_SCALE,
};
pub use rnn::{rnn_step, rnn_train, RnnConfig, RnnModel, RnnPolicy, RNN_HIDDEN};
