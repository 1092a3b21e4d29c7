//! The edit-sequence prediction network: linear embeddings of one-hot graph
//! tensors, stacked multi-head graph-attention layers arranged as an
//! encoder/decoder, and joint atom/bond action heads normalized by a single
//! softmax over the flat action layout.
//!
//! Everything runs on the reverse-mode tape from `megan-tensor`, so the same
//! forward code serves training (gradients flow through a whole
//! teacher-forced sequence built on one tape) and inference (parameters bound
//! as constants, no gradient bookkeeping).
//!
//! The runtime half lives here too: a teacher-forced training loop with
//! warmup and plateau-decay scheduling ([`train`]), beam-search decoding
//! ([`beam_search`]) with candidate extraction, and top-k evaluation
//! ([`top_k_accuracy`]).

mod beam;
mod config;
mod evaluate;
mod net;
mod params;
mod train;

pub use beam::{
    beam_search, extract_candidates, featurize_state, score_sequence, BeamConfig, BeamHypothesis,
    BeamOutcome, Candidate, Prediction,
};
pub use config::ModelConfig;
pub use evaluate::{top_k_accuracy, EvalReport, DEFAULT_KS};
pub use net::{
    action_probabilities, embed, forward_step, gcn_att_layer, slot_log_prob, GraphWiring,
    StepOutput, StepState,
};
pub use params::{bind_params, init_params, total_param_count, BoundParams};
pub use train::{
    evaluate_nll, sequence_nll, train, EvalPoint, PlateauSchedule, ScheduleEvent, TrainConfig,
    TrainError, TrainOutcome, TrainState, TrainingSample,
};

/// Errors from configuration handling and the forward computation.
#[derive(Debug, Clone, thiserror::Error)]
pub enum ModelError {
    /// A configuration value or a config/data dimension relationship is
    /// invalid (for example atom_embed_dim not divisible by the head count).
    #[error("configuration: {0}")]
    Config(String),
    /// Unsupported version line in a serialized config.
    #[error("unsupported model config version line {0:?}")]
    Version(String),
    /// A structurally broken line in a serialized config.
    #[error("model config line {line}: {message}")]
    Malformed { line: usize, message: String },
    /// The parameter store lacks a tensor the architecture requires; the
    /// checkpoint does not match the config it was loaded for.
    #[error("parameter {0:?} missing from store")]
    MissingParam(String),
    #[error(transparent)]
    Tensor(#[from] megan_tensor::TensorError),
}
