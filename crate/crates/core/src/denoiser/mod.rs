//! Denoiser implementations: an oracle that reads the scene's reference
//! trajectory, and a small trainable network.

mod context;
mod model;
mod oracle;
mod train;

pub use context::{SceneContext, FEATURE_DIM, MAX_AGENTS};
pub use model::{ForwardCache, ModelConfig, TensorInfo, TrainableDenoiser};
pub use oracle::OracleDenoiser;
pub use train::{evaluation_loss, greedy_token_accuracy, train, TrainConfig, TrainState, TrainingItem};
