//! Learning the proposal distribution: models, the REINFORCE estimator,
//! Adam, and the training/evaluation loops.

pub mod adam;
pub mod model;
pub mod reinforce;
pub mod train;

pub use adam::{adam_step, AdamState};
pub use model::{featurize, BiasModel, BowFeature, Logits, MlpModel, Model, ModelError, ModelKind, DEFAULT_HIDDEN};
pub use reinforce::{reinforce_grad, Credit, GradEstimate, ReinforceOptions};
pub use train::{default_lr, evaluate, mean_score, train, CurvePoint, LearnError, Proposal, TrainConfig, TrainState};
