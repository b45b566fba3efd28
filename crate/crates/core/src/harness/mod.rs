//! Training loop, evaluation and the diffusion-step ablation.

pub mod ablation;
pub mod evaluate;
pub mod loss;
pub mod train;

pub use ablation::{run_ablation, AblationPlan, AblationRow};
pub use evaluate::{evaluate, predict, scenario_stream, score_predictions, EvalConfig, Evaluation};
pub use loss::{LossValues, LossWeights};
pub use train::{split_by_id, train, train_with, EpochLog, TrainConfig, TrainOutcome, Trainer};
