//! Actor-critic training of the policy/value network.

pub mod adam;
pub mod checkpoint;
pub mod loss;
pub mod returns;
pub mod sample;
pub mod trainer;

pub use adam::{adam_step, clip_global_norm, lr_schedule, OptimizerState};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use loss::{policy_loss_grad, value_loss_grad};
pub use returns::{
    advantage, bootstrap_targets, compute_returns, returns_from_rewards, AdvantageMap, ReturnMap,
    RewardConvKernel,
};
pub use sample::{greedy_actions, sample_actions, sample_actions_with};
pub use trainer::{
    sample_patch, train, AdvantageMode, LogRow, OmegaGrad, TrainConfig, TrainLog, Trainer,
    LOG_HEADER,
};
