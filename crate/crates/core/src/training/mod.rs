//! Losses, optimizer, batching, synthetic scenes and the training loop.

pub mod config;
pub mod data;
pub mod losses;
pub mod optim;
pub mod synth;
pub mod trainer;

pub use config::{RunConfig, TrainConfig, CONFIG_KEYS};
pub use data::{crop_sample, load_scenes, make_batch, Batch, CropWindow, Scene, TrainSample};
pub use losses::{bce_loss, joint_loss, mse_loss, JointLoss, LossWeights};
pub use optim::{adam_update, Adam, AdamParams};
pub use synth::{synth_corpus, synth_generate, synth_scenes, SyntheticSceneSpec};
pub use trainer::{format_loss_curve, parse_loss_curve, EpochStats, StepLoss, Trainer};
