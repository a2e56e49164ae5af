//! Generator (convolutional encoder-decoder) and discriminator, their losses,
//! and the alternating adversarial training loop on normal-class patches.

mod arch;
mod checkpoint;
mod loss;
mod model;
mod train;

pub use arch::ArchitectureConfig;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use loss::{
    adversarial_losses, adversarial_losses_with, reconstruction_loss, total_generator_loss, AdversarialForm,
    LossWeights,
};
pub use model::{discriminator_forward, generator_forward, init_models, Discriminator, Generator};
pub use train::{
    discriminator_objective, generator_objective, train, train_with_callback, train_with_monitor, EpochCallback,
    Objective, TrainingConfig, TrainingHistory,
};
