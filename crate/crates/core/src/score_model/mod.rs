//! Score network, noise schedule, denoising score matching and training.

mod model;
mod schedule;
mod train;

pub use model::{read_architecture, sidecar_path, Architecture, ModelConfig, ScoreModel, ScorePrior, BLOCKS, CONTROL_PREFIX, CONTROL_ZERO_LAYERS};
pub(crate) use model::{FOURIER, PROMPT};
pub use schedule::NoiseSchedule;
#[cfg(test)]
pub(crate) use train::dsm_graph;
pub use train::{
    denoise_batch, denoise_step, dsm_gradients, dsm_loss, dsm_loss_fixed, dsm_objective, sample_perturbation, train, train_tensor,
    train_with_labels, TrainConfig, TrainReport,
};
