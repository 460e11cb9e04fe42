//! Weight-sharing supernet: a full-width parameter store over every
//! (layer, block) choice, constrained uniform sampling in two phases, and
//! the adversarial training loop that updates one sampled path at a time.

mod checkpoint;
mod sampler;
mod store;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use sampler::{Phase, SamplerState, FULL_BLOCK_WINDOW, FULL_JOINT_WINDOW};
pub use store::WeightStore;
pub use train::{clean_error, count_wrong, train_supernet, NoHooks, SgdOptimizer, TrainHooks, TrainSchedule};
