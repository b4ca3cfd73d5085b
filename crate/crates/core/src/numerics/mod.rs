//! Tensors, reverse-mode differentiation, the Adam update and a seeded RNG.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod rng;
pub mod tensor;

pub use adam::{adam_step, AdamState, VecAdam};
pub use graph::{Gradients, Graph, Var};
pub use params::{Param, ParamStore};
pub use rng::{derive_seed, seeded_rng, SeededRng};
pub use tensor::{groupnorm_forward, linear_forward, Tensor};
