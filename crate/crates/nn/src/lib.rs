//! A deliberately small CPU neural-network engine.
//!
//! Layers own their parameters and cache whatever their backward pass needs
//! during a training-mode [`Layer::forward`]. Inference goes through
//! [`Layer::infer`], which takes `&self` and never touches caches, so a
//! trained model can be shared across threads.
//!
//! Everything is generic over [`Real`] (implemented for `f32` and `f64`);
//! the aliases at the bottom of this file name the concrete types used by
//! the rest of the workspace.

mod checkpoint;
mod error;
mod layer;
pub mod layers;
pub mod loss;
mod optim;
mod param;
mod real;
mod tensor;

pub use checkpoint::{load_params, read_safetensors, save_params, write_safetensors};
pub use error::NnError;
pub use layer::{Layer, Sequential};
pub use optim::Adam;
pub use param::{snapshot, restore, Param, ParamKind};
pub use real::Real;
pub use tensor::{concat_channels, split_channels, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Param32 = Param<f32>;
pub type Adam32 = Adam<f32>;

/// Seeded generator used for every weight initialisation and shuffle.
pub type SeedRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeedRng {
    use rand::SeedableRng;
    SeedRng::seed_from_u64(seed)
}
