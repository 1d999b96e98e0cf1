pub mod error;
pub mod harness;
pub mod layers;
pub mod mnist;
pub mod network;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
