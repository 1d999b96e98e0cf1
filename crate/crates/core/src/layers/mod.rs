//! Forward and backward passes for every layer kind in the classifier.

mod activation;
mod conv;
mod dense;
mod dropout;
mod pool;

pub use activation::{relu, relu_backward, softmax, softmax_jacobian_vp};
pub use conv::{ConvGrads, ConvLayer, Padding};
pub use dense::{DenseGrads, DenseLayer};
pub use dropout::{DropoutLayer, Mode};
pub use pool::MaxPoolLayer;

pub(crate) use conv::conv_geometry;
pub(crate) use dropout::check_keep_prob;
