//! Dense-network numerical core.
//!
//! Everything runs in `f64`: fully connected layers with tanh or linear
//! activations, inverted dropout, SGD/Adam, a central-difference gradient
//! checker, and the `MODNET01` block container used for weights and experts.

mod dropout;
mod gradcheck;
mod layer;
mod matrix;
mod mlp;
mod optim;
mod weights;

pub use dropout::{dropout_apply, DropoutMask, Mode};
pub use gradcheck::{central_difference, gradient_check};
pub use layer::{dense_backward, dense_forward, init_layer, Activation, Layer, LayerCache, LayerGrad};
pub use matrix::Matrix;
pub use mlp::{Mlp, MlpCache};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use weights::{NamedBlock, WeightFile, FORMAT_VERSION, MAGIC};
