//! Minimal sequential network: tensors in, tensors out, hand-derived backward
//! passes, softmax cross-entropy and SGD with momentum.

mod linalg;

pub mod activation;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod gradsuite;
pub mod init;
pub mod layer;
pub mod loss;
pub mod model;
pub mod optim;

pub use activation::{Flatten, MaxPool2d, Relu};
pub use conv::Conv2d;
pub use dense::Dense;
pub use layer::{Layer, ParamRole};
pub use loss::softmax_cross_entropy;
pub use model::{build_simple_cnn, Buffers, Model, ModelParams, NamedTensor, SimpleCnnSpec};
pub use optim::{OptimState, Sgd, DEFAULT_MOMENTUM};
