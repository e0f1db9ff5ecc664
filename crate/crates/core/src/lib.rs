//! Deep CNNs with shared-kernel convolution, sigmoid activations and mean
//! pooling: exact forward/backward passes, closed-form generalization and
//! optimization bounds, and experiments that check those bounds numerically.

pub mod arch;
pub mod bounds;
pub mod error;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod verify;

pub use arch::{
    Architecture, DerivedDims, InputSpec, LayerDims, LayerSpec, OutputSpec, ThetaVariant,
};
pub use error::{DimensionError, Error, Result};
pub use model::{ForwardTrace, Gradient, GradientMode, Network, ParamSet, Weights};
pub use ops::Activation;
pub use tensor::{Matrix, Tensor3};
