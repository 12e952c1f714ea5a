//! CPU tensor engine: HWC tensors, layer kernels with backward passes, and a
//! network interpreter over [`crate::ifn::NetworkSpec`].

pub mod checkpoint;
mod gradcheck;
mod network;
pub mod ops;
mod real;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use network::{Grads, Mode, Network, Trace};
pub use real::{Precision, Real};
pub use ops::{conv_output_len, pool_output_len, ConvGrads, ConvParams, Padding, PoolParams};
pub use tensor::{Shape, Tensor};
