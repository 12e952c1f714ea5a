//! DropRegion training and inference stack.
//!
//! Grayscale glyph images are partitioned by an elastic L×L mesh whose cells
//! carry equal accumulated intensity; random subsets of cells are zeroed during
//! training of an inception font network (conv + CCCP micro-networks, a
//! five-branch inception module and global average pooling). Everything from
//! the convolution kernels to the optimizer is implemented here on the CPU.
//!
//! Conventions shared by every module:
//! - images use background 0 and stroke-positive intensities;
//! - tensors are stored height × width × channels, channels fastest;
//! - all randomness flows through explicitly seeded ChaCha streams.

pub mod blockpipe;
pub mod dropregion;
mod error;
mod kv;
pub mod ifn;
pub mod imagecore;
pub mod meshing;
pub mod rng;
pub mod tensornet;
pub mod trainer;
pub mod workbench;

pub use error::{Error, Result};
