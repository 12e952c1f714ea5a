//! Synthetic font data, dataset persistence and experiment runners.

mod dataset;
mod experiment;
mod fonts;

pub use dataset::*;
pub use experiment::*;
pub use fonts::*;
