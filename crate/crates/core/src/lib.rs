pub mod classifier;
pub mod dataset;
pub mod disentangle;
pub mod error;
pub mod eval;
pub mod features;
pub mod grid;
pub mod io;
pub mod numerics;
pub mod propagation;
pub mod synth;

pub use error::{Error, Result};
pub use numerics::Matrix;
