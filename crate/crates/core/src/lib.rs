pub mod catalog;
pub mod detect;
pub mod error;
pub mod evalkit;
pub mod geom;
pub mod growth;
pub mod lines;
pub mod pipeline;
pub mod raster;
pub mod register;
pub mod synth;
pub mod vegidx;

pub use error::{Error, Result};
