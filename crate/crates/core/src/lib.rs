pub mod atelier;
pub mod checkpoint;
pub mod color;
pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod gradseq;
pub mod graph;
pub mod palette;
pub mod params;
pub mod pipeline;
pub mod raster;
pub mod sagan;
pub mod sasr;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
