//! Lightweight single-stage detector for thermal hotspots on photovoltaic arrays.
//!
//! Everything runs on a small channels-last `f32` tensor type with hand-written
//! backward passes. See [`model::Detector`] for the end-to-end network and
//! [`train::train`] for the optimization loop.

pub mod aggregation;
pub mod backbone;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod head;
pub mod layers;
pub mod model;
pub mod postprocess;
pub mod robust;
pub mod se;
pub mod summary;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, PnmError, Result};
pub use head::Detection;
pub use model::{Detector, ModelConfig};
pub use postprocess::{BBox, NmsConfig};
pub use tensor::Tensor;
