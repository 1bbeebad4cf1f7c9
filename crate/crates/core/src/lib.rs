pub mod correct;
pub mod ctc;
pub mod ctcdecode;
pub mod data;
pub mod error;
pub mod geometry;
pub mod pipeline;
pub mod synth;
pub mod translit;

pub use error::{CoreError, Result};
