//! Answer localization for instructional videos.

pub mod bundle;
pub mod error;
pub mod localizer;
pub mod metrics;
pub mod pipeline;
pub mod qg;
pub mod subtitle;
pub mod tagger;
pub mod tensor;
pub mod text;

pub use error::{Error, Result};
