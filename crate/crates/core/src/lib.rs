pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
mod error;
pub mod metrics;
pub mod model;
pub mod polarity;
pub mod train;

pub use config::{Ablation, ModelConfig, RunConfig};
pub use error::{Error, Result};
pub use model::{Model, Resources};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction_chapter {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/data.md")]
mod data_chapter {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/tensors.md")]
mod tensors_chapter {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/emotion.md")]
mod emotion_chapter {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/guidance.md")]
mod guidance_chapter {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/generation.md")]
mod generation_chapter {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
mod training_chapter {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/evaluation.md")]
mod evaluation_chapter {}
