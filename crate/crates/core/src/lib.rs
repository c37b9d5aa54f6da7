//! Building a corpus of biased/neutralized sentence pairs from revision
//! histories, and training, decoding and serving neutralization models on it.

mod error;

pub mod beam;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod detector;
pub mod editor;
pub mod evaluation;
pub mod model;
pub mod pipeline;
pub mod service;
pub mod synthetic;
pub mod systems;
pub mod text;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
