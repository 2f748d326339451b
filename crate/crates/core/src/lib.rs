//! Fine-grained text-to-motion diffusion with linguistic-structure text
//! features and progressive motion refinement.

pub mod capr;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod io;
pub mod ling_graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod text;

pub use error::{Error, Result};
