//! Visual named entity linking.
//!
//! Links a region of an image (a visual mention) to an entity of a knowledge
//! base using a bi-encoder: mention and entity are embedded independently,
//! passed through residual adapter heads, L2-normalized, and compared by dot
//! product. Three linkers are provided: image to entity image, image to
//! entity text, and a recall-then-rerank cascade over both.

pub mod dataset;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod image_store;
pub mod kb;
pub mod linker;
pub mod mention;
pub mod pipeline;
pub mod trainer;

pub use error::{Error, Modality, Result};
