//! Files, benchmark directories and the `rrf` command line around
//! [`rrf_core`].

pub mod bench;
pub mod cli;
pub mod error;
pub mod export;
pub mod format;
pub mod manifest;
pub mod models;
pub mod pairs;
pub mod score;

pub use error::{Error, Result};
pub use export::{export_heatmap, HeatmapFormat};
pub use format::{read_embeddings, write_embeddings, EmbeddingFileHeader};
pub use manifest::{load_store, FlipPolicy, LayoutSpec, Manifest};
pub use pairs::load_pairs;
