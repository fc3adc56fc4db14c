//! Patch-decomposed face similarity.
//!
//! Global similarity between two aligned face images is built from
//! restricted receptive fields: fixed patches whose embeddings are compared
//! either position by position (a learned weighted sum of cosines) or all
//! against all (the cosine of mean patch embeddings, which splits exactly
//! into `K x K` per-pair contributions).
//!
//! The crate is `no_std` + `alloc`; file formats and the command line live
//! in the `rrf` crate.

#![no_std]

extern crate alloc;

pub mod error;
pub mod fusion;
pub mod geometry;
pub mod metric;
pub mod protocol;
pub mod toyembed;

pub use error::{Error, Result};
pub use fusion::{combine_scores, fit_fusion, fused_score, CombineMethod, FusionModel, ScoreCombiner};
pub use geometry::{shape_plan, Backbone, MirrorMap, PatchLayout, Position, ShapePlan};
pub use metric::{
    flip_merge, local_similarity, mean_embedding, region_similarity, rrfnet_similarity_decomposed,
    rrfnet_similarity_direct, EmbeddingSet, Mode, Side, SimilarityBreakdown,
};
pub use protocol::{best_threshold, cross_validate, PairEntry, PairList, VerificationReport};
