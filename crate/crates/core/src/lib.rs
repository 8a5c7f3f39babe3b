//! Patch description generation at desk scale.
//!
//! The pipeline turns bug-fixing patches into natural-language descriptions:
//! corpus ingestion and cleaning, statement-level dependency slicing for
//! patch-related code, description clustering, a small encoder-decoder
//! translation model trained with a dual objective (description generation
//! plus cluster-affiliation prediction), and the usual MT evaluation metrics.

pub mod aspects;
pub mod cluster;
pub mod context;
pub mod corpus;
pub mod metrics;
pub mod model;
pub mod nmt;
pub mod synth;

pub use model::{
    build_source_sequence, build_target_sequence, tokenize, Annotation, Change, ChangeOp, Patch,
    PatchRelatedCode, PatchScope, SourceSequence, TargetSequence,
};
