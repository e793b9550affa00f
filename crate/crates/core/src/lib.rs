//! Evaluation engine for object hallucination in image captioning.
//!
//! * [`geometry`] and [`grounded_text`] handle relative boxes and captions
//!   with interleaved box groups.
//! * [`annotations`] loads COCO-format object annotations and computes
//!   frequency and co-occurrence statistics.
//! * [`chair`] and [`chair_men`] score captions against gold objects by
//!   string matching and by noun-phrase embeddings respectively.
//! * [`pope`] builds and scores yes/no object-existence question sets.
//! * [`faithscore`] orchestrates atomic-fact extraction and VQA verification.
//! * [`refexp`] scores referring-expression grounding.
//! * [`providers`] abstracts every model-backed call; [`report`] assembles
//!   reproducible metric reports.

pub mod annotations;
pub mod chair;
pub mod chair_men;
pub mod checkpoint;
pub mod error;
pub mod faithscore;
pub mod geometry;
pub mod grounded_text;
pub mod pope;
pub mod providers;
pub mod refexp;
pub mod report;

pub use error::{Error, Result};
