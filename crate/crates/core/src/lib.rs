//! Evaluation toolkit for periocular verification experiments.
//!
//! The pipeline runs on precomputed embedding templates and relevance
//! heatmaps:
//!
//! * [`protocol`] builds intra- and cross-distance genuine/impostor pairs;
//! * [`metrics`] scores pairs with cosine similarity or negated χ²;
//! * [`fusion`] trains linear logistic-regression score fusion;
//! * [`evaluation`] computes EERs per distance, distance gap or pooled;
//! * [`lime`] fits grid-cell surrogate explanations of an external scorer;
//! * [`divergence`] compares heatmaps with the Jensen–Shannon divergence;
//! * [`report`] renders result tables and figure data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod divergence;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod geometry;
pub mod lime;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod protocol;
pub mod report;
pub mod synth;

pub use error::{Error, Result};
pub use model::{DatasetManifest, EmbeddingTemplate, Eye, Heatmap, SampleKey, TemplateSet};
