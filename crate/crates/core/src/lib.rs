//! Co-occurrence network maps from enriched publication corpora.
//!
//! The pipeline runs query → top-K pair aggregation → graph build → component
//! and betweenness filtering → ForceAtlas2 layout → Louvain clustering →
//! labeling and citation scoring → VOSviewer JSON.

pub mod communities;
pub mod corpus;
pub mod enrich;
pub mod export;
pub mod graph;
pub mod index;
pub mod layout;
pub mod pipeline;
pub mod scalar;
pub mod synth;

pub use scalar::Scalar;

pub type Graph = graph::NetworkGraph<f64>;
pub type Graph32 = graph::NetworkGraph<f32>;
pub type LayoutConfig = layout::LayoutConfig<f64>;
pub type Layout = layout::LayoutResult<f64>;
pub type Layout32 = layout::LayoutResult<f32>;
