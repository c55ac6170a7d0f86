//! Decoding of factual knowledge from the per-layer hidden states of a
//! decoder transformer into temporal knowledge graphs, and the analyses run
//! over those graphs.
//!
//! Pipeline, module by module:
//!
//! * [`corpus`]: claim ingestion, filtering, sampling and prompt templates.
//! * [`trace`]: the model abstraction, a deterministic toy transformer and
//!   the activation-trace container.
//! * [`patching`]: part-of-speech token weights, weighted merging of claim
//!   hidden states and patched inference over every layer.
//! * [`literalparse`]: the structured-output grammar and triple rewriting.
//! * [`kgraph`]: per-layer graphs and the temporal knowledge graph.
//! * [`embedsim`]: multi-scale attributed node embeddings and graph similarity.
//! * [`cluster`]: quantile bandwidth estimation and mean-shift clustering.
//! * [`metrics`]: classification metrics, majority label, self-consistency.
//!
//! Numeric code is generic over [`Scalar`] (`f32` and `f64`); the aliases
//! below name the concrete instantiations used by the pipeline.

pub mod cluster;
pub mod container;
pub mod corpus;
pub mod embedsim;
pub mod kgraph;
pub mod layer;
pub mod literalparse;
pub mod matrix;
pub mod metrics;
pub mod patching;
pub mod scalar;
pub mod trace;

pub use layer::LayerTag;
pub use matrix::Matrix;
pub use scalar::Scalar;

/// Activation storage precision.
pub type Matrix32 = Matrix<f32>;
/// Analysis precision.
pub type Matrix64 = Matrix<f64>;
pub type AttributeMatrix64 = embedsim::AttributeMatrix<f64>;
pub type NodeEmbeddings64 = embedsim::NodeEmbeddingMatrix<f64>;
pub type SimilaritySeries64 = embedsim::LayerSimilaritySeries<f64>;
pub type SimilarityMatrix64 = embedsim::SimilarityMatrix<f64>;
pub type FeatureTable64 = cluster::LayerFeatureTable<f64>;
pub type ClusterAssignment64 = cluster::ClusterAssignment<f64>;
