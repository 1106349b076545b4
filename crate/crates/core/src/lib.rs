//! Zero-shot hierarchical multi-label classification over taxonomies.
//!
//! Classes of an output space are embedded together with their direct
//! children, artifacts are embedded with their document context, and the
//! top-k classes by cosine similarity are suggested. Predictions are scored
//! with micro-averaged precision/recall, a recall-weighted F-score and a
//! taxonomy hop distance.

pub mod classifier;
pub mod embedding;
pub mod fixture;
pub mod harness;
pub mod metrics;
pub mod taxonomy;

pub use embedding::{cosine_similarity, Embedder, EmbeddingProviderConfig, EmbeddingVector};
pub use taxonomy::{Taxonomy, TaxonomyError, TaxonomyNode, TaxonomyStats};
