//! Prototype-memory embedding: direct features from a modality network are
//! enriched with a weighted combination of class centroids, scaled by a
//! per-sample trade-off η.

mod bank;
mod embedder;
#[cfg(test)]
mod tests;

pub use bank::{compute_prototypes, PrototypeBank};
pub use embedder::{
    memory_feature, ratio_eta, EmbedCache, EmbedGrads, EmbedderConfig, EtaMode, MetaEmbedder, MetaFeature, WeightNorm,
};
