//! Demographic-bias auditing of face verification under image distortions.
//!
//! The pipeline: load a manifest, build balanced genuine/impostor pair
//! splits per subgroup, distort the probe side of each pair, score pairs by
//! cosine similarity of embeddings, threshold at a fixed false-accept rate
//! and summarise per-subgroup accuracy spread as the degree of bias.

pub mod error;
pub mod rng;
pub mod imgcore;
pub mod landmarks;
pub mod distort;
pub mod embed;
pub mod protocol;
pub mod metrics;
pub mod synth;
pub mod audit;

pub use error::{Error, Result};
pub use imgcore::Image;
pub use landmarks::{FaceRegion, KeypointSet};
pub use distort::{DistortionFamily, DistortionSpec};
pub use embed::{EmbeddingProvider, EmbeddingStore, EmbeddingVector, ToyExtractor};
pub use protocol::{Axis, ManifestRecord, Pair, PairLabel, PairProtocol};
