//! Comparison detectors over the raw embeddings.

pub mod iforest;
pub mod pca;

pub use iforest::{avg_path_c, ITreeNode, IsolationForest, IsolationForestConfig};
pub use pca::{Components, PcaConfig, PcaModel};
