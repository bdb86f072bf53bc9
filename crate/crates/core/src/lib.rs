//! Anomaly scoring over fixed-width audio embeddings.
//!
//! The crate covers the EMB1 embedding container, a small dense network
//! toolkit with hand-written gradients, autoencoders with optional encoder to
//! decoder skips, two-phase Deep SVDD training, Isolation Forest and PCA
//! reconstruction-error baselines, and the evaluation utilities used to
//! threshold and summarize scores. Only `alloc` is required; the `std`
//! feature turns on runtime CPU feature detection in the matrix kernels.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod baselines;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod matrix;
pub mod models;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod synthetic;
pub mod training;

pub use baselines::{Components, IsolationForest, IsolationForestConfig, PcaConfig, PcaModel};
pub use embedding::{
    decode_emb1, encode_emb1, split_dataset, DatasetSplit, EmbeddingMatrix, ManifestEntry, SampleManifest,
    EMBEDDING_DIM,
};
pub use error::{Error, FormatError, Result};
pub use matrix::Matrix;
pub use models::{AutoencoderModel, EncoderSpec, Variant, LATENT_DIM};
pub use nn::{grad_check, GradCheck, Loss, Mode, Sequential, Trainable};
pub use optim::Hyperparameters;
pub use rng::Rng;
pub use training::{finetune_svdd, pretrain_autoencoder, SvddModel, SvddOptions, TrainHistory};
