//! Per-vulnerability models: the Core Classifier head, joint SC2V+CC
//! training, the hyperparameter grid, and the on-disk container.

mod classifier;
mod grid;
mod io;
mod train;

pub use classifier::{cc_forward, classify, CcCache, CcConfig, Classification, CoreClassifier};
pub use grid::{enumerate_grid, GridPoint, HyperGrid};
pub use io::{
    encoder_fingerprint, load_encoder, load_model, model_from_container, model_to_bytes, read_container, save_encoder,
    save_model, write_container, Container, FORMAT_VERSION, MAGIC,
};
pub use train::{evaluate_loss, prepare_example, train_model, EpochStats, TrainHistory, TrainOptions, TrainingExample};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cfg::ControlFlowGraph;
use crate::n2v::NodeEmbeddingMatrix;
use crate::nn::{NnError, RngStream};
use crate::sc2v::{embed_contract, Sc2vConfig, Sc2vError, Sc2vWeights, SizeClass};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("checksum mismatch: file is corrupt or truncated")]
    ChecksumMismatch,
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error(transparent)]
    Sc2v(#[from] Sc2vError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// SC2V and CC shapes together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub sc2v: Sc2vConfig,
    pub cc: CcConfig,
}

impl Architecture {
    pub fn preset(size: SizeClass) -> Self {
        Architecture { sc2v: size.preset(), cc: CcConfig::default() }
    }
}

/// One trained SC2V + CC pair for a (vulnerability, size class).
#[derive(Debug, Clone, PartialEq)]
pub struct VulnerabilityModel {
    pub vulnerability: String,
    pub size_class: SizeClass,
    pub sc2v: Sc2vWeights<f32>,
    pub cc: CoreClassifier<f32>,
    pub encoder_ref: String,
    pub threshold: f64,
    pub seed: u64,
}

impl VulnerabilityModel {
    /// Freshly initialized weights.
    pub fn new(vulnerability: &str, size_class: SizeClass, arch: &Architecture, seed: u64) -> Result<Self, ModelError> {
        let root = RngStream::new(seed);
        let sc2v = Sc2vWeights::new(arch.sc2v.clone(), crate::n2v::NODE_DIM, &mut root.split(1))?;
        let cc = CoreClassifier::new(sc2v.output_dim(), arch.cc.clone(), &mut root.split(2))?;
        Ok(VulnerabilityModel {
            vulnerability: vulnerability.to_string(),
            size_class,
            sc2v,
            cc,
            encoder_ref: String::new(),
            threshold: 0.5,
            seed,
        })
    }

    pub fn architecture(&self) -> Architecture {
        Architecture { sc2v: self.sc2v.config.clone(), cc: self.cc.config.clone() }
    }

    pub fn embedding_dim(&self) -> usize {
        self.sc2v.output_dim()
    }

    pub fn embed(&self, cfg: &ControlFlowGraph, nodes: &NodeEmbeddingMatrix) -> Result<Vec<f32>, ModelError> {
        Ok(embed_contract(cfg, nodes, &self.sc2v, self.size_class)?.vector)
    }

    /// CC probability for an already computed embedding.
    pub fn probability(&self, embedding: &[f32]) -> Result<f32, ModelError> {
        Ok(cc_forward(embedding, &self.cc)?)
    }

    pub fn predict(&self, cfg: &ControlFlowGraph, nodes: &NodeEmbeddingMatrix) -> Result<f32, ModelError> {
        self.probability(&self.embed(cfg, nodes)?)
    }

    pub fn classify(&self, probability: f32) -> Classification {
        classify(probability as f64, self.threshold)
    }
}
