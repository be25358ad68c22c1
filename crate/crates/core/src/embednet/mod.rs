//! Learned components: the utterance embedder with its pair classifier, and
//! the state-aware candidate reranker.

mod embedder;
mod reranker;
mod wordvec;

use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use embedder::{
    balanced_bce, pair_batch_loss, pair_batch_loss_single_tape, train_pair_classifier, PairModel,
    PairSample, EMBED_DIM, HIDDEN_DIM, MAX_LEN,
};
pub use reranker::{
    program_tokens, rerank_loss, state_features, train_reranker, RerankExample, Reranker,
    STATE_FEATURES,
};
pub use wordvec::{
    encode_tokens, position_encoding, WordVecError, WordVectorTable, DEFAULT_OOV_SEED, WORD_DIM,
};

use crate::nn::CheckpointError;
use crate::par::Exec;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
    /// Training stops once the full-dataset loss drops to this value.
    pub early_stop_loss: f64,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 32,
            rng_seed: 17,
            early_stop_loss: 0.05,
            exec: Exec::Parallel,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Full-dataset loss after each epoch.
    pub loss_history: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.last().copied()
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset has no {0} pairs")]
    DegenerateDataset(&'static str),
    #[error("gold program is not among the candidates for `{0}`")]
    GoldNotInCandidates(String),
    #[error("training diverged (non-finite parameters)")]
    Diverged,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parameter layout does not match the model")]
    Layout,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Gaussian initialiser with std `1/√fan_in`.
pub(crate) fn glorot(rng: &mut impl rand::Rng, fan_in: usize) -> impl FnMut() -> f64 + '_ {
    let n = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("valid std");
    move || n.sample(rng)
}
