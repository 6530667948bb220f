//! Quantized melodic bottleneck: a convolutional VQ-VAE over chromagrams.
//!
//! The encoder maps each 24-bin chroma frame (with temporal context) to a
//! latent vector, which is snapped to its nearest codebook entry; the decoder
//! reconstructs the chromagram from the quantized sequence. The per-frame
//! code ids are the discrete melody representation that conditions the
//! generator. There is no temporal downsampling: one code per 50 Hz frame.

mod codebook;
mod loss;
mod model;
mod train;

use ndarray::Array2;

use crate::error::{Error, Result};

pub use codebook::{kmeans, nearest_ids, perplexity, quantize, Codebook, EmaState};
pub use loss::{vqvae_loss, VqLoss};
pub use model::{VqVaeConfig, VqVaeModel, VQVAE_CHECKPOINT_KIND};
pub use train::{reconstruction_loss, train_vqvae, train_vqvae_from, VqStepLog, VqTrainConfig, VqTrainState, VqTrainOutcome};

/// Frames × latent-dim matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSequence {
    frames: Array2<f64>,
}

impl LatentSequence {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        if frames.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("latent sequence".into()));
        }
        Ok(LatentSequence { frames })
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn into_frames(self) -> Array2<f64> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

/// Per-frame codebook ids.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CodeSequence {
    ids: Vec<usize>,
    vocab: usize,
}

impl CodeSequence {
    pub fn new(ids: Vec<usize>, vocab: usize) -> Result<Self> {
        if let Some(bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Invalid(format!("code id {bad} outside vocabulary of {vocab}")));
        }
        Ok(CodeSequence { ids, vocab })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Codebook size the ids index into.
    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Fraction of positions (over the shorter length) where both agree.
    pub fn agreement(&self, other: &CodeSequence) -> f64 {
        let n = self.len().min(other.len());
        if n == 0 {
            return 0.0;
        }
        let same = self.ids[..n].iter().zip(&other.ids[..n]).filter(|(a, b)| a == b).count();
        same as f64 / n as f64
    }
}
