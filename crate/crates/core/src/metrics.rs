//! Fréchet distance between Gaussian fits of embedded audio sets.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dsp::{mel_spectrogram, Waveform, N_MELS};
use crate::error::{Error, Result};

/// Maps a clip to a fixed-length vector.
pub trait Embedder {
    /// Stable identifier recorded in reports.
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, clip: &Waveform) -> Result<Array1<f64>>;
}

/// Per-bin mean and standard deviation of the log-mel spectrogram.
#[derive(Clone, Copy, Debug, Default)]
pub struct MelStatsEmbedder;

impl Embedder for MelStatsEmbedder {
    fn id(&self) -> &str {
        "mel-stats-v1"
    }

    fn dim(&self) -> usize {
        2 * N_MELS
    }

    fn embed(&self, clip: &Waveform) -> Result<Array1<f64>> {
        let mel = mel_spectrogram(clip)?;
        let frames = mel.frames();
        if frames.nrows() == 0 {
            return Err(Error::TooShort {
                len: clip.len(),
                frame: crate::dsp::HOP,
            });
        }
        let mean = frames.mean_axis(Axis(0)).unwrap();
        let std = frames.std_axis(Axis(0), 0.0);
        Ok(ndarray::concatenate(Axis(0), &[mean.view(), std.view()]).unwrap())
    }
}

/// Gaussian statistics of an embedding set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStats {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
    pub count: usize,
}

impl EmbeddingStats {
    /// Mean and unbiased covariance of the rows of `vectors`.
    pub fn from_vectors(vectors: &Array2<f64>) -> Result<Self> {
        let (n, f) = vectors.dim();
        if n < 2 {
            return Err(Error::Invalid(format!("need at least 2 embeddings, got {n}")));
        }
        if vectors.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embeddings".into()));
        }
        let mean = vectors.sum_axis(Axis(0)) / n as f64;
        let centered = vectors - &mean;
        let mut cov = centered.t().dot(&centered) / (n - 1) as f64;
        for i in 0..f {
            for j in 0..i {
                let s = 0.5 * (cov[[i, j]] + cov[[j, i]]);
                cov[[i, j]] = s;
                cov[[j, i]] = s;
            }
        }
        Ok(EmbeddingStats { mean, cov, count: n })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn embed_clips<E: Embedder + ?Sized>(clips: &[Waveform], embedder: &E) -> Result<EmbeddingStats> {
    if clips.len() < 2 {
        return Err(Error::Invalid(format!("need at least 2 clips, got {}", clips.len())));
    }
    let mut rows = Array2::zeros((clips.len(), embedder.dim()));
    for (mut row, clip) in rows.rows_mut().into_iter().zip(clips) {
        let v = embedder.embed(clip)?;
        if v.len() != embedder.dim() {
            return Err(Error::Shape(format!("embedder produced {} values, declared {}", v.len(), embedder.dim())));
        }
        row.assign(&v);
    }
    EmbeddingStats::from_vectors(&rows)
}

fn to_na(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

/// Symmetric PSD square root, clipping negative eigenvalues at zero.
fn sqrt_psd(m: DMatrix<f64>) -> DMatrix<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// `tr((A·B)^½)` as `tr((A^½·B·A^½)^½)`.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let ra = sqrt_psd(a.clone());
    sqrt_psd(&ra * b * &ra).trace()
}

/// `‖μ₁ − μ₂‖² + tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^½)`, clamped at zero.
pub fn frechet_distance(a: &EmbeddingStats, b: &EmbeddingStats) -> Result<f64> {
    if a.dim() != b.dim() || a.cov.dim() != (a.dim(), a.dim()) || b.cov.dim() != (b.dim(), b.dim()) {
        return Err(Error::Shape(format!("embedding dimensions {} and {} differ", a.dim(), b.dim())));
    }
    let diff = &a.mean - &b.mean;
    let mean_term = diff.dot(&diff);
    let (sa, sb) = (to_na(&a.cov), to_na(&b.cov));
    // both factorisation orders, so the result is symmetric to the last bit
    let cross = 0.5 * (trace_sqrt_product(&sa, &sb) + trace_sqrt_product(&sb, &sa));
    let d = mean_term + sa.trace() + sb.trace() - 2.0 * cross;
    if !d.is_finite() {
        return Err(Error::NonFinite("frechet distance".into()));
    }
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stats(mean: Array1<f64>, cov: Array2<f64>) -> EmbeddingStats {
        EmbeddingStats { mean, cov, count: 10 }
    }

    #[test]
    fn one_dimensional_closed_form() {
        let a = stats(arr1(&[0.0]), arr2(&[[1.0]]));
        let b = stats(arr1(&[1.0]), arr2(&[[1.0]]));
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() <= 1e-9);
        let c = stats(arr1(&[3.0]), arr2(&[[4.0]]));
        // (0 − 3)² + (1 − 2)²
        assert!((frechet_distance(&a, &c).unwrap() - 10.0).abs() <= 1e-9);
    }

    #[test]
    fn identical_is_zero_and_mismatch_errors() {
        let a = stats(arr1(&[1.0, 2.0]), arr2(&[[2.0, 0.5], [0.5, 1.0]]));
        assert!(frechet_distance(&a, &a).unwrap() <= 1e-12);
        let b = stats(arr1(&[1.0]), arr2(&[[1.0]]));
        assert!(frechet_distance(&a, &b).is_err());
    }

    #[test]
    fn two_sample_stats_by_hand() {
        let v = arr2(&[[1.0, 2.0], [3.0, -2.0]]);
        let s = EmbeddingStats::from_vectors(&v).unwrap();
        assert_eq!(s.mean, arr1(&[2.0, 0.0]));
        // unbiased: ((x1 − x2)²)/2 on the diagonal, (Δx·Δy)/2 off it
        assert_eq!(s.cov, arr2(&[[2.0, -4.0], [-4.0, 8.0]]));
        assert!(EmbeddingStats::from_vectors(&arr2(&[[1.0, 2.0]])).is_err());
        let same = arr2(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]);
        assert!(EmbeddingStats::from_vectors(&same).unwrap().cov.iter().all(|&x| x == 0.0));
    }

    fn random_spd(f: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let l = Array2::from_shape_simple_fn((f, f), || rng.random_range(-1.0..1.0));
        l.dot(&l.t()) + Array2::<f64>::eye(f) * 0.1
    }

    #[test]
    fn symmetric_and_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let a = stats(Array1::from_shape_simple_fn(5, || rng.random_range(-1.0..1.0)), random_spd(5, &mut rng));
            let b = stats(Array1::from_shape_simple_fn(5, || rng.random_range(-1.0..1.0)), random_spd(5, &mut rng));
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            assert!((ab - ba).abs() <= 1e-9);
            // random orthogonal Q from a QR factorisation
            let m = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            let q = m.qr().q();
            let q = Array2::from_shape_fn((5, 5), |(i, j)| q[(i, j)]);
            let rot = |s: &EmbeddingStats| stats(q.dot(&s.mean), q.dot(&s.cov).dot(&q.t()));
            let rotated = frechet_distance(&rot(&a), &rot(&b)).unwrap();
            assert!((rotated - ab).abs() <= 1e-6 * ab.max(1.0));
        }
    }
}
