use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CodeSequence, LatentSequence};
use crate::error::{Error, Result};

/// Learned embedding table plus per-entry usage counters.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub entries: Array2<f64>,
    pub usage_counts: Vec<u64>,
}

impl Codebook {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.nrows() < 2 {
            return Err(Error::Invalid("codebook needs at least two entries".into()));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("codebook entry".into()));
        }
        let k = entries.nrows();
        Ok(Codebook {
            entries,
            usage_counts: vec![0; k],
        })
    }

    /// Uniform entries in [−1/K, 1/K].
    pub fn uniform<R: Rng + ?Sized>(size: usize, dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / size as f64;
        let entries = Array2::from_shape_simple_fn((size, dim), || rng.random_range(-bound..=bound));
        Codebook {
            entries,
            usage_counts: vec![0; size],
        }
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn dim(&self) -> usize {
        self.entries.ncols()
    }

    pub fn lookup(&self, ids: &[usize]) -> Array2<f64> {
        self.entries.select(Axis(0), ids)
    }
}

fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest entry by Euclidean distance; ties go to the lowest index.
///
/// Candidates are screened with the expanded form `|z|² − 2z·e + |e|²`
/// (one matrix product), then every entry within rounding distance of the
/// screened minimum is re-scored exactly.
pub fn nearest_ids(z: &Array2<f64>, entries: &Array2<f64>) -> Result<Vec<usize>> {
    if entries.nrows() == 0 {
        return Err(Error::EmptyCodebook);
    }
    if z.ncols() != entries.ncols() {
        return Err(Error::Shape(format!(
            "latent dim {} vs codebook dim {}",
            z.ncols(),
            entries.ncols()
        )));
    }
    if !z.iter().chain(entries.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("latents or codebook entries".into()));
    }
    let cross = z.dot(&entries.t());
    let e_norms: Vec<f64> = entries.rows().into_iter().map(|e| e.dot(&e)).collect();
    let mut ids = Vec::with_capacity(z.nrows());
    for (i, zrow) in z.rows().into_iter().enumerate() {
        let z_norm = zrow.dot(&zrow);
        let approx: Vec<f64> = (0..entries.nrows())
            .map(|k| z_norm - 2.0 * cross[[i, k]] + e_norms[k])
            .collect();
        let best = approx.iter().cloned().fold(f64::INFINITY, f64::min);
        let slack = 1e-9 * (z_norm + e_norms.iter().cloned().fold(0.0, f64::max) + 1.0);
        let mut chosen = usize::MAX;
        let mut chosen_d = f64::INFINITY;
        for (k, &a) in approx.iter().enumerate() {
            if a <= best + slack {
                let d = squared_distance(zrow, entries.row(k));
                if d < chosen_d {
                    chosen_d = d;
                    chosen = k;
                }
            }
        }
        if chosen == usize::MAX {
            return Err(Error::NonFinite(format!("distances for latent frame {i}")));
        }
        ids.push(chosen);
    }
    Ok(ids)
}

/// Snaps every latent frame to its nearest codebook entry.
pub fn quantize(z: &LatentSequence, cb: &Codebook) -> Result<(CodeSequence, LatentSequence)> {
    let ids = nearest_ids(z.frames(), &cb.entries)?;
    let zq = cb.lookup(&ids);
    Ok((CodeSequence::new(ids, cb.size())?, LatentSequence::new(zq)?))
}

/// `exp(−Σ p log p)` of the empirical code distribution.
pub fn perplexity(ids: &[usize], size: usize) -> f64 {
    if ids.is_empty() {
        return 0.0;
    }
    let mut counts = vec![0usize; size];
    for &i in ids {
        counts[i] += 1;
    }
    let n = ids.len() as f64;
    let entropy: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    entropy.exp()
}

/// Exponential-moving-average codebook statistics with dead-code revival.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    pub cluster_size: Vec<f64>,
    pub embed_sum: Vec<Vec<f64>>,
    pub steps_unused: Vec<u32>,
}

impl EmaState {
    pub fn new(cb: &Codebook) -> Self {
        EmaState {
            cluster_size: vec![1.0; cb.size()],
            embed_sum: cb.entries.rows().into_iter().map(|r| r.to_vec()).collect(),
            steps_unused: vec![0; cb.size()],
        }
    }

    /// One EMA step from a batch of encoder outputs and their assignments.
    /// Entries unused for `dead_after` consecutive steps are reset to a random
    /// row of `z`. Returns how many entries were revived.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        cb: &mut Codebook,
        z: &Array2<f64>,
        ids: &[usize],
        decay: f64,
        dead_after: u32,
        rng: &mut R,
    ) -> usize {
        const EPS: f64 = 1e-5;
        let (k, d) = (cb.size(), cb.dim());
        let mut counts = vec![0.0; k];
        let mut sums = vec![vec![0.0; d]; k];
        for (row, &id) in z.rows().into_iter().zip(ids) {
            counts[id] += 1.0;
            for (s, x) in sums[id].iter_mut().zip(row.iter()) {
                *s += x;
            }
            cb.usage_counts[id] += 1;
        }
        for j in 0..k {
            self.cluster_size[j] = decay * self.cluster_size[j] + (1.0 - decay) * counts[j];
            for (m, s) in self.embed_sum[j].iter_mut().zip(&sums[j]) {
                *m = decay * *m + (1.0 - decay) * s;
            }
        }
        let total: f64 = self.cluster_size.iter().sum();
        for j in 0..k {
            let smoothed = (self.cluster_size[j] + EPS) / (total + k as f64 * EPS) * total;
            for c in 0..d {
                cb.entries[[j, c]] = self.embed_sum[j][c] / smoothed;
            }
        }

        let mut revived = 0;
        for j in 0..k {
            if counts[j] > 0.0 {
                self.steps_unused[j] = 0;
                continue;
            }
            self.steps_unused[j] += 1;
            if self.steps_unused[j] >= dead_after && z.nrows() > 0 {
                let r = rng.random_range(0..z.nrows());
                cb.entries.row_mut(j).assign(&z.row(r));
                self.cluster_size[j] = 1.0;
                self.embed_sum[j] = z.row(r).to_vec();
                self.steps_unused[j] = 0;
                revived += 1;
            }
        }
        revived
    }
}

/// Lloyd k-means with random distinct-row initialisation. When there are
/// fewer distinct rows than clusters, the surplus centroids are jittered
/// copies of random rows so no two entries coincide.
pub fn kmeans<R: Rng + ?Sized>(data: &Array2<f64>, k: usize, iterations: usize, rng: &mut R) -> Array2<f64> {
    let (n, d) = data.dim();
    assert!(n > 0, "kmeans on empty data");
    let scale = data.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-3);
    let jitter = |rng: &mut R| rng.random_range(-1e-3..1e-3) * scale;
    let mut centroids = Array2::zeros((k, d));
    let picked = sample(rng, n, k.min(n));
    for (j, i) in picked.iter().enumerate() {
        centroids.row_mut(j).assign(&data.row(i));
    }
    for j in n.min(k)..k {
        let r = rng.random_range(0..n);
        for c in 0..d {
            centroids[[j, c]] = data[[r, c]] + jitter(rng);
        }
    }
    for _ in 0..iterations {
        let ids = nearest_ids(data, &centroids).expect("k > 0");
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (row, &id) in data.rows().into_iter().zip(&ids) {
            counts[id] += 1;
            let mut s = sums.row_mut(id);
            s += &row;
        }
        for j in 0..k {
            if counts[j] > 0 {
                let mean = sums.row(j).mapv(|x| x / counts[j] as f64);
                centroids.row_mut(j).assign(&mean);
            } else {
                let r = rng.random_range(0..n);
                for c in 0..d {
                    centroids[[j, c]] = data[[r, c]] + jitter(rng);
                }
            }
        }
    }
    // break exact duplicates (identical data rows)
    for j in 1..k {
        while (0..j).any(|i| centroids.row(i) == centroids.row(j)) {
            for c in 0..d {
                centroids[[j, c]] += jitter(rng);
            }
        }
    }
    centroids
}
