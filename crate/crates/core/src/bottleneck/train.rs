use std::path::Path;

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::codebook::{kmeans, nearest_ids, perplexity, EmaState};
use super::model::{VqVaeConfig, VqVaeModel};
use crate::batch::{sample_segments, stack_segments};
use crate::checkpoint::Checkpoint;
use crate::dsp::Chromagram;
use crate::error::{Error, Result};
use crate::nn::{AdamW, AdamWConfig, Graph, WarmupSchedule};
use crate::rng::{derive_rng, derive_seed};

const KMEANS_MAX_ROWS: usize = 10_000;
const KMEANS_ITERATIONS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VqTrainConfig {
    pub model: VqVaeConfig,
    /// Total optimizer steps (a resumed run stops here too).
    pub steps: u64,
    /// Frames per batch, split into segments of `segment_frames`.
    pub batch_frames: usize,
    pub segment_frames: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub beta: f64,
    pub ema_decay: f64,
    pub dead_code_steps: u32,
    /// Batches whose encoder outputs seed the codebook by k-means; 0 keeps
    /// the uniform init.
    pub kmeans_batches: usize,
}

impl Default for VqTrainConfig {
    fn default() -> Self {
        VqTrainConfig {
            model: VqVaeConfig::default(),
            steps: 2000,
            batch_frames: 1000,
            segment_frames: 150,
            learning_rate: 1e-3,
            warmup_steps: 100,
            weight_decay: 0.01,
            beta: 0.25,
            ema_decay: 0.99,
            dead_code_steps: 200,
            kmeans_batches: 100,
        }
    }
}

impl VqTrainConfig {
    fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_frames == 0 || self.segment_frames == 0 {
            return Err(Error::Invalid("batch and segment sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Invalid("ema decay must lie in [0, 1)".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.beta >= 0.0) {
            return Err(Error::Invalid("learning rate must be positive and beta non-negative".into()));
        }
        Ok(())
    }

    fn schedule(&self) -> WarmupSchedule {
        WarmupSchedule {
            base_lr: self.learning_rate,
            warmup_steps: self.warmup_steps,
        }
    }

    fn adam(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqStepLog {
    pub step: u64,
    pub total: f64,
    pub recon: f64,
    pub commit: f64,
    pub lr: f64,
    pub perplexity: f64,
    pub revived: usize,
}

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug)]
pub struct VqTrainState {
    pub model: VqVaeModel,
    pub ema: EmaState,
    pub optimizer: AdamW,
    pub step: u64,
    pub seed: u64,
}

pub struct VqTrainOutcome {
    pub state: VqTrainState,
    pub log: Vec<VqStepLog>,
}

impl VqTrainOutcome {
    pub fn model(&self) -> &VqVaeModel {
        &self.state.model
    }
}

struct Batcher<'d> {
    clips: Vec<&'d Array2<f64>>,
    lengths: Vec<usize>,
    segment: usize,
    count: usize,
    seed: u64,
}

impl<'d> Batcher<'d> {
    fn new(dataset: &'d [Chromagram], config: &VqTrainConfig, seed: u64) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let clips: Vec<&Array2<f64>> = dataset.iter().map(|c| c.frames()).collect();
        let lengths: Vec<usize> = clips.iter().map(|c| c.nrows()).collect();
        let shortest = *lengths.iter().min().unwrap();
        if shortest == 0 {
            return Err(Error::Invalid("dataset contains an empty chromagram".into()));
        }
        let segment = config.segment_frames.min(shortest);
        Ok(Batcher {
            clips,
            lengths,
            segment,
            count: (config.batch_frames / segment).max(1),
            seed,
        })
    }

    fn batch(&self, step: u64) -> Array2<f64> {
        let mut rng = derive_rng(self.seed, "vqvae.batch", step);
        let segs = sample_segments(&self.lengths, self.segment, self.count, &mut rng);
        stack_segments(&self.clips, &segs, self.segment)
    }
}

impl VqTrainState {
    /// Fresh weights with the codebook seeded by k-means over encoder outputs.
    pub fn init(dataset: &[Chromagram], config: &VqTrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let batcher = Batcher::new(dataset, config, seed)?;
        let mut model = VqVaeModel::new(config.model.clone(), derive_seed(seed, "vqvae.init", 0))?;
        if config.kmeans_batches > 0 {
            let outputs: Vec<Array2<f64>> = (1..=config.kmeans_batches as u64)
                .map(|s| model.encode_matrix(&batcher.batch(s)))
                .collect::<Result<_>>()?;
            let views: Vec<_> = outputs.iter().map(|o| o.view()).collect();
            let mut all = ndarray::concatenate(Axis(0), &views).expect("equal widths");
            let mut rng = derive_rng(seed, "vqvae.kmeans", 0);
            if all.nrows() > KMEANS_MAX_ROWS {
                let stride = all.nrows().div_ceil(KMEANS_MAX_ROWS);
                all = all.slice(s![..;stride, ..]).to_owned();
            }
            model.codebook.entries = kmeans(&all, config.model.codebook_size, KMEANS_ITERATIONS, &mut rng);
        }
        let ema = EmaState::new(&model.codebook);
        let optimizer = AdamW::new(&model.params, config.adam());
        Ok(VqTrainState {
            model,
            ema,
            optimizer,
            step: 0,
            seed,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        let k = self.ema.cluster_size.len();
        ck.push("ema.cluster_size", Array2::from_shape_vec((1, k), self.ema.cluster_size.clone()).unwrap());
        let d = self.model.codebook.dim();
        let sums = self.ema.embed_sum.iter().flatten().copied().collect();
        ck.push("ema.embed_sum", Array2::from_shape_vec((k, d), sums).unwrap());
        let unused = self.ema.steps_unused.iter().map(|&u| u as f64).collect();
        ck.push("ema.steps_unused", Array2::from_shape_vec((1, k), unused).unwrap());
        self.optimizer.export("adam", &mut ck);
        ck.metadata = serde_json::json!({
            "step": self.step,
            "seed": self.seed,
            "adam_steps": self.optimizer.steps,
        });
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, config: &VqTrainConfig) -> Result<Self> {
        let model = VqVaeModel::from_checkpoint(ck, Some(&config.model))?;
        let meta = |key: &str| {
            ck.metadata
                .get(key)
                .and_then(|v| v.as_u64())
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks training field {key}")))
        };
        let (step, seed, adam_steps) = (meta("step")?, meta("seed")?, meta("adam_steps")?);
        let ema = EmaState {
            cluster_size: ck.tensor("ema.cluster_size")?.iter().copied().collect(),
            embed_sum: ck.tensor("ema.embed_sum")?.rows().into_iter().map(|r| r.to_vec()).collect(),
            steps_unused: ck.tensor("ema.steps_unused")?.iter().map(|&u| u as u32).collect(),
        };
        let optimizer = AdamW::import(&model.params, config.adam(), adam_steps, "adam", ck)?;
        Ok(VqTrainState {
            model,
            ema,
            optimizer,
            step,
            seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>, config: &VqTrainConfig) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, config)
    }
}

/// Trains from scratch for `config.steps` steps.
pub fn train_vqvae(dataset: &[Chromagram], config: &VqTrainConfig, seed: u64) -> Result<VqTrainOutcome> {
    let state = VqTrainState::init(dataset, config, seed)?;
    train_vqvae_from(state, dataset, config, |_| {})
}

/// Continues `state` until `config.steps`. `on_step` sees every log entry as
/// it is produced.
pub fn train_vqvae_from(
    mut state: VqTrainState,
    dataset: &[Chromagram],
    config: &VqTrainConfig,
    mut on_step: impl FnMut(&VqStepLog),
) -> Result<VqTrainOutcome> {
    config.validate()?;
    let batcher = Batcher::new(dataset, config, state.seed)?;
    let schedule = config.schedule();
    let segment = batcher.segment;
    let mut log = Vec::new();
    while state.step < config.steps {
        let step = state.step + 1;
        let x = batcher.batch(step);
        let model = &state.model;
        let (mut grads, z_e, ids, total, recon, commit) = {
            let mut g = Graph::new();
            let xv = g.constant(x);
            let ze = model.encode_graph(&mut g, xv, segment);
            let z_e = g.value(ze).clone();
            let ids = nearest_ids(&z_e, &model.codebook.entries)?;
            let zq = g.constant(model.codebook.lookup(&ids));
            let st = g.straight_through(ze, zq);
            let xh = model.decode_graph(&mut g, st, segment);
            let recon = g.mse(xh, xv);
            let commit = g.mse(ze, zq);
            let weighted = g.scale(commit, config.beta);
            let total = g.add(recon, weighted);
            let values = (g.scalar(total), g.scalar(recon), g.scalar(commit));
            (g.backward(total, &model.params), z_e, ids, values.0, values.1, values.2)
        };
        if !total.is_finite() || !grads.all_finite() {
            return Err(Error::NonFinite(format!("vqvae loss at step {step}")));
        }
        let lr = schedule.lr(step);
        state.optimizer.step(&mut state.model.params, &mut grads, lr);
        let mut rng = derive_rng(state.seed, "vqvae.revive", step);
        let revived = state.ema.update(
            &mut state.model.codebook,
            &z_e,
            &ids,
            config.ema_decay,
            config.dead_code_steps,
            &mut rng,
        );
        if !state.model.params.all_finite() {
            return Err(Error::NonFinite(format!("vqvae weights after step {step}")));
        }
        state.step = step;
        let entry = VqStepLog {
            step,
            total,
            recon,
            commit,
            lr,
            perplexity: perplexity(&ids, config.model.codebook_size),
            revived,
        };
        on_step(&entry);
        log.push(entry);
    }
    Ok(VqTrainOutcome { state, log })
}

/// Mean per-entry reconstruction error of `model` over whole clips.
pub fn reconstruction_loss(model: &VqVaeModel, dataset: &[Chromagram]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in dataset {
        let z = model.encode_matrix(c.frames())?;
        let ids = nearest_ids(&z, &model.codebook.entries)?;
        let x_hat = model.decode_matrix(&model.codebook.lookup(&ids))?;
        sum += (&x_hat - c.frames()).mapv(|d| d * d).sum();
        count += x_hat.len();
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_dataset() -> Vec<Chromagram> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..3)
            .map(|_| {
                let mut m = Array2::zeros((40, 24));
                for t in 0..40 {
                    m[[t, rng.random_range(0..24)]] = 1.0;
                }
                Chromagram::new(m).unwrap()
            })
            .collect()
    }

    fn toy_config(steps: u64) -> VqTrainConfig {
        VqTrainConfig {
            model: VqVaeConfig {
                hidden: 16,
                latent_dim: 4,
                codebook_size: 16,
                layers: 2,
                ..Default::default()
            },
            steps,
            batch_frames: 80,
            segment_frames: 20,
            warmup_steps: 5,
            kmeans_batches: 4,
            dead_code_steps: 10,
            ..Default::default()
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(matches!(train_vqvae(&[], &toy_config(1), 0), Err(Error::EmptyDataset)));
    }

    #[test]
    fn same_seed_gives_identical_curves() {
        let data = toy_dataset();
        let a = train_vqvae(&data, &toy_config(15), 4).unwrap();
        let b = train_vqvae(&data, &toy_config(15), 4).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model(), b.model());
        let c = train_vqvae(&data, &toy_config(15), 5).unwrap();
        assert_ne!(a.log, c.log);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = toy_dataset();
        let full = train_vqvae(&data, &toy_config(12), 1).unwrap();
        let half = train_vqvae(&data, &toy_config(6), 1).unwrap();
        let ck = half.state.to_checkpoint();
        let bytes = ck.to_bytes();
        let restored = VqTrainState::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap(), &toy_config(12)).unwrap();
        assert_eq!(restored.step, 6);
        let rest = train_vqvae_from(restored, &data, &toy_config(12), |_| {}).unwrap();
        assert_eq!(rest.log.first().unwrap().step, 7);
        assert_eq!(rest.log, full.log[6..]);
        assert_eq!(rest.model(), full.model());
    }

    #[test]
    fn loss_decreases_and_stays_finite() {
        let data = toy_dataset();
        let out = train_vqvae(&data, &toy_config(150), 2).unwrap();
        assert!(out.log.iter().all(|l| l.total.is_finite() && l.total > 0.0));
        let head: f64 = out.log[..10].iter().map(|l| l.recon).sum();
        let tail: f64 = out.log[140..].iter().map(|l| l.recon).sum();
        assert!(tail < head, "head {head} tail {tail}");
    }
}
