use std::path::Path;

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::model::{FmConfig, FmModel, Standardizer};
use super::teacher::Teacher;
use super::{fm_loss, fm_objective, Condition, FmDraw, CONDITION_DROPOUT, REPA_WEIGHT};
use crate::batch::sample_segments;
use crate::bottleneck::CodeSequence;
use crate::checkpoint::Checkpoint;
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::{AdamW, AdamWConfig, Graph, WarmupSchedule};
use crate::rng::{derive_rng, derive_seed};

/// A target accompaniment mel and the frame-aligned melody condition.
#[derive(Clone, Debug, PartialEq)]
pub struct FmPair {
    pub mel: MelSpectrogram,
    pub condition: Condition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FmTrainConfig {
    pub model: FmConfig,
    pub steps: u64,
    pub batch_frames: usize,
    pub segment_frames: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub repa_weight: f64,
    pub condition_dropout: f64,
}

impl Default for FmTrainConfig {
    fn default() -> Self {
        FmTrainConfig {
            model: FmConfig::default(),
            steps: 5000,
            batch_frames: 1000,
            segment_frames: 150,
            learning_rate: 3e-4,
            warmup_steps: 320,
            weight_decay: 0.01,
            repa_weight: REPA_WEIGHT,
            condition_dropout: CONDITION_DROPOUT,
        }
    }
}

impl FmTrainConfig {
    fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_frames == 0 || self.segment_frames == 0 {
            return Err(Error::Invalid("batch and segment sizes must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.repa_weight >= 0.0) {
            return Err(Error::Invalid("learning rate must be positive and repa weight non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.condition_dropout) {
            return Err(Error::Invalid("condition dropout must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FmStepLog {
    pub step: u64,
    pub total: f64,
    pub fm: f64,
    pub repa: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct FmTrainState {
    pub model: FmModel,
    pub optimizer: AdamW,
    pub step: u64,
    pub seed: u64,
}

pub struct FmTrainOutcome {
    pub state: FmTrainState,
    pub log: Vec<FmStepLog>,
}

impl FmTrainOutcome {
    pub fn model(&self) -> &FmModel {
        &self.state.model
    }
}

fn check_pairs(pairs: &[FmPair], config: &FmConfig) -> Result<usize> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (i, p) in pairs.iter().enumerate() {
        if p.mel.num_frames() != p.condition.len() {
            return Err(Error::Shape(format!(
                "pair {i}: {} mel frames but {} condition frames",
                p.mel.num_frames(),
                p.condition.len()
            )));
        }
        if p.mel.mel_bins() != config.mel_bins {
            return Err(Error::Shape(format!("pair {i}: mel has {} bins", p.mel.mel_bins())));
        }
        let fits = match (&p.condition, config.mode.dense_dim()) {
            (Condition::Codes(_), None) => true,
            (Condition::Dense(m), Some(d)) => m.ncols() == d,
            _ => false,
        };
        if !fits {
            return Err(Error::Shape(format!("pair {i}: condition does not fit mode {}", config.mode)));
        }
    }
    Ok(pairs.iter().map(|p| p.mel.num_frames()).min().unwrap())
}

fn slice_condition(c: &Condition, start: usize, len: usize) -> Condition {
    match c {
        Condition::Codes(codes) => {
            Condition::Codes(CodeSequence::new(codes.ids()[start..start + len].to_vec(), codes.vocab()).expect("ids in range"))
        }
        Condition::Dense(m) => Condition::Dense(m.slice(s![start..start + len, ..]).to_owned()),
    }
}

/// Standardized targets and their teacher features, fixed for a run.
struct Prepared {
    targets: Vec<Array2<f64>>,
    teacher: Vec<Array2<f64>>,
    lengths: Vec<usize>,
    segment: usize,
    count: usize,
}

impl Prepared {
    fn new(pairs: &[FmPair], model: &FmModel, config: &FmTrainConfig) -> Result<Self> {
        let shortest = check_pairs(pairs, model.config())?;
        let teacher_net = Teacher::new(model.config().mel_bins, model.config().teacher_dim);
        let targets: Vec<Array2<f64>> = pairs.iter().map(|p| model.mel_stats.apply(p.mel.frames())).collect();
        let teacher = targets
            .iter()
            .map(|t| teacher_net.features(t).map(|f| f.frames().clone()))
            .collect::<Result<_>>()?;
        let segment = config.segment_frames.min(shortest);
        Ok(Prepared {
            lengths: targets.iter().map(|t| t.nrows()).collect(),
            targets,
            teacher,
            segment,
            count: (config.batch_frames / segment).max(1),
        })
    }
}

impl FmTrainState {
    /// Fresh weights with standardization fitted to `pairs`.
    pub fn init(pairs: &[FmPair], config: &FmTrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        check_pairs(pairs, &config.model)?;
        let mut model = FmModel::new(config.model.clone(), derive_seed(seed, "fm.init", 0))?;
        model.mel_stats = Standardizer::fit(pairs.iter().map(|p| p.mel.frames()))?;
        if config.model.mode.dense_dim().is_some() {
            let dense: Vec<&Array2<f64>> = pairs
                .iter()
                .filter_map(|p| match &p.condition {
                    Condition::Dense(m) => Some(m),
                    Condition::Codes(_) => None,
                })
                .collect();
            model.cond_stats = Some(Standardizer::fit(dense)?);
        }
        let optimizer = AdamW::new(&model.params, config.adam());
        Ok(FmTrainState {
            model,
            optimizer,
            step: 0,
            seed,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        self.optimizer.export("adam", &mut ck);
        ck.metadata = serde_json::json!({
            "step": self.step,
            "seed": self.seed,
            "adam_steps": self.optimizer.steps,
        });
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, config: &FmTrainConfig) -> Result<Self> {
        let model = FmModel::from_checkpoint(ck, Some(&config.model))?;
        let meta = |key: &str| {
            ck.metadata
                .get(key)
                .and_then(|v| v.as_u64())
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks training field {key}")))
        };
        let optimizer = AdamW::import(&model.params, config.adam(), meta("adam_steps")?, "adam", ck)?;
        Ok(FmTrainState {
            model,
            optimizer,
            step: meta("step")?,
            seed: meta("seed")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>, config: &FmTrainConfig) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, config)
    }
}

pub fn train_fm(pairs: &[FmPair], config: &FmTrainConfig, seed: u64) -> Result<FmTrainOutcome> {
    let state = FmTrainState::init(pairs, config, seed)?;
    train_fm_from(state, pairs, config, |_| {})
}

pub fn train_fm_from(
    mut state: FmTrainState,
    pairs: &[FmPair],
    config: &FmTrainConfig,
    mut on_step: impl FnMut(&FmStepLog),
) -> Result<FmTrainOutcome> {
    config.validate()?;
    let data = Prepared::new(pairs, &state.model, config)?;
    let schedule = WarmupSchedule {
        base_lr: config.learning_rate,
        warmup_steps: config.warmup_steps,
    };
    let (seg, bins) = (data.segment, config.model.mel_bins);
    let mut log = Vec::new();
    while state.step < config.steps {
        let step = state.step + 1;
        let mut rng = derive_rng(state.seed, "fm.batch", step);
        let segments = sample_segments(&data.lengths, seg, data.count, &mut rng);
        let draws: Vec<FmDraw> = segments
            .iter()
            .map(|_| FmDraw::sample(&mut rng, seg, bins, config.condition_dropout))
            .collect();
        let stack = |src: &[Array2<f64>]| {
            let views: Vec<_> = segments
                .iter()
                .map(|sg| src[sg.clip].slice(s![sg.start..sg.start + seg, ..]))
                .collect();
            ndarray::concatenate(Axis(0), &views).expect("equal widths")
        };
        let x1 = stack(&data.targets);
        let teacher = stack(&data.teacher);
        let conds: Vec<Condition> = segments
            .iter()
            .map(|sg| slice_condition(&pairs[sg.clip].condition, sg.start, seg))
            .collect();

        let model = &state.model;
        let (mut grads, total, fm, repa) = {
            let mut g = Graph::new();
            let mut tapped = None;
            let fm = fm_objective(&mut g, &x1, &draws, config.model.sigma, |g, x, ts, drops| {
                let active: Vec<Option<&Condition>> =
                    conds.iter().zip(drops).map(|(c, &d)| if d { None } else { Some(c) }).collect();
                let out = model.forward_graph(g, x, seg, ts, &active)?;
                tapped = Some(out.repa);
                Ok(out.velocity)
            })?;
            let target = g.constant(teacher);
            let dist = g.cosine_distance_rows(tapped.expect("forward ran"), target);
            let repa = g.mean(dist);
            let weighted = g.scale(repa, config.repa_weight);
            let total = g.add(fm, weighted);
            let values = (g.scalar(total), g.scalar(fm), g.scalar(repa));
            (g.backward(total, &model.params), values.0, values.1, values.2)
        };
        if !total.is_finite() || !grads.all_finite() {
            return Err(Error::NonFinite(format!("fm loss at step {step}")));
        }
        let lr = schedule.lr(step);
        state.optimizer.step(&mut state.model.params, &mut grads, lr);
        if !state.model.params.all_finite() {
            return Err(Error::NonFinite(format!("fm weights after step {step}")));
        }
        state.step = step;
        let entry = FmStepLog {
            step,
            total,
            fm,
            repa,
            lr,
        };
        on_step(&entry);
        log.push(entry);
    }
    Ok(FmTrainOutcome { state, log })
}

/// Mean flow-matching loss over fixed draws (`repeats` per pair), for
/// comparing a model against itself across training.
pub fn fm_eval_loss(model: &FmModel, pairs: &[FmPair], repeats: usize, seed: u64) -> Result<f64> {
    check_pairs(pairs, model.config())?;
    let mut total = 0.0;
    let mut n = 0;
    for (i, p) in pairs.iter().enumerate() {
        let x1 = model.mel_stats.apply(p.mel.frames());
        for r in 0..repeats {
            let mut rng = derive_rng(seed, "fm.eval", (i * repeats + r) as u64);
            total += fm_loss(model, &x1, &p.condition, model.config().sigma, CONDITION_DROPOUT, &mut rng)?;
            n += 1;
        }
    }
    Ok(total / n.max(1) as f64)
}
