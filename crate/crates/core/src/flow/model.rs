use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{euler_sample, Condition, FmState, SamplerConfig, VelocityField, DEFAULT_SIGMA};
use crate::checkpoint::{config_hash, Checkpoint};
use crate::dsp::{MelSpectrogram, CHROMA_BINS, N_MELS};
use crate::error::{Error, Result};
use crate::nn::{Graph, ParamId, ParamSet, Var};

pub const FM_CHECKPOINT_KIND: &str = "flow-matching";
const NORM_EPS: f64 = 1e-6;

/// Which melody representation the generator is conditioned on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ConditioningMode {
    /// Discrete bottleneck codes.
    #[default]
    Codes,
    /// The raw 24-bin chromagram.
    ChromaDense,
    /// The vocal mel spectrogram, with white noise added in training.
    MelNoisy,
}

impl ConditioningMode {
    pub const ALL: [ConditioningMode; 3] = [Self::Codes, Self::ChromaDense, Self::MelNoisy];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Codes => "codes",
            Self::ChromaDense => "chroma-dense",
            Self::MelNoisy => "mel-noisy",
        }
    }

    /// Width of a dense condition row; `None` for codes.
    pub fn dense_dim(self) -> Option<usize> {
        match self {
            Self::Codes => None,
            Self::ChromaDense => Some(CHROMA_BINS),
            Self::MelNoisy => Some(N_MELS),
        }
    }
}

impl fmt::Display for ConditioningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditioningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown conditioning mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FmConfig {
    pub mode: ConditioningMode,
    pub mel_bins: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Size of the bottleneck codebook; the embedding table has one more row.
    pub codebook_size: usize,
    /// Blocks after which the hidden state is aligned to the teacher.
    pub repa_layer: usize,
    pub teacher_dim: usize,
    pub sigma: f64,
}

impl Default for FmConfig {
    fn default() -> Self {
        FmConfig {
            mode: ConditioningMode::Codes,
            mel_bins: N_MELS,
            hidden: 256,
            layers: 4,
            heads: 4,
            mlp_ratio: 4,
            codebook_size: 512,
            repa_layer: 2,
            teacher_dim: 64,
            sigma: DEFAULT_SIGMA,
        }
    }
}

impl FmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.hidden == 0 || self.mlp_ratio == 0 {
            return Err(Error::Invalid("fm dimensions must be positive".into()));
        }
        if self.hidden % self.heads != 0 || self.hidden % 2 != 0 {
            return Err(Error::Invalid("fm hidden size must be even and divisible by the head count".into()));
        }
        if self.repa_layer == 0 || self.repa_layer > self.layers {
            return Err(Error::Invalid("repa layer must name one of the blocks".into()));
        }
        if self.codebook_size < 2 {
            return Err(Error::Invalid("codebook size must be at least 2".into()));
        }
        if !(self.sigma > 0.0 && self.sigma <= 1e-2) {
            return Err(Error::Invalid("sigma must lie in (0, 0.01]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Block {
    norm1: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    norm2: ParamId,
    up_w: ParamId,
    up_b: ParamId,
    down_w: ParamId,
    down_b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
enum CondFrontEnd {
    Table(ParamId),
    Dense { weight: ParamId, bias: ParamId, null: ParamId },
}

/// Per-column affine standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: Array1::zeros(dim),
            std: Array1::ones(dim),
        }
    }

    /// Column statistics over all rows of `parts`. Near-constant columns get
    /// unit scale.
    pub fn fit<'m>(parts: impl IntoIterator<Item = &'m Array2<f64>>) -> Result<Self> {
        let parts: Vec<&Array2<f64>> = parts.into_iter().collect();
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        let all = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
        if all.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        let mean = all.mean_axis(Axis(0)).unwrap();
        let std = all.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-6 { s } else { 1.0 });
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) / &self.std
    }

    pub fn invert(&self, x: &Array2<f64>) -> Array2<f64> {
        x * &self.std + &self.mean
    }
}

/// Output of one forward pass on the tape.
pub struct FmForward {
    pub velocity: Var,
    /// Teacher-space projection of the tapped hidden state.
    pub repa: Var,
}

/// Transformer velocity model over mel frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FmModel {
    config: FmConfig,
    pub params: ParamSet,
    pub mel_stats: Standardizer,
    pub cond_stats: Option<Standardizer>,
    in_w: ParamId,
    in_b: ParamId,
    cond: CondFrontEnd,
    time: [ParamId; 4],
    blocks: Vec<Block>,
    out_norm: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    repa: [ParamId; 4],
}

/// Sinusoidal embedding of `value` in `dim` (even) channels.
fn sinusoid(value: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (value * freq).sin();
        out[half + i] = (value * freq).cos();
    }
    out
}

impl FmModel {
    pub fn new(config: FmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let m = config.mel_bins;
        let inner = h * config.mlp_ratio;
        let mut p = ParamSet::new();
        let in_w = p.add_fan_in("input.weight", (m, h), m, &mut rng);
        let in_b = p.add_zeros("input.bias", (1, h));
        let cond = match config.mode.dense_dim() {
            None => CondFrontEnd::Table(p.add_normal("condition.table", (config.codebook_size + 1, h), 0.1, &mut rng)),
            Some(c) => CondFrontEnd::Dense {
                weight: p.add_fan_in("condition.weight", (c, h), c, &mut rng),
                bias: p.add_zeros("condition.bias", (1, h)),
                null: p.add_normal("condition.null", (1, h), 0.1, &mut rng),
            },
        };
        let time = [
            p.add_fan_in("time.0.weight", (h, h), h, &mut rng),
            p.add_zeros("time.0.bias", (1, h)),
            p.add_fan_in("time.1.weight", (h, h), h, &mut rng),
            p.add_zeros("time.1.bias", (1, h)),
        ];
        let blocks = (0..config.layers)
            .map(|l| Block {
                norm1: p.add_ones(&format!("block.{l}.norm1"), (1, h)),
                wq: p.add_fan_in(&format!("block.{l}.query"), (h, h), h, &mut rng),
                wk: p.add_fan_in(&format!("block.{l}.key"), (h, h), h, &mut rng),
                wv: p.add_fan_in(&format!("block.{l}.value"), (h, h), h, &mut rng),
                wo: p.add_fan_in(&format!("block.{l}.out"), (h, h), h, &mut rng),
                norm2: p.add_ones(&format!("block.{l}.norm2"), (1, h)),
                up_w: p.add_fan_in(&format!("block.{l}.up.weight"), (h, inner), h, &mut rng),
                up_b: p.add_zeros(&format!("block.{l}.up.bias"), (1, inner)),
                down_w: p.add_fan_in(&format!("block.{l}.down.weight"), (inner, h), inner, &mut rng),
                down_b: p.add_zeros(&format!("block.{l}.down.bias"), (1, h)),
            })
            .collect();
        let out_norm = p.add_ones("output.norm", (1, h));
        let out_w = p.add_fan_in("output.weight", (h, m), h, &mut rng);
        let out_b = p.add_zeros("output.bias", (1, m));
        let f = config.teacher_dim;
        let repa = [
            p.add_fan_in("repa.0.weight", (h, h), h, &mut rng),
            p.add_zeros("repa.0.bias", (1, h)),
            p.add_fan_in("repa.1.weight", (h, f), h, &mut rng),
            p.add_zeros("repa.1.bias", (1, f)),
        ];
        let cond_stats = config.mode.dense_dim().map(Standardizer::identity);
        Ok(FmModel {
            mel_stats: Standardizer::identity(m),
            cond_stats,
            config,
            params: p,
            in_w,
            in_b,
            cond,
            time,
            blocks,
            out_norm,
            out_w,
            out_b,
            repa,
        })
    }

    pub fn config(&self) -> &FmConfig {
        &self.config
    }

    pub fn config_hash(&self) -> String {
        config_hash(&self.config)
    }

    pub fn mode(&self) -> ConditioningMode {
        self.config.mode
    }

    fn check_condition(&self, c: &Condition, frames: usize) -> Result<()> {
        if c.len() != frames {
            return Err(Error::Shape(format!("condition has {} frames, expected {frames}", c.len())));
        }
        match (c, self.config.mode.dense_dim()) {
            (Condition::Codes(codes), None) => {
                if codes.vocab() != self.config.codebook_size {
                    return Err(Error::Shape(format!(
                        "codes index a codebook of {}, model expects {}",
                        codes.vocab(),
                        self.config.codebook_size
                    )));
                }
                Ok(())
            }
            (Condition::Dense(m), Some(d)) if m.ncols() == d => Ok(()),
            _ => Err(Error::Shape(format!("condition does not fit mode {}", self.config.mode))),
        }
    }

    fn condition_rows<'a>(
        &'a self,
        g: &mut Graph<'a>,
        conds: &[Option<&Condition>],
        segment: usize,
    ) -> Result<Var> {
        match &self.cond {
            CondFrontEnd::Table(table) => {
                let null = self.config.codebook_size;
                let mut ids = Vec::with_capacity(conds.len() * segment);
                for c in conds {
                    match c {
                        Some(Condition::Codes(codes)) => ids.extend_from_slice(codes.ids()),
                        _ => ids.extend(std::iter::repeat_n(null, segment)),
                    }
                }
                let t = g.param(&self.params, *table);
                Ok(g.gather(t, &ids))
            }
            CondFrontEnd::Dense { weight, bias, null } => {
                let stats = self.cond_stats.as_ref().expect("dense mode has condition stats");
                let (w, b, n) = (
                    g.param(&self.params, *weight),
                    g.param(&self.params, *bias),
                    g.param(&self.params, *null),
                );
                let mut parts = Vec::with_capacity(conds.len());
                for c in conds {
                    parts.push(match c {
                        Some(Condition::Dense(m)) => {
                            let x = g.constant(stats.apply(m));
                            g.linear(x, w, Some(b))
                        }
                        _ => g.gather(n, &vec![0; segment]),
                    });
                }
                Ok(if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts) })
            }
        }
    }

    fn attention<'a>(&'a self, g: &mut Graph<'a>, x: Var, block: &Block, segments: usize, segment: usize) -> Var {
        let q = g.param(&self.params, block.wq);
        let k = g.param(&self.params, block.wk);
        let v = g.param(&self.params, block.wv);
        let (q, k, v) = (g.matmul(x, q), g.matmul(x, k), g.matmul(x, v));
        let d = self.config.hidden / self.config.heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut rows = Vec::with_capacity(segments);
        for s in 0..segments {
            let (qs, ks, vs) = (
                g.slice_rows(q, s * segment, segment),
                g.slice_rows(k, s * segment, segment),
                g.slice_rows(v, s * segment, segment),
            );
            let mut heads = Vec::with_capacity(self.config.heads);
            for hd in 0..self.config.heads {
                let qh = g.slice_cols(qs, hd * d, d);
                let kh = g.slice_cols(ks, hd * d, d);
                let vh = g.slice_cols(vs, hd * d, d);
                let kt = g.transpose(kh);
                let scores = g.matmul(qh, kt);
                let scores = g.scale(scores, scale);
                let p = g.softmax_rows(scores);
                heads.push(g.matmul(p, vh));
            }
            rows.push(if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) });
        }
        let o = if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows) };
        let wo = g.param(&self.params, block.wo);
        g.matmul(o, wo)
    }

    fn norm<'a>(&'a self, g: &mut Graph<'a>, x: Var, gain: ParamId) -> Var {
        let n = g.rms_norm_rows(x, NORM_EPS);
        let gv = g.param(&self.params, gain);
        g.mul_row(n, gv)
    }

    /// Forward pass over `ts.len()` stacked segments of `segment` frames in
    /// standardized mel space. `conds[i] = None` selects the null condition.
    pub fn forward_graph<'a>(
        &'a self,
        g: &mut Graph<'a>,
        x_t: Var,
        segment: usize,
        ts: &[f64],
        conds: &[Option<&Condition>],
    ) -> Result<FmForward> {
        let segments = ts.len();
        let (rows, cols) = g.shape(x_t);
        if segments == 0 || conds.len() != segments || rows != segments * segment || cols != self.config.mel_bins {
            return Err(Error::Shape(format!("fm input {rows}×{cols} does not match {segments} segments")));
        }
        for c in conds.iter().flatten() {
            self.check_condition(c, segment)?;
        }
        let hdim = self.config.hidden;
        let (in_w, in_b) = (g.param(&self.params, self.in_w), g.param(&self.params, self.in_b));
        let mut h = g.linear(x_t, in_w, Some(in_b));
        let c = self.condition_rows(g, conds, segment)?;
        h = g.add(h, c);
        let table: Vec<Vec<f64>> = (0..segment).map(|i| sinusoid(i as f64, hdim)).collect();
        let pos = Array2::from_shape_fn((rows, hdim), |(i, j)| table[i % segment][j]);
        let pos = g.constant(pos);
        h = g.add(h, pos);

        let temb: Vec<f64> = ts.iter().flat_map(|&t| sinusoid(1000.0 * t, hdim)).collect();
        let temb = Array2::from_shape_vec((segments, hdim), temb).expect("segments × hidden");
        let temb = g.constant(temb);
        let [w0, b0, w1, b1] = self.time.map(|id| g.param(&self.params, id));
        let te = g.linear(temb, w0, Some(b0));
        let te = g.silu(te);
        let te = g.linear(te, w1, Some(b1));
        let per_frame: Vec<usize> = (0..rows).map(|i| i / segment).collect();
        let te = g.gather(te, &per_frame);

        let mut tapped = None;
        for (l, block) in self.blocks.iter().enumerate() {
            h = g.add(h, te);
            let a = self.norm(g, h, block.norm1);
            let a = self.attention(g, a, block, segments, segment);
            h = g.add(h, a);
            let m = self.norm(g, h, block.norm2);
            let (uw, ub) = (g.param(&self.params, block.up_w), g.param(&self.params, block.up_b));
            let m = g.linear(m, uw, Some(ub));
            let m = g.silu(m);
            let (dw, db) = (g.param(&self.params, block.down_w), g.param(&self.params, block.down_b));
            let m = g.linear(m, dw, Some(db));
            h = g.add(h, m);
            if l + 1 == self.config.repa_layer {
                tapped = Some(h);
            }
        }
        let o = self.norm(g, h, self.out_norm);
        let (ow, ob) = (g.param(&self.params, self.out_w), g.param(&self.params, self.out_b));
        let velocity = g.linear(o, ow, Some(ob));

        let [r0, rb0, r1, rb1] = self.repa.map(|id| g.param(&self.params, id));
        let r = g.linear(tapped.expect("repa layer validated"), r0, Some(rb0));
        let r = g.silu(r);
        let repa = g.linear(r, r1, Some(rb1));
        Ok(FmForward { velocity, repa })
    }

    /// Generates a mel spectrogram with one frame per condition frame.
    pub fn sample(&self, condition: &Condition, sampler: &SamplerConfig) -> Result<MelSpectrogram> {
        self.check_condition(condition, condition.len())?;
        let x = euler_sample(self, condition, self.config.mel_bins, sampler)?;
        MelSpectrogram::new(self.mel_stats.invert(&x))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(FM_CHECKPOINT_KIND, &self.config);
        for (name, value) in self.params.iter() {
            ck.push(name, value.clone());
        }
        let row = |v: &Array1<f64>| v.clone().insert_axis(Axis(0));
        ck.push("stats.mel_mean", row(&self.mel_stats.mean));
        ck.push("stats.mel_std", row(&self.mel_stats.std));
        if let Some(s) = &self.cond_stats {
            ck.push("stats.cond_mean", row(&s.mean));
            ck.push("stats.cond_std", row(&s.std));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, expected: Option<&FmConfig>) -> Result<Self> {
        let config: FmConfig = match expected {
            Some(cfg) => ck.verified_config(FM_CHECKPOINT_KIND, cfg)?,
            None => {
                if ck.kind != FM_CHECKPOINT_KIND {
                    return Err(Error::Checkpoint(format!("expected a flow-matching checkpoint, found {}", ck.kind)));
                }
                ck.config()?
            }
        };
        let mut model = FmModel::new(config, 0)?;
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            let stored = ck.tensor(&name)?;
            if stored.dim() != model.params.get(id).dim() {
                return Err(Error::Checkpoint(format!("tensor {name} has the wrong shape")));
            }
            *model.params.get_mut(id) = stored.clone();
        }
        let row = |name: &str, len: usize| -> Result<Array1<f64>> {
            let t = ck.tensor(name)?;
            if t.len() != len {
                return Err(Error::Checkpoint(format!("tensor {name} has the wrong shape")));
            }
            Ok(t.iter().copied().collect())
        };
        let m = model.config.mel_bins;
        model.mel_stats = Standardizer {
            mean: row("stats.mel_mean", m)?,
            std: row("stats.mel_std", m)?,
        };
        if let Some(d) = model.config.mode.dense_dim() {
            model.cond_stats = Some(Standardizer {
                mean: row("stats.cond_mean", d)?,
                std: row("stats.cond_std", d)?,
            });
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>, expected: Option<&FmConfig>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, expected)
    }
}

impl VelocityField for FmModel {
    fn velocity(&self, state: &FmState, condition: Option<&Condition>) -> Result<Array2<f64>> {
        let frames = state.x_t().nrows();
        let mut g = Graph::new();
        let x = g.constant(state.x_t().clone());
        let out = self.forward_graph(&mut g, x, frames, &[state.t()], &[condition])?;
        Ok(g.value(out.velocity).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bottleneck::CodeSequence;
    use rand::Rng;

    fn tiny(mode: ConditioningMode) -> FmConfig {
        FmConfig {
            mode,
            mel_bins: 6,
            hidden: 8,
            layers: 2,
            heads: 2,
            mlp_ratio: 2,
            codebook_size: 5,
            repa_layer: 1,
            teacher_dim: 3,
            ..Default::default()
        }
    }

    fn cond_for(mode: ConditioningMode, frames: usize, seed: u64) -> Condition {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match mode.dense_dim() {
            None => Condition::Codes(CodeSequence::new((0..frames).map(|_| rng.random_range(0..5)).collect(), 5).unwrap()),
            Some(d) => Condition::Dense(Array2::from_shape_simple_fn((frames, d), || rng.random_range(0.0..1.0))),
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in ConditioningMode::ALL {
            assert_eq!(m.as_str().parse::<ConditioningMode>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
        }
        assert!("chroma".parse::<ConditioningMode>().is_err());
    }

    #[test]
    fn every_mode_runs_and_condition_matters() {
        for mode in ConditioningMode::ALL {
            let model = FmModel::new(tiny(mode), 1).unwrap();
            let x = Array2::from_shape_fn((7, 6), |(i, j)| ((i + 2 * j) as f64).cos());
            let s = FmState::new(x, 0.4).unwrap();
            let a = model.velocity(&s, Some(&cond_for(mode, 7, 1))).unwrap();
            let b = model.velocity(&s, Some(&cond_for(mode, 7, 2))).unwrap();
            let n = model.velocity(&s, None).unwrap();
            assert_eq!(a.dim(), (7, 6));
            assert!(a.iter().all(|v| v.is_finite()));
            assert_ne!(a, b);
            assert_ne!(a, n);
            assert!(model.velocity(&s, Some(&cond_for(mode, 6, 1))).is_err());
        }
    }

    #[test]
    fn batched_forward_equals_per_segment_forward() {
        let model = FmModel::new(tiny(ConditioningMode::ChromaDense), 3).unwrap();
        let xa = Array2::from_shape_fn((4, 6), |(i, j)| (i as f64 - j as f64) * 0.3);
        let xb = Array2::from_shape_fn((4, 6), |(i, j)| (i * j) as f64 * 0.1);
        let ca = cond_for(model.mode(), 4, 5);
        let va = model.velocity(&FmState::new(xa.clone(), 0.2).unwrap(), Some(&ca)).unwrap();
        let vb = model.velocity(&FmState::new(xb.clone(), 0.7).unwrap(), None).unwrap();
        let mut g = Graph::new();
        let x = g.constant(ndarray::concatenate(Axis(0), &[xa.view(), xb.view()]).unwrap());
        let out = model.forward_graph(&mut g, x, 4, &[0.2, 0.7], &[Some(&ca), None]).unwrap();
        let v = g.value(out.velocity);
        let want = ndarray::concatenate(Axis(0), &[va.view(), vb.view()]).unwrap();
        assert!(v.iter().zip(&want).all(|(p, q)| (p - q).abs() < 1e-12));
        assert_eq!(g.shape(out.repa), (8, 3));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut model = FmModel::new(tiny(ConditioningMode::MelNoisy), 4).unwrap();
        model.mel_stats.mean.fill(0.5);
        let back = FmModel::from_checkpoint(&model.to_checkpoint(), Some(model.config())).unwrap();
        assert_eq!(back, model);
        let other = FmConfig { hidden: 16, ..tiny(ConditioningMode::MelNoisy) };
        assert!(matches!(
            FmModel::from_checkpoint(&model.to_checkpoint(), Some(&other)),
            Err(Error::ConfigHashMismatch { .. })
        ));
    }

    #[test]
    fn standardizer_inverts() {
        let a = Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64);
        let mut b = a.clone();
        b.column_mut(2).fill(4.0);
        let s = Standardizer::fit([&a, &b]).unwrap();
        let z = s.apply(&a);
        let back = s.invert(&z);
        assert!(back.iter().zip(&a).all(|(p, q)| (p - q).abs() < 1e-12));
    }
}
