//! Conditional flow matching over mel spectrograms.
//!
//! Noise `x0 ~ N(0, I)` is carried to a standardized target mel `x1` along
//! `x_t = (1 − (1 − σ)t)·x0 + t·x1`, whose velocity `x1 − (1 − σ)·x0` is
//! constant in `t`. A transformer learns that velocity given the melodic
//! condition; sampling integrates it with forward Euler and classifier-free
//! guidance.

mod generate;
mod model;
mod teacher;
mod train;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bottleneck::CodeSequence;
use crate::error::{Error, Result};
use crate::nn::{Graph, Var};
use crate::rng::derive_rng;

pub use generate::{build_condition, generate_accompaniment, noise_snr_for_clip, MEL_NOISE_SNR_DB};
pub use model::{ConditioningMode, FmConfig, FmForward, FmModel, Standardizer, FM_CHECKPOINT_KIND};
pub use teacher::{Teacher, TeacherFeatures};
pub use train::{fm_eval_loss, train_fm, train_fm_from, FmPair, FmStepLog, FmTrainConfig, FmTrainOutcome, FmTrainState};

pub const DEFAULT_SIGMA: f64 = 1e-5;
pub const CONDITION_DROPOUT: f64 = 0.1;
pub const REPA_WEIGHT: f64 = 0.5;

/// A point on the probability path.
#[derive(Clone, Debug, PartialEq)]
pub struct FmState {
    x_t: Array2<f64>,
    t: f64,
}

impl FmState {
    pub fn new(x_t: Array2<f64>, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Invalid(format!("timestep {t} outside [0, 1]")));
        }
        if x_t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("path state".into()));
        }
        Ok(FmState { x_t, t })
    }

    pub fn x_t(&self) -> &Array2<f64> {
        &self.x_t
    }

    pub fn t(&self) -> f64 {
        self.t
    }
}

/// What the generator is conditioned on, one row or id per frame.
#[derive(Clone, Debug, PartialEq)]
pub enum Condition {
    Codes(CodeSequence),
    /// Dense per-frame features: a chromagram or a (noisy) mel.
    Dense(Array2<f64>),
}

impl Condition {
    pub fn len(&self) -> usize {
        match self {
            Condition::Codes(c) => c.len(),
            Condition::Dense(m) => m.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub cfg_scale: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps: 50,
            cfg_scale: 3.0,
            sigma: DEFAULT_SIGMA,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Invalid("sampler needs at least one step".into()));
        }
        if !(self.cfg_scale >= 0.0) || !self.cfg_scale.is_finite() {
            return Err(Error::Invalid("cfg scale must be a non-negative number".into()));
        }
        if !(self.sigma > 0.0 && self.sigma <= 1e-2) {
            return Err(Error::Invalid("sigma must lie in (0, 0.01]".into()));
        }
        Ok(())
    }
}

/// A learned (or hand-made) velocity field. `None` is the null condition.
pub trait VelocityField {
    fn velocity(&self, state: &FmState, condition: Option<&Condition>) -> Result<Array2<f64>>;
}

/// Cosine schedule `t = 1 − cos(t′·π/2)` for a uniform `t′`.
pub fn cosine_timestep(u: f64) -> f64 {
    if u >= 1.0 {
        return 1.0;
    }
    1.0 - (u * std::f64::consts::FRAC_PI_2).cos()
}

pub fn sample_timestep<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    cosine_timestep(rng.random::<f64>())
}

fn same_shape(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

pub fn trajectory_point(x0: &Array2<f64>, x1: &Array2<f64>, t: f64, sigma: f64) -> Result<Array2<f64>> {
    same_shape(x0, x1, "trajectory point")?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Invalid(format!("timestep {t} outside [0, 1]")));
    }
    let a = 1.0 - (1.0 - sigma) * t;
    Ok(ndarray::Zip::from(x0).and(x1).map_collect(|&p, &q| a * p + t * q))
}

pub fn target_velocity(x0: &Array2<f64>, x1: &Array2<f64>, sigma: f64) -> Result<Array2<f64>> {
    same_shape(x0, x1, "target velocity")?;
    Ok(ndarray::Zip::from(x0).and(x1).map_collect(|&p, &q| q - (1.0 - sigma) * p))
}

/// Classifier-free guidance `v_u + s·(v_c − v_u)`.
pub fn cfg_velocity(v_cond: &Array2<f64>, v_uncond: &Array2<f64>, scale: f64) -> Result<Array2<f64>> {
    same_shape(v_cond, v_uncond, "cfg velocity")?;
    if scale == 1.0 {
        return Ok(v_cond.clone());
    }
    Ok(ndarray::Zip::from(v_cond).and(v_uncond).map_collect(|&c, &u| u + scale * (c - u)))
}

fn cosine_similarity(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(&b) / (na * nb)
}

/// Mean per-frame cosine distance between projected hidden states and
/// teacher features. Zero-norm frames count as similarity 0.
pub fn repa_loss(projected: &Array2<f64>, teacher: &Array2<f64>) -> Result<f64> {
    same_shape(projected, teacher, "repa")?;
    if projected.nrows() == 0 {
        return Err(Error::Invalid("repa loss over zero frames".into()));
    }
    let sum: f64 = projected
        .rows()
        .into_iter()
        .zip(teacher.rows())
        .map(|(a, b)| 1.0 - cosine_similarity(a, b))
        .sum();
    Ok(sum / projected.nrows() as f64)
}

pub fn total_loss(fm: f64, repa: f64, lambda: f64) -> f64 {
    fm + lambda * repa
}

/// Random ingredients of one training example.
#[derive(Clone, Debug, PartialEq)]
pub struct FmDraw {
    pub x0: Array2<f64>,
    pub t: f64,
    pub drop_condition: bool,
}

impl FmDraw {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, frames: usize, bins: usize, dropout: f64) -> Self {
        let x0 = Array2::from_shape_simple_fn((frames, bins), || StandardNormal.sample(&mut *rng));
        let t = sample_timestep(rng);
        let drop_condition = rng.random::<f64>() < dropout;
        FmDraw { x0, t, drop_condition }
    }
}

/// Builds the flow-matching MSE on the tape for a batch of equal-length
/// segments stacked in `x1`, one draw per segment. `predict` receives the
/// path points, the per-segment timesteps and drop flags, and returns the
/// predicted velocity.
pub fn fm_objective<'a, F>(g: &mut Graph<'a>, x1: &Array2<f64>, draws: &[FmDraw], sigma: f64, predict: F) -> Result<Var>
where
    F: FnOnce(&mut Graph<'a>, Var, &[f64], &[bool]) -> Result<Var>,
{
    if draws.is_empty() || x1.nrows() % draws.len() != 0 {
        return Err(Error::Shape("batch rows must split evenly into segments".into()));
    }
    let seg = x1.nrows() / draws.len();
    let mut x_t = Array2::zeros(x1.dim());
    let mut v = Array2::zeros(x1.dim());
    for (k, d) in draws.iter().enumerate() {
        let rows = ndarray::s![k * seg..(k + 1) * seg, ..];
        let target = x1.slice(rows).to_owned();
        x_t.slice_mut(rows).assign(&trajectory_point(&d.x0, &target, d.t, sigma)?);
        v.slice_mut(rows).assign(&target_velocity(&d.x0, &target, sigma)?);
    }
    let ts: Vec<f64> = draws.iter().map(|d| d.t).collect();
    let drops: Vec<bool> = draws.iter().map(|d| d.drop_condition).collect();
    let xv = g.constant(x_t);
    let pred = predict(g, xv, &ts, &drops)?;
    if g.shape(pred) != x1.dim() {
        return Err(Error::Shape("velocity prediction has the wrong shape".into()));
    }
    let target = g.constant(v);
    Ok(g.mse(pred, target))
}

/// Single-example flow-matching loss with condition dropout, evaluated
/// through any [`VelocityField`].
pub fn fm_loss<V, R>(
    model: &V,
    x1: &Array2<f64>,
    condition: &Condition,
    sigma: f64,
    dropout: f64,
    rng: &mut R,
) -> Result<f64>
where
    V: VelocityField + ?Sized,
    R: Rng + ?Sized,
{
    if condition.len() != x1.nrows() {
        return Err(Error::Shape(format!(
            "condition has {} frames, target has {}",
            condition.len(),
            x1.nrows()
        )));
    }
    let draw = FmDraw::sample(rng, x1.nrows(), x1.ncols(), dropout);
    let x_t = trajectory_point(&draw.x0, x1, draw.t, sigma)?;
    let v = target_velocity(&draw.x0, x1, sigma)?;
    let cond = if draw.drop_condition { None } else { Some(condition) };
    let pred = model.velocity(&FmState::new(x_t, draw.t)?, cond)?;
    same_shape(&pred, &v, "velocity prediction")?;
    Ok((&pred - &v).mapv(|d| d * d).mean().unwrap_or(0.0))
}

/// Starting noise of the sampler for `seed`.
pub fn initial_noise(frames: usize, bins: usize, seed: u64) -> Array2<f64> {
    let mut rng = derive_rng(seed, "sampler.x0", 0);
    Array2::from_shape_simple_fn((frames, bins), || StandardNormal.sample(&mut rng))
}

/// Forward Euler from t = 0 on the grid `0, h, …, 1 − h` with `h = 1/steps`,
/// guided by `cfg_scale`. Returns the endpoint in the model's space.
pub fn euler_sample<V: VelocityField + ?Sized>(
    model: &V,
    condition: &Condition,
    bins: usize,
    config: &SamplerConfig,
) -> Result<Array2<f64>> {
    config.validate()?;
    let frames = condition.len();
    if frames == 0 {
        return Err(Error::Invalid("empty condition".into()));
    }
    let mut x = initial_noise(frames, bins, config.seed);
    let h = 1.0 / config.steps as f64;
    for i in 0..config.steps {
        let t = i as f64 * h;
        let state = FmState::new(x, t)?;
        let v_c = model.velocity(&state, Some(condition))?;
        let v = if config.cfg_scale == 1.0 {
            v_c
        } else {
            let v_u = model.velocity(&state, None)?;
            cfg_velocity(&v_c, &v_u, config.cfg_scale)?
        };
        same_shape(&v, state.x_t(), "velocity")?;
        x = state.x_t + &(v * h);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sampler state at step {i}")));
        }
    }
    Ok(x)
}
