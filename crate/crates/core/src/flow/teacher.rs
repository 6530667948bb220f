use ndarray::{s, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::derive_rng;

const TEACHER_SEED: u64 = 0x5EED_7EAC;
const TEACHER_HIDDEN: usize = 128;

/// Frames × F alignment targets at the generator's frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherFeatures {
    frames: Array2<f64>,
}

impl TeacherFeatures {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        if frames.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("teacher features".into()));
        }
        Ok(TeacherFeatures { frames })
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

/// Frozen, randomly initialised two-layer convolutional feature extractor.
/// The first layer has stride 2, so features come out at 25 Hz and are
/// linearly interpolated back to one row per input frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Teacher {
    w1: Array2<f64>,
    b1: Array2<f64>,
    w2: Array2<f64>,
    input_dim: usize,
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

/// Kernel-3 convolution with zero padding, evaluated at every `stride`-th
/// frame.
fn conv3(x: &Array2<f64>, w: &Array2<f64>, stride: usize) -> Array2<f64> {
    let (t, c) = x.dim();
    let out_len = t.div_ceil(stride);
    let mut cols = Array2::zeros((out_len, 3 * c));
    for (o, i) in (0..t).step_by(stride).enumerate() {
        for k in 0..3 {
            let j = i as isize + k as isize - 1;
            if j >= 0 && (j as usize) < t {
                cols.slice_mut(s![o, k * c..(k + 1) * c]).assign(&x.row(j as usize));
            }
        }
    }
    cols.dot(w)
}

impl Teacher {
    pub fn new(input_dim: usize, feature_dim: usize) -> Self {
        let mut rng = derive_rng(TEACHER_SEED, "teacher", (input_dim * 1000 + feature_dim) as u64);
        let b1 = 1.0 / ((3 * input_dim) as f64).sqrt();
        let b2 = 1.0 / ((3 * TEACHER_HIDDEN) as f64).sqrt();
        Teacher {
            w1: uniform(3 * input_dim, TEACHER_HIDDEN, b1 * 3f64.sqrt(), &mut rng),
            b1: uniform(1, TEACHER_HIDDEN, b1, &mut rng),
            w2: uniform(3 * TEACHER_HIDDEN, feature_dim, b2 * 3f64.sqrt(), &mut rng),
            input_dim,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.w2.ncols()
    }

    pub fn features(&self, mel: &Array2<f64>) -> Result<TeacherFeatures> {
        if mel.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "teacher expects {} bins, got {}",
                self.input_dim,
                mel.ncols()
            )));
        }
        let t = mel.nrows();
        if t == 0 {
            return Err(Error::Invalid("teacher input has no frames".into()));
        }
        let h = (conv3(mel, &self.w1, 2) + &self.b1).mapv(f64::tanh);
        let coarse = conv3(&h, &self.w2, 1);
        TeacherFeatures::new(resample_frames(&coarse, 2.0, t))
    }
}

/// Linear interpolation of rows sampled every `stride` frames onto `len`
/// unit-spaced frames.
fn resample_frames(coarse: &Array2<f64>, stride: f64, len: usize) -> Array2<f64> {
    let n = coarse.nrows();
    let mut out = Array2::zeros((len, coarse.ncols()));
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let pos = (i as f64 / stride).min((n - 1) as f64);
        let j = pos.floor() as usize;
        let frac = pos - j as f64;
        let k = (j + 1).min(n - 1);
        row.assign(&(&coarse.row(j) * (1.0 - frac) + &coarse.row(k) * frac));
    }
    out
}
