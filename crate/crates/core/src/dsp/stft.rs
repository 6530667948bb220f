use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::Waveform;
use crate::error::{Error, Result};

/// Complex one-sided spectrum, frames × (fft_size/2 + 1).
pub type Spectrogram = Array2<Complex<f64>>;

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Number of frames for `len` samples: `floor(len / hop)`.
///
/// The signal is reflect-padded by `(fft_size − hop) / 2` on both sides, which
/// gives `1 + floor((padded_len − fft_size) / hop)` frames, i.e. exactly one
/// frame per hop of input, independent of the FFT size.
pub fn frame_count(len: usize, hop: usize) -> usize {
    len / hop
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(j: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = j.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

fn frame_offset(fft_size: usize, hop: usize) -> isize {
    (fft_size as isize - hop as isize) / 2
}

fn validate(fft_size: usize, hop: usize) -> Result<()> {
    if hop == 0 {
        return Err(Error::Invalid("hop must be positive".into()));
    }
    if !fft_size.is_power_of_two() {
        return Err(Error::Invalid(format!("fft size {fft_size} is not a power of two")));
    }
    if fft_size < hop {
        return Err(Error::Invalid("fft size must be at least the hop".into()));
    }
    Ok(())
}

/// How samples outside the signal are filled when a frame overhangs an edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Padding {
    Reflect,
    Zero,
}

/// Short-time Fourier transform with the given analysis window and reflect
/// padding at the edges.
pub fn stft(w: &Waveform, fft_size: usize, hop: usize, window: &[f64]) -> Result<Spectrogram> {
    stft_padded(w, fft_size, hop, window, Padding::Reflect)
}

pub(crate) fn stft_padded(
    w: &Waveform,
    fft_size: usize,
    hop: usize,
    window: &[f64],
    padding: Padding,
) -> Result<Spectrogram> {
    validate(fft_size, hop)?;
    if window.len() != fft_size {
        return Err(Error::Shape(format!(
            "window length {} != fft size {fft_size}",
            window.len()
        )));
    }
    let x = w.samples();
    let frames = frame_count(x.len(), hop);
    if frames == 0 {
        return Err(Error::TooShort {
            len: x.len(),
            frame: hop,
        });
    }
    let bins = fft_size / 2 + 1;
    let offset = frame_offset(fft_size, hop);
    let fft = FftPlanner::new().plan_fft_forward(fft_size);
    let mut out = Array2::zeros((frames, bins));
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    for t in 0..frames {
        let start = (t * hop) as isize - offset;
        for (n, slot) in buf.iter_mut().enumerate() {
            let j = start + n as isize;
            let s = match padding {
                Padding::Reflect => x[reflect(j, x.len())],
                Padding::Zero if j >= 0 && (j as usize) < x.len() => x[j as usize],
                Padding::Zero => 0.0,
            };
            *slot = Complex::new(s * window[n], 0.0);
        }
        fft.process(&mut buf);
        for (k, v) in buf[..bins].iter().enumerate() {
            out[[t, k]] = *v;
        }
    }
    Ok(out)
}

/// Weighted overlap-add inverse of [`stft`], returning `frames · hop` samples.
pub fn istft(spec: &Spectrogram, fft_size: usize, hop: usize, window: &[f64]) -> Result<Vec<f64>> {
    validate(fft_size, hop)?;
    let (frames, bins) = spec.dim();
    if bins != fft_size / 2 + 1 {
        return Err(Error::Shape(format!("{bins} bins for fft size {fft_size}")));
    }
    let offset = frame_offset(fft_size, hop);
    let len = frames * hop;
    // buffer covers [-offset, len + fft_size)
    let total = len + fft_size + offset as usize;
    let mut acc = vec![0.0; total];
    let mut norm = vec![0.0; total];
    let ifft = FftPlanner::new().plan_fft_inverse(fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    for t in 0..frames {
        for k in 0..bins {
            buf[k] = spec[[t, k]];
        }
        for k in bins..fft_size {
            buf[k] = spec[[t, fft_size - k]].conj();
        }
        ifft.process(&mut buf);
        let base = t * hop;
        for n in 0..fft_size {
            let v = buf[n].re / fft_size as f64;
            acc[base + n] += v * window[n];
            norm[base + n] += window[n] * window[n];
        }
    }
    let off = offset as usize;
    Ok((0..len)
        .map(|i| {
            let d = norm[i + off];
            if d > 1e-10 {
                acc[i + off] / d
            } else {
                0.0
            }
        })
        .collect())
}
