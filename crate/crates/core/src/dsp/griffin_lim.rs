use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use super::mel::{mel_filterbank, MEL_FFT_SIZE};
use super::stft::{hann_window, istft, stft};
use super::{MelSpectrogram, Waveform, HOP, LOG_FLOOR, MEL_FMAX, MEL_FMIN, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const GRIFFIN_LIM_ITERATIONS: usize = 64;
const NNLS_ITERATIONS: usize = 100;
const MOMENTUM: f64 = 0.99;

/// Non-negative least-squares estimate of the linear magnitude spectrum
/// behind `mel` (frames × mels), by multiplicative updates.
fn mel_to_linear(mel: &Array2<f64>, fb: &Array2<f64>) -> Array2<f64> {
    let target = mel.dot(fb); // frames × bins
    let mut lin = target.clone();
    for _ in 0..NNLS_ITERATIONS {
        let approx = lin.dot(&fb.t()).dot(fb);
        ndarray::Zip::from(&mut lin)
            .and(&target)
            .and(&approx)
            .for_each(|l, &t, &a| {
                *l = if a > 1e-30 { *l * t / a } else { 0.0 };
            });
    }
    lin
}

/// Griffin–Lim inversion of a log-mel spectrogram to 24 kHz audio of
/// `frames · 480` samples. Phase starts uniformly random from `seed`.
pub fn griffin_lim(mel: &MelSpectrogram, iterations: usize, seed: u64) -> Result<Waveform> {
    let fb = mel_filterbank(SAMPLE_RATE, MEL_FFT_SIZE, mel.mel_bins(), MEL_FMIN, MEL_FMAX);
    if fb.nrows() != mel.mel_bins() {
        return Err(Error::Shape("mel bin count".into()));
    }
    // floor-level entries map to exactly zero magnitude
    let linear_mel = mel.frames().mapv(|x| (x.exp() - LOG_FLOOR).max(0.0));
    let magnitude = mel_to_linear(&linear_mel, &fb);

    let window = hann_window(MEL_FFT_SIZE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = magnitude.mapv(|m| {
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        Complex::from_polar(m, phi)
    });
    // fast Griffin-Lim: extrapolate each projection along the previous step
    let mut previous = spec.clone();
    for _ in 0..iterations {
        let audio = istft(&spec, MEL_FFT_SIZE, HOP, &window)?;
        let rebuilt = stft(&Waveform::new(audio, SAMPLE_RATE)?, MEL_FFT_SIZE, HOP, &window)?;
        let accelerated = &rebuilt + &((&rebuilt - &previous) * Complex::new(MOMENTUM, 0.0));
        previous = rebuilt;
        ndarray::Zip::from(&mut spec)
            .and(&accelerated)
            .and(&magnitude)
            .for_each(|s, r, &m| {
                let n = r.norm();
                *s = if n > 1e-12 { r * (m / n) } else { Complex::new(m, 0.0) };
            });
    }
    let audio = istft(&spec, MEL_FFT_SIZE, HOP, &window)?;
    Waveform::new(audio, SAMPLE_RATE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{chromagram, mel_spectrogram};

    fn tone(freq: f64) -> Waveform {
        let s = (0..24_000)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / 24_000.0).sin())
            .collect();
        Waveform::new(s, 24_000).unwrap()
    }

    #[test]
    fn reconstructed_tone_keeps_its_pitch_class() {
        let mel = mel_spectrogram(&tone(440.0)).unwrap();
        for seed in 0..3 {
            let audio = griffin_lim(&mel, GRIFFIN_LIM_ITERATIONS, seed).unwrap();
            assert_eq!(audio.len(), 50 * 480);
            let track = chromagram(&audio).unwrap().argmax_track();
            // edge frames see the onset/offset transient
            let inner = &track[5..45];
            assert!(inner.iter().all(|b| *b == Some(18)), "seed {seed}: {track:?}");
        }
    }

    #[test]
    fn floor_mel_is_silent() {
        let mel = MelSpectrogram::new(Array2::from_elem((20, 80), LOG_FLOOR.ln())).unwrap();
        let audio = griffin_lim(&mel, 4, 0).unwrap();
        assert!(audio.rms() < 1e-3);
    }

    #[test]
    fn zero_iterations_is_finite_random_phase() {
        let mel = mel_spectrogram(&tone(300.0)).unwrap();
        let a = griffin_lim(&mel, 0, 7).unwrap();
        assert!(a.samples().iter().all(|x| x.is_finite()));
        assert!(a.rms() > 0.0);
        assert_eq!(a, griffin_lim(&mel, 0, 7).unwrap());
    }
}
