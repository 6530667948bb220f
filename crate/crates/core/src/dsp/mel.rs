use ndarray::Array2;

use super::stft::{hann_window, stft};
use super::{MelSpectrogram, Waveform, HOP, LOG_FLOOR, MEL_FMAX, MEL_FMIN, N_MELS, SAMPLE_RATE};
use crate::error::Result;

pub const MEL_FFT_SIZE: usize = 1024;

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank, `n_mels × (fft_size/2 + 1)`, unit peak.
pub fn mel_filterbank(sample_rate: u32, fft_size: usize, n_mels: usize, fmin: f64, fmax: f64) -> Array2<f64> {
    let bins = fft_size / 2 + 1;
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((n_mels, bins));
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / fft_size as f64;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

/// Log-magnitude mel spectrogram: 80 bins over 20 Hz–12 kHz, FFT 1024, hop
/// 480, natural log with floor 1e-5.
pub fn mel_spectrogram(w: &Waveform) -> Result<MelSpectrogram> {
    w.require_rate(SAMPLE_RATE)?;
    let spec = stft(w, MEL_FFT_SIZE, HOP, &hann_window(MEL_FFT_SIZE))?;
    let mag = spec.mapv(|c| c.norm());
    let fb = mel_filterbank(SAMPLE_RATE, MEL_FFT_SIZE, N_MELS, MEL_FMIN, MEL_FMAX);
    let mel = mag.dot(&fb.t()).mapv(|x| x.max(LOG_FLOOR).ln());
    MelSpectrogram::new(mel)
}
