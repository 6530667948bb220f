//! 24-bin quarter-tone chromagram from STFT spectral peaks.
//!
//! Bin `2·pc + s` holds pitch class `pc` (C = 0 … B = 11) and quarter-tone
//! sub-bin `s` (0 = on the semitone, 1 = a quarter tone above), with A4 at
//! 440 Hz. Each local maximum of the power spectrum is refined by parabolic
//! interpolation on the log spectrum, and its energy goes to the nearest
//! quarter-tone (ties round up). Octaves are folded, then each frame is
//! divided by its maximum; all-zero frames are left at zero.

use ndarray::Array2;

use super::stft::{hann_window, stft_padded, Padding};
use super::{hz_to_midi, Chromagram, Waveform, CHROMA_BINS, HOP, SAMPLE_RATE};
use crate::error::Result;

/// Long analysis window: at 4096 points the bin spacing (5.9 Hz) keeps
/// interpolated peak frequencies well inside a quarter tone down to 110 Hz.
pub const CHROMA_FFT_SIZE: usize = 4096;
const FMIN: f64 = 50.0;
const FMAX: f64 = 5_000.0;
/// Peaks more than 80 dB below the frame maximum are ignored.
const PEAK_FLOOR: f64 = 1e-8;

/// Quarter-tone chroma bin of a (possibly fractional) MIDI pitch.
pub fn midi_to_chroma_bin(midi: f64) -> usize {
    let q = (2.0 * midi + 0.5).floor() as i64;
    q.rem_euclid(CHROMA_BINS as i64) as usize
}

pub fn chromagram(w: &Waveform) -> Result<Chromagram> {
    w.require_rate(SAMPLE_RATE)?;
    // zero padding: a mirrored edge flips the phase of periodic signals and
    // splits their spectral peak
    let spec = stft_padded(w, CHROMA_FFT_SIZE, HOP, &hann_window(CHROMA_FFT_SIZE), Padding::Zero)?;
    let power = spec.mapv(|c| c.norm_sqr());
    let bin_hz = SAMPLE_RATE as f64 / CHROMA_FFT_SIZE as f64;
    let k_lo = ((FMIN / bin_hz).floor() as usize).max(1);
    let k_hi = ((FMAX / bin_hz).ceil() as usize).min(power.ncols() - 2);

    let mut out = Array2::zeros((power.nrows(), CHROMA_BINS));
    for (t, row) in power.rows().into_iter().enumerate() {
        let frame_max = row.iter().cloned().fold(0.0, f64::max);
        if frame_max <= 0.0 {
            continue;
        }
        let threshold = frame_max * PEAK_FLOOR;
        for k in k_lo..=k_hi {
            let (a, b, c) = (row[k - 1], row[k], row[k + 1]);
            if !(b > a && b >= c && b > threshold) {
                continue;
            }
            let (la, lb, lc) = (a.max(1e-300).ln(), b.ln(), c.max(1e-300).ln());
            let denom = la - 2.0 * lb + lc;
            let p = if denom < 0.0 { 0.5 * (la - lc) / denom } else { 0.0 };
            let p = p.clamp(-0.5, 0.5);
            let freq = (k as f64 + p) * bin_hz;
            let energy = (lb - 0.25 * (la - lc) * p).exp();
            out[[t, midi_to_chroma_bin(hz_to_midi(freq))]] += energy;
        }
        let max = out.row(t).iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            out.row_mut(t).mapv_inplace(|x| x / max);
        }
    }
    Chromagram::new(out)
}
