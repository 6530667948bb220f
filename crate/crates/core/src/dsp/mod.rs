//! Signal-processing foundation: audio I/O, spectral transforms, chroma,
//! mel inversion, noise augmentation and a small additive synthesiser.
//!
//! Every transform frames audio identically (hop 480 at 24 kHz, i.e. 50
//! frames per second, with frame `i` centred on sample `480·i + 240`), so mel
//! and chroma sequences of one waveform always have the same length.

mod chroma;
mod griffin_lim;
mod mel;
mod noise;
mod resample;
mod stft;
mod synth;
mod wav;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use chroma::{chromagram, midi_to_chroma_bin, CHROMA_FFT_SIZE};
pub use griffin_lim::{griffin_lim, GRIFFIN_LIM_ITERATIONS};
pub use mel::{mel_filterbank, mel_spectrogram, MEL_FFT_SIZE};
pub use noise::{add_white_noise, snr_db};
pub use resample::resample_linear;
pub use stft::{frame_count, hann_window, istft, stft, Spectrogram};
pub use synth::{render_melody, TimbreSpec};
pub use wav::{load_wav, save_wav};

pub const SAMPLE_RATE: u32 = 24_000;
pub const FRAME_RATE: u32 = 50;
pub const HOP: usize = (SAMPLE_RATE / FRAME_RATE) as usize;
pub const N_MELS: usize = 80;
pub const CHROMA_BINS: usize = 24;
pub const MEL_FMIN: f64 = 20.0;
pub const MEL_FMAX: f64 = 12_000.0;
pub const LOG_FLOOR: f64 = 1e-5;

/// Mono PCM audio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyAudio);
        }
        if sample_rate == 0 {
            return Err(Error::Invalid("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i} is not finite")));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        (self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub(crate) fn require_rate(&self, rate: u32) -> Result<()> {
        if self.sample_rate != rate {
            return Err(Error::SampleRate {
                expected: rate,
                actual: self.sample_rate,
            });
        }
        Ok(())
    }
}

/// Frame × mel-bin natural-log magnitudes at 50 Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    frames: Array2<f64>,
}

impl MelSpectrogram {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        if frames.nrows() == 0 || frames.ncols() == 0 {
            return Err(Error::Invalid("empty mel spectrogram".into()));
        }
        if frames.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("mel spectrogram".into()));
        }
        let floor = LOG_FLOOR.ln();
        let frames = frames.mapv(|x| x.max(floor));
        Ok(MelSpectrogram { frames })
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn into_frames(self) -> Array2<f64> {
        self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn mel_bins(&self) -> usize {
        self.frames.ncols()
    }

    pub fn frame_rate(&self) -> u32 {
        FRAME_RATE
    }
}

/// Frame × 24 quarter-tone pitch-class energies, max-normalised per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Chromagram {
    frames: Array2<f64>,
}

impl Chromagram {
    /// Validates range and shape; does not renormalise.
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        if frames.ncols() != CHROMA_BINS {
            return Err(Error::Shape(format!(
                "chromagram needs {CHROMA_BINS} bins, got {}",
                frames.ncols()
            )));
        }
        if frames.nrows() == 0 {
            return Err(Error::Invalid("empty chromagram".into()));
        }
        if frames.iter().any(|x| !x.is_finite() || *x < 0.0 || *x > 1.0) {
            return Err(Error::Invalid("chromagram entries must lie in [0, 1]".into()));
        }
        Ok(Chromagram { frames })
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn frame_rate(&self) -> u32 {
        FRAME_RATE
    }

    /// Index of the strongest bin per frame, `None` for silent frames.
    pub fn argmax_track(&self) -> Vec<Option<usize>> {
        self.frames
            .rows()
            .into_iter()
            .map(|row| {
                let (idx, max) = row
                    .iter()
                    .enumerate()
                    .fold((0, 0.0), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
                (max > 0.0).then_some(idx)
            })
            .collect()
    }
}

/// One note of a melody.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub onset_s: f64,
    pub duration_s: f64,
    pub midi_pitch: u8,
    pub velocity: f64,
}

impl NoteEvent {
    pub fn new(onset_s: f64, duration_s: f64, midi_pitch: u8, velocity: f64) -> Result<Self> {
        let note = NoteEvent {
            onset_s,
            duration_s,
            midi_pitch,
            velocity,
        };
        note.validate()?;
        Ok(note)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(Error::Invalid("note duration must be positive".into()));
        }
        if !(self.onset_s >= 0.0) || !self.onset_s.is_finite() {
            return Err(Error::Invalid("note onset must be non-negative".into()));
        }
        if self.midi_pitch > 127 {
            return Err(Error::Invalid("midi pitch must be 0..=127".into()));
        }
        if !(0.0..=1.0).contains(&self.velocity) {
            return Err(Error::Invalid("velocity must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn frequency(&self) -> f64 {
        midi_to_hz(self.midi_pitch as f64)
    }

    pub fn end_s(&self) -> f64 {
        self.onset_s + self.duration_s
    }
}

pub fn midi_to_hz(midi: f64) -> f64 {
    440.0 * 2f64.powf((midi - 69.0) / 12.0)
}

pub fn hz_to_midi(hz: f64) -> f64 {
    69.0 + 12.0 * (hz / 440.0).log2()
}
