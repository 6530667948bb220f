use serde::{Deserialize, Serialize};

use super::{NoteEvent, Waveform};
use crate::error::{Error, Result};

/// Additive-synthesis instrument: relative partial amplitudes plus a linear
/// ADSR envelope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimbreSpec {
    pub name: String,
    pub harmonic_amplitudes: Vec<f64>,
    pub attack_s: f64,
    pub decay_s: f64,
    pub sustain_level: f64,
    pub release_s: f64,
}

impl TimbreSpec {
    pub fn validate(&self) -> Result<()> {
        if self.harmonic_amplitudes.is_empty() {
            return Err(Error::Invalid(format!("timbre {}: no partials", self.name)));
        }
        if self.harmonic_amplitudes.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::Invalid(format!("timbre {}: negative partial", self.name)));
        }
        if !(0.0..=1.0).contains(&self.sustain_level) {
            return Err(Error::Invalid(format!("timbre {}: sustain outside [0, 1]", self.name)));
        }
        if [self.attack_s, self.decay_s, self.release_s].iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::Invalid(format!("timbre {}: negative envelope time", self.name)));
        }
        Ok(())
    }

    /// Envelope gain at `t` seconds after onset for a note held `held` seconds.
    pub fn envelope(&self, t: f64, held: f64) -> f64 {
        let attack_decay = |t: f64| {
            if t < self.attack_s {
                t / self.attack_s
            } else if t < self.attack_s + self.decay_s {
                let u = (t - self.attack_s) / self.decay_s;
                1.0 - (1.0 - self.sustain_level) * u
            } else {
                self.sustain_level
            }
        };
        if t < 0.0 {
            0.0
        } else if t < held {
            attack_decay(t)
        } else if t < held + self.release_s {
            attack_decay(held) * (1.0 - (t - held) / self.release_s)
        } else {
            0.0
        }
    }

    /// A small fixed palette of distinct instruments.
    pub fn presets() -> Vec<TimbreSpec> {
        let t = |name: &str, amps: Vec<f64>, a, d, s, r| TimbreSpec {
            name: name.into(),
            harmonic_amplitudes: amps,
            attack_s: a,
            decay_s: d,
            sustain_level: s,
            release_s: r,
        };
        vec![
            t("flute", vec![1.0, 0.25, 0.08, 0.03], 0.06, 0.1, 0.85, 0.08),
            t("clarinet", vec![1.0, 0.02, 0.5, 0.02, 0.3, 0.02, 0.15], 0.03, 0.05, 0.8, 0.05),
            t("strings", (1..=10).map(|n| 1.0 / n as f64).collect(), 0.12, 0.2, 0.7, 0.15),
            t("brass", vec![0.7, 1.0, 0.6, 0.45, 0.3, 0.2, 0.1], 0.04, 0.15, 0.6, 0.06),
            t("pluck", vec![1.0, 0.6, 0.3, 0.2, 0.1], 0.005, 0.35, 0.25, 0.05),
            t("organ", vec![1.0, 0.7, 0.0, 0.5, 0.0, 0.0, 0.0, 0.3], 0.01, 0.02, 1.0, 0.03),
        ]
    }
}

/// Renders `events` with `timbre` and peak-normalises the result to 0.9.
/// Overlapping notes simply add.
pub fn render_melody(events: &[NoteEvent], timbre: &TimbreSpec, sample_rate: u32) -> Result<Waveform> {
    if events.is_empty() {
        return Err(Error::Invalid("no note events".into()));
    }
    timbre.validate()?;
    for e in events {
        e.validate()?;
    }
    let sr = sample_rate as f64;
    let end = events
        .iter()
        .map(|e| e.end_s() + timbre.release_s)
        .fold(0.0, f64::max);
    let len = (end * sr).ceil() as usize;
    let mut out = vec![0.0; len.max(1)];
    let nyquist = sr / 2.0;
    for e in events {
        let f0 = e.frequency();
        let start = (e.onset_s * sr).round() as usize;
        let stop = (((e.end_s() + timbre.release_s) * sr).ceil() as usize).min(out.len());
        for (i, slot) in out.iter_mut().enumerate().take(stop).skip(start) {
            let t = i as f64 / sr - e.onset_s;
            let env = timbre.envelope(t, e.duration_s);
            if env == 0.0 {
                continue;
            }
            let mut v = 0.0;
            for (h, &amp) in timbre.harmonic_amplitudes.iter().enumerate() {
                let f = f0 * (h + 1) as f64;
                if f >= nyquist || amp == 0.0 {
                    continue;
                }
                v += amp * (std::f64::consts::TAU * f * t).sin();
            }
            *slot += e.velocity * env * v;
        }
    }
    let peak = out.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
    if peak > 0.0 {
        let g = 0.9 / peak;
        out.iter_mut().for_each(|x| *x *= g);
    }
    Waveform::new(out, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{chromagram, mel_spectrogram, HOP, SAMPLE_RATE};

    fn note(onset: f64, dur: f64, pitch: u8) -> NoteEvent {
        NoteEvent::new(onset, dur, pitch, 0.8).unwrap()
    }

    /// Frames whose analysis window sits inside one sustained note.
    fn steady_frames(events: &[NoteEvent], frames: usize) -> Vec<usize> {
        let half_window = crate::dsp::CHROMA_FFT_SIZE as f64 / 2.0 / SAMPLE_RATE as f64;
        (0..frames)
            .filter(|&t| {
                let c = (t * HOP + HOP / 2) as f64 / SAMPLE_RATE as f64;
                events
                    .iter()
                    .any(|e| c - half_window > e.onset_s + 0.2 && c + half_window < e.end_s())
            })
            .collect()
    }

    #[test]
    fn single_a4_is_a_for_every_timbre() {
        let events = vec![note(0.0, 2.0, 69)];
        for timbre in TimbreSpec::presets() {
            let w = render_melody(&events, &timbre, SAMPLE_RATE).unwrap();
            assert!((w.peak() - 0.9).abs() < 1e-12);
            let track = chromagram(&w).unwrap().argmax_track();
            for t in steady_frames(&events, track.len()) {
                assert_eq!(track[t], Some(18), "{} frame {t}", timbre.name);
            }
        }
    }

    #[test]
    fn release_decays_to_silence() {
        let timbre = &TimbreSpec::presets()[0];
        let held = 0.5;
        let peak = (0..1000)
            .map(|i| timbre.envelope(i as f64 * 0.001, held))
            .fold(0.0, f64::max);
        let after = timbre.envelope(held + timbre.release_s, held);
        assert!(after < 1e-3 * peak);
        assert_eq!(timbre.envelope(held + timbre.release_s + 0.1, held), 0.0);
    }

    #[test]
    fn timbre_changes_mel_but_not_chroma_argmax() {
        let events = vec![note(0.0, 0.6, 62), note(0.6, 0.6, 66), note(1.2, 0.6, 69), note(1.8, 0.9, 74)];
        let presets = TimbreSpec::presets();
        let a = render_melody(&events, &presets[0], SAMPLE_RATE).unwrap();
        let b = render_melody(&events, &presets[2], SAMPLE_RATE).unwrap();
        let (ta, tb) = (
            chromagram(&a).unwrap().argmax_track(),
            chromagram(&b).unwrap().argmax_track(),
        );
        let n = ta.len().min(tb.len());
        let steady = steady_frames(&events, n);
        assert!(steady.len() > 20);
        for t in steady {
            assert_eq!(ta[t], tb[t], "frame {t}");
        }
        let (ma, mb) = (mel_spectrogram(&a).unwrap(), mel_spectrogram(&b).unwrap());
        let rows = ma.num_frames().min(mb.num_frames());
        let l2: f64 = (0..rows)
            .flat_map(|t| (0..80).map(move |k| (t, k)))
            .map(|(t, k)| (ma.frames()[[t, k]] - mb.frames()[[t, k]]).powi(2))
            .sum();
        assert!(l2 > 0.0);
    }

    #[test]
    fn invalid_inputs() {
        let timbre = &TimbreSpec::presets()[0];
        assert!(render_melody(&[], timbre, SAMPLE_RATE).is_err());
        let mut bad = timbre.clone();
        bad.harmonic_amplitudes.clear();
        assert!(render_melody(&[note(0.0, 1.0, 60)], &bad, SAMPLE_RATE).is_err());
        assert!(NoteEvent::new(0.0, 0.0, 60, 0.5).is_err());
        assert!(NoteEvent::new(-1.0, 1.0, 60, 0.5).is_err());
    }

    #[test]
    fn overlapping_notes_add() {
        let timbre = &TimbreSpec::presets()[0];
        let w = render_melody(&[note(0.0, 1.0, 60), note(0.5, 1.0, 64)], timbre, SAMPLE_RATE).unwrap();
        assert!(w.samples().iter().all(|x| x.is_finite()));
    }
}
