//! Synthetic paired data: random diatonic melodies and an arpeggiated
//! accompaniment derived deterministically from each melody.

use rand::Rng;

use crate::dsp::{render_melody, NoteEvent, TimbreSpec, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

const MAJOR_SCALE: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
const NOTE_LENGTHS: [f64; 3] = [0.25, 0.375, 0.5];
const ARPEGGIO_STEP_S: f64 = 0.125;

/// A melody filling exactly `duration_s` seconds with no rests. Pitches walk
/// the C-major scale between MIDI 60 and 79 in steps of at most a fourth.
pub fn random_melody<R: Rng + ?Sized>(rng: &mut R, duration_s: f64) -> Result<Vec<NoteEvent>> {
    if !(duration_s > 0.0) {
        return Err(Error::Invalid("melody duration must be positive".into()));
    }
    let pitches: Vec<u8> = (60u8..=79).filter(|p| MAJOR_SCALE.contains(&(p % 12))).collect();
    let mut idx = rng.random_range(0..pitches.len());
    let mut onset = 0.0;
    let mut events = Vec::new();
    while onset < duration_s - 1e-9 {
        let len = NOTE_LENGTHS[rng.random_range(0..NOTE_LENGTHS.len())].min(duration_s - onset);
        let velocity = rng.random_range(0.7..0.9);
        events.push(NoteEvent::new(onset, len, pitches[idx], velocity)?);
        onset += len;
        let step = rng.random_range(-3i64..=3) as isize;
        idx = (idx as isize + step).clamp(0, pitches.len() as isize - 1) as usize;
    }
    Ok(events)
}

/// Arpeggiated triads two octaves below each melody note: major on C, F and
/// G, minor otherwise, cycling root–third–fifth–octave every eighth of a
/// second while the melody note lasts.
pub fn accompaniment_for(melody: &[NoteEvent]) -> Result<Vec<NoteEvent>> {
    let mut out = Vec::new();
    for note in melody {
        let class = note.midi_pitch % 12;
        let root = 36 + class;
        let third = if matches!(class, 0 | 5 | 7) { 4 } else { 3 };
        let pattern = [root, root + third, root + 7, root + 12];
        let mut t = note.onset_s;
        let mut k = 0;
        while t < note.end_s() - 1e-9 {
            let len = ARPEGGIO_STEP_S.min(note.end_s() - t);
            out.push(NoteEvent::new(t, len, pattern[k % pattern.len()], 0.8)?);
            t += len;
            k += 1;
        }
    }
    Ok(out)
}

/// The timbre used for every accompaniment rendering.
pub fn accompaniment_timbre() -> TimbreSpec {
    TimbreSpec {
        name: "keys".into(),
        harmonic_amplitudes: vec![1.0, 0.45, 0.25, 0.12, 0.06],
        attack_s: 0.005,
        decay_s: 0.2,
        sustain_level: 0.4,
        release_s: 0.05,
    }
}

/// Renders `events` and trims or zero-pads to exactly `duration_s`.
pub fn render_clip(events: &[NoteEvent], timbre: &TimbreSpec, duration_s: f64) -> Result<Waveform> {
    let w = render_melody(events, timbre, SAMPLE_RATE)?;
    let n = (duration_s * SAMPLE_RATE as f64).round() as usize;
    let mut samples = w.into_samples();
    samples.resize(n, 0.0);
    Waveform::new(samples, SAMPLE_RATE)
}
