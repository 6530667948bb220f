use super::model::{ConditioningMode, FmModel};
use super::{Condition, SamplerConfig};
use crate::bottleneck::VqVaeModel;
use crate::dsp::{add_white_noise, chromagram, griffin_lim, mel_spectrogram, Waveform};
use crate::error::{Error, Result};
use crate::rng::derive_rng;

/// Lowest and highest SNR (dB) of the training noise in `mel-noisy` mode.
pub const MEL_NOISE_SNR_DB: (f64, f64) = (15.0, 20.0);

/// SNR drawn uniformly from `range` per clip for `mel-noisy` training
/// conditions.
pub fn noise_snr_for_clip(seed: u64, clip: u64, range: (f64, f64)) -> f64 {
    use rand::Rng;
    let (lo, hi) = range;
    derive_rng(seed, "fm.mel-noise", clip).random_range(lo..=hi)
}

/// Melody condition of `vocal` for `mode`. `noise` adds white noise at
/// `(snr_db, seed)` before the mel front end and is ignored by other modes.
pub fn build_condition(
    mode: ConditioningMode,
    vq: Option<&VqVaeModel>,
    vocal: &Waveform,
    noise: Option<(f64, u64)>,
) -> Result<Condition> {
    match mode {
        ConditioningMode::Codes => {
            let vq = vq.ok_or_else(|| Error::Invalid("codes conditioning needs a vqvae model".into()))?;
            Ok(Condition::Codes(vq.extract_codes(vocal)?))
        }
        ConditioningMode::ChromaDense => Ok(Condition::Dense(chromagram(vocal)?.frames().clone())),
        ConditioningMode::MelNoisy => {
            let mel = match noise {
                Some((snr, seed)) => mel_spectrogram(&add_white_noise(vocal, snr, seed)?)?,
                None => mel_spectrogram(vocal)?,
            };
            Ok(Condition::Dense(mel.into_frames()))
        }
    }
}

/// Vocal in, accompaniment out: condition extraction, guided Euler sampling
/// of the mel, then Griffin–Lim. The result has one hop of audio per input
/// frame and peak at most 1.
pub fn generate_accompaniment(
    vq: Option<&VqVaeModel>,
    fm: &FmModel,
    vocal: &Waveform,
    sampler: &SamplerConfig,
    griffin_lim_iterations: usize,
) -> Result<Waveform> {
    let condition = build_condition(fm.mode(), vq, vocal, None)?;
    let mel = fm.sample(&condition, sampler)?;
    let audio = griffin_lim(&mel, griffin_lim_iterations, sampler.seed)?;
    let peak = audio.peak();
    if peak > 1.0 {
        let rate = audio.sample_rate();
        let scaled = audio.into_samples().into_iter().map(|x| x / peak).collect();
        return Waveform::new(scaled, rate);
    }
    Ok(audio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bottleneck::VqVaeConfig;
    use crate::dsp::GRIFFIN_LIM_ITERATIONS;
    use crate::flow::FmConfig;

    fn tone(seconds: f64, hz: f64) -> Waveform {
        let n = (seconds * 24_000.0) as usize;
        Waveform::new((0..n).map(|i| 0.5 * (i as f64 * hz * std::f64::consts::TAU / 24_000.0).sin()).collect(), 24_000).unwrap()
    }

    fn small_fm(mode: ConditioningMode, codebook: usize) -> FmModel {
        FmModel::new(
            FmConfig {
                mode,
                hidden: 16,
                layers: 2,
                heads: 2,
                mlp_ratio: 2,
                codebook_size: codebook,
                repa_layer: 1,
                teacher_dim: 8,
                ..Default::default()
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn conditions_have_one_row_per_frame() {
        let w = tone(1.0, 440.0);
        let vq = VqVaeModel::new(VqVaeConfig { hidden: 8, latent_dim: 4, codebook_size: 8, layers: 1, ..Default::default() }, 0).unwrap();
        for mode in ConditioningMode::ALL {
            let c = build_condition(mode, Some(&vq), &w, Some((17.0, 3))).unwrap();
            assert_eq!(c.len(), 50);
        }
        assert!(build_condition(ConditioningMode::Codes, None, &w, None).is_err());
        let clean = build_condition(ConditioningMode::MelNoisy, None, &w, None).unwrap();
        let noisy = build_condition(ConditioningMode::MelNoisy, None, &w, Some((15.0, 3))).unwrap();
        assert_ne!(clean, noisy);
    }

    #[test]
    fn snr_draws_stay_in_range() {
        for clip in 0..200 {
            let s = noise_snr_for_clip(9, clip, MEL_NOISE_SNR_DB);
            assert!((15.0..=20.0).contains(&s));
        }
        assert_eq!(noise_snr_for_clip(9, 4, MEL_NOISE_SNR_DB), noise_snr_for_clip(9, 4, MEL_NOISE_SNR_DB));
    }

    #[test]
    fn output_duration_matches_input() {
        let fm = small_fm(ConditioningMode::ChromaDense, 8);
        let cfg = SamplerConfig { steps: 3, seed: 5, ..Default::default() };
        let w = tone(3.0, 330.0);
        let out = generate_accompaniment(None, &fm, &w, &cfg, GRIFFIN_LIM_ITERATIONS).unwrap();
        assert_eq!(out.len(), 72_000);
        assert!(out.samples().iter().all(|x| x.is_finite()));
        assert!(out.peak() <= 1.0);
        assert_eq!(out, generate_accompaniment(None, &fm, &w, &cfg, GRIFFIN_LIM_ITERATIONS).unwrap());
        let ragged = Waveform::new(w.samples()[..71_900].to_vec(), 24_000).unwrap();
        let out = generate_accompaniment(None, &fm, &ragged, &cfg, GRIFFIN_LIM_ITERATIONS).unwrap();
        assert!((out.len() as i64 - 71_900).abs() <= 480);
    }
}
