use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Waveform;
use crate::error::{Error, Result};

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Measured SNR in dB of `noisy` against the clean `signal`.
pub fn snr_db(signal: &Waveform, noisy: &Waveform) -> f64 {
    let noise: Vec<f64> = noisy
        .samples()
        .iter()
        .zip(signal.samples())
        .map(|(n, s)| n - s)
        .collect();
    10.0 * (power(signal.samples()) / power(&noise)).log10()
}

/// Adds Gaussian white noise scaled so the realised noise power gives exactly
/// `snr_db` against the input. `f64::INFINITY` returns the input unchanged.
pub fn add_white_noise(w: &Waveform, snr_db: f64, seed: u64) -> Result<Waveform> {
    if snr_db.is_nan() {
        return Err(Error::Invalid("SNR is NaN".into()));
    }
    let p_sig = power(w.samples());
    if p_sig == 0.0 {
        return Err(Error::UndefinedSnr);
    }
    if snr_db == f64::INFINITY {
        return Ok(w.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..w.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let p_noise = power(&noise);
    let gain = (p_sig / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let samples = w
        .samples()
        .iter()
        .zip(&noise)
        .map(|(s, n)| s + gain * n)
        .collect();
    Waveform::new(samples, w.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine() -> Waveform {
        let s = (0..24_000)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 24_000.0).sin())
            .collect();
        Waveform::new(s, 24_000).unwrap()
    }

    #[test]
    fn twenty_db() {
        let w = sine();
        let noisy = add_white_noise(&w, 20.0, 1).unwrap();
        let snr = snr_db(&w, &noisy);
        assert!((19.9..=20.1).contains(&snr), "{snr}");
    }

    #[test]
    fn infinite_snr_is_identity() {
        let w = sine();
        assert_eq!(add_white_noise(&w, f64::INFINITY, 1).unwrap(), w);
    }

    #[test]
    fn silence_is_an_error() {
        let w = Waveform::new(vec![0.0; 100], 24_000).unwrap();
        let err = add_white_noise(&w, 15.0, 0).unwrap_err();
        assert!(err.to_string().contains("undefined SNR"));
    }

    #[test]
    fn seeded_determinism() {
        let w = sine();
        let a = add_white_noise(&w, 15.0, 42).unwrap();
        let b = add_white_noise(&w, 15.0, 42).unwrap();
        let c = add_white_noise(&w, 15.0, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    proptest! {
        #[test]
        fn realised_snr_matches_request(snr in 15.0f64..20.0, seed in 0u64..1000) {
            let w = sine();
            let noisy = add_white_noise(&w, snr, seed).unwrap();
            prop_assert!((snr_db(&w, &noisy) - snr).abs() < 0.1);
        }
    }
}
