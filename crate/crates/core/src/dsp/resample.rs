use super::Waveform;
use crate::error::Result;

/// Linear-interpolation resampler. No anti-alias filtering: intended only
/// for bringing occasional off-rate inputs to 24 kHz.
pub fn resample_linear(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if w.sample_rate() == target_rate {
        return Ok(w.clone());
    }
    let ratio = w.sample_rate() as f64 / target_rate as f64;
    let n_out = ((w.len() as f64) / ratio).round().max(1.0) as usize;
    let x = w.samples();
    let samples = (0..n_out)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = pos.floor() as usize;
            let frac = pos - j as f64;
            let a = x[j.min(x.len() - 1)];
            let b = x[(j + 1).min(x.len() - 1)];
            a + (b - a) * frac
        })
        .collect();
    Waveform::new(samples, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubles_rate_by_interpolation() {
        let w = Waveform::new(vec![0.0, 1.0, 0.0], 12_000).unwrap();
        let r = resample_linear(&w, 24_000).unwrap();
        assert_eq!(r.samples(), &[0.0, 0.5, 1.0, 0.5, 0.0, 0.0]);
        assert_eq!(r.sample_rate(), 24_000);
    }

    #[test]
    fn same_rate_is_identity() {
        let w = Waveform::new(vec![0.3, -0.2], 24_000).unwrap();
        assert_eq!(resample_linear(&w, 24_000).unwrap(), w);
    }
}
