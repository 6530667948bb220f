//! Run configuration, read from TOML. Every key is optional; missing keys
//! take the library defaults.

use std::path::{Path, PathBuf};

use accomp_core::bottleneck::VqTrainConfig;
use accomp_core::checkpoint::config_hash;
use accomp_core::dsp::GRIFFIN_LIM_ITERATIONS;
use accomp_core::flow::{ConditioningMode, FmTrainConfig, SamplerConfig, MEL_NOISE_SNR_DB};
use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::manifest::{MAX_DURATION_S, MIN_DURATION_S};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Overrides `fm.model.mode`.
    pub conditioning_mode: ConditioningMode,
    /// Steps between checkpoints during training.
    pub checkpoint_every: u64,
    /// Steps between loss-log lines. The last step is always logged.
    pub log_every: u64,
    pub data: DataRecipe,
    pub visualize: VisualizeRecipe,
    pub dsp: DspConfig,
    pub vqvae: VqTrainConfig,
    pub fm: FmTrainConfig,
    pub sampler: SamplerConfig,
}

/// Synthetic paired corpus: every melody rendered with every timbre, each
/// rendering paired with the melody's accompaniment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataRecipe {
    pub melodies: usize,
    pub timbres: usize,
    pub duration_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisualizeRecipe {
    pub melodies: usize,
    pub timbres: usize,
    pub duration_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspConfig {
    pub griffin_lim_iterations: usize,
    /// Uniform range of the per-clip noise SNR in `mel-noisy` training.
    pub noise_snr_db: (f64, f64),
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("run"),
            conditioning_mode: ConditioningMode::Codes,
            checkpoint_every: 500,
            log_every: 10,
            data: DataRecipe::default(),
            visualize: VisualizeRecipe::default(),
            dsp: DspConfig::default(),
            vqvae: VqTrainConfig::default(),
            fm: FmTrainConfig::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

impl Default for DataRecipe {
    fn default() -> Self {
        DataRecipe {
            melodies: 8,
            timbres: 3,
            duration_s: 3.0,
        }
    }
}

impl Default for VisualizeRecipe {
    fn default() -> Self {
        VisualizeRecipe {
            melodies: 5,
            timbres: 4,
            duration_s: 3.0,
        }
    }
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig {
            griffin_lim_iterations: GRIFFIN_LIM_ITERATIONS,
            noise_snr_db: MEL_NOISE_SNR_DB,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    /// Applies cross-section rules and range checks.
    pub fn finalize(mut self) -> anyhow::Result<Self> {
        self.fm.model.mode = self.conditioning_mode;
        if self.fm.model.codebook_size != self.vqvae.model.codebook_size {
            bail!(
                "fm.model.codebook_size ({}) must equal vqvae.model.codebook_size ({})",
                self.fm.model.codebook_size,
                self.vqvae.model.codebook_size
            );
        }
        if self.checkpoint_every == 0 || self.log_every == 0 {
            bail!("checkpoint_every and log_every must be positive");
        }
        let d = self.data.duration_s;
        if !(MIN_DURATION_S..=MAX_DURATION_S).contains(&d) {
            bail!("data.duration_s = {d} lies outside [{MIN_DURATION_S}, {MAX_DURATION_S}]");
        }
        if self.data.melodies == 0 || self.data.timbres == 0 {
            bail!("data recipe needs at least one melody and one timbre");
        }
        let (lo, hi) = self.dsp.noise_snr_db;
        if !(lo <= hi) {
            bail!("dsp.noise_snr_db must be an ordered pair");
        }
        if self.dsp.griffin_lim_iterations == 0 {
            bail!("dsp.griffin_lim_iterations must be positive");
        }
        self.sampler.seed = self.seed;
        self.sampler.validate()?;
        Ok(self)
    }

    /// Hash of the whole resolved configuration, recorded in reports.
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.sampler.steps, 50);
        assert_eq!(c.sampler.cfg_scale, 3.0);
    }

    #[test]
    fn shipped_config_lists_the_defaults() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
        assert_eq!(RunConfig::load(&path).unwrap(), RunConfig::default());
    }

    #[test]
    fn nested_sections_override() {
        let text = r#"
            seed = 9
            conditioning_mode = "chroma-dense"
            [vqvae]
            steps = 20
            [vqvae.model]
            hidden = 16
            [fm.model]
            hidden = 32
        "#;
        let c: RunConfig = toml::from_str(text).unwrap();
        let c = c.finalize().unwrap();
        assert_eq!(c.vqvae.steps, 20);
        assert_eq!(c.vqvae.model.hidden, 16);
        assert_eq!(c.fm.model.hidden, 32);
        assert_eq!(c.fm.model.mode, ConditioningMode::ChromaDense);
        assert_eq!(c.sampler.seed, 9);
    }

    #[test]
    fn unknown_keys_and_bad_ranges_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sead = 1").is_err());
        let c: RunConfig = toml::from_str("[data]\nduration_s = 40.0").unwrap();
        assert!(c.finalize().is_err());
        let c: RunConfig = toml::from_str("[fm.model]\ncodebook_size = 8").unwrap();
        assert!(c.finalize().is_err());
    }
}
