use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::codebook::{nearest_ids, quantize, Codebook};
use super::{CodeSequence, LatentSequence};
use crate::checkpoint::{config_hash, Checkpoint};
use crate::dsp::{chromagram, Chromagram, Waveform, CHROMA_BINS};
use crate::error::{Error, Result};
use crate::nn::{Graph, ParamId, ParamSet, Var};

pub const VQVAE_CHECKPOINT_KIND: &str = "vqvae";

/// Architecture of the bottleneck. Hashed into checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VqVaeConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub latent_dim: usize,
    pub codebook_size: usize,
    /// Convolution layers in the encoder (the decoder mirrors it).
    pub layers: usize,
    /// Temporal kernel width, odd. Stride is always 1.
    pub kernel: usize,
}

impl Default for VqVaeConfig {
    fn default() -> Self {
        VqVaeConfig {
            input_dim: CHROMA_BINS,
            hidden: 128,
            latent_dim: 64,
            codebook_size: 512,
            layers: 4,
            kernel: 3,
        }
    }
}

impl VqVaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Invalid("vqvae needs at least one layer".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Invalid("vqvae kernel must be odd".into()));
        }
        if self.codebook_size < 2 {
            return Err(Error::Invalid("codebook needs at least two entries".into()));
        }
        if self.input_dim == 0 || self.hidden == 0 || self.latent_dim == 0 {
            return Err(Error::Invalid("vqvae dimensions must be positive".into()));
        }
        Ok(())
    }

    fn widths(&self, from: usize, to: usize) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|i| {
                let cin = if i == 0 { from } else { self.hidden };
                let cout = if i + 1 == self.layers { to } else { self.hidden };
                (cin, cout)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Conv {
    weight: ParamId,
    bias: ParamId,
}

/// Encoder, decoder and codebook of the melodic bottleneck.
#[derive(Clone, Debug, PartialEq)]
pub struct VqVaeModel {
    config: VqVaeConfig,
    pub params: ParamSet,
    pub codebook: Codebook,
    encoder: Vec<Conv>,
    decoder: Vec<Conv>,
}

impl VqVaeModel {
    pub fn new(config: VqVaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut stack = |prefix: &str, widths: Vec<(usize, usize)>, params: &mut ParamSet| {
            widths
                .into_iter()
                .enumerate()
                .map(|(i, (cin, cout))| {
                    let fan_in = cin * config.kernel;
                    Conv {
                        weight: params.add_fan_in(&format!("{prefix}.{i}.weight"), (fan_in, cout), fan_in, &mut rng),
                        bias: params.add_zeros(&format!("{prefix}.{i}.bias"), (1, cout)),
                    }
                })
                .collect::<Vec<_>>()
        };
        let encoder = stack("encoder", config.widths(config.input_dim, config.latent_dim), &mut params);
        let decoder = stack("decoder", config.widths(config.latent_dim, config.input_dim), &mut params);
        let codebook = Codebook::uniform(config.codebook_size, config.latent_dim, &mut rng);
        Ok(VqVaeModel {
            config,
            params,
            codebook,
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &VqVaeConfig {
        &self.config
    }

    pub fn config_hash(&self) -> String {
        config_hash(&self.config)
    }

    fn conv<'a>(&self, g: &mut Graph<'a>, params: &'a ParamSet, x: Var, layer: &Conv, segment: usize) -> Var {
        let radius = (self.config.kernel / 2) as isize;
        let taps: Vec<Var> = (-radius..=radius)
            .map(|o| if o == 0 { x } else { g.shift_rows(x, o, segment) })
            .collect();
        let stacked = if taps.len() == 1 { taps[0] } else { g.concat_cols(&taps) };
        let w = g.param(params, layer.weight);
        let b = g.param(params, layer.bias);
        g.linear(stacked, w, Some(b))
    }

    fn run_stack<'a>(&self, g: &mut Graph<'a>, params: &'a ParamSet, mut x: Var, layers: &[Conv], segment: usize) -> Var {
        for (i, layer) in layers.iter().enumerate() {
            x = self.conv(g, params, x, layer, segment);
            if i + 1 < layers.len() {
                x = g.silu(x);
            }
        }
        x
    }

    /// Encoder on the tape. `x` stacks sequences of `segment` frames each.
    pub fn encode_graph<'a>(&'a self, g: &mut Graph<'a>, x: Var, segment: usize) -> Var {
        self.encode_graph_with(g, &self.params, x, segment)
    }

    /// Decoder on the tape, squashed to [0, 1].
    pub fn decode_graph<'a>(&'a self, g: &mut Graph<'a>, z: Var, segment: usize) -> Var {
        self.decode_graph_with(g, &self.params, z, segment)
    }

    /// [`Self::encode_graph`] reading weights from `params`, a copy of this
    /// model's parameter set (for perturbation checks).
    pub fn encode_graph_with<'a>(&self, g: &mut Graph<'a>, params: &'a ParamSet, x: Var, segment: usize) -> Var {
        self.run_stack(g, params, x, &self.encoder, segment)
    }

    pub fn decode_graph_with<'a>(&self, g: &mut Graph<'a>, params: &'a ParamSet, z: Var, segment: usize) -> Var {
        let y = self.run_stack(g, params, z, &self.decoder, segment);
        g.sigmoid(y)
    }

    fn check_width(&self, m: &Array2<f64>, want: usize, what: &str) -> Result<()> {
        if m.ncols() != want {
            return Err(Error::Shape(format!("{what}: expected {want} columns, got {}", m.ncols())));
        }
        if m.nrows() == 0 {
            return Err(Error::Invalid(format!("{what}: no frames")));
        }
        Ok(())
    }

    pub fn encode_matrix(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_width(x, self.config.input_dim, "encoder input")?;
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let z = self.encode_graph(&mut g, xv, x.nrows());
        Ok(g.value(z).clone())
    }

    pub fn decode_matrix(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_width(z, self.config.latent_dim, "decoder input")?;
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let y = self.decode_graph(&mut g, zv, z.nrows());
        Ok(g.value(y).clone())
    }

    /// Continuous latent for every chroma frame.
    pub fn encode(&self, x: &Chromagram) -> Result<LatentSequence> {
        LatentSequence::new(self.encode_matrix(x.frames())?)
    }

    /// Chromagram-shaped reconstruction in [0, 1].
    pub fn decode(&self, zq: &LatentSequence) -> Result<Array2<f64>> {
        self.decode_matrix(zq.frames())
    }

    pub fn quantize(&self, z: &LatentSequence) -> Result<(CodeSequence, LatentSequence)> {
        quantize(z, &self.codebook)
    }

    pub fn codes_for_chroma(&self, x: &Chromagram) -> Result<CodeSequence> {
        let z = self.encode_matrix(x.frames())?;
        CodeSequence::new(nearest_ids(&z, &self.codebook.entries)?, self.codebook.size())
    }

    /// `quantize(encode(chromagram(w)))` ids.
    pub fn extract_codes(&self, w: &Waveform) -> Result<CodeSequence> {
        self.codes_for_chroma(&chromagram(w)?)
    }

    /// Codebook embeddings of `codes`, frames × latent-dim.
    pub fn embed_codes(&self, codes: &CodeSequence) -> Array2<f64> {
        self.codebook.lookup(codes.ids())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(VQVAE_CHECKPOINT_KIND, &self.config);
        for (name, value) in self.params.iter() {
            ck.push(name, value.clone());
        }
        ck.push("codebook.entries", self.codebook.entries.clone());
        let usage = self.codebook.usage_counts.iter().map(|&c| c as f64).collect::<Vec<_>>();
        ck.push("codebook.usage", Array2::from_shape_vec((1, usage.len()), usage).unwrap());
        ck
    }

    /// Rebuilds a model from a checkpoint. With `expected` set, the stored
    /// config hash must match it.
    pub fn from_checkpoint(ck: &Checkpoint, expected: Option<&VqVaeConfig>) -> Result<Self> {
        let config: VqVaeConfig = match expected {
            Some(cfg) => ck.verified_config(VQVAE_CHECKPOINT_KIND, cfg)?,
            None => {
                if ck.kind != VQVAE_CHECKPOINT_KIND {
                    return Err(Error::Checkpoint(format!("expected a vqvae checkpoint, found {}", ck.kind)));
                }
                ck.config()?
            }
        };
        let mut model = VqVaeModel::new(config, 0)?;
        let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let id = model.params.find(&name).expect("own parameter");
            let stored = ck.tensor(&name)?;
            if stored.dim() != model.params.get(id).dim() {
                return Err(Error::Checkpoint(format!("tensor {name} has the wrong shape")));
            }
            *model.params.get_mut(id) = stored.clone();
        }
        let entries = ck.tensor("codebook.entries")?.clone();
        if entries.dim() != model.codebook.entries.dim() {
            return Err(Error::Checkpoint("codebook has the wrong shape".into()));
        }
        model.codebook.entries = entries;
        model.codebook.usage_counts = ck.tensor("codebook.usage")?.iter().map(|&c| c as u64).collect();
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>, expected: Option<&VqVaeConfig>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, expected)
    }
}
