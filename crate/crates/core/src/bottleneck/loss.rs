use ndarray::Array2;

use crate::error::{Error, Result};

/// Components of the VQ-VAE objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VqLoss {
    pub total: f64,
    pub recon: f64,
    pub commit: f64,
}

fn mean_sq_diff(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Reconstruction plus β-weighted commitment:
/// `total = mean‖x − x̂‖² + β · mean‖z_e − z_q‖²`.
///
/// Both terms are averaged over entries so the weighting does not depend on
/// clip length. The codebook itself is learned by EMA, so there is no
/// codebook term.
pub fn vqvae_loss(
    x: &Array2<f64>,
    x_hat: &Array2<f64>,
    z_e: &Array2<f64>,
    z_q: &Array2<f64>,
    beta: f64,
) -> Result<VqLoss> {
    let recon = mean_sq_diff(x, x_hat, "reconstruction")?;
    let commit = mean_sq_diff(z_e, z_q, "commitment")?;
    Ok(VqLoss {
        total: recon + beta * commit,
        recon,
        commit,
    })
}
