//! Encoders and decoders: the black-box autoencoder backbones, the text and
//! genre side encoders with Gaussian heads, and the shared decoder.

mod backbone;
mod gers;
mod head;
mod macrid;
mod tears;
mod text;

pub use backbone::{
    train_backbone, Backbone, BackboneKind, BackboneSpec, BackboneTrainConfig, BackboneTrainReport, MacridSpec,
};
pub use gers::{gers_encode, GenreProfile};
pub use head::{GaussianHead, HeadCache};
pub use macrid::MacridDecoder;
pub use tears::{
    Decoder, DecoderCache, FuseCache, Fusion, GenreEncoder, SideCache, SideEncoder, SideInput, TearsCheckpoint, TearsModel,
    CHECKPOINT_VERSION,
};
pub use text::{tokenize, TextEncoder, TextEncoderSpec, TokenEmbedder};

use ndarray::{Array1, Array2, ArrayView1};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::util::rng;
use crate::{Result, TearsError};

/// Bounds applied to every encoder's standard deviations.
pub const SIGMA_MIN: f64 = 1e-4;
pub const SIGMA_MAX: f64 = 1e2;

/// A diagonal Gaussian `N(mu, diag(sigma^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian {
    pub mu: Array1<f64>,
    pub sigma: Array1<f64>,
}

impl LatentGaussian {
    pub fn new(mu: Array1<f64>, sigma: Array1<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(TearsError::DimensionMismatch { expected: mu.len(), got: sigma.len() });
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(TearsError::Numeric("latent has non-finite entries".into()));
        }
        if sigma.iter().any(|&s| s <= 0.0) {
            return Err(TearsError::Numeric("latent sigma must be strictly positive".into()));
        }
        Ok(LatentGaussian { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// A batch of diagonal Gaussians, one per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentBatch {
    pub mu: Array2<f64>,
    pub sigma: Array2<f64>,
}

impl LatentBatch {
    pub fn len(&self) -> usize {
        self.mu.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.mu.ncols()
    }

    pub fn row(&self, i: usize) -> LatentGaussian {
        LatentGaussian { mu: self.mu.row(i).to_owned(), sigma: self.sigma.row(i).to_owned() }
    }

    pub fn from_rows(rows: &[LatentGaussian]) -> Result<Self> {
        let d = rows.first().map_or(0, LatentGaussian::dim);
        let mut mu = Array2::zeros((rows.len(), d));
        let mut sigma = Array2::zeros((rows.len(), d));
        for (i, g) in rows.iter().enumerate() {
            if g.dim() != d {
                return Err(TearsError::DimensionMismatch { expected: d, got: g.dim() });
            }
            mu.row_mut(i).assign(&g.mu);
            sigma.row_mut(i).assign(&g.sigma);
        }
        Ok(LatentBatch { mu, sigma })
    }
}

impl From<&LatentGaussian> for LatentBatch {
    fn from(g: &LatentGaussian) -> Self {
        LatentBatch { mu: g.mu.clone().insert_axis(ndarray::Axis(0)), sigma: g.sigma.clone().insert_axis(ndarray::Axis(0)) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Sample,
    Mean,
}

/// `mu + sigma * eps` with `eps ~ N(0, I)` from a seeded generator, or `mu`.
pub fn sample_latent(g: &LatentGaussian, seed: u64, mode: SampleMode) -> Array1<f64> {
    match mode {
        SampleMode::Mean => g.mu.clone(),
        SampleMode::Sample => {
            let mut r = rng(seed);
            let eps: Array1<f64> = (0..g.dim()).map(|_| StandardNormal.sample(&mut r)).collect();
            &g.mu + &(&g.sigma * &eps)
        }
    }
}

/// Checks a latent vector's dimension and finiteness.
pub(crate) fn check_latent(z: ArrayView1<f64>, d: usize) -> Result<()> {
    if z.len() != d {
        return Err(TearsError::DimensionMismatch { expected: d, got: z.len() });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(TearsError::Numeric("latent has non-finite entries".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mean_mode_is_exact() {
        let g = LatentGaussian::new(array![1.0, -2.0], array![0.5, 3.0]).unwrap();
        assert_eq!(sample_latent(&g, 9, SampleMode::Mean), g.mu);
    }

    #[test]
    fn sampling_is_seeded() {
        let g = LatentGaussian::new(array![1.0, -2.0, 0.0], array![0.5, 3.0, 1.0]).unwrap();
        assert_eq!(sample_latent(&g, 4, SampleMode::Sample), sample_latent(&g, 4, SampleMode::Sample));
        assert_ne!(sample_latent(&g, 4, SampleMode::Sample), sample_latent(&g, 5, SampleMode::Sample));
    }

    #[test]
    fn floor_sigma_sample_is_near_mean() {
        let g = LatentGaussian::new(array![1.0, -2.0], array![SIGMA_MIN, SIGMA_MIN]).unwrap();
        let z = sample_latent(&g, 1, SampleMode::Sample);
        for (a, b) in z.iter().zip(g.mu.iter()) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn invalid_latents_are_rejected() {
        assert!(LatentGaussian::new(array![1.0], array![0.0]).is_err());
        assert!(LatentGaussian::new(array![f64::NAN], array![1.0]).is_err());
        assert!(LatentGaussian::new(array![1.0, 2.0], array![1.0]).is_err());
    }
}
