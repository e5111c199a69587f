use ndarray::{s, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use super::{LatentBatch, SIGMA_MAX, SIGMA_MIN};
use crate::nn::{l2_normalize_rows, l2_normalize_rows_backward};

/// Turns a `(n, 2d)` network output into a Gaussian: the first `d` columns
/// are the mean, the last `d` the log-variance. `sigma = scale *
/// exp(logvar / 2)` clamped to `[SIGMA_MIN, SIGMA_MAX]`. With `concepts = K`
/// the mean is L2-normalized within each of the `K` equal slices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianHead {
    pub latent_dim: usize,
    pub sigma_scale: f64,
    pub concepts: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    mu: Array2<f64>,
    norms: Option<ndarray::Array1<f64>>,
    raw_sigma: Array2<f64>,
}

impl GaussianHead {
    pub fn plain(latent_dim: usize) -> Self {
        GaussianHead { latent_dim, sigma_scale: 1.0, concepts: None }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.latent_dim
    }

    pub fn forward(&self, out: ArrayView2<f64>) -> (LatentBatch, HeadCache) {
        let d = self.latent_dim;
        let n = out.nrows();
        let raw_mu = out.slice(s![.., ..d]);
        let (mu, norms) = match self.concepts {
            Some(k) => {
                let flat = raw_mu.to_shape((n * k, d / k)).expect("concept reshape").to_owned();
                let (y, norms) = l2_normalize_rows(flat.view());
                (y.into_shape_with_order((n, d)).expect("concept reshape"), Some(norms))
            }
            None => (raw_mu.to_owned(), None),
        };
        let raw_sigma = out.slice(s![.., d..]).mapv(|lv| self.sigma_scale * (0.5 * lv).exp());
        let sigma = raw_sigma.mapv(|v| v.clamp(SIGMA_MIN, SIGMA_MAX));
        let cache = HeadCache { mu: mu.clone(), norms, raw_sigma };
        (LatentBatch { mu, sigma }, cache)
    }

    /// Gradient with respect to the `(n, 2d)` network output. Clamped sigma
    /// entries pass no gradient.
    pub fn backward(&self, cache: &HeadCache, dmu: ArrayView2<f64>, dsigma: ArrayView2<f64>) -> Array2<f64> {
        let d = self.latent_dim;
        let n = dmu.nrows();
        let mut dout = Array2::zeros((n, 2 * d));
        match (self.concepts, &cache.norms) {
            (Some(k), Some(norms)) => {
                let y = cache.mu.to_shape((n * k, d / k)).expect("concept reshape");
                let dy = dmu.to_shape((n * k, d / k)).expect("concept reshape");
                let dx = l2_normalize_rows_backward(y.view(), norms, dy.view());
                dout.slice_mut(s![.., ..d]).assign(&dx.into_shape_with_order((n, d)).expect("concept reshape"));
            }
            _ => dout.slice_mut(s![.., ..d]).assign(&dmu),
        }
        Zip::from(dout.slice_mut(s![.., d..]))
            .and(&cache.raw_sigma)
            .and(dsigma)
            .for_each(|o, &s, &g| {
                if s > SIGMA_MIN && s < SIGMA_MAX {
                    *o = g * 0.5 * s;
                }
            });
        dout
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng;
    use rand::Rng;

    fn loss(h: &GaussianHead, out: &Array2<f64>, wm: &Array2<f64>, ws: &Array2<f64>) -> f64 {
        let (b, _) = h.forward(out.view());
        (&b.mu * wm).sum() + (&b.sigma * ws).sum()
    }

    fn check(h: GaussianHead) {
        let mut r = rng(3);
        let n = 3;
        let d = h.latent_dim;
        let out = Array2::from_shape_fn((n, 2 * d), |_| r.random_range(-1.5..1.5));
        let wm = Array2::from_shape_fn((n, d), |_| r.random_range(-1.0..1.0));
        let ws = Array2::from_shape_fn((n, d), |_| r.random_range(-1.0..1.0));
        let (_, cache) = h.forward(out.view());
        let g = h.backward(&cache, wm.view(), ws.view());
        let eps = 1e-6;
        for i in 0..n {
            for j in 0..2 * d {
                let mut p = out.clone();
                p[[i, j]] += eps;
                let mut m = out.clone();
                m[[i, j]] -= eps;
                let num = (loss(&h, &p, &wm, &ws) - loss(&h, &m, &wm, &ws)) / (2.0 * eps);
                assert!((num - g[[i, j]]).abs() < 1e-7, "({i},{j}) {num} vs {}", g[[i, j]]);
            }
        }
    }

    #[test]
    fn plain_head_gradient() {
        check(GaussianHead::plain(4));
    }

    #[test]
    fn concept_head_gradient_and_norms() {
        let h = GaussianHead { latent_dim: 8, sigma_scale: 0.1, concepts: Some(2) };
        check(h);
        let out = Array2::from_shape_fn((2, 16), |(i, j)| (i * 16 + j) as f64 - 7.0);
        let (b, _) = h.forward(out.view());
        for row in b.mu.rows() {
            for c in 0..2 {
                let sl = row.slice(s![c * 4..(c + 1) * 4]);
                assert!((sl.dot(&sl).sqrt() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sigma_is_clamped() {
        let h = GaussianHead::plain(1);
        let out = ndarray::array![[0.0, -100.0], [0.0, 100.0], [0.0, 0.0]];
        let (b, _) = h.forward(out.view());
        assert_eq!(b.sigma[[0, 0]], SIGMA_MIN);
        assert_eq!(b.sigma[[1, 0]], SIGMA_MAX);
        assert_eq!(b.sigma[[2, 0]], 1.0);
    }
}
