//! The objective's terms with analytic gradients. Batch values are means over
//! users.

use ndarray::{Array2, ArrayView1, ArrayView2, Zip};

use crate::models::LatentBatch;
use crate::nn::log_softmax_rows;
use crate::{Result, TearsError};

/// Added inside the log of the reconstruction loss.
pub const NLL_EPS: f64 = 1e-12;

/// `-sum_i y_i log(p_i + 1e-12)` for one user.
pub fn multinomial_nll(y: ArrayView1<f64>, p: ArrayView1<f64>) -> Result<f64> {
    if y.len() != p.len() {
        return Err(TearsError::DimensionMismatch { expected: y.len(), got: p.len() });
    }
    Ok(-y.iter().zip(p.iter()).map(|(&y, &p)| if y == 0.0 { 0.0 } else { y * (p + NLL_EPS).ln() }).sum::<f64>())
}

fn check_pair(a: &LatentBatch, b: &LatentBatch) -> Result<()> {
    if a.mu.raw_dim() != b.mu.raw_dim() {
        let (expected, got) = if a.dim() != b.dim() { (a.dim(), b.dim()) } else { (a.len(), b.len()) };
        return Err(TearsError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Squared 2-Wasserstein distance between diagonal Gaussians,
/// `||mu_a - mu_b||^2 + sum (sigma_a - sigma_b)^2`, averaged over the batch.
pub fn ot_loss(a: &LatentBatch, b: &LatentBatch) -> Result<f64> {
    check_pair(a, b)?;
    Ok(ot_with_grad(a, b).0)
}

/// `0.5 sum (sigma^2 + mu^2 - 1 - log sigma^2)`, averaged over the batch.
pub fn kl_loss(g: &LatentBatch) -> f64 {
    kl_with_grad(g).0
}

/// OT loss and its gradient with respect to `a`'s mean and sigma.
pub(crate) fn ot_with_grad(a: &LatentBatch, b: &LatentBatch) -> (f64, Array2<f64>, Array2<f64>) {
    let n = a.len().max(1) as f64;
    let dm = &a.mu - &b.mu;
    let ds = &a.sigma - &b.sigma;
    let loss = (dm.mapv(|v| v * v).sum() + ds.mapv(|v| v * v).sum()) / n;
    (loss, dm * (2.0 / n), ds * (2.0 / n))
}

pub(crate) fn kl_with_grad(g: &LatentBatch) -> (f64, Array2<f64>, Array2<f64>) {
    let n = g.len().max(1) as f64;
    let mut loss = 0.0;
    Zip::from(&g.mu).and(&g.sigma).for_each(|&m, &s| {
        loss += 0.5 * (s * s + m * m - 1.0 - (s * s).ln());
    });
    let dmu = &g.mu / n;
    let dsigma = g.sigma.mapv(|s| (s - 1.0 / s) / n);
    (loss / n, dmu, dsigma)
}

/// Batch-mean multinomial NLL of `softmax(logits)` against `y`, and its
/// exact gradient with respect to the logits (including the epsilon).
pub(crate) fn nll_with_grad(logits: ArrayView2<f64>, y: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let n = logits.nrows().max(1) as f64;
    let p = log_softmax_rows(logits).mapv(f64::exp);
    let mut loss = 0.0;
    let mut grad = Array2::zeros(p.raw_dim());
    for ((prow, yrow), mut grow) in p.rows().into_iter().zip(y.rows()).zip(grad.rows_mut()) {
        let mut dot = 0.0;
        for (j, (&pj, &yj)) in prow.iter().zip(yrow.iter()).enumerate() {
            if yj != 0.0 {
                loss -= yj * (pj + NLL_EPS).ln();
                let g = -yj / (pj + NLL_EPS);
                grow[j] = g;
                dot += g * pj;
            }
        }
        for (gj, &pj) in grow.iter_mut().zip(prow.iter()) {
            *gj = pj * (*gj - dot) / n;
        }
    }
    (loss / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn batch(mu: Array2<f64>, sigma: Array2<f64>) -> LatentBatch {
        LatentBatch { mu, sigma }
    }

    #[test]
    fn ot_examples() {
        let a = batch(array![[1.0, 0.0]], array![[1.0, 1.0]]);
        let b = batch(array![[0.0, 0.0]], array![[1.0, 1.0]]);
        assert_eq!(ot_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(ot_loss(&a, &b).unwrap(), 1.0);
        let c = batch(array![[0.0, 0.0]], array![[2.0, 2.0]]);
        assert_eq!(ot_loss(&c, &b).unwrap(), 2.0);
        let d = batch(array![[0.0, 0.0, 0.0]], array![[1.0, 1.0, 1.0]]);
        assert!(matches!(ot_loss(&a, &d), Err(TearsError::DimensionMismatch { .. })));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_loss(&batch(array![[0.0, 0.0]], array![[1.0, 1.0]])), 0.0);
        assert!((kl_loss(&batch(array![[1.0]], array![[1.0]])) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nll_examples() {
        let y = array![0.0, 1.0, 0.0];
        assert!(multinomial_nll(y.view(), array![0.0, 1.0, 0.0].view()).unwrap().abs() < 1e-11);
        let y2 = array![1.0, 1.0, 0.0, 0.0];
        let v = multinomial_nll(y2.view(), array![0.25, 0.25, 0.25, 0.25].view()).unwrap();
        assert!((v + 2.0 * 0.25f64.ln()).abs() < 1e-10);
        assert_eq!(multinomial_nll(array![0.0, 0.0].view(), array![0.5, 0.5].view()).unwrap(), 0.0);
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let logits = array![[0.3, -1.2, 2.0, 0.1], [1.0, 1.0, -0.5, 0.0]];
        let y = array![[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 0.0]];
        let (_, g) = nll_with_grad(logits.view(), y.view());
        for i in 0..2 {
            for j in 0..4 {
                let mut p = logits.clone();
                p[[i, j]] += 1e-6;
                let mut m = logits.clone();
                m[[i, j]] -= 1e-6;
                let num = (nll_with_grad(p.view(), y.view()).0 - nll_with_grad(m.view(), y.view()).0) / 2e-6;
                assert!((num - g[[i, j]]).abs() < 1e-8);
            }
        }
    }
}
