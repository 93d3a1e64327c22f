//! Training losses: per-pixel BCE, SSIM and the attention supervision term.
//!
//! Every loss returns a scalar tensor so it can be backpropagated. BCE is
//! summed over pixels and averaged over the batch.

use candle_core::{Tensor, D};

use crate::error::{Error, Result};
use crate::nn::conv2d;
use crate::types::MaskTensor;

/// Clamp applied to predictions before taking logs.
pub const BCE_EPS: f64 = 1e-7;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const DEFAULT_LAMBDA_AUX: f64 = 0.1;

fn check_same(pred: &MaskTensor, gt: &MaskTensor, what: &str) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape(format!(
            "{what}: prediction {:?} vs ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    Ok(())
}

pub fn bce_loss(pred: &MaskTensor, gt: &MaskTensor) -> Result<Tensor> {
    check_same(pred, gt, "bce")?;
    let p = pred.tensor().clamp(BCE_EPS, 1.0 - BCE_EPS)?;
    let y = gt.tensor().to_dtype(p.dtype())?;
    let pos = (&y * p.log()?)?;
    let neg = (y.affine(-1.0, 1.0)? * p.affine(-1.0, 1.0)?.log()?)?;
    let per_image = (pos + neg)?.neg()?.flatten_from(1)?.sum(D::Minus1)?;
    Ok(per_image.mean_all()?)
}

/// Sliding window used by SSIM. Windows are applied at stride 1 over valid
/// positions only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SsimWindow {
    Gaussian { size: usize, sigma: f64 },
    Uniform { size: usize },
}

impl Default for SsimWindow {
    fn default() -> Self {
        SsimWindow::Gaussian { size: 11, sigma: 1.5 }
    }
}

impl SsimWindow {
    pub fn size(&self) -> usize {
        match *self {
            SsimWindow::Gaussian { size, .. } | SsimWindow::Uniform { size } => size,
        }
    }

    /// Normalized row-major `size x size` weights.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.size();
        let w: Vec<f64> = match *self {
            SsimWindow::Uniform { .. } => vec![1.0; n * n],
            SsimWindow::Gaussian { sigma, .. } => {
                let c = (n as f64 - 1.0) / 2.0;
                let g: Vec<f64> = (0..n)
                    .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
                    .collect();
                g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect()
            }
        };
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }
}

/// `1 - mean SSIM` over all valid windows of every image.
pub fn ssim_loss(pred: &MaskTensor, gt: &MaskTensor, window: SsimWindow) -> Result<Tensor> {
    check_same(pred, gt, "ssim")?;
    let (h, w) = pred.size();
    let n = window.size();
    if n == 0 || n > h || n > w {
        return Err(Error::shape(format!("ssim window {n} does not fit a {h}x{w} image")));
    }
    let x = pred.tensor();
    let y = gt.tensor().to_dtype(x.dtype())?;
    let k = Tensor::from_vec(window.weights(), (1, 1, n, n), x.device())?.to_dtype(x.dtype())?;
    let filter = |t: &Tensor| -> Result<Tensor> { Ok(conv2d(t, &k, 1, 0)?) };

    let mu_x = filter(x)?;
    let mu_y = filter(&y)?;
    let mu_xx = mu_x.sqr()?;
    let mu_yy = mu_y.sqr()?;
    let mu_xy = (&mu_x * &mu_y)?;
    let var_x = (filter(&x.sqr()?)? - &mu_xx)?;
    let var_y = (filter(&y.sqr()?)? - &mu_yy)?;
    let cov = (filter(&(x * &y)?)? - &mu_xy)?;

    let num = ((mu_xy * 2.0)? + SSIM_C1)?.mul(&((cov * 2.0)? + SSIM_C2)?)?;
    let den = ((mu_xx + mu_yy)? + SSIM_C1)?.mul(&((var_x + var_y)? + SSIM_C2)?)?;
    Ok((num / den)?.mean_all()?.affine(-1.0, 1.0)?)
}

/// Sum over levels of the BCE between each attention map and the ground
/// truth resized to that map's resolution.
pub fn aux_attention_loss(attn: &[MaskTensor], gt: &MaskTensor) -> Result<Tensor> {
    if attn.is_empty() {
        return Err(Error::Length("no attention maps to supervise".into()));
    }
    let sizes: Vec<(usize, usize)> = attn.iter().map(|a| a.size()).collect();
    let targets = crate::attention::attention_supervision_targets(gt, &sizes)?;
    let mut total: Option<Tensor> = None;
    for (a, t) in attn.iter().zip(&targets) {
        let l = bce_loss(a, t)?;
        total = Some(match total {
            Some(acc) => (acc + l)?,
            None => l,
        });
    }
    Ok(total.expect("non-empty"))
}

/// Scalar values of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub bce: f64,
    pub ssim: f64,
    pub aux: f64,
    pub total: f64,
    pub lambda_aux: f64,
}

impl LossBreakdown {
    pub fn new(bce: f64, ssim: f64, aux: f64, lambda_aux: f64) -> Self {
        Self {
            bce,
            ssim,
            aux,
            total: bce + ssim + lambda_aux * aux,
            lambda_aux,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.bce.is_finite() && self.ssim.is_finite() && self.aux.is_finite() && self.total.is_finite()
    }
}

/// The differentiable total together with its scalar breakdown.
#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub total: Tensor,
    pub breakdown: LossBreakdown,
}

/// `bce + ssim + λ·aux`. With no attention maps the auxiliary term is 0.
pub fn total_loss(
    pred: &MaskTensor,
    attn: &[MaskTensor],
    gt: &MaskTensor,
    lambda_aux: f64,
    window: SsimWindow,
) -> Result<TotalLoss> {
    let bce = bce_loss(pred, gt)?;
    let ssim = ssim_loss(pred, gt, window)?;
    let mut total = (&bce + &ssim)?;
    let mut aux_value = 0.0;
    if !attn.is_empty() {
        let aux = aux_attention_loss(attn, gt)?;
        aux_value = scalar(&aux)?;
        if lambda_aux != 0.0 {
            total = (total + (aux * lambda_aux)?)?;
        }
    }
    let breakdown = LossBreakdown::new(scalar(&bce)?, scalar(&ssim)?, aux_value, lambda_aux);
    Ok(TotalLoss { total, breakdown })
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(v: &[f64], s: usize) -> MaskTensor {
        MaskTensor::from_values(v.to_vec(), s, s).unwrap()
    }

    fn value(t: Tensor) -> f64 {
        scalar(&t).unwrap()
    }

    #[test]
    fn bce_uniform_half() {
        let m = mask(&[0.5; 16], 4);
        assert!((value(bce_loss(&m, &m).unwrap()) - 16.0 * 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn ssim_constant_images() {
        let w = SsimWindow::Uniform { size: 4 };
        let (a, b) = (0.2, 0.7);
        let expected = 1.0 - (2.0 * a * b + SSIM_C1) / (a * a + b * b + SSIM_C1);
        let got = value(ssim_loss(&mask(&[a; 16], 4), &mask(&[b; 16], 4), w).unwrap());
        assert!((got - expected).abs() < 1e-9);
        assert!(value(ssim_loss(&mask(&[a; 16], 4), &mask(&[a; 16], 4), w).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_window_too_large() {
        let m = mask(&[0.5; 16], 4);
        assert!(ssim_loss(&m, &m, SsimWindow::default()).is_err());
    }

    #[test]
    fn gaussian_weights_normalized_and_symmetric() {
        let w = SsimWindow::default().weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((w[0] - w[120]).abs() < 1e-15);
        assert!(w[60] > w[59]);
    }

    #[test]
    fn lambda_is_linear() {
        let pred = mask(&[0.3, 0.6, 0.2, 0.9], 2);
        let gt = mask(&[0.0, 1.0, 0.0, 1.0], 2);
        let attn = vec![mask(&[0.4, 0.5, 0.6, 0.7], 2), mask(&[0.45], 1)];
        let w = SsimWindow::Uniform { size: 2 };
        let l1 = total_loss(&pred, &attn, &gt, 0.1, w).unwrap().breakdown;
        let l2 = total_loss(&pred, &attn, &gt, 0.7, w).unwrap().breakdown;
        assert!(((l2.total - l1.total) - 0.6 * l1.aux).abs() < 1e-12);
        assert_eq!(l1.total, l1.bce + l1.ssim + 0.1 * l1.aux);
    }
}
