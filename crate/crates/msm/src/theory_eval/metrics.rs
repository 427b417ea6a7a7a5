//! Reconstruction metrics: MSE, PSNR, and a windowed SSIM.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "mse: lengths {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Shape("mse of empty vectors".into()));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// 10 log10(peak^2 / mse); +inf sentinel when the inputs are identical.
pub fn psnr(x_hat: &[f64], x: &[f64], peak: f64) -> Result<f64> {
    if peak <= 0.0 {
        return Err(Error::Config("peak must be positive".into()));
    }
    let e = mse(x_hat, x)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / e).log10())
}

const SSIM_WINDOW: usize = 8;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean SSIM over sliding 8x8 uniform windows with the standard constants.
/// Inputs are [h, w] images; complex images should be converted to magnitude
/// first.
pub fn ssim(x_hat: &Tensor, x: &Tensor, peak: f64) -> Result<f64> {
    if x_hat.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "ssim: shapes {:?} vs {:?}",
            x_hat.shape(),
            x.shape()
        )));
    }
    let [h, w] = *x_hat.shape() else {
        return Err(Error::Shape(format!(
            "ssim expects [h, w] images, got {:?}",
            x_hat.shape()
        )));
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    if peak <= 0.0 {
        return Err(Error::Config("peak must be positive".into()));
    }
    let c1 = (SSIM_K1 * peak) * (SSIM_K1 * peak);
    let c2 = (SSIM_K2 * peak) * (SSIM_K2 * peak);
    let a = x_hat.data();
    let b = x.data();
    let win = SSIM_WINDOW;
    let norm = 1.0 / (win * win) as f64;
    let mut acc = 0.0;
    let mut count = 0usize;
    for r0 in 0..=(h - win) {
        for c0 in 0..=(w - win) {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for r in r0..r0 + win {
                for c in c0..c0 + win {
                    let (va, vb) = (a[r * w + c], b[r * w + c]);
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            let (mu_a, mu_b) = (sa * norm, sb * norm);
            let var_a = saa * norm - mu_a * mu_a;
            let var_b = sbb * norm - mu_b * mu_b;
            let cov = sab * norm - mu_a * mu_b;
            let val = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            acc += val;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}
