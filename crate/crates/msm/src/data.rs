//! Desk-scale toy data: smooth Gaussian random fields (known covariance, so
//! closed-form checks stay available), simple ellipse phantoms, and the
//! in-memory dataset the trainer consumes.

use crate::error::{Error, Result};
use crate::masks::MaskOp;
use crate::numerics::rng::RngState;
use crate::transforms::Transform;
use nalgebra::{Cholesky, DMatrix, DVector};

/// Squared-exponential covariance over an h x w pixel grid.
pub fn gaussian_field_cov(height: usize, width: usize, length_scale: f64, var: f64) -> DMatrix<f64> {
    let n = height * width;
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        let (ri, ci) = (i / width, i % width);
        for j in i..n {
            let (rj, cj) = (j / width, j % width);
            let d2 = (ri as f64 - rj as f64).powi(2) + (ci as f64 - cj as f64).powi(2);
            let v = var * (-d2 / (2.0 * length_scale * length_scale)).exp();
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    // jitter keeps the Cholesky factor well defined for long length scales
    for i in 0..n {
        cov[(i, i)] += 1e-8;
    }
    cov
}

/// Samples smooth random fields with the covariance above.
pub struct GaussianFieldSampler {
    height: usize,
    width: usize,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl GaussianFieldSampler {
    pub fn new(height: usize, width: usize, length_scale: f64, var: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Config("field dims must be positive".into()));
        }
        if length_scale <= 0.0 || var <= 0.0 {
            return Err(Error::Config("length scale and variance must be positive".into()));
        }
        let cov = gaussian_field_cov(height, width, length_scale, var);
        let chol = Cholesky::new(cov)
            .ok_or_else(|| Error::Numerical("field covariance not positive definite".into()))?;
        Ok(GaussianFieldSampler { height, width, chol })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    /// One real field, flattened row-major.
    pub fn sample(&self, rng: &mut RngState) -> Vec<f64> {
        let g = DVector::from_vec(rng.gaussian_vec(self.pixel_count()));
        (self.chol.l() * g).iter().cloned().collect()
    }

    /// One complex field: independent smooth real and imaginary parts,
    /// interleaved (re, im).
    pub fn sample_complex(&self, rng: &mut RngState) -> Vec<f64> {
        let re = self.sample(rng);
        let im = self.sample(rng);
        re.iter().zip(&im).flat_map(|(&r, &i)| [r, i]).collect()
    }
}

/// A few overlapping ellipses with distinct intensities, with a mild random
/// jitter of centers and axes.
pub fn phantom(height: usize, width: usize, rng: &mut RngState) -> Vec<f64> {
    let ellipses: [(f64, f64, f64, f64, f64); 4] = [
        (0.50, 0.50, 0.42, 0.36, 0.8),
        (0.50, 0.47, 0.34, 0.28, -0.4),
        (0.38, 0.52, 0.10, 0.16, 0.45),
        (0.62, 0.52, 0.10, 0.16, 0.45),
    ];
    let jitter = 0.03;
    let mut img = vec![0.0; height * width];
    for &(cx, cy, ax, ay, val) in &ellipses {
        let cx = cx + jitter * (rng.uniform() - 0.5);
        let cy = cy + jitter * (rng.uniform() - 0.5);
        for r in 0..height {
            for c in 0..width {
                let x = (c as f64 + 0.5) / width as f64;
                let y = (r as f64 + 0.5) / height as f64;
                let u = (x - cx) / ax;
                let v = (y - cy) / ay;
                if u * u + v * v <= 1.0 {
                    img[r * width + c] += val;
                }
            }
        }
    }
    img
}

/// One training instance: the mask, the observed (possibly noisy) subsampled
/// measurement, and optionally the underlying truth for evaluation.
#[derive(Debug, Clone)]
pub struct Instance {
    pub mask: MaskOp,
    pub s: Vec<f64>,
    pub x: Option<Vec<f64>>,
    pub z: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    /// Measurement noise level the observations carry.
    pub rho: f64,
}

impl Dataset {
    pub fn training_pairs(&self) -> Vec<(MaskOp, Vec<f64>)> {
        self.instances
            .iter()
            .map(|i| (i.mask.clone(), i.s.clone()))
            .collect()
    }
}

/// Builds a dataset of subsampled measurements: draw x, map through the
/// transform, draw a mask, subsample, add measurement noise at level rho.
pub fn generate_dataset(
    sample_image: &dyn Fn(&mut RngState) -> Vec<f64>,
    transform: &Transform,
    mask_dist: &crate::masks::MaskDistribution,
    count: usize,
    rho: f64,
    rng: &mut RngState,
) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Config("dataset needs at least one instance".into()));
    }
    if rho < 0.0 {
        return Err(Error::Config("rho must be nonnegative".into()));
    }
    let mut instances = Vec::with_capacity(count);
    for k in 0..count {
        let mut inst_rng = rng.split(k as u64);
        let x = sample_image(&mut inst_rng);
        let z = transform.forward(&x)?;
        let mask = mask_dist.sample(&mut inst_rng);
        if mask.ambient() != z.len() {
            return Err(Error::Shape(format!(
                "mask ambient dim {} vs measurement {}",
                mask.ambient(),
                z.len()
            )));
        }
        let mut s = mask.apply(&z)?;
        if rho > 0.0 {
            let noise = inst_rng.gaussian_vec(s.len());
            for (si, &g) in s.iter_mut().zip(&noise) {
                *si += rho * g;
            }
        }
        instances.push(Instance { mask, s, x: Some(x), z: Some(z) });
    }
    Ok(Dataset { instances, rho })
}
