//! Closed-form Gaussian MMSE denoiser.
//!
//! For a prior z ~ N(mu, Sigma) and a masked observation s_t = S z + sigma n,
//! the posterior mean is mu_S + Sigma_S (Sigma_S + sigma^2 I)^{-1} (s_t - mu_S)
//! with mu_S = S mu and Sigma_S = S Sigma S^T. Its Tweedie score is the exact
//! score of N(mu_S, Sigma_S + sigma^2 I), which makes this the reference
//! implementation for every score-accuracy check.

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::masks::MaskOp;
use crate::numerics::rng::RngState;
use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct GaussianOracle {
    mean: Vec<f64>,
    cov: DMatrix<f64>,
    chol: Option<Cholesky<f64, nalgebra::Dyn>>,
}

impl GaussianOracle {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Shape(format!(
                "covariance is {}x{}, mean has {n} entries",
                cov.nrows(),
                cov.ncols()
            )));
        }
        for i in 0..n {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-9 {
                    return Err(Error::Numerical(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let eigs = cov.clone().symmetric_eigenvalues();
        if eigs.iter().any(|&e| e < -1e-9) {
            return Err(Error::Numerical(format!(
                "covariance has negative eigenvalue {}",
                eigs.iter().cloned().fold(f64::INFINITY, f64::min)
            )));
        }
        let chol = Cholesky::new(cov.clone());
        Ok(GaussianOracle { mean, cov, chol })
    }

    pub fn isotropic(n: usize, var: f64) -> Result<Self> {
        Self::new(vec![0.0; n], DMatrix::identity(n, n) * var)
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut cov = DMatrix::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            cov[(i, i)] = d;
        }
        Self::new(vec![0.0; n], cov)
    }

    pub fn with_mean(mut self, mean: Vec<f64>) -> Result<Self> {
        if mean.len() != self.mean.len() {
            return Err(Error::Shape("mean length mismatch".into()));
        }
        self.mean = mean;
        Ok(self)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    fn masked_moments(&self, mask: &MaskOp) -> (DVector<f64>, DMatrix<f64>) {
        let idx = mask.indices();
        let m = idx.len();
        let mu = DVector::from_iterator(m, idx.iter().map(|&i| self.mean[i]));
        let mut cov = DMatrix::zeros(m, m);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                cov[(a, b)] = self.cov[(i, j)];
            }
        }
        (mu, cov)
    }

    fn solve_noisy(
        &self,
        mask: &MaskOp,
        s_t: &[f64],
        sigma: f64,
    ) -> Result<(DVector<f64>, DVector<f64>, DMatrix<f64>)> {
        if s_t.len() != mask.len() {
            return Err(Error::Shape(format!(
                "measurement has {} entries, mask selects {}",
                s_t.len(),
                mask.len()
            )));
        }
        if sigma <= 0.0 {
            return Err(Error::DegenerateNoise(
                "oracle denoise requires sigma > 0".into(),
            ));
        }
        let (mu, cov_s) = self.masked_moments(mask);
        let m = mask.len();
        let mut noisy = cov_s.clone();
        for i in 0..m {
            noisy[(i, i)] += sigma * sigma;
        }
        let chol = Cholesky::new(noisy).ok_or_else(|| {
            Error::Numerical("masked covariance + sigma^2 I not positive definite".into())
        })?;
        let resid = DVector::from_iterator(m, s_t.iter().zip(mu.iter()).map(|(&s, &u)| s - u));
        let solved = chol.solve(&resid);
        Ok((mu, solved, cov_s))
    }

    /// Posterior mean E[s | s_t] = mu_S + Sigma_S (Sigma_S + sigma^2 I)^{-1} (s_t - mu_S).
    pub fn denoise(&self, mask: &MaskOp, s_t: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let (mu, solved, cov_s) = self.solve_noisy(mask, s_t, sigma)?;
        let out = &mu + &cov_s * &solved;
        Ok(out.iter().cloned().collect())
    }

    /// The exact masked score: grad log N(mu_S, Sigma_S + sigma^2 I) at s_t,
    /// which equals -(Sigma_S + sigma^2 I)^{-1} (s_t - mu_S).
    pub fn masked_score(&self, mask: &MaskOp, s_t: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let (_, solved, _) = self.solve_noisy(mask, s_t, sigma)?;
        Ok(solved.iter().map(|&x| -x).collect())
    }

    /// Draws from the prior N(mu, Sigma). Requires a positive definite
    /// covariance.
    pub fn sample(&self, rng: &mut RngState) -> Result<Vec<f64>> {
        let chol = self
            .chol
            .as_ref()
            .ok_or_else(|| Error::Numerical("covariance not positive definite".into()))?;
        let n = self.mean.len();
        let g = DVector::from_vec(rng.gaussian_vec(n));
        let draw = chol.l() * g;
        Ok(self
            .mean
            .iter()
            .zip(draw.iter())
            .map(|(&m, &d)| m + d)
            .collect())
    }
}

impl Denoiser for GaussianOracle {
    fn ambient_dim(&self) -> usize {
        self.mean.len()
    }

    fn denoise_masked(&self, mask: &MaskOp, s_t: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.denoise(mask, s_t, sigma)
    }
}
