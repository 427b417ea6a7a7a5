//! KL divergence estimation between sample sets.
//!
//! `GaussianFit` fits mean and ridge-regularized covariance to each set and
//! returns the closed-form Gaussian KL; it is the right estimator when the
//! verification target is itself Gaussian. `Knn` is a k-nearest-neighbor
//! estimate for non-Gaussian toys.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector};

pub const COVARIANCE_RIDGE: f64 = 1e-6;
const KNN_K: usize = 5;
const MAX_DIM: usize = 64;
const MIN_GAUSSIAN_SAMPLES: usize = 500;

/// Row-major sample matrix: `count` rows of dimension `dim`.
#[derive(Debug, Clone)]
pub struct SampleSet {
    dim: usize,
    data: Vec<f64>,
}

impl SampleSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "sample data of length {} is not a multiple of dim {dim}",
                data.len()
            )));
        }
        Ok(SampleSet { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("ragged sample rows".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Splits into two halves (first/second) for estimator-floor probes.
    pub fn split_half(&self) -> (SampleSet, SampleSet) {
        let half = self.count() / 2;
        let cut = half * self.dim;
        (
            SampleSet { dim: self.dim, data: self.data[..cut].to_vec() },
            SampleSet { dim: self.dim, data: self.data[cut..].to_vec() },
        )
    }

    fn fit_gaussian(&self) -> (DVector<f64>, DMatrix<f64>) {
        let (n, d) = (self.count(), self.dim);
        let mut mean = DVector::zeros(d);
        for i in 0..n {
            for (j, &v) in self.row(i).iter().enumerate() {
                mean[j] += v;
            }
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..n {
            let r = self.row(i);
            for a in 0..d {
                let da = r[a] - mean[a];
                for b in a..d {
                    cov[(a, b)] += da * (r[b] - mean[b]);
                }
            }
        }
        let denom = (n.max(2) - 1) as f64;
        for a in 0..d {
            for b in a..d {
                let v = cov[(a, b)] / denom;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
            cov[(a, a)] += COVARIANCE_RIDGE;
        }
        (mean, cov)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlEstimator {
    GaussianFit,
    Knn,
}

/// Closed-form KL( N(mu_a, cov_a) || N(mu_b, cov_b) ).
fn gaussian_kl(
    mu_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mu_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64> {
    let d = mu_a.len();
    let chol_b = Cholesky::new(cov_b.clone())
        .ok_or_else(|| Error::Numerical("covariance B singular after ridge".into()))?;
    let chol_a = Cholesky::new(cov_a.clone())
        .ok_or_else(|| Error::Numerical("covariance A singular after ridge".into()))?;
    let logdet = |c: &Cholesky<f64, nalgebra::Dyn>| -> f64 {
        (0..d).map(|i| c.l()[(i, i)].ln()).sum::<f64>() * 2.0
    };
    let trace = chol_b.solve(cov_a).trace();
    let diff = mu_b - mu_a;
    let maha = diff.dot(&chol_b.solve(&diff.clone().into()));
    Ok(0.5 * (trace + maha - d as f64 + logdet(&chol_b) - logdet(&chol_a)))
}

fn knn_kl(a: &SampleSet, b: &SampleSet) -> Result<f64> {
    let (n, m, d) = (a.count(), b.count(), a.dim());
    if n <= KNN_K || m < KNN_K {
        return Err(Error::Config(format!(
            "knn estimator needs more than k={KNN_K} samples per set"
        )));
    }
    let dist2 = |x: &[f64], y: &[f64]| -> f64 {
        x.iter().zip(y).map(|(&p, &q)| (p - q) * (p - q)).sum()
    };
    // distance to the k-th nearest neighbor, brute force at desk scale
    let kth = |dists: &mut Vec<f64>, k: usize| -> f64 {
        dists.select_nth_unstable_by(k - 1, |x, y| x.partial_cmp(y).expect("finite"));
        dists[k - 1].sqrt().max(1e-300)
    };
    let mut acc = 0.0;
    for i in 0..n {
        let xi = a.row(i);
        let mut da: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist2(xi, a.row(j))).collect();
        let mut db: Vec<f64> = (0..m).map(|j| dist2(xi, b.row(j))).collect();
        let rho = kth(&mut da, KNN_K);
        let nu = kth(&mut db, KNN_K);
        acc += (nu / rho).ln();
    }
    Ok((d as f64 / n as f64) * acc + (m as f64 / (n as f64 - 1.0)).ln())
}

/// KL(A || B) between two sample sets.
pub fn kl_between_sample_sets(a: &SampleSet, b: &SampleSet, est: KlEstimator) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "sample dims {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    if a.dim() > MAX_DIM {
        return Err(Error::Config(format!(
            "KL estimation supports dims up to {MAX_DIM}, got {}",
            a.dim()
        )));
    }
    match est {
        KlEstimator::GaussianFit => {
            if a.count() < MIN_GAUSSIAN_SAMPLES || b.count() < MIN_GAUSSIAN_SAMPLES {
                return Err(Error::Config(format!(
                    "gaussian_fit needs >= {MIN_GAUSSIAN_SAMPLES} samples per set, got {} and {}",
                    a.count(),
                    b.count()
                )));
            }
            let (mu_a, cov_a) = a.fit_gaussian();
            let (mu_b, cov_b) = b.fit_gaussian();
            gaussian_kl(&mu_a, &cov_a, &mu_b, &cov_b)
        }
        KlEstimator::Knn => knn_kl(a, b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::RngState;

    fn gaussian_set(n: usize, dim: usize, mean: f64, std: f64, seed: u64) -> SampleSet {
        let mut rng = RngState::new(seed);
        let data: Vec<f64> = rng
            .gaussian_vec(n * dim)
            .into_iter()
            .map(|g| mean + std * g)
            .collect();
        SampleSet::new(dim, data).unwrap()
    }

    #[test]
    fn identical_sets_give_zero() {
        let a = gaussian_set(600, 3, 0.0, 1.0, 1);
        let kl = kl_between_sample_sets(&a, &a, KlEstimator::GaussianFit).unwrap();
        assert!(kl.abs() < 1e-10, "kl {kl}");
    }

    #[test]
    fn mean_shift_matches_closed_form() {
        // KL(N(0,1) || N(1,1)) = 0.5
        let a = gaussian_set(10_000, 1, 0.0, 1.0, 2);
        let b = gaussian_set(10_000, 1, 1.0, 1.0, 3);
        let kl = kl_between_sample_sets(&a, &b, KlEstimator::GaussianFit).unwrap();
        assert!((kl - 0.5).abs() < 0.05, "kl {kl}");
    }

    #[test]
    fn variance_ratio_matches_closed_form() {
        // KL(N(0,1) || N(0,4)) = ln 2 + 1/8 - 1/2
        let a = gaussian_set(10_000, 1, 0.0, 1.0, 4);
        let b = gaussian_set(10_000, 1, 0.0, 2.0, 5);
        let expect = 2.0f64.ln() + 0.125 - 0.5;
        let kl = kl_between_sample_sets(&a, &b, KlEstimator::GaussianFit).unwrap();
        assert!((kl - expect).abs() < 0.05, "kl {kl}, want {expect}");
    }

    #[test]
    fn knn_estimator_in_the_right_neighborhood() {
        let a = gaussian_set(2_000, 1, 0.0, 1.0, 6);
        let b = gaussian_set(2_000, 1, 1.0, 1.0, 7);
        let kl = kl_between_sample_sets(&a, &b, KlEstimator::Knn).unwrap();
        assert!((kl - 0.5).abs() < 0.12, "knn kl {kl}");
    }

    #[test]
    fn too_few_samples_rejected_for_gaussian_fit() {
        let a = gaussian_set(100, 2, 0.0, 1.0, 8);
        let err = kl_between_sample_sets(&a, &a, KlEstimator::GaussianFit);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn dimension_cap_enforced() {
        let a = gaussian_set(600, 65, 0.0, 1.0, 9);
        let err = kl_between_sample_sets(&a, &a, KlEstimator::GaussianFit);
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
