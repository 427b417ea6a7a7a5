//! Two-sample energy-distance permutation test, used for distribution
//! equivalence checks between sampler variants.

use crate::error::{Error, Result};
use crate::numerics::rng::RngState;
use crate::theory_eval::kl::SampleSet;

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn energy_stat(dist: &[f64], total: usize, labels: &[bool]) -> f64 {
    // labels[i] = true for group A
    let (mut s_ab, mut s_aa, mut s_bb) = (0.0, 0.0, 0.0);
    let (mut n_a, mut n_b) = (0usize, 0usize);
    for i in 0..total {
        if labels[i] {
            n_a += 1;
        } else {
            n_b += 1;
        }
    }
    for i in 0..total {
        for j in (i + 1)..total {
            let d = dist[i * total + j];
            match (labels[i], labels[j]) {
                (true, true) => s_aa += d,
                (false, false) => s_bb += d,
                _ => s_ab += d,
            }
        }
    }
    let (na, nb) = (n_a as f64, n_b as f64);
    2.0 * s_ab / (na * nb) - 2.0 * s_aa / (na * na) - 2.0 * s_bb / (nb * nb)
}

/// Returns (statistic, p-value). The null hypothesis is that both sets come
/// from the same distribution; "passing at alpha" means p >= alpha.
pub fn energy_distance_test(
    a: &SampleSet,
    b: &SampleSet,
    permutations: usize,
    rng: &mut RngState,
) -> Result<(f64, f64)> {
    if a.dim() != b.dim() {
        return Err(Error::Shape("sample dims differ".into()));
    }
    if permutations == 0 {
        return Err(Error::Config("need at least one permutation".into()));
    }
    let (n_a, n_b) = (a.count(), b.count());
    let total = n_a + n_b;
    let rows: Vec<&[f64]> = (0..n_a)
        .map(|i| a.row(i))
        .chain((0..n_b).map(|i| b.row(i)))
        .collect();
    let mut dist = vec![0.0; total * total];
    for i in 0..total {
        for j in (i + 1)..total {
            let d = euclid(rows[i], rows[j]);
            dist[i * total + j] = d;
            dist[j * total + i] = d;
        }
    }
    let mut labels: Vec<bool> = (0..total).map(|i| i < n_a).collect();
    let observed = energy_stat(&dist, total, &labels);
    let mut exceed = 0usize;
    for _ in 0..permutations {
        // Fisher-Yates shuffle of the labels
        for i in (1..total).rev() {
            let j = rng.index(i + 1);
            labels.swap(i, j);
        }
        if energy_stat(&dist, total, &labels) >= observed {
            exceed += 1;
        }
    }
    let p = (exceed + 1) as f64 / (permutations + 1) as f64;
    Ok((observed, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_set(n: usize, dim: usize, mean: f64, seed: u64) -> SampleSet {
        let mut rng = RngState::new(seed);
        let data: Vec<f64> = rng.gaussian_vec(n * dim).iter().map(|g| mean + g).collect();
        SampleSet::new(dim, data).unwrap()
    }

    #[test]
    fn same_distribution_passes() {
        let a = gaussian_set(150, 3, 0.0, 1);
        let b = gaussian_set(150, 3, 0.0, 2);
        let (_, p) = energy_distance_test(&a, &b, 200, &mut RngState::new(3)).unwrap();
        assert!(p >= 0.01, "p = {p}");
    }

    #[test]
    fn shifted_distribution_rejected() {
        let a = gaussian_set(150, 3, 0.0, 4);
        let b = gaussian_set(150, 3, 1.0, 5);
        let (_, p) = energy_distance_test(&a, &b, 200, &mut RngState::new(6)).unwrap();
        assert!(p < 0.01, "p = {p}");
    }
}
