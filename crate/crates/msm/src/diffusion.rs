//! Noise schedule, forward noising, score/denoiser conversion, and the
//! generic random-walk update.
//!
//! The corruption is variance-exploding: s_t = s + sigma_t * n, with sigma_t
//! the square root of the accumulated per-step variance of a linear schedule
//! (1e-4 rising to 0.2 at the final step by default).

use crate::error::{Error, Result};
use crate::numerics::io::fnv64_hex;
use crate::numerics::rng::RngState;

pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear per-step variance from `beta_min` to `beta_max` over `steps`
    /// steps; sigma_t = sqrt(sum_{s<=t} beta_s), strictly increasing with
    /// sigma_1 > 0.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if !(beta_min > 0.0 && beta_max >= beta_min) {
            return Err(Error::Config(format!(
                "need 0 < beta_min <= beta_max, got {beta_min}, {beta_max}"
            )));
        }
        let beta: Vec<f64> = if steps == 1 {
            vec![beta_max]
        } else {
            (0..steps)
                .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        let mut sigma = Vec::with_capacity(steps);
        let mut acc = 0.0;
        for &b in &beta {
            acc += b;
            sigma.push(acc.sqrt());
        }
        Ok(NoiseSchedule { beta, sigma })
    }

    pub fn default_linear(steps: usize) -> Result<Self> {
        Self::linear(steps, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX)
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// sigma_t for t in 1..=T.
    pub fn sigma(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.sigma.len(), "t={t} outside 1..=T");
        self.sigma[t - 1]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    pub fn sigma_max(&self) -> f64 {
        *self.sigma.last().expect("non-empty schedule")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,sigma\n");
        for (i, s) in self.sigma.iter().enumerate() {
            out.push_str(&format!("{},{:.17e}\n", i + 1, s));
        }
        out
    }

    pub fn content_hash(&self) -> String {
        fnv64_hex(self.to_csv().as_bytes())
    }
}

/// Step sizes and temperatures for the random-walk update.
#[derive(Debug, Clone)]
pub struct WalkParams {
    pub tau: Vec<f64>,
    pub temp: Vec<f64>,
}

impl WalkParams {
    /// tau_t = sigma_t^2 * step_scale, temperature 1.
    pub fn from_schedule(schedule: &NoiseSchedule, step_scale: f64) -> Result<Self> {
        if step_scale <= 0.0 {
            return Err(Error::Config("step_scale must be positive".into()));
        }
        Ok(WalkParams {
            tau: schedule.sigmas().iter().map(|s| s * s * step_scale).collect(),
            temp: vec![1.0; schedule.len()],
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau.len() != self.temp.len() {
            return Err(Error::Config("tau and temp lengths differ".into()));
        }
        if self.tau.iter().any(|&t| t <= 0.0) || self.temp.iter().any(|&t| t <= 0.0) {
            return Err(Error::Config("tau and temp must be positive".into()));
        }
        Ok(())
    }
}

/// s_t = s + sigma * n with a fresh standard Gaussian n.
pub fn add_noise(s: &[f64], sigma: f64, rng: &mut RngState) -> Vec<f64> {
    assert!(sigma >= 0.0, "sigma must be nonnegative");
    if sigma == 0.0 {
        return s.to_vec();
    }
    let noise = rng.gaussian_vec(s.len());
    s.iter().zip(&noise).map(|(&x, &n)| x + sigma * n).collect()
}

/// score = (s_hat - s_t) / sigma^2.
pub fn tweedie_score(s_hat: &[f64], s_t: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if s_hat.len() != s_t.len() {
        return Err(Error::Shape(format!(
            "tweedie_score: lengths {} vs {}",
            s_hat.len(),
            s_t.len()
        )));
    }
    if sigma == 0.0 {
        return Err(Error::DegenerateNoise(
            "tweedie_score undefined at sigma = 0".into(),
        ));
    }
    let inv = 1.0 / (sigma * sigma);
    Ok(s_hat.iter().zip(s_t).map(|(&h, &t)| (h - t) * inv).collect())
}

/// The inverse relation: s_hat = s_t + sigma^2 * score.
pub fn denoise_from_score(s_t: &[f64], score: &[f64], sigma: f64) -> Vec<f64> {
    debug_assert_eq!(s_t.len(), score.len());
    let s2 = sigma * sigma;
    s_t.iter().zip(score).map(|(&t, &g)| t + s2 * g).collect()
}

/// z_{t-1} = z_t + tau * score + sqrt(2 tau temp) * n.
pub fn walk_step(
    z_t: &[f64],
    score: &[f64],
    tau: f64,
    temp: f64,
    rng: &mut RngState,
) -> Result<Vec<f64>> {
    if z_t.len() != score.len() {
        return Err(Error::Shape(format!(
            "walk_step: lengths {} vs {}",
            z_t.len(),
            score.len()
        )));
    }
    if tau <= 0.0 || temp <= 0.0 {
        return Err(Error::Config("tau and temp must be positive".into()));
    }
    let amp = (2.0 * tau * temp).sqrt();
    let noise = rng.gaussian_vec(z_t.len());
    Ok(z_t
        .iter()
        .zip(score)
        .zip(&noise)
        .map(|((&z, &g), &n)| z + tau * g + amp * n)
        .collect())
}
