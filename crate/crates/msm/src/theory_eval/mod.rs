//! Empirical theory checks (score-estimator variance, KL bounds) and
//! reconstruction metrics.

pub mod energy;
pub mod kl;
pub mod metrics;
pub mod study;

pub use energy::energy_distance_test;
pub use kl::{kl_between_sample_sets, KlEstimator, SampleSet};
pub use metrics::{mse, psnr, ssim};
pub use study::{
    estimate_variance_bound, kl_study, KlRow, KlStudyConfig, KlStudyReport, VarianceEntry,
    VarianceProbeConfig, VarianceTable,
};
