//! Noise-conditioned denoisers: the analytic Gaussian MMSE oracle used for
//! verification and a small trainable network with exact reverse-mode
//! gradients.

mod mlp;
mod optim;
mod oracle;

pub use mlp::{CheckpointMeta, MlpCache, MlpConfig, MlpDenoiser};
pub use optim::{AdamW, Ema};
pub use oracle::GaussianOracle;

use crate::error::Result;
use crate::masks::MaskOp;

/// A map (masked noisy measurement, sigma) -> denoised estimate on the same
/// mask. Implementations must be pure in their inputs and safe to evaluate
/// concurrently.
pub trait Denoiser: Sync {
    /// Real dimension of the full measurement domain.
    fn ambient_dim(&self) -> usize;

    /// Returns the denoised estimate of the subsampled measurement, length
    /// `mask.len()`.
    fn denoise_masked(&self, mask: &MaskOp, s_t: &[f64], sigma: f64) -> Result<Vec<f64>>;
}
