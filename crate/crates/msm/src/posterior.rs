//! Conditional sampling for inverse problems.
//!
//! The general path adds a data-fidelity gradient to the aggregated estimate
//! once per step; the per-mask path projects the observation into each drawn
//! mask's partial space and applies the guidance to every partial estimate
//! before aggregation. Both are gradient steps on gamma * ||y - H z||^2 taken
//! directly at the estimate, so no differentiation through the denoiser is
//! needed.

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::masks::{MaskDistribution, MaskOp};
use crate::numerics::rng::RngState;
use crate::sampler::{run_chain, SampleHooks, SampleTrace, SamplerConfig};

/// Degradation operator H acting on the full measurement domain.
#[derive(Debug, Clone)]
pub enum ForwardOp {
    /// Keeps the listed coordinates (the complement is the hidden box).
    BoxInpaint { keep: MaskOp },
    /// Block-average downsampling by `factor` on an [h, w] image: box blur
    /// anchored per block followed by stride-`factor` decimation. The adjoint
    /// spreads each output equally over its block.
    DownsampleBlur { height: usize, width: usize, factor: usize },
    /// Keeps the listed k-space coordinates (whole lines across coils).
    KspaceSubsample { keep: MaskOp },
}

impl ForwardOp {
    pub fn validate(&self) -> Result<()> {
        match self {
            ForwardOp::BoxInpaint { .. } | ForwardOp::KspaceSubsample { .. } => Ok(()),
            ForwardOp::DownsampleBlur { height, width, factor } => {
                if *factor == 0 || height % factor != 0 || width % factor != 0 {
                    return Err(Error::Config(format!(
                        "factor {factor} must divide image {height}x{width}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            ForwardOp::BoxInpaint { keep } | ForwardOp::KspaceSubsample { keep } => keep.ambient(),
            ForwardOp::DownsampleBlur { height, width, .. } => height * width,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            ForwardOp::BoxInpaint { keep } | ForwardOp::KspaceSubsample { keep } => keep.len(),
            ForwardOp::DownsampleBlur { height, width, factor } => {
                (height / factor) * (width / factor)
            }
        }
    }

    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            ForwardOp::BoxInpaint { keep } | ForwardOp::KspaceSubsample { keep } => keep.apply(z),
            ForwardOp::DownsampleBlur { height, width, factor } => {
                if z.len() != height * width {
                    return Err(Error::Shape(format!(
                        "image must have {} entries, got {}",
                        height * width,
                        z.len()
                    )));
                }
                let (oh, ow) = (height / factor, width / factor);
                let norm = 1.0 / (factor * factor) as f64;
                let mut out = vec![0.0; oh * ow];
                for r in 0..*height {
                    for c in 0..*width {
                        out[(r / factor) * ow + (c / factor)] += z[r * width + c] * norm;
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        match self {
            ForwardOp::BoxInpaint { keep } | ForwardOp::KspaceSubsample { keep } => keep.adjoint(y),
            ForwardOp::DownsampleBlur { height, width, factor } => {
                let (oh, ow) = (height / factor, width / factor);
                if y.len() != oh * ow {
                    return Err(Error::Shape(format!(
                        "downsampled image must have {} entries, got {}",
                        oh * ow,
                        y.len()
                    )));
                }
                let norm = 1.0 / (factor * factor) as f64;
                let mut out = vec![0.0; height * width];
                for r in 0..*height {
                    for c in 0..*width {
                        out[r * width + c] = y[(r / factor) * ow + (c / factor)] * norm;
                    }
                }
                Ok(out)
            }
        }
    }

    /// diag(H^T H) for the 0/1-selection kinds; None for blurring operators.
    pub fn ht_h_diag(&self) -> Option<Vec<f64>> {
        match self {
            ForwardOp::BoxInpaint { keep } | ForwardOp::KspaceSubsample { keep } => {
                Some(keep.diag_sts())
            }
            ForwardOp::DownsampleBlur { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidanceMode {
    /// Data-fidelity step on the aggregated estimate.
    General,
    /// Per-mask data-fidelity step on each partial estimate.
    PerMaskMri,
}

#[derive(Debug, Clone)]
pub struct GuidanceConfig {
    /// Constant step size gamma_t.
    pub gamma: f64,
    pub mode: GuidanceMode,
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 {
            return Err(Error::Config("gamma must be nonnegative".into()));
        }
        Ok(())
    }
}

/// gamma * grad_z ||y - H z||^2 = gamma * 2 H^T (H z - y), evaluated at the
/// estimate directly.
pub fn likelihood_grad(y: &[f64], h: &ForwardOp, z_hat: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if y.len() != h.out_dim() || z_hat.len() != h.in_dim() {
        return Err(Error::Shape(format!(
            "likelihood_grad: y has {} (want {}), z has {} (want {})",
            y.len(),
            h.out_dim(),
            z_hat.len(),
            h.in_dim()
        )));
    }
    let residual: Vec<f64> = h
        .apply(z_hat)?
        .iter()
        .zip(y)
        .map(|(&hz, &yi)| hz - yi)
        .collect();
    let mut up = h.adjoint(&residual)?;
    for u in up.iter_mut() {
        *u *= 2.0 * gamma;
    }
    Ok(up)
}

struct GeneralGuidance<'a> {
    y: &'a [f64],
    h: &'a ForwardOp,
    gamma: f64,
}

impl SampleHooks for GeneralGuidance<'_> {
    fn adjust_aggregate(&self, z_hat: &mut [f64], _t: usize, _sigma: f64) -> Result<()> {
        let up = likelihood_grad(self.y, self.h, z_hat, self.gamma)?;
        for (z, u) in z_hat.iter_mut().zip(&up) {
            *z -= u;
        }
        Ok(())
    }
}

struct PerMaskGuidance<'a> {
    /// H^T y lifted to the full measurement domain.
    ht_y: Vec<f64>,
    /// diag(H^T H) on the full measurement domain.
    hth: Vec<f64>,
    gamma: f64,
    _marker: std::marker::PhantomData<&'a ()>,
}

impl SampleHooks for PerMaskGuidance<'_> {
    fn adjust_partial(&self, mask: &MaskOp, s_hat: &mut [f64], _sigma: f64) -> Result<()> {
        // y_i = S H^T y and the restricted degradation diag h = S diag(H^T H);
        // the update is gamma * 2 * h (h s_hat - y_i), all diagonal.
        let y_i = mask.apply(&self.ht_y)?;
        let h_i = mask.apply(&self.hth)?;
        for ((s, &yi), &hi) in s_hat.iter_mut().zip(&y_i).zip(&h_i) {
            *s -= self.gamma * 2.0 * hi * (hi * *s - yi);
        }
        Ok(())
    }
}

/// Conditional sampling with the guidance step applied to the aggregated
/// estimate right before each renoising.
pub fn reconstruct_general(
    d: &dyn Denoiser,
    dist: &MaskDistribution,
    y: &[f64],
    h: &ForwardOp,
    cfg: &SamplerConfig,
    guidance: &GuidanceConfig,
    rng: &mut RngState,
) -> Result<(Vec<f64>, SampleTrace)> {
    h.validate()?;
    guidance.validate()?;
    if h.in_dim() != d.ambient_dim() {
        return Err(Error::Shape(format!(
            "forward operator domain {} vs denoiser {}",
            h.in_dim(),
            d.ambient_dim()
        )));
    }
    let hooks = GeneralGuidance { y, h, gamma: guidance.gamma };
    let (z, trace) = run_chain(d, dist, cfg, &hooks, rng, true)?;
    Ok((z, trace.expect("trace requested")))
}

/// Conditional sampling for k-space subsampling: each partial estimate gets
/// its own projected guidance step inside the stochastic loop.
pub fn reconstruct_per_mask_mri(
    d: &dyn Denoiser,
    dist: &MaskDistribution,
    y: &[f64],
    h: &ForwardOp,
    cfg: &SamplerConfig,
    guidance: &GuidanceConfig,
    rng: &mut RngState,
) -> Result<(Vec<f64>, SampleTrace)> {
    h.validate()?;
    guidance.validate()?;
    if !matches!(h, ForwardOp::KspaceSubsample { .. }) {
        return Err(Error::Config(
            "per-mask guidance requires a k-space subsampling operator".into(),
        ));
    }
    if !matches!(dist, MaskDistribution::KspaceLines { .. } | MaskDistribution::FiniteSet { .. }) {
        return Err(Error::Config(
            "per-mask guidance requires a k-space line mask distribution".into(),
        ));
    }
    if h.in_dim() != d.ambient_dim() {
        return Err(Error::Shape(format!(
            "forward operator domain {} vs denoiser {}",
            h.in_dim(),
            d.ambient_dim()
        )));
    }
    if y.len() != h.out_dim() {
        return Err(Error::Shape("observation length mismatch".into()));
    }
    let hooks = PerMaskGuidance {
        ht_y: h.adjoint(y)?,
        hth: h.ht_h_diag().expect("selection operator"),
        gamma: guidance.gamma,
        _marker: std::marker::PhantomData,
    };
    let (z, trace) = run_chain(d, dist, cfg, &hooks, rng, true)?;
    Ok((z, trace.expect("trace requested")))
}
