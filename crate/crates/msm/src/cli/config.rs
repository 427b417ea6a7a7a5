//! JSON run configurations. Schemas are strict: unknown keys are rejected,
//! and every run writes a resolved copy (with the seed filled in) next to its
//! outputs so the run can be reproduced from that file alone.

use crate::diffusion::{NoiseSchedule, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN};
use crate::error::{Error, Result};
use crate::masks::{MaskDistribution, MaskOp};
use crate::training::LossMode;
use serde::{Deserialize, Serialize};

fn default_one() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_length_scale() -> f64 {
    2.0
}
fn default_field_var() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskSpec {
    PatchBox {
        height: usize,
        width: usize,
        #[serde(default = "default_one")]
        channels: usize,
        box_h: usize,
        box_w: usize,
        keep_fraction: f64,
    },
    KspaceLines {
        height: usize,
        lines: usize,
        coils: usize,
        accel: usize,
        autocal: usize,
        #[serde(default = "default_true")]
        autocal_in_budget: bool,
    },
    UniformCoords {
        n: usize,
        keep_prob: f64,
    },
    /// Explicit finite family given as mask strings `n=..;m=..;idx=..`,
    /// equally likely.
    FiniteSet {
        masks: Vec<String>,
    },
}

impl MaskSpec {
    pub fn to_dist(&self) -> Result<MaskDistribution> {
        let dist = match self {
            MaskSpec::PatchBox { height, width, channels, box_h, box_w, keep_fraction } => {
                MaskDistribution::PatchBox {
                    height: *height,
                    width: *width,
                    channels: *channels,
                    box_h: *box_h,
                    box_w: *box_w,
                    keep_fraction: *keep_fraction,
                }
            }
            MaskSpec::KspaceLines { height, lines, coils, accel, autocal, autocal_in_budget } => {
                MaskDistribution::KspaceLines {
                    height: *height,
                    lines: *lines,
                    coils: *coils,
                    accel: *accel,
                    autocal: *autocal,
                    autocal_in_budget: *autocal_in_budget,
                }
            }
            MaskSpec::UniformCoords { n, keep_prob } => {
                MaskDistribution::UniformCoords { n: *n, keep_prob: *keep_prob }
            }
            MaskSpec::FiniteSet { masks } => {
                let parsed: Result<Vec<MaskOp>> =
                    masks.iter().map(|s| MaskOp::from_ascii(s)).collect();
                MaskDistribution::uniform_family(parsed?)?
            }
        };
        dist.validate()?;
        Ok(dist)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub steps: usize,
    #[serde(default = "default_beta_min")]
    pub beta_min: f64,
    #[serde(default = "default_beta_max")]
    pub beta_max: f64,
}

fn default_beta_min() -> f64 {
    DEFAULT_BETA_MIN
}
fn default_beta_max() -> f64 {
    DEFAULT_BETA_MAX
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_min, self.beta_max)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    GaussianField,
    Phantom,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Identity,
    FourierCoils,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InverseKind {
    /// Hide a box of pixels; H keeps everything else.
    BoxInpaint { top: usize, left: usize, box_h: usize, box_w: usize },
    /// Block-average downsampling.
    DownsampleBlur { factor: usize },
    /// Keep a drawn set of k-space lines.
    KspaceSubsample {
        accel: usize,
        autocal: usize,
        #[serde(default = "default_true")]
        autocal_in_budget: bool,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseSpec {
    #[serde(flatten)]
    pub kind: InverseKind,
    /// Observation noise standard deviation.
    pub eta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub kind: DataKind,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_length_scale")]
    pub length_scale: f64,
    #[serde(default = "default_field_var")]
    pub field_var: f64,
    pub transform: TransformKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coils: Option<usize>,
    pub mask: MaskSpec,
    /// Measurement noise level.
    #[serde(default)]
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse_problem: Option<InverseSpec>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum LossModeSpec {
    CleanSubsampled,
    NoisyCaseSplit,
}

impl From<LossModeSpec> for LossMode {
    fn from(m: LossModeSpec) -> Self {
        match m {
            LossModeSpec::CleanSubsampled => LossMode::CleanSubsampled,
            LossModeSpec::NoisyCaseSplit => LossMode::NoisyCaseSplit,
        }
    }
}

fn default_sure_probes() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Path to a dataset manifest produced by gen-data.
    pub dataset: String,
    pub mode: LossModeSpec,
    /// Defaults to the dataset's recorded rho.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    pub batch: usize,
    pub iters: usize,
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
    /// Defaults to 1 / sigma_max of the schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_feature_scale: Option<f64>,
    pub schedule: ScheduleSpec,
    #[serde(default = "default_sure_probes")]
    pub sure_probes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ema_decay: Option<f64>,
    /// Resume from an existing checkpoint, continuing the iteration counter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum InitSpec {
    SigmaScaled,
    Unit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub checkpoint: String,
    pub mask: MaskSpec,
    pub w: usize,
    pub schedule: ScheduleSpec,
    pub chains: usize,
    #[serde(default = "default_init")]
    pub init: InitSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
    /// Image dims for PGM previews of identity-transform measurements.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preview_dims: Option<[usize; 2]>,
}

fn default_init() -> InitSpec {
    InitSpec::SigmaScaled
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceModeSpec {
    General,
    PerMaskMri,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub checkpoint: String,
    /// Path to a measurement manifest produced by gen-data.
    pub measurements: String,
    pub mode: GuidanceModeSpec,
    pub gamma: f64,
    pub mask: MaskSpec,
    pub w: usize,
    pub schedule: ScheduleSpec,
    /// Reconstruct only the first k instances when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum KlEstimatorSpec {
    GaussianFit,
    Knn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlStudyConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Ambient dimension of the Gaussian oracle toy.
    pub n: usize,
    /// Diagonal covariance entries; a single value is broadcast.
    pub cov_diag: Vec<f64>,
    #[serde(default)]
    pub mean: f64,
    pub mask: MaskSpec,
    pub w_list: Vec<usize>,
    pub chains: usize,
    pub schedule: ScheduleSpec,
    pub estimator: KlEstimatorSpec,
    #[serde(default = "default_z_probes")]
    pub variance_z_probes: usize,
    #[serde(default = "default_mc_draws")]
    pub variance_mc_draws: usize,
}

fn default_z_probes() -> usize {
    8
}
fn default_mc_draws() -> usize {
    2_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// A reconstruct run directory whose metrics are recomputed from the
    /// stored tensor pairs.
    pub run_dir: String,
}

pub fn parse_config<T: for<'de> Deserialize<'de>>(text: &str, origin: &str) -> Result<T> {
    serde_json::from_str(text)
        .map_err(|e| Error::Config(format!("config {origin} failed validation: {e}")))
}
