//! Dataset and measurement manifests: the structured-text index that ties a
//! generated dataset's tensor files, masks, and forward operators together.
//! All paths inside a manifest are relative to its directory.

use crate::cli::config::{DataKind, InverseKind, TransformKind};
use crate::data::{Dataset, Instance};
use crate::error::{Error, Result};
use crate::masks::MaskOp;
use crate::numerics::io::{read_tensor, write_tensor};
use crate::numerics::tensor::Tensor;
use crate::posterior::ForwardOp;
use crate::transforms::Transform;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestTransform {
    pub kind: TransformKind,
    pub height: usize,
    pub width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coil_files: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestInstance {
    pub x: String,
    pub z: String,
    pub s: String,
    pub mask: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementInstance {
    pub y: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_mask: Option<String>,
    pub x: String,
    pub z: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSection {
    pub eta: f64,
    pub operator: InverseKind,
    pub seed: u64,
    pub instances: Vec<MeasurementInstance>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub kind: DataKind,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub rho: f64,
    pub transform: ManifestTransform,
    pub instances: Vec<ManifestInstance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurements: Option<MeasurementSection>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::file(path, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::file(path, e.to_string()))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::file(path, format!("manifest failed validation: {e}")))
    }

    pub fn build_transform(&self, dir: &Path) -> Result<Transform> {
        match self.transform.kind {
            TransformKind::Identity => {
                Ok(Transform::identity(self.height * self.width))
            }
            TransformKind::FourierCoils => {
                let files = self
                    .transform
                    .coil_files
                    .as_ref()
                    .ok_or_else(|| Error::Config("manifest missing coil files".into()))?;
                let coils: Result<Vec<Tensor>> =
                    files.iter().map(|f| read_tensor(&dir.join(f))).collect();
                Transform::fourier_coils(self.transform.height, self.transform.width, coils?)
            }
        }
    }

    /// Loads the training view (masks + observed measurements).
    pub fn load_dataset(&self, dir: &Path) -> Result<Dataset> {
        let mut instances = Vec::with_capacity(self.instances.len());
        for mi in &self.instances {
            let mask = MaskOp::from_ascii(&mi.mask)?;
            let s = read_tensor(&dir.join(&mi.s))?.into_data();
            let x = read_tensor(&dir.join(&mi.x))?.into_data();
            let z = read_tensor(&dir.join(&mi.z))?.into_data();
            instances.push(Instance { mask, s, x: Some(x), z: Some(z) });
        }
        Ok(Dataset { instances, rho: self.rho })
    }

    /// Builds the forward operator for one measurement instance.
    pub fn build_forward_op(&self, mi: &MeasurementInstance) -> Result<ForwardOp> {
        let section = self
            .measurements
            .as_ref()
            .ok_or_else(|| Error::Config("manifest has no measurement section".into()))?;
        match &section.operator {
            InverseKind::BoxInpaint { .. } | InverseKind::KspaceSubsample { .. } => {
                let text = mi
                    .h_mask
                    .as_ref()
                    .ok_or_else(|| Error::Config("measurement instance missing h_mask".into()))?;
                let keep = MaskOp::from_ascii(text)?;
                Ok(match section.operator {
                    InverseKind::BoxInpaint { .. } => ForwardOp::BoxInpaint { keep },
                    _ => ForwardOp::KspaceSubsample { keep },
                })
            }
            InverseKind::DownsampleBlur { factor } => Ok(ForwardOp::DownsampleBlur {
                height: self.height,
                width: self.width,
                factor: *factor,
            }),
        }
    }
}

pub fn save_vec_tensor(path: &Path, shape: &[usize], data: &[f64], complex: bool) -> Result<()> {
    let t = Tensor::from_slice(shape, data)?;
    let t = if complex { t.into_complex()? } else { t };
    write_tensor(path, &t)
}
