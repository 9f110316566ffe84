//! Versioned JSON model artifacts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    generate_gravity, generate_net, generate_radiation, FeatureSpace, FeedForwardNet, GravityParams, ModelError,
    ModelKind, NeuralModel,
};
use crate::geodata::{FlowMatrix, Tessellation};

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

/// A model ready to generate flows.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Gravity(GravityParams),
    Radiation,
    Neural(NeuralModel),
}

impl FittedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            FittedModel::Gravity(_) => ModelKind::Gravity,
            FittedModel::Radiation => ModelKind::Radiation,
            FittedModel::Neural(m) => m.kind,
        }
    }

    pub fn generate(&self, tess: &Tessellation, outflows: &[f64]) -> Result<FlowMatrix, ModelError> {
        match self {
            FittedModel::Gravity(p) => generate_gravity(p, tess, outflows),
            FittedModel::Radiation => generate_radiation(tess, outflows),
            FittedModel::Neural(m) => generate_net(m, tess, outflows),
        }
    }

    pub fn to_artifact(&self) -> ModelArtifact {
        let mut a = ModelArtifact {
            format_version: ARTIFACT_FORMAT_VERSION,
            kind: self.kind(),
            seed: None,
            config_hash: None,
            gravity: None,
            network: None,
            standardization: None,
        };
        match self {
            FittedModel::Gravity(p) => a.gravity = Some(*p),
            FittedModel::Radiation => {}
            FittedModel::Neural(m) => {
                a.seed = Some(m.net.seed);
                a.network = Some(m.net.clone());
                a.standardization = Some(m.space.standardizer.clone());
            }
        }
        a
    }

    pub fn to_json(&self) -> String {
        self.to_artifact().to_json()
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let artifact: ModelArtifact =
            serde_json::from_str(text).map_err(|e| ModelError::InvalidArtifact(e.to_string()))?;
        artifact.into_model()
    }

    pub fn load(path: &Path) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| crate::Error::Io {
            context: format!("reading {}", path.display()),
            source,
        })?;
        Ok(Self::from_json(&text)?)
    }

    pub fn save(&self, path: &Path) -> crate::Result<()> {
        crate::util::write_atomic(path, self.to_json().as_bytes())
    }
}

/// On-disk form. Neural weights are stored row-major per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Hash of the run configuration that produced the artifact.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gravity: Option<GravityParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<FeedForwardNet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<super::Standardizer>,
}

impl ModelArtifact {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("artifact serializes");
        s.push('\n');
        s
    }

    pub fn into_model(self) -> Result<FittedModel, ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidArtifact(m.to_string()));
        if self.format_version != ARTIFACT_FORMAT_VERSION {
            return Err(ModelError::InvalidArtifact(format!(
                "format version {} (supported: {ARTIFACT_FORMAT_VERSION})",
                self.format_version
            )));
        }
        match self.kind {
            ModelKind::Gravity => match self.gravity {
                Some(p) => {
                    p.validate()?;
                    Ok(FittedModel::Gravity(p))
                }
                None => bad("gravity artifact without parameters"),
            },
            ModelKind::Radiation => Ok(FittedModel::Radiation),
            kind => {
                let (Some(net), Some(standardizer)) = (self.network, self.standardization) else {
                    return bad("neural artifact without network or standardization");
                };
                net.validate()?;
                if standardizer.mean.len() != net.input_dim() || standardizer.std.len() != net.input_dim() {
                    return bad("standardization length does not match network input");
                }
                if standardizer.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return bad("standardization has non-positive scale");
                }
                Ok(FittedModel::Neural(NeuralModel {
                    kind,
                    space: FeatureSpace { kind, standardizer },
                    net,
                }))
            }
        }
    }
}
