//! On-disk format for trained and calibrated models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{IdmParams, LoessModel, NnaModel, RnnModel};
use crate::ddpg::ActorModel;
use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};
use crate::kinematics::{CarFollowingModel, ReplayModel};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// The model itself, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelKind {
    Idm(IdmParams),
    Loess(LoessModel),
    Nna(NnaModel),
    Rnn(RnnModel),
    Ddpg(ActorModel),
    /// Replays each period's recorded accelerations.
    Replay,
}

impl ModelKind {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelKind::Idm(_) => "idm",
            ModelKind::Loess(_) => "loess",
            ModelKind::Nna(_) => "nna",
            ModelKind::Rnn(_) => "rnn",
            ModelKind::Ddpg(_) => "ddpg",
            ModelKind::Replay => "replay",
        }
    }

    pub fn as_model(&self) -> &dyn CarFollowingModel {
        match self {
            ModelKind::Idm(m) => m,
            ModelKind::Loess(m) => m,
            ModelKind::Nna(m) => m,
            ModelKind::Rnn(m) => m,
            ModelKind::Ddpg(m) => m,
            ModelKind::Replay => &ReplayModel,
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            ModelKind::Idm(p) if !p.is_valid() => Err(Error::InvalidConfig(
                "IDM parameters must be positive".into(),
            )),
            ModelKind::Nna(m) => m.check(),
            ModelKind::Ddpg(m) => m.check(),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    /// Display name used in reports, e.g. `ddpgvrt`.
    pub name: String,
    /// Driver whose calibration split the model was fitted on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver_id: Option<String>,
    /// Seed of the calibration/validation split used for fitting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    pub model: ModelKind,
}

impl ModelFile {
    pub fn new(
        name: impl Into<String>,
        driver_id: Option<String>,
        split_seed: Option<u64>,
        model: ModelKind,
    ) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            name: name.into(),
            driver_id,
            split_seed,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Loads a model file. A bare JSON object with the six IDM parameter
    /// fields is accepted as an IDM model named `idm`.
    pub fn load(path: &Path) -> Result<Self> {
        let value: serde_json::Value = read_json(path)?;
        let file = if value.get("format_version").is_some() {
            let f: ModelFile = serde_json::from_value(value).map_err(|e| Error::format(path, e))?;
            if f.format_version != MODEL_FORMAT_VERSION {
                return Err(Error::format(
                    path,
                    format!("unsupported model format version {}", f.format_version),
                ));
            }
            f
        } else {
            let p: IdmParams = serde_json::from_value(value).map_err(|e| Error::format(path, e))?;
            ModelFile::new("idm", None, None, ModelKind::Idm(p))
        };
        file.model.check().map_err(|e| Error::format(path, e))?;
        Ok(file)
    }
}
