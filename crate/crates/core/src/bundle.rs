//! Saved models: a `.vlfk` parameter checkpoint plus a JSON sidecar with the
//! same stem holding the model kind and its configuration.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{load_checkpoint, save_checkpoint, ParamSet};

#[derive(Serialize, Deserialize)]
struct Sidecar<C> {
    kind: String,
    config: C,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

pub fn save_model<C: Serialize>(
    path: &Path,
    kind: &str,
    config: &C,
    params: &ParamSet,
) -> Result<()> {
    save_checkpoint(params, path)?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&Sidecar {
        kind: kind.to_string(),
        config,
    })?;
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

/// Kind recorded in the sidecar of a saved model.
pub fn model_kind(path: &Path) -> Result<String> {
    #[derive(Deserialize)]
    struct Kind {
        kind: String,
    }
    let side = sidecar_path(path);
    let raw = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    Ok(serde_json::from_str::<Kind>(&raw)?.kind)
}

/// Loads a model saved by [`save_model`], refusing a sidecar of another kind.
pub fn load_model<C: DeserializeOwned>(path: &Path, kind: &str) -> Result<(C, ParamSet)> {
    let side = sidecar_path(path);
    let raw = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: Sidecar<C> = serde_json::from_str(&raw)?;
    if sidecar.kind != kind {
        return Err(Error::Format(format!(
            "{} holds a `{}` model, expected `{kind}`",
            path.display(),
            sidecar.kind
        )));
    }
    Ok((sidecar.config, load_checkpoint(path)?))
}
