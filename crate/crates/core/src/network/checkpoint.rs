//! Checkpoint directories: `checkpoint.json` (architecture, layout, role,
//! provenance) next to raw little-endian `f32` payloads for the raw and EMA
//! parameters.
//!
//! Payloads are single precision, so a save/load cycle rounds every
//! parameter to the nearest `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ArchitectureSpec, Layout, ModelRole, ModelState};
use crate::datasets::{f32_from_le, f32_to_le};
use crate::{Error, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
const PARAMS_FILE: &str = "params.f32";
const EMA_FILE: &str = "ema_params.f32";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constituent {
    pub checksum: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub constituents: Vec<Constituent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub arch: ArchitectureSpec,
    pub role: ModelRole,
    pub layout: Layout,
    pub params_file: String,
    pub ema_file: String,
    /// SHA-256 of the EMA payload.
    pub checksum: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// SHA-256 over the `f32` little-endian encoding of the EMA parameters.
pub fn state_checksum(state: &ModelState) -> String {
    let bytes = f32_to_le(state.ema_params.values().iter().map(|&v| v as f32));
    hex::encode(Sha256::digest(&bytes))
}

pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    state: &ModelState,
    provenance: Option<Provenance>,
) -> Result<CheckpointManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let params = f32_to_le(state.params.values().iter().map(|&v| v as f32));
    let ema = f32_to_le(state.ema_params.values().iter().map(|&v| v as f32));
    let manifest = CheckpointManifest {
        arch: state.arch.clone(),
        role: state.role,
        layout: (**state.layout()).clone(),
        params_file: PARAMS_FILE.into(),
        ema_file: EMA_FILE.into(),
        checksum: hex::encode(Sha256::digest(&ema)),
        provenance,
    };
    for (name, bytes) in [(PARAMS_FILE, &params), (EMA_FILE, &ema)] {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(CHECKPOINT_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(ModelState, CheckpointManifest)> {
    let dir = dir.as_ref();
    let path = dir.join(CHECKPOINT_FILE);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let manifest: CheckpointManifest =
        serde_json::from_slice(&fs::read(&path).map_err(|e| Error::io(&path, e))?)?;
    let read = |name: &str| -> Result<Vec<u8>> {
        let p = dir.join(name);
        if !p.exists() {
            return Err(Error::MissingFile(p));
        }
        fs::read(&p).map_err(|e| Error::io(&p, e))
    };
    let params = read(&manifest.params_file)?;
    let ema = read(&manifest.ema_file)?;
    let expected = manifest.layout.total() * 4;
    if params.len() != expected || ema.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint payloads must hold {expected} bytes"
        )));
    }
    let widen = |b: &[u8]| f32_from_le(b).into_iter().map(f64::from).collect::<Vec<_>>();
    let state = ModelState::from_parts(manifest.arch.clone(), manifest.role, widen(&params), widen(&ema))?;
    if **state.layout() != manifest.layout {
        return Err(Error::LayoutMismatch(
            "stored layout disagrees with the architecture".into(),
        ));
    }
    Ok((state, manifest))
}
