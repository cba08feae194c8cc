//! Versioned JSON weight files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::network::{HeadKind, Layer, NetworkParams, OutputLayout};
use crate::domains::DomainTag;

pub const WEIGHT_FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightFileError {
    #[error("weight file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt weight file: {0}")]
    Corrupt(String),
    #[error("cannot write weight file: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct WeightFile {
    version: u32,
    domain: DomainTag,
    head: HeadKind,
    layout: OutputLayout,
    encoder_depth: usize,
    layers: Vec<Layer>,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

pub fn params_to_string(params: &NetworkParams) -> Result<String, WeightFileError> {
    if let Some(bad) = params.flat().iter().find(|v| !v.is_finite()) {
        return Err(WeightFileError::NonFinite(format!("parameter value {bad}")));
    }
    let file = WeightFile {
        version: WEIGHT_FILE_VERSION,
        domain: params.domain,
        head: params.head,
        layout: params.layout,
        encoder_depth: params.encoder_depth,
        layers: params.layers.clone(),
    };
    serde_json::to_string(&file).map_err(|e| WeightFileError::Corrupt(e.to_string()))
}

pub fn params_from_str(text: &str) -> Result<NetworkParams, WeightFileError> {
    let probe: VersionProbe = serde_json::from_str(text).map_err(|e| WeightFileError::Corrupt(e.to_string()))?;
    if probe.version != WEIGHT_FILE_VERSION {
        return Err(WeightFileError::VersionMismatch {
            found: probe.version,
            expected: WEIGHT_FILE_VERSION,
        });
    }
    let file: WeightFile = serde_json::from_str(text).map_err(|e| WeightFileError::Corrupt(e.to_string()))?;
    let params = NetworkParams {
        domain: file.domain,
        head: file.head,
        layout: file.layout,
        encoder_depth: file.encoder_depth,
        layers: file.layers,
    };
    params.check_shapes().map_err(|e| WeightFileError::Corrupt(e.to_string()))?;
    Ok(params)
}

pub fn save_params(params: &NetworkParams, path: &Path) -> Result<(), WeightFileError> {
    fs::write(path, params_to_string(params)?)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<NetworkParams, WeightFileError> {
    params_from_str(&fs::read_to_string(path)?)
}
