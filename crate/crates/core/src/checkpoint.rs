//! Model persistence: a single self-describing JSON file holding the config
//! (including the resolved delays) and every trainable value. JSON floats
//! use the shortest round-tripping representation, so save/load is
//! bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FitDnnError, Result};
use crate::model::{FitDnnConfig, WeightSet};

const FORMAT: &str = "fitdnn-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: FitDnnConfig,
    weights: WeightSet,
}

pub fn save_model(path: &Path, weights: &WeightSet, config: &FitDnnConfig) -> Result<()> {
    config.validate()?;
    weights.validate_against(config)?;
    let file = CheckpointFile {
        format: FORMAT.to_string(),
        version: VERSION,
        config: config.clone(),
        weights: weights.clone(),
    };
    let writer = BufWriter::new(File::create(path)?);
    serde_json::to_writer(writer, &file)
        .map_err(|e| FitDnnError::Checkpoint(format!("serialize failed: {e}")))
}

pub fn load_model(path: &Path) -> Result<(WeightSet, FitDnnConfig)> {
    let reader = BufReader::new(File::open(path)?);
    let file: CheckpointFile = serde_json::from_reader(reader)
        .map_err(|e| FitDnnError::Checkpoint(format!("parse failed: {e}")))?;
    if file.format != FORMAT {
        return Err(FitDnnError::Checkpoint(format!(
            "unrecognized format tag {:?}",
            file.format
        )));
    }
    if file.version != VERSION {
        return Err(FitDnnError::Checkpoint(format!(
            "unsupported version {} (expected {VERSION})",
            file.version
        )));
    }
    file.config.validate()?;
    file.weights
        .validate_against(&file.config)
        .map_err(|e| FitDnnError::Checkpoint(format!("inconsistent checkpoint: {e}")))?;
    Ok((file.weights, file.config))
}
