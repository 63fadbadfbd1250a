//! Dataset loading and cached training shared by the commands.

use std::path::Path;

use permalign::data::{load_mnist, make_synthetic, Dataset, SyntheticKind};
use permalign::nn::{load_checkpoint, train_with_progress, Checkpoint, EvalSet, ModelParams, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, DatasetConfig, DatasetKind, ExperimentConfig};
use crate::error::CliError;

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    let d = &cfg.dataset;
    let ds = match d.kind {
        DatasetKind::Mnist | DatasetKind::FashionMnist => {
            let mut ds = load_mnist(cfg.data_dir())?;
            if d.kind == DatasetKind::FashionMnist {
                ds.name = "fashion_mnist".into();
            }
            ds
        }
        DatasetKind::Blobs => make_synthetic(SyntheticKind::Blobs, d.n, d.dim, d.classes, d.seed)?,
        DatasetKind::TwoMoons => make_synthetic(SyntheticKind::TwoMoons, d.n, d.dim, d.classes, d.seed)?,
    };
    Ok(ds.truncate(d.train_limit.unwrap_or(usize::MAX), d.test_limit.unwrap_or(usize::MAX)))
}

/// The split that barriers and landscapes are measured on.
pub fn eval_set(cfg: &ExperimentConfig, ds: &Dataset) -> Result<EvalSet, CliError> {
    let set = ds.split(&cfg.analysis.eval_split)?;
    Ok(set.take(cfg.analysis.eval_limit.unwrap_or(usize::MAX)))
}

/// Training examples fed to the data-driven permutation searches.
pub fn search_set(cfg: &ExperimentConfig, ds: &Dataset) -> EvalSet {
    ds.train.take(cfg.analysis.search_limit.unwrap_or(usize::MAX))
}

/// Stored in the checkpoint notes so a later run can reuse the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainNotes {
    pub key: String,
    pub epoch_losses: Vec<f64>,
}

/// Identifies a training run: same key, same model.
pub fn train_key(train: &TrainConfig, dataset: &DatasetConfig, seed: u64) -> String {
    let json = serde_json::to_vec(&(train, dataset, seed)).expect("config serializes");
    hex(&Sha256::digest(&json))
}

/// Trains with `seed` driving both the initialization and the data order,
/// or loads the checkpoint at `path` if it was produced by the same run.
pub fn train_cached(
    train: &TrainConfig,
    dataset: &DatasetConfig,
    data: &EvalSet,
    seed: u64,
    path: &Path,
) -> Result<(ModelParams, TrainNotes), CliError> {
    let key = train_key(train, dataset, seed);
    if path.exists() {
        let ckpt = Checkpoint::load(path)?;
        if let Ok(notes) = serde_json::from_str::<TrainNotes>(&ckpt.notes) {
            if notes.key == key {
                return Ok((ckpt.model, notes));
            }
        }
    }
    let mut tc = train.clone();
    tc.seed = seed;
    let mut epoch_losses = Vec::with_capacity(tc.epochs);
    let model = train_with_progress(&tc, data, seed, |epoch, loss| {
        epoch_losses.push(loss);
        eprintln!("seed {seed}: epoch {}/{} loss {loss:.5}", epoch + 1, tc.epochs);
    })?;
    let notes = TrainNotes { key, epoch_losses };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Checkpoint {
        model: model.clone(),
        seed: Some(seed),
        notes: serde_json::to_string(&notes).expect("notes serialize"),
    }
    .save(path)?;
    Ok((model, notes))
}

pub fn load_model(path: &Path) -> Result<ModelParams, CliError> {
    if !path.exists() {
        return Err(CliError::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such checkpoint")));
    }
    Ok(load_checkpoint(path)?)
}
