//! Per-run output directories and their manifests.

use std::fs;
use std::path::{Path, PathBuf};

use permalign::nn::{Checkpoint, ModelParams};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig};
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'static str,
    pub config_hash: String,
    pub seeds: &'a [u64],
    pub config: &'a ExperimentConfig,
    pub inputs: &'a [InputFile],
    pub artifacts: Vec<String>,
}

/// Collects the files one command writes.
pub struct OutputDir {
    root: PathBuf,
    artifacts: Vec<String>,
    inputs: Vec<InputFile>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
            inputs: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Records the hash of a file the command read.
    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.push(InputFile {
            path: path.display().to_string(),
            sha256: hex(&Sha256::digest(&bytes)),
        });
        Ok(())
    }

    fn prepare(&mut self, name: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
        Ok(path)
    }

    pub fn text(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        let path = self.prepare(name)?;
        fs::write(&path, content).map_err(|e| CliError::io(&path, e))
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).map_err(permalign::Error::from)?;
        s.push('\n');
        self.text(name, &s)
    }

    pub fn csv(&mut self, name: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<(), CliError> {
        let mut s = String::from(header);
        s.push('\n');
        for r in rows {
            s.push_str(&r);
            s.push('\n');
        }
        self.text(name, &s)
    }

    pub fn model(&mut self, name: &str, model: &ModelParams, seed: Option<u64>, notes: &str) -> Result<(), CliError> {
        let path = self.prepare(name)?;
        let ckpt = Checkpoint {
            model: model.clone(),
            seed,
            notes: notes.to_string(),
        };
        ckpt.save(&path)?;
        Ok(())
    }

    /// Registers a file written by other means.
    pub fn register(&mut self, name: &str) -> Result<PathBuf, CliError> {
        self.prepare(name)
    }

    pub fn finish(self, command: &str, cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
        let mut artifacts = self.artifacts.clone();
        artifacts.sort();
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_hash: cfg.hash(),
            seeds: &cfg.seeds,
            config: cfg,
            inputs: &self.inputs,
            artifacts,
        };
        let path = self.path(MANIFEST);
        let mut s = serde_json::to_string_pretty(&manifest).map_err(permalign::Error::from)?;
        s.push('\n');
        fs::write(&path, s).map_err(|e| CliError::io(&path, e))?;
        Ok(self.root)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_sorted_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(&dir.path().join("run")).unwrap();
        out.csv("z.csv", "a,b", ["1,2".to_string()]).unwrap();
        out.json("sub/a.json", &[1, 2]).unwrap();
        out.text("z.csv", "a,b\n").unwrap();
        let input = dir.path().join("in.bin");
        fs::write(&input, b"abc").unwrap();
        out.input(&input).unwrap();
        let cfg = ExperimentConfig::default();
        let root = out.finish("test", &cfg).unwrap();
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(m["artifacts"], serde_json::json!(["sub/a.json", "z.csv"]));
        assert_eq!(m["config_hash"], cfg.hash());
        assert_eq!(
            m["inputs"][0]["sha256"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
