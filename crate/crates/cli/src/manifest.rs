//! Run manifests: what was run, on which inputs, producing which files, each
//! with a sha256 content hash.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sigwgan::fsio::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

impl Artifact {
    pub fn of(path: &Path, label: String) -> sigwgan::Result<Self> {
        Ok(Self { path: label, sha256: sha256_file(path)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub experiment: String,
    pub tool_version: String,
    /// Arguments after the program name.
    pub args: Vec<String>,
    pub config: Option<Artifact>,
    pub seed: Option<u64>,
    pub inputs: Vec<Artifact>,
    /// Paths relative to the output directory.
    pub outputs: Vec<Artifact>,
}

pub fn sha256_file(path: &Path) -> sigwgan::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Collects inputs and outputs for one run and writes the manifest last.
pub struct Recorder {
    out_dir: PathBuf,
    manifest: Manifest,
}

impl Recorder {
    pub fn new(out_dir: &Path, experiment: &str, args: Vec<String>, seed: Option<u64>) -> Self {
        Self {
            out_dir: out_dir.to_path_buf(),
            manifest: Manifest {
                schema_version: SCHEMA_VERSION,
                experiment: experiment.to_owned(),
                tool_version: env!("CARGO_PKG_VERSION").to_owned(),
                args,
                config: None,
                seed,
                inputs: Vec::new(),
                outputs: Vec::new(),
            },
        }
    }

    pub fn config(&mut self, path: &Path) -> sigwgan::Result<()> {
        self.manifest.config = Some(Artifact::of(path, path.display().to_string())?);
        Ok(())
    }

    pub fn input(&mut self, path: &Path) -> sigwgan::Result<()> {
        self.manifest.inputs.push(Artifact::of(path, path.display().to_string())?);
        Ok(())
    }

    /// Records a file inside the output directory.
    pub fn output(&mut self, name: &str) -> sigwgan::Result<()> {
        let a = Artifact::of(&self.out_dir.join(name), name.to_owned())?;
        self.manifest.outputs.retain(|o| o.path != a.path);
        self.manifest.outputs.push(a);
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// True when a previous manifest describes the same run and all its
    /// outputs are still present and unchanged.
    pub fn up_to_date(&self) -> bool {
        let Ok(text) = fs::read_to_string(self.out_dir.join(MANIFEST_FILE)) else { return false };
        let Ok(old) = serde_json::from_str::<Manifest>(&text) else { return false };
        let m = &self.manifest;
        old.schema_version == m.schema_version
            && old.experiment == m.experiment
            && old.tool_version == m.tool_version
            && old.args == m.args
            && old.config == m.config
            && old.seed == m.seed
            && old.inputs == m.inputs
            && !old.outputs.is_empty()
            && old.outputs.iter().all(|o| sha256_file(&self.out_dir.join(&o.path)).is_ok_and(|h| h == o.sha256))
    }

    pub fn finish(self) -> sigwgan::Result<Manifest> {
        write_atomic(&self.out_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&self.manifest)?.as_bytes())?;
        Ok(self.manifest)
    }
}
