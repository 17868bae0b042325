//! Output files and the provenance.json kept next to them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use repurpose_core::registry::ArtifactKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "provenance.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub command: String,
    pub kind: Option<ArtifactKind>,
    pub dataset: String,
    pub dataset_fingerprint: String,
    pub seed: Option<u64>,
    pub params: BTreeMap<String, String>,
    pub sha256: String,
}

/// Collects the files one command writes into an output directory.
pub struct Outputs {
    dir: PathBuf,
    command: String,
    dataset: String,
    fingerprint: String,
    seed: Option<u64>,
    params: BTreeMap<String, String>,
    written: BTreeMap<String, OutputEntry>,
}

impl Outputs {
    pub fn new(dir: &Path, command: &str, dataset: &Path, fingerprint: &str, seed: Option<u64>) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            dataset: dataset.to_string_lossy().into_owned(),
            fingerprint: fingerprint.to_string(),
            seed,
            params: BTreeMap::new(),
            written: BTreeMap::new(),
        })
    }

    pub fn param(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    pub fn write(&mut self, name: &str, kind: Option<ArtifactKind>, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.written.insert(
            name.to_string(),
            OutputEntry {
                command: self.command.clone(),
                kind,
                dataset: self.dataset.clone(),
                dataset_fingerprint: self.fingerprint.clone(),
                seed: self.seed,
                params: self.params.clone(),
                sha256: hex::encode(Sha256::digest(bytes)),
            },
        );
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, kind: Option<ArtifactKind>, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, kind, &bytes)
    }

    /// Merges this command's entries into the directory's provenance.json.
    pub fn finish(self) -> Result<()> {
        let mut all = load(&self.dir)?;
        all.extend(self.written);
        let mut bytes = serde_json::to_vec_pretty(&all)?;
        bytes.push(b'\n');
        fs::write(self.dir.join(FILE_NAME), bytes)?;
        Ok(())
    }
}

fn load(dir: &Path) -> Result<BTreeMap<String, OutputEntry>> {
    let path = dir.join(FILE_NAME);
    match fs::read(&path) {
        Ok(b) => serde_json::from_slice(&b).with_context(|| format!("reading {}", path.display())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(BTreeMap::new()),
        Err(e) => Err(e.into()),
    }
}

/// Provenance entry for `artifact`, checked against the file's current hash.
pub fn lookup(artifact: &Path) -> Result<OutputEntry> {
    let dir = artifact.parent().unwrap_or(Path::new("."));
    let name = artifact
        .file_name()
        .and_then(|n| n.to_str())
        .with_context(|| format!("{} is not a file path", artifact.display()))?;
    let Some(entry) = load(dir)?.remove(name) else {
        bail!(
            "{} has no entry in {}",
            artifact.display(),
            dir.join(FILE_NAME).display()
        );
    };
    let bytes = fs::read(artifact).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => repurpose_core::Error::MissingFile(artifact.to_path_buf()).into(),
        _ => anyhow::Error::from(e),
    })?;
    if hex::encode(Sha256::digest(&bytes)) != entry.sha256 {
        bail!("{} changed after it was produced", artifact.display());
    }
    Ok(entry)
}
