//! Buffered command outputs, flushed together with a hash manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files of one command run. Nothing touches the disk until [`Outputs::commit`].
pub struct Outputs {
    command: String,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(command: &str) -> Outputs {
        Outputs { command: command.to_string(), files: Vec::new() }
    }

    pub fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.retain(|(n, _)| n != name);
        self.files.push((name.to_string(), bytes.into()));
    }

    pub fn manifest(&self) -> Manifest {
        let mut files: Vec<ManifestEntry> = self
            .files
            .iter()
            .map(|(n, b)| ManifestEntry { path: n.clone(), bytes: b.len(), sha256: sha256_hex(b) })
            .collect();
        files.sort_by(|a, b| a.path.cmp(&b.path));
        Manifest { command: self.command.clone(), files }
    }

    /// Writes every file and the manifest into `dir`; on any failure the files
    /// written so far are removed again.
    pub fn commit(self, dir: &Path) -> Result<Manifest, CliError> {
        let manifest = self.manifest();
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let mut written: Vec<PathBuf> = Vec::new();
        let all = self.files.iter().map(|(n, b)| (n.as_str(), b.as_slice())).chain([(MANIFEST, text.as_bytes())]);
        for (name, bytes) in all {
            let path = dir.join(name);
            if let Err(e) = fs::write(&path, bytes) {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                let _ = fs::remove_file(&path);
                return Err(io(&path, e));
            }
            written.push(path);
        }
        Ok(manifest)
    }
}

pub fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Re-hashes every manifest entry under `dir`; returns the entries that differ.
pub fn verify(dir: &Path) -> Result<(Manifest, Vec<String>), CliError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: not a manifest: {e}", path.display())))?;
    let mut bad = Vec::new();
    for f in &manifest.files {
        match fs::read(dir.join(&f.path)) {
            Ok(b) if sha256_hex(&b) == f.sha256 && b.len() == f.bytes => {}
            Ok(_) => bad.push(format!("{}: hash mismatch", f.path)),
            Err(e) => bad.push(format!("{}: {e}", f.path)),
        }
    }
    Ok((manifest, bad))
}
