//! Run manifests: a small JSON record written next to every command's
//! outputs saying exactly what produced them.

use std::io::{self, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub seed: u64,
    /// SHA-256 of the resolved configuration (after flag overrides).
    pub config_sha256: String,
    /// SHA-256 over the corpus files, when the command consumed or produced one.
    pub corpus_sha256: Option<String>,
    /// Paths written by the command, relative to the manifest.
    pub outputs: Vec<String>,
}

pub fn code_version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Digest over a corpus directory: the sample file plus every graph file,
/// each mixed in as (relative name, contents) in sorted order.
pub fn hash_corpus_dir(dir: &Path) -> io::Result<String> {
    let mut files = vec![dir.join("corpus.jsonl")];
    let graphs = dir.join("graphs");
    if graphs.is_dir() {
        let mut names: Vec<_> = std::fs::read_dir(&graphs)?
            .collect::<io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        names.sort();
        files.extend(names);
    }
    let mut h = Sha256::new();
    for path in files {
        let name = path
            .strip_prefix(dir)
            .unwrap_or(&path)
            .to_string_lossy()
            .replace('\\', "/");
        let mut contents = Vec::new();
        std::fs::File::open(&path)?.read_to_end(&mut contents)?;
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((contents.len() as u64).to_le_bytes());
        h.update(&contents);
    }
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    Ok(out)
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)
    }

    pub fn load(path: &Path) -> io::Result<RunManifest> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(io::Error::other)
    }
}
