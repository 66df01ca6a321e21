//! Run manifests: every output directory records what produced it.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::{io_err, CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// FNV-1a over raw bytes; used for corpus identity digests.
pub fn fnv1a_bytes(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Subcommand that produced the directory.
    pub command: String,
    /// Config file path as given on the command line, if any.
    pub config: Option<String>,
    pub seed: u64,
    /// Tool version, describe-style.
    pub version: String,
    /// Corpus root plus a digest of its listing, if a corpus was read.
    pub corpus: Option<String>,
    /// Output directory as given.
    pub out: String,
    /// Unix seconds; the only field allowed to differ between reruns.
    pub created: u64,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, out: &Path) -> Self {
        RunManifest {
            command: command.to_string(),
            config: None,
            seed,
            version: format!("v{}-lwm", env!("CARGO_PKG_VERSION")),
            corpus: None,
            out: out.display().to_string(),
            created: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn with_config(mut self, path: &Path) -> Self {
        self.config = Some(path.display().to_string());
        self
    }

    /// Stamps the corpus identity: root path plus an FNV digest of the
    /// corpus listing file.
    pub fn with_corpus(mut self, root: &Path) -> Result<Self> {
        let meta = root.join("corpus_meta.json");
        let bytes = fs::read(&meta).map_err(|e| io_err(&meta, e))?;
        self.corpus = Some(format!("{}@{:016x}", root.display(), fnv1a_bytes(&bytes)));
        Ok(self)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}
