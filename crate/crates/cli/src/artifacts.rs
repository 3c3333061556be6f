use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Writes each artifact once, atomically, with the config hash in its header.
pub struct Artifacts {
    dir: PathBuf,
    config_hash: String,
    written: Vec<(String, String)>,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config_sha256: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    units: Option<&'a str>,
    data: &'a T,
}

impl Artifacts {
    pub fn new(dir: &Path, config_hash: String) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            config_hash,
            written: Vec::new(),
        })
    }

    /// (file name, sha256) of everything written so far.
    pub fn written(&self) -> &[(String, String)] {
        &self.written
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let target = self.dir.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)
            .with_context(|| format!("creating temporary file in {}", self.dir.display()))?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&target)
            .with_context(|| format!("writing {}", target.display()))?;
        self.written
            .push((name.to_string(), hex::encode(Sha256::digest(bytes))));
        Ok(())
    }

    /// Delimited artifact: `# config_sha256=...`, one `# ` line per unit
    /// note, then whatever `body` writes.
    pub fn csv<F>(&mut self, name: &str, units: &[&str], body: F) -> anyhow::Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> sigbt::Result<()>,
    {
        let mut buf = Vec::new();
        writeln!(buf, "# config_sha256={}", self.config_hash)?;
        for u in units {
            writeln!(buf, "# {u}")?;
        }
        body(&mut buf)?;
        self.put(name, &buf)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, units: Option<&str>, data: &T) -> anyhow::Result<()> {
        let env = Envelope {
            config_sha256: &self.config_hash,
            units,
            data,
        };
        let mut text = serde_json::to_string_pretty(&env)?;
        text.push('\n');
        self.put(name, text.as_bytes())
    }
}
