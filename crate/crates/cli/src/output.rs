//! Artifact directory and writers.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

pub const OUT_ENV: &str = "RELAYNET_OUT";

/// The environment variable wins over the flag.
pub fn resolve_dir(flag: &Path) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag.to_path_buf(),
    }
}

#[derive(Debug, Clone)]
pub struct Output {
    dir: PathBuf,
}

impl Output {
    pub fn new(dir: PathBuf) -> Self {
        Output { dir }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, name: &str) -> anyhow::Result<PathBuf> {
        fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        Ok(self.dir.join(name))
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> anyhow::Result<PathBuf> {
        let path = self.path(name)?;
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn text(&self, name: &str, text: &str) -> anyhow::Result<PathBuf> {
        let path = self.path(name)?;
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Writes a CSV produced by `fill` into memory first, so a failure
    /// never leaves a truncated file behind.
    pub fn csv(
        &self,
        name: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> anyhow::Result<()>,
    ) -> anyhow::Result<PathBuf> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        let path = self.path(name)?;
        fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
