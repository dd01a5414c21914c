//! JSON snapshots of sessions, one file per session, rewritten atomically
//! after every mutation.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::ApiError;
use crate::session::ApiSession;

#[derive(Clone, Debug)]
pub struct Store {
    dir: PathBuf,
}

impl Store {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Store { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    pub fn save(&self, s: &ApiSession) -> Result<(), ApiError> {
        let io = |e: std::io::Error| ApiError::internal(format!("saving session {}: {e}", s.session_id));
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io)?;
        serde_json::to_writer(&mut tmp, s).map_err(|e| ApiError::internal(e.to_string()))?;
        tmp.flush().map_err(io)?;
        tmp.persist(self.path(&s.session_id)).map_err(|e| io(e.error))?;
        Ok(())
    }

    /// Every readable snapshot in the directory, sorted by id.
    pub fn load_all(&self) -> std::io::Result<Vec<ApiSession>> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let text = std::fs::read_to_string(&path)?;
                let s: ApiSession = serde_json::from_str(&text)
                    .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
                out.push(s);
            }
        }
        out.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        Ok(out)
    }
}
