//! Results directory layout.
//!
//! ```text
//! <root>/predictions/<model_id>/<question_id>.json   one PredictionRecord each
//! <root>/ensemble/results.json                       EnsembleResults
//! <root>/reports/...                                 report tables
//! ```
//!
//! Ids are percent-encoded into file names. Every write goes to a temporary
//! file first and is renamed into place, so an interrupted run never leaves a
//! partial record behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dataset::PredictionRecord;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: corrupt record: {message}")]
    Corrupt { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.display().to_string(), source }
}

/// Encodes an id as a file-name component: `[A-Za-z0-9._-]` kept, anything
/// else as `%XX`. A leading dot is escaped too.
pub fn encode_component(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for (i, b) in id.bytes().enumerate() {
        let keep = b.is_ascii_alphanumeric() || b == b'_' || b == b'-' || (b == b'.' && i > 0);
        if keep {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ResultsStore {
    root: PathBuf,
}

impl ResultsStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ResultsStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn record_path(&self, model_id: &str, question_id: &str) -> PathBuf {
        self.root
            .join("predictions")
            .join(encode_component(model_id))
            .join(format!("{}.json", encode_component(question_id)))
    }

    pub fn has(&self, model_id: &str, question_id: &str) -> bool {
        self.record_path(model_id, question_id).is_file()
    }

    pub fn load(&self, model_id: &str, question_id: &str) -> Result<Option<PredictionRecord>, StoreError> {
        let path = self.record_path(model_id, question_id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path)(e)),
        };
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| StoreError::Corrupt { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn save(&self, record: &PredictionRecord) -> Result<PathBuf, StoreError> {
        let path = self.record_path(&record.model_id, &record.question_id);
        self.write_json_at(&path, record)?;
        Ok(path)
    }

    /// Writes `value` as pretty JSON to `<root>/<rel>`.
    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<PathBuf, StoreError> {
        let path = self.root.join(rel);
        self.write_json_at(&path, value)?;
        Ok(path)
    }

    pub fn write_text(&self, rel: &str, text: &str) -> Result<PathBuf, StoreError> {
        let path = self.root.join(rel);
        atomic_write(&path, text.as_bytes())?;
        Ok(path)
    }

    fn write_json_at<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), StoreError> {
        let mut text = serde_json::to_string_pretty(value).expect("results serialize");
        text.push('\n');
        atomic_write(path, text.as_bytes())
    }
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{file_name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}
