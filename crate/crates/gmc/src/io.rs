//! JSON / JSONL readers and writers for datasets, features, candidates and checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use gmc_core::corpus::{Corpus, DEFAULT_N_MAX};
use gmc_core::encoders::ImportedFeatures;
use gmc_core::trainer::Checkpoint;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Core { path: PathBuf, source: gmc_core::Error },
}

pub type Result<T> = std::result::Result<T, IoError>;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| IoError::Fs { path: path.to_owned(), source })
}

/// Parses every non-blank line as one JSON value of type `T`, with 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(line).map_err(|e| IoError::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse { path: path.to_owned(), line: e.line(), message: e.to_string() })
}

/// One dataset line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub video_id: String,
    pub captions: Vec<String>,
}

pub fn read_dataset(path: &Path) -> Result<Corpus> {
    let records: Vec<(usize, DatasetRecord)> = read_jsonl(path)?;
    let mut seen = BTreeMap::new();
    for (line, r) in &records {
        let fail = |message: String| Err(IoError::Parse { path: path.to_owned(), line: *line, message });
        if r.video_id.is_empty() {
            return fail("empty video_id".into());
        }
        if r.captions.is_empty() {
            return fail(format!("video `{}` has no captions", r.video_id));
        }
        if let Some(first) = seen.insert(r.video_id.clone(), *line) {
            return fail(format!("duplicate video_id `{}` (first seen on line {})", r.video_id, first));
        }
    }
    Corpus::from_records(records.into_iter().map(|(_, r)| (r.video_id, r.captions)), DEFAULT_N_MAX)
        .map_err(|source| IoError::Core { path: path.to_owned(), source })
}

pub fn write_dataset(path: &Path, records: &[(String, Vec<String>)]) -> Result<()> {
    let rows: Vec<DatasetRecord> =
        records.iter().map(|(v, c)| DatasetRecord { video_id: v.clone(), captions: c.clone() }).collect();
    write_jsonl(path, &rows)
}

/// One feature line: `kind` is `video` or `text_<caption index>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRecord {
    pub id: String,
    pub kind: String,
    pub vector: Vec<f64>,
}

pub fn read_features(path: &Path) -> Result<ImportedFeatures> {
    let mut features = ImportedFeatures::default();
    for (line, r) in read_jsonl::<FeatureRecord>(path)? {
        let fail = |message: String| IoError::Parse { path: path.to_owned(), line, message };
        if r.vector.iter().any(|x| !x.is_finite()) {
            return Err(fail("non-finite feature value".into()));
        }
        let duplicate = if r.kind == "video" {
            features.video.insert(r.id.clone(), r.vector).is_some()
        } else if let Some(index) = r.kind.strip_prefix("text_") {
            let index: usize = index.parse().map_err(|_| fail(format!("bad caption index in kind `{}`", r.kind)))?;
            features.text.insert((r.id.clone(), index), r.vector).is_some()
        } else {
            return Err(fail(format!("kind must be `video` or `text_<i>`, got `{}`", r.kind)));
        };
        if duplicate {
            return Err(fail(format!("duplicate feature `{}`/{}", r.id, r.kind)));
        }
    }
    Ok(features)
}

/// One candidate caption to score against the references of `video_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub video_id: String,
    pub caption: String,
}

pub fn read_candidates(path: &Path) -> Result<Vec<(usize, CandidateRecord)>> {
    read_jsonl(path)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|source| IoError::Fs { path: path.to_owned(), source })
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let fs_err = |source| IoError::Fs { path: path.to_owned(), source };
    let file = fs::File::create(path).map_err(fs_err)?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row).expect("serializable");
        w.write_all(b"\n").map_err(fs_err)?;
    }
    w.flush().map_err(fs_err)
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_json(path, checkpoint)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_json(path)
}
