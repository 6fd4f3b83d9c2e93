//! On-disk layout: `manifest.json` plus `records.jsonl`, one record per
//! line. The inverted index is rebuilt on open.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{IndexStats, LabelIndex, LabelRecord};

pub const INDEX_FORMAT: &str = "kglink-label-index";
pub const INDEX_FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const RECORDS: &str = "records.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format: String,
    pub version: u32,
    pub stats: IndexStats,
    pub records_file: String,
}

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("{path}: unsupported index format {format} v{version}")]
    Version {
        path: PathBuf,
        format: String,
        version: u32,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StorageError + '_ {
    move |source| StorageError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl LabelIndex {
    pub fn save(&self, dir: &Path) -> Result<IndexManifest, StorageError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let records_path = dir.join(RECORDS);
        let mut out = BufWriter::new(File::create(&records_path).map_err(io_err(&records_path))?);
        for record in self.records() {
            let line = serde_json::to_string(&record).expect("records serialize");
            writeln!(out, "{line}").map_err(io_err(&records_path))?;
        }
        out.flush().map_err(io_err(&records_path))?;

        let manifest = IndexManifest {
            format: INDEX_FORMAT.to_string(),
            version: INDEX_FORMAT_VERSION,
            stats: self.stats(),
            records_file: RECORDS.to_string(),
        };
        let manifest_path = dir.join(MANIFEST);
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&manifest_path, json + "\n").map_err(io_err(&manifest_path))?;
        Ok(manifest)
    }

    pub fn open(dir: &Path) -> Result<Self, StorageError> {
        let manifest_path = dir.join(MANIFEST);
        let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        let manifest: IndexManifest =
            serde_json::from_str(&text).map_err(|e| StorageError::Corrupt {
                path: manifest_path.clone(),
                reason: e.to_string(),
            })?;
        if manifest.format != INDEX_FORMAT || manifest.version != INDEX_FORMAT_VERSION {
            return Err(StorageError::Version {
                path: manifest_path,
                format: manifest.format,
                version: manifest.version,
            });
        }
        let records_path = dir.join(&manifest.records_file);
        let file = File::open(&records_path).map_err(io_err(&records_path))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(&records_path))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: LabelRecord =
                serde_json::from_str(&line).map_err(|e| StorageError::Corrupt {
                    path: records_path.clone(),
                    reason: format!("line {}: {e}", i + 1),
                })?;
            records.push(record);
        }
        let mut index = LabelIndex::new();
        let stats = index.ingest(records);
        if stats != manifest.stats {
            return Err(StorageError::Corrupt {
                path: records_path,
                reason: "record counts disagree with manifest".into(),
            });
        }
        Ok(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entity::{KgType, MentionType};
    use crate::index::read_tsv;

    #[test]
    fn save_and_open_round_trip() {
        let tsv = include_str!("../../../../fixtures/labels.tsv");
        let mut idx = LabelIndex::new();
        idx.ingest(read_tsv(tsv.as_bytes()).map(Result::unwrap));
        let dir = tempfile::tempdir().unwrap();
        let manifest = idx.save(dir.path()).unwrap();
        assert_eq!(manifest.stats.count(KgType::Stream), 10);

        let reopened = LabelIndex::open(dir.path()).unwrap();
        assert_eq!(reopened.records(), idx.records());
        assert_eq!(
            reopened.search("neurips", MentionType::Venue, 10).unwrap(),
            idx.search("neurips", MentionType::Venue, 10).unwrap()
        );
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        LabelIndex::new().save(dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap().replace("\"version\": 1", "\"version\": 99");
        fs::write(&path, text).unwrap();
        assert!(matches!(LabelIndex::open(dir.path()), Err(StorageError::Version { .. })));
    }

    #[test]
    fn missing_directory_is_io_error() {
        let err = LabelIndex::open(Path::new("/nonexistent/kglink-index")).unwrap_err();
        assert!(matches!(err, StorageError::Io { .. }));
        assert!(err.to_string().contains("/nonexistent/kglink-index"));
    }
}
