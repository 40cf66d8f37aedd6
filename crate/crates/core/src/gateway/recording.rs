use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::ChatExchange;

#[derive(Debug, thiserror::Error)]
pub enum RecordingError {
    #[error("recording {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("recording {path} line {line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// A JSONL file of exchanges indexed by request digest. Later lines win on duplicate
/// digests.
#[derive(Debug)]
pub struct Recording {
    path: PathBuf,
    entries: Mutex<HashMap<String, ChatExchange>>,
}

impl Recording {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, RecordingError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| RecordingError::Io {
            path: path.clone(),
            source,
        };
        let reader = BufReader::new(File::open(&path).map_err(io)?);
        let mut entries = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let exchange: ChatExchange =
                serde_json::from_str(&line).map_err(|source| RecordingError::Json {
                    path: path.clone(),
                    line: i + 1,
                    source,
                })?;
            entries.insert(exchange.digest.clone(), exchange);
        }
        Ok(Recording {
            path,
            entries: Mutex::new(entries),
        })
    }

    pub fn open_or_create(path: impl AsRef<Path>) -> Result<Self, RecordingError> {
        let path = path.as_ref();
        if path.exists() {
            Self::open(path)
        } else {
            Ok(Recording {
                path: path.to_path_buf(),
                entries: Mutex::new(HashMap::new()),
            })
        }
    }

    pub fn get(&self, digest: &str) -> Option<ChatExchange> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).get(digest).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn append(&self, exchange: ChatExchange) -> Result<(), RecordingError> {
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        let io = |source| RecordingError::Io {
            path: self.path.clone(),
            source,
        };
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(io)?;
        let line = serde_json::to_string(&exchange).expect("exchange serializes");
        writeln!(file, "{line}").map_err(io)?;
        entries.insert(exchange.digest.clone(), exchange);
        Ok(())
    }
}
