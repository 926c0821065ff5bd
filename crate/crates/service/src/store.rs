use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use grec_core::ohseval::ScoreRecord;
use tokio::sync::{Mutex, RwLock};

use crate::ServiceError;

/// Append-only JSONL file of validated score records.
///
/// Appends go through one writer lock; readers only take the in-memory
/// read lock, which is held for the duration of a clone.
pub struct ScoreStore {
    path: PathBuf,
    writer: Mutex<File>,
    records: RwLock<Vec<ScoreRecord>>,
}

impl ScoreStore {
    /// Opens (or creates) the store and reads back any existing records.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut records = Vec::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let r: ScoreRecord = serde_json::from_str(&line)
                    .map_err(|e| ServiceError::Startup(format!("{}:{}: {e}", path.display(), i + 1)))?;
                records.push(r);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, writer: Mutex::new(file), records: RwLock::new(records) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub async fn append(&self, record: ScoreRecord) -> Result<(), ServiceError> {
        let mut line = serde_json::to_string(&record).expect("score record serializes");
        line.push('\n');
        let mut file = self.writer.lock().await;
        file.write_all(line.as_bytes())?;
        file.flush()?;
        self.records.write().await.push(record);
        Ok(())
    }

    /// Records for one sheet, in arrival order.
    pub async fn for_sheet(&self, sheet_id: &str) -> Vec<ScoreRecord> {
        self.records.read().await.iter().filter(|r| r.sheet_id == sheet_id).cloned().collect()
    }

    pub async fn len(&self) -> usize {
        self.records.read().await.len()
    }

    pub async fn is_empty(&self) -> bool {
        self.len().await == 0
    }
}
