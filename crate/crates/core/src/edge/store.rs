//! File-backed session store.
//!
//! Layout under the data directory:
//!
//! ```text
//! <session_id>/meta.txt
//! <session_id>/trace.csv
//! index.log            one "<session_id> <sha256>" line per acknowledged upload
//! ```
//!
//! A session exists once its index line is synced. Session directories
//! without an index line are leftovers from an interrupted upload and are
//! replaced on the next upload of that id.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::dataset::{digest_of, DatasetSummary, SessionDataset};
use super::EdgeError;

const INDEX_FILE: &str = "index.log";
const META_FILE: &str = "meta.txt";
const TRACE_FILE: &str = "trace.csv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    pub session_id: String,
    pub record_count: usize,
}

#[derive(Default)]
struct Index {
    order: Vec<String>,
    digests: HashMap<String, String>,
    summaries: HashMap<String, DatasetSummary>,
}

pub struct EdgeStore {
    root: PathBuf,
    index: Mutex<Index>,
    session_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl EdgeStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, EdgeError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let mut index = Index::default();
        let log = root.join(INDEX_FILE);
        if log.exists() {
            let text = fs::read_to_string(&log)?;
            // an unterminated final line was never acknowledged
            let complete = match text.rfind('\n') {
                Some(i) => &text[..=i],
                None => "",
            };
            for line in complete.lines() {
                let Some((id, digest)) = line.split_once(' ') else {
                    return Err(EdgeError::Malformed(format!("index line `{line}`")));
                };
                let dataset = read_dataset(&root, id)?;
                index.summaries.insert(id.to_string(), dataset.summary());
                index.digests.insert(id.to_string(), digest.to_string());
                index.order.push(id.to_string());
            }
        }
        Ok(Self {
            root,
            index: Mutex::new(index),
            session_locks: Mutex::default(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn upload(&self, dataset: &SessionDataset) -> Result<Receipt, EdgeError> {
        dataset.validate()?;
        let meta = dataset.meta_text();
        let trace = dataset.trace_text();
        let digest = digest_of(&meta, &trace);
        let receipt = Receipt {
            session_id: dataset.session_id.clone(),
            record_count: dataset.record_count(),
        };

        // writes to one session are serialized; other sessions proceed
        let session_lock = self
            .session_locks
            .lock()
            .expect("edge session locks")
            .entry(dataset.session_id.clone())
            .or_default()
            .clone();
        let _guard = session_lock.lock().expect("edge session lock");
        {
            let index = self.index.lock().expect("edge index lock");
            if let Some(existing) = index.digests.get(&dataset.session_id) {
                return if *existing == digest {
                    Ok(receipt)
                } else {
                    Err(EdgeError::ConflictingSession(dataset.session_id.clone()))
                };
            }
        }

        let dir = self.root.join(&dataset.session_id);
        let staging = self.root.join(format!(".{}.partial", dataset.session_id));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging)?;
        write_synced(&staging.join(META_FILE), meta.as_bytes())?;
        write_synced(&staging.join(TRACE_FILE), trace.as_bytes())?;
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::rename(&staging, &dir)?;
        sync_dir(&self.root)?;

        let mut index = self.index.lock().expect("edge index lock");
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join(INDEX_FILE))?;
        log.write_all(format!("{} {}\n", dataset.session_id, digest).as_bytes())?;
        log.sync_all()?;

        index.order.push(dataset.session_id.clone());
        index.digests.insert(dataset.session_id.clone(), digest);
        index
            .summaries
            .insert(dataset.session_id.clone(), dataset.summary());
        Ok(receipt)
    }

    fn ensure_known(&self, session_id: &str) -> Result<(), EdgeError> {
        let index = self.index.lock().expect("edge index lock");
        if index.digests.contains_key(session_id) {
            Ok(())
        } else {
            Err(EdgeError::NotFound(session_id.to_string()))
        }
    }

    /// Stored canonical encoding `(meta, trace)`, exactly as uploaded.
    pub fn get_raw(&self, session_id: &str) -> Result<(String, String), EdgeError> {
        self.ensure_known(session_id)?;
        let dir = self.root.join(session_id);
        Ok((
            fs::read_to_string(dir.join(META_FILE))?,
            fs::read_to_string(dir.join(TRACE_FILE))?,
        ))
    }

    pub fn get(&self, session_id: &str) -> Result<SessionDataset, EdgeError> {
        self.ensure_known(session_id)?;
        read_dataset(&self.root, session_id)
    }

    /// Summaries in upload order.
    pub fn list(&self) -> Vec<DatasetSummary> {
        let index = self.index.lock().expect("edge index lock");
        index
            .order
            .iter()
            .map(|id| index.summaries[id].clone())
            .collect()
    }
}

fn read_dataset(root: &Path, session_id: &str) -> Result<SessionDataset, EdgeError> {
    let dir = root.join(session_id);
    let meta = fs::read_to_string(dir.join(META_FILE))?;
    let trace = fs::read_to_string(dir.join(TRACE_FILE))?;
    SessionDataset::decode(&meta, &trace)
}

fn write_synced(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut f = File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()
}

fn sync_dir(path: &Path) -> std::io::Result<()> {
    #[cfg(unix)]
    {
        File::open(path)?.sync_all()?;
    }
    #[cfg(not(unix))]
    let _ = path;
    Ok(())
}
