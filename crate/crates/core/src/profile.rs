//! Append-only per-user profile memory.
//!
//! Two backends share one handle type: an in-memory map and a file-backed
//! directory. On disk each user owns two files under `profiles/`:
//!
//! * `<user_id>.ndrec` holds one JSON-serialized [`InteractionRecord`] per
//!   line, in append order.
//! * `<user_id>.meta` holds the revision counter as `revision=<n>` and
//!   `records=<n>` lines.
//!
//! A trailing line without a newline is treated as a torn write and dropped
//! when the profile is loaded.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{validate_user_id, Domain, InteractionRecord, ValidationError};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("record for item `{item_id}` at timestamp {timestamp} already present")]
    DuplicateRecord { item_id: String, timestamp: i64 },
    #[error("record id `{0}` already present")]
    DuplicateRecordId(String),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("storage unavailable: {0}")]
    StorageUnavailable(#[from] io::Error),
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error("corrupt profile `{user_id}` line {line}: {reason}")]
    Corrupt {
        user_id: String,
        line: usize,
        reason: String,
    },
    #[error("invalid snapshot: {0}")]
    Snapshot(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub revision: u64,
    pub records: Vec<InteractionRecord>,
}

impl UserProfile {
    pub fn empty(user_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            revision: 0,
            records: Vec::new(),
        }
    }

    pub fn from_snapshot(doc: &str) -> Result<Self, StoreError> {
        let profile: UserProfile = serde_json::from_str(doc)?;
        validate_user_id(&profile.user_id)?;
        for r in &profile.records {
            r.validate()?;
        }
        Ok(profile)
    }

    pub fn to_snapshot(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }
}

#[derive(Debug)]
struct UserState {
    profile: UserProfile,
    keys: HashSet<(String, i64)>,
    ids: HashSet<String>,
}

impl UserState {
    fn new(profile: UserProfile) -> Self {
        let keys = profile
            .records
            .iter()
            .map(|r| (r.item_id.clone(), r.timestamp))
            .collect();
        let ids = profile.records.iter().map(|r| r.record_id.clone()).collect();
        Self { profile, keys, ids }
    }

    fn check(&self, record: &InteractionRecord) -> Result<(), StoreError> {
        record.validate()?;
        if self
            .keys
            .contains(&(record.item_id.clone(), record.timestamp))
        {
            return Err(StoreError::DuplicateRecord {
                item_id: record.item_id.clone(),
                timestamp: record.timestamp,
            });
        }
        if self.ids.contains(&record.record_id) {
            return Err(StoreError::DuplicateRecordId(record.record_id.clone()));
        }
        Ok(())
    }

    fn push(&mut self, record: InteractionRecord) -> u64 {
        self.keys.insert((record.item_id.clone(), record.timestamp));
        self.ids.insert(record.record_id.clone());
        self.profile.records.push(record);
        self.profile.revision += 1;
        self.profile.revision
    }
}

#[derive(Debug)]
enum Backend {
    Memory,
    Files { dir: PathBuf },
}

/// Thread-safe handle over all user profiles.
///
/// Writes to one user are serialized by that user's lock; writes to
/// different users proceed in parallel.
#[derive(Debug)]
pub struct ProfileStore {
    backend: Backend,
    users: RwLock<HashMap<String, Arc<RwLock<UserState>>>>,
    // Guards lazy loading so two threads never read the same files twice.
    load_lock: Mutex<()>,
}

impl ProfileStore {
    pub fn in_memory() -> Self {
        Self {
            backend: Backend::Memory,
            users: RwLock::new(HashMap::new()),
            load_lock: Mutex::new(()),
        }
    }

    /// Opens (creating if needed) a file-backed store rooted at `root`.
    /// Profiles live in `root/profiles/`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = root.as_ref().join("profiles");
        fs::create_dir_all(&dir)?;
        Ok(Self {
            backend: Backend::Files { dir },
            users: RwLock::new(HashMap::new()),
            load_lock: Mutex::new(()),
        })
    }

    pub fn is_persistent(&self) -> bool {
        matches!(self.backend, Backend::Files { .. })
    }

    fn paths(dir: &Path, user_id: &str) -> (PathBuf, PathBuf) {
        (
            dir.join(format!("{user_id}.ndrec")),
            dir.join(format!("{user_id}.meta")),
        )
    }

    /// Returns the state for `user_id`, loading it from disk if needed.
    /// `None` means the user has never been written.
    fn state(&self, user_id: &str) -> Result<Option<Arc<RwLock<UserState>>>, StoreError> {
        validate_user_id(user_id)?;
        if let Some(s) = self.users.read().get(user_id) {
            return Ok(Some(Arc::clone(s)));
        }
        let Backend::Files { dir } = &self.backend else {
            return Ok(None);
        };
        let _guard = self.load_lock.lock();
        if let Some(s) = self.users.read().get(user_id) {
            return Ok(Some(Arc::clone(s)));
        }
        let Some(profile) = load_profile_files(dir, user_id)? else {
            return Ok(None);
        };
        let state = Arc::new(RwLock::new(UserState::new(profile)));
        self.users
            .write()
            .insert(user_id.to_string(), Arc::clone(&state));
        Ok(Some(state))
    }

    fn state_or_create(&self, user_id: &str) -> Result<Arc<RwLock<UserState>>, StoreError> {
        if let Some(s) = self.state(user_id)? {
            return Ok(s);
        }
        let _guard = self.load_lock.lock();
        let mut users = self.users.write();
        if let Some(s) = users.get(user_id) {
            return Ok(Arc::clone(s));
        }
        if let Backend::Files { dir } = &self.backend {
            let (rec, meta) = Self::paths(dir, user_id);
            OpenOptions::new().create(true).append(true).open(rec)?;
            write_meta(&meta, 0, 0)?;
        }
        let state = Arc::new(RwLock::new(UserState::new(UserProfile::empty(user_id))));
        users.insert(user_id.to_string(), Arc::clone(&state));
        Ok(state)
    }

    /// Creates an empty profile if the user does not exist yet.
    pub fn ensure_user(&self, user_id: &str) -> Result<u64, StoreError> {
        let state = self.state_or_create(user_id)?;
        let revision = state.read().profile.revision;
        Ok(revision)
    }

    pub fn append_record(&self, user_id: &str, record: InteractionRecord) -> Result<u64, StoreError> {
        let state = self.state_or_create(user_id)?;
        let mut state = state.write();
        state.check(&record)?;
        if let Backend::Files { dir } = &self.backend {
            let (rec_path, meta_path) = Self::paths(dir, user_id);
            let mut line = serde_json::to_string(&record)?;
            line.push('\n');
            let mut f = OpenOptions::new().create(true).append(true).open(rec_path)?;
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
            let next = state.profile.revision + 1;
            write_meta(&meta_path, next, state.profile.records.len() + 1)?;
        }
        Ok(state.push(record))
    }

    /// Records for `user_id` in insertion order, optionally restricted to one
    /// domain. Unknown users yield an empty list.
    pub fn read_profile(
        &self,
        user_id: &str,
        domain_filter: Option<&Domain>,
    ) -> Result<Vec<InteractionRecord>, StoreError> {
        let Some(state) = self.state(user_id)? else {
            return Ok(Vec::new());
        };
        let state = state.read();
        Ok(state
            .profile
            .records
            .iter()
            .filter(|r| domain_filter.is_none_or(|d| &r.domain == d))
            .cloned()
            .collect())
    }

    /// Current revision; 0 for unknown users.
    pub fn revision(&self, user_id: &str) -> Result<u64, StoreError> {
        Ok(match self.state(user_id)? {
            Some(s) => s.read().profile.revision,
            None => 0,
        })
    }

    pub fn profile(&self, user_id: &str) -> Result<UserProfile, StoreError> {
        match self.state(user_id)? {
            Some(s) => Ok(s.read().profile.clone()),
            None => Err(StoreError::UnknownUser(user_id.to_string())),
        }
    }

    pub fn snapshot_profile(&self, user_id: &str) -> Result<String, StoreError> {
        Ok(self.profile(user_id)?.to_snapshot())
    }

    /// User ids known to this store, sorted.
    pub fn list_users(&self) -> Result<Vec<String>, StoreError> {
        let mut ids: HashSet<String> = self.users.read().keys().cloned().collect();
        if let Backend::Files { dir } = &self.backend {
            for entry in fs::read_dir(dir)? {
                let path = entry?.path();
                if path.extension().is_some_and(|e| e == "meta") {
                    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                        ids.insert(stem.to_string());
                    }
                }
            }
        }
        let mut ids: Vec<_> = ids.into_iter().collect();
        ids.sort();
        Ok(ids)
    }
}

fn write_meta(path: &Path, revision: u64, records: usize) -> io::Result<()> {
    let tmp = path.with_extension("meta.tmp");
    {
        let mut f = File::create(&tmp)?;
        write!(f, "revision={revision}\nrecords={records}\n")?;
        f.sync_data()?;
    }
    fs::rename(tmp, path)
}

fn read_meta_revision(path: &Path) -> io::Result<Option<u64>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e),
    };
    Ok(text
        .lines()
        .find_map(|l| l.strip_prefix("revision="))
        .and_then(|v| v.trim().parse().ok()))
}

fn load_profile_files(dir: &Path, user_id: &str) -> Result<Option<UserProfile>, StoreError> {
    let (rec_path, meta_path) = ProfileStore::paths(dir, user_id);
    let meta_revision = read_meta_revision(&meta_path)?;
    let file = match File::open(&rec_path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Ok(meta_revision.map(|revision| UserProfile {
                revision,
                ..UserProfile::empty(user_id)
            }));
        }
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut valid_len = 0u64;
    let mut line = String::new();
    let mut line_no = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if !line.ends_with('\n') {
            // torn final write
            tracing::warn!(user_id, line_no, "dropping incomplete trailing record");
            break;
        }
        let body = line.trim_end();
        if !body.is_empty() {
            let record: InteractionRecord =
                serde_json::from_str(body).map_err(|e| StoreError::Corrupt {
                    user_id: user_id.to_string(),
                    line: line_no,
                    reason: e.to_string(),
                })?;
            records.push(record);
        }
        valid_len += n as u64;
    }
    let total_len = fs::metadata(&rec_path)?.len();
    if valid_len < total_len {
        OpenOptions::new()
            .write(true)
            .open(&rec_path)?
            .set_len(valid_len)?;
    }
    // Each accepted append bumps the revision once, so the record count is a
    // floor for it even when the meta file lags behind.
    let revision = meta_revision
        .unwrap_or(0)
        .max(records.len() as u64);
    Ok(Some(UserProfile {
        user_id: user_id.to_string(),
        revision,
        records,
    }))
}
