use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use esiqa_core::data::DatasetManifest;
use esiqa_core::subjective::{read_ratings, RatingRecord, RATINGS_HEADER};
use esiqa_core::DisplayMode;

use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Session {
    pub session_id: String,
    pub participant_id: String,
    pub mode: DisplayMode,
    pub images: Vec<String>,
    pub cursor: usize,
    pub seed: u64,
    pub created_at: DateTime<Utc>,
}

impl Session {
    pub fn current(&self) -> Option<&str> {
        self.images.get(self.cursor).map(String::as_str)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JournalLine {
    session_id: String,
    participant_id: String,
    mode: DisplayMode,
    seed: u64,
    created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SubmitError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("score {0} outside 1..=10")]
    OutOfRange(i64),
    #[error("expected image {expected:?}, got `{got}`")]
    OutOfOrder { expected: Option<String>, got: String },
    #[error("could not persist rating: {0}")]
    Persist(String),
}

struct Inner {
    sessions: HashMap<String, Session>,
    by_participant: HashMap<(String, DisplayMode), String>,
    log: File,
    journal: File,
}

/// Sessions plus the two append-only files. One lock serializes every mutation.
pub struct Store {
    manifest: DatasetManifest,
    images: Vec<String>,
    seed: u64,
    log_path: PathBuf,
    inner: Mutex<Inner>,
}

pub fn journal_path(log: &Path) -> PathBuf {
    let mut s = log.as_os_str().to_owned();
    s.push(".sessions");
    PathBuf::from(s)
}

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for &b in p.iter().chain(&[0xff]) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

fn session_id(participant: &str, mode: DisplayMode) -> String {
    format!("s{:016x}", fnv1a(&[participant.as_bytes(), mode.as_str().as_bytes()]))
}

/// Drops an unterminated final line (a write that was never acknowledged).
fn truncate_partial_tail(path: &Path) -> std::io::Result<()> {
    let mut f = OpenOptions::new().read(true).write(true).open(path)?;
    let len = f.metadata()?.len();
    if len == 0 {
        return Ok(());
    }
    let mut buf = Vec::new();
    f.read_to_end(&mut buf)?;
    if buf.last() != Some(&b'\n') {
        let keep = buf.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        log::warn!("{}: dropping {} bytes of unterminated tail", path.display(), len as usize - keep);
        f.set_len(keep as u64)?;
        f.sync_all()?;
    }
    Ok(())
}

fn open_append(path: &Path) -> std::io::Result<File> {
    OpenOptions::new().create(true).append(true).read(true).open(path)
}

/// Appends and syncs one line; a failed write is rolled back so the file
/// never keeps a torn line.
fn append_line(f: &mut File, line: &str) -> std::io::Result<()> {
    let before = f.metadata()?.len();
    let mut bytes = Vec::with_capacity(line.len() + 1);
    bytes.extend_from_slice(line.as_bytes());
    bytes.push(b'\n');
    let res = f.write_all(&bytes).and_then(|_| f.sync_data());
    if res.is_err() {
        let _ = f.set_len(before);
    }
    res
}

impl Store {
    pub fn open(manifest: DatasetManifest, log_path: &Path, seed: u64) -> Result<Self, ServiceError> {
        let mut images: Vec<String> = manifest.entries.iter().map(|e| e.image_id.clone()).collect();
        images.sort();
        let jpath = journal_path(log_path);
        for p in [log_path, jpath.as_path()] {
            if p.exists() {
                truncate_partial_tail(p)?;
            }
        }
        let mut log = open_append(log_path)?;
        if log.metadata()?.len() == 0 {
            append_line(&mut log, &RATINGS_HEADER.join(","))?;
        }
        let journal = open_append(&jpath)?;
        let store = Store {
            manifest,
            images,
            seed,
            log_path: log_path.to_path_buf(),
            inner: Mutex::new(Inner { sessions: HashMap::new(), by_participant: HashMap::new(), log, journal }),
        };
        store.replay(&jpath)?;
        Ok(store)
    }

    fn permutation(&self, seed: u64) -> Vec<String> {
        let mut order = self.images.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order
    }

    fn replay(&self, journal: &Path) -> Result<(), ServiceError> {
        let mut inner = self.inner.lock().expect("store lock");
        for (n, line) in BufReader::new(File::open(journal)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let j: JournalLine =
                serde_json::from_str(&line).map_err(|e| ServiceError::Journal { line: n + 1, msg: e.to_string() })?;
            let session = Session {
                session_id: j.session_id.clone(),
                participant_id: j.participant_id.clone(),
                mode: j.mode,
                images: self.permutation(j.seed),
                cursor: 0,
                seed: j.seed,
                created_at: j.created_at,
            };
            inner.by_participant.insert((j.participant_id, j.mode), j.session_id.clone());
            inner.sessions.insert(j.session_id, session);
        }
        let mut log = File::open(&self.log_path)?;
        log.seek(SeekFrom::Start(0))?;
        for r in read_ratings(BufReader::new(log))? {
            let id =
                inner.by_participant.get(&(r.participant_id.clone(), r.mode)).cloned().ok_or_else(|| {
                    ServiceError::Replay(format!("rating by `{}` without a session", r.participant_id))
                })?;
            let s = inner.sessions.get_mut(&id).expect("indexed session");
            if s.current() != Some(r.image_id.as_str()) {
                return Err(ServiceError::Replay(format!(
                    "`{}` rated `{}` but the session expected {:?}",
                    r.participant_id,
                    r.image_id,
                    s.current()
                )));
            }
            s.cursor += 1;
        }
        Ok(())
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    /// Returns the existing session for `(participant, mode)` or creates one.
    /// The flag is true when a new session was created.
    pub fn create_session(
        &self,
        participant: &str,
        mode: DisplayMode,
        seed: Option<u64>,
    ) -> Result<(Session, bool), String> {
        if participant.trim().is_empty() {
            return Err("participant_id must not be empty".into());
        }
        if self.images.is_empty() {
            return Err("manifest has no images".into());
        }
        let mut inner = self.inner.lock().expect("store lock");
        if let Some(id) = inner.by_participant.get(&(participant.to_string(), mode)) {
            return Ok((inner.sessions[id].clone(), false));
        }
        let id = session_id(participant, mode);
        let seed =
            seed.unwrap_or_else(|| self.seed ^ fnv1a(&[participant.as_bytes(), mode.as_str().as_bytes(), b"order"]));
        let created_at = Utc::now();
        let line = serde_json::to_string(&JournalLine {
            session_id: id.clone(),
            participant_id: participant.to_string(),
            mode,
            seed,
            created_at,
        })
        .expect("serializable");
        append_line(&mut inner.journal, &line).map_err(|e| format!("journal write failed: {e}"))?;
        let session = Session {
            session_id: id.clone(),
            participant_id: participant.to_string(),
            mode,
            images: self.permutation(seed),
            cursor: 0,
            seed,
            created_at,
        };
        inner.by_participant.insert((participant.to_string(), mode), id.clone());
        inner.sessions.insert(id, session.clone());
        Ok((session, true))
    }

    pub fn session(&self, id: &str) -> Option<Session> {
        self.inner.lock().expect("store lock").sessions.get(id).cloned()
    }

    /// Validates, appends and syncs one rating, then advances the cursor.
    pub fn submit(&self, id: &str, image_id: &str, score: i64) -> Result<Session, SubmitError> {
        let mut inner = self.inner.lock().expect("store lock");
        let s = inner.sessions.get(id).ok_or_else(|| SubmitError::UnknownSession(id.to_string()))?;
        if !(1..=10).contains(&score) {
            return Err(SubmitError::OutOfRange(score));
        }
        if s.current() != Some(image_id) {
            return Err(SubmitError::OutOfOrder { expected: s.current().map(String::from), got: image_id.to_string() });
        }
        let record = RatingRecord::new(&s.participant_id, image_id, s.mode, score, Utc::now())
            .map_err(|e| SubmitError::Persist(e.to_string()))?;
        let line = record.csv_line().map_err(|e| SubmitError::Persist(e.to_string()))?;
        append_line(&mut inner.log, line.trim_end()).map_err(|e| SubmitError::Persist(e.to_string()))?;
        let s = inner.sessions.get_mut(id).expect("checked above");
        s.cursor += 1;
        Ok(s.clone())
    }

    /// The log file as written.
    pub fn export(&self) -> std::io::Result<Vec<u8>> {
        let _guard = self.inner.lock().expect("store lock");
        std::fs::read(&self.log_path)
    }

    /// Number of ratings per `(participant, mode)`, for diagnostics.
    pub fn progress(&self) -> BTreeMap<(String, DisplayMode), usize> {
        let inner = self.inner.lock().expect("store lock");
        inner.sessions.values().map(|s| ((s.participant_id.clone(), s.mode), s.cursor)).collect()
    }
}
