//! Append-only JSON-lines event log with a snapshot cache.
//!
//! `events.jsonl` is the source of truth: one event per line, flushed to disk
//! before the append returns. `snapshot.json` holds a serialized [`State`]
//! and the seq it covers; it is only ever a shortcut for replay.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::state::{ApplyError, Change, State};

pub const LOG_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
const SNAPSHOT_EVERY: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Registered,
    Ingested,
    Quality,
    ObjectiveSet,
    BaselineConfirmed,
    DayExcluded,
    ModelTrained,
    MatrixBuilt,
    Selection,
    TargetsSet,
    DailyStatus,
    MetricsComputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    /// Absent for cohort-level events.
    pub participant_id: Option<String>,
    pub kind: EventKind,
    pub payload: Value,
    pub timestamp: DateTime<Utc>,
    pub idempotency_key: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt event log at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error(transparent)]
    Apply(#[from] ApplyError),
    #[error("payload does not serialize: {0}")]
    Payload(String),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    state: State,
}

pub struct Store {
    dir: PathBuf,
    log: File,
    events: Vec<Event>,
    state: State,
}

/// Reads and parses every line of the log, checking seq order.
pub fn read_log(path: &Path) -> Result<Vec<Event>, StoreError> {
    let mut events: Vec<Event> = Vec::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(events),
        Err(e) => return Err(io(path)(e)),
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: Event =
            serde_json::from_str(&line).map_err(|e| StoreError::Corrupt { line: line_no, message: e.to_string() })?;
        if let Some(prev) = events.last() {
            if ev.seq <= prev.seq {
                return Err(StoreError::Corrupt {
                    line: line_no,
                    message: format!("seq {} does not follow {}", ev.seq, prev.seq),
                });
            }
        }
        events.push(ev);
    }
    Ok(events)
}

/// Rebuilds state from the log alone, ignoring any snapshot.
pub fn replay(events: &[Event]) -> Result<State, StoreError> {
    let mut state = State::default();
    for (i, ev) in events.iter().enumerate() {
        state.apply(ev).map_err(|e| StoreError::Corrupt { line: i + 1, message: e.to_string() })?;
    }
    Ok(state)
}

impl Store {
    /// Opens (creating if needed) the store in `dir`. A usable snapshot
    /// shortens replay; a stale or unreadable one is ignored.
    pub fn open(dir: impl AsRef<Path>) -> Result<Store, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        let log_path = dir.join(LOG_FILE);
        let events = read_log(&log_path)?;
        let state = match Self::load_snapshot(&dir, &events) {
            Some((snap, from)) => {
                let mut state = snap;
                for (i, ev) in events.iter().enumerate().skip(from) {
                    state.apply(ev).map_err(|e| StoreError::Corrupt { line: i + 1, message: e.to_string() })?;
                }
                state
            }
            None => replay(&events)?,
        };
        let log = OpenOptions::new().create(true).append(true).open(&log_path).map_err(io(&log_path))?;
        Ok(Store { dir, log, events, state })
    }

    fn load_snapshot(dir: &Path, events: &[Event]) -> Option<(State, usize)> {
        let text = fs::read_to_string(dir.join(SNAPSHOT_FILE)).ok()?;
        let snap: Snapshot = match serde_json::from_str(&text) {
            Ok(s) => s,
            Err(e) => {
                tracing::warn!("ignoring unreadable snapshot: {e}");
                return None;
            }
        };
        if snap.seq == 0 {
            return None;
        }
        let pos = events.iter().position(|e| e.seq == snap.seq)?;
        (snap.state.last_seq == snap.seq).then_some((snap.state, pos + 1))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn event(&self, seq: u64) -> Option<&Event> {
        self.events.binary_search_by_key(&seq, |e| e.seq).ok().map(|i| &self.events[i])
    }

    pub fn by_key(&self, key: &str) -> Option<&Event> {
        self.state.idempotency.get(key).and_then(|seq| self.event(*seq))
    }

    /// Validates, writes and syncs one event, then applies it.
    pub fn append<P: Serialize>(
        &mut self,
        participant: Option<&str>,
        kind: EventKind,
        payload: &P,
        timestamp: DateTime<Utc>,
        idempotency_key: Option<String>,
    ) -> Result<Event, StoreError> {
        let payload = serde_json::to_value(payload).map_err(|e| StoreError::Payload(e.to_string()))?;
        let ev = Event {
            seq: self.state.last_seq + 1,
            participant_id: participant.map(str::to_string),
            kind,
            payload,
            timestamp,
            idempotency_key,
        };
        let change = Change::decode(&ev)?;
        let mut line = serde_json::to_string(&ev).map_err(|e| StoreError::Payload(e.to_string()))?;
        line.push('\n');
        let path = self.dir.join(LOG_FILE);
        self.log.write_all(line.as_bytes()).map_err(io(&path))?;
        self.log.sync_data().map_err(io(&path))?;
        self.state.commit(&ev, change)?;
        self.events.push(ev.clone());
        if ev.seq.is_multiple_of(SNAPSHOT_EVERY) {
            if let Err(e) = self.snapshot() {
                tracing::warn!("snapshot failed: {e}");
            }
        }
        Ok(ev)
    }

    /// Writes the current state as the snapshot (atomically via rename).
    pub fn snapshot(&self) -> Result<(), StoreError> {
        let path = self.dir.join(SNAPSHOT_FILE);
        let tmp = self.dir.join("snapshot.json.tmp");
        let body = serde_json::to_vec(&Snapshot { seq: self.state.last_seq, state: self.state.clone() })
            .map_err(|e| StoreError::Payload(e.to_string()))?;
        let mut f = File::create(&tmp).map_err(io(&tmp))?;
        f.write_all(&body).map_err(io(&tmp))?;
        f.sync_data().map_err(io(&tmp))?;
        fs::rename(&tmp, &path).map_err(io(&path))
    }
}
