//! File-backed data server: one directory per store.
//!
//! Definition stores keep one file per key holding a single framed JSON
//! document; every mutation is written to a temporary file, synced and
//! renamed into place. Append-only stores keep a `log` file of batch frames,
//! one per `bulk_append`, each starting with a CRC-32 of its contents so a
//! torn tail is detected and cut off on open. See `docs/repository-format.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mf_core::manager::{
    EventHandlerDef, Invocation, NotificationRecord, PollingDefinition, RecordSink, Sample, SampleSink,
    SubscriptionRecord,
};
use mf_core::wire::{frame, Deframer};
use mf_core::Oid;
use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;
const VERSION_FILE: &str = "VERSION";
const SNAPSHOT_MAGIC: &str = "mf-repository-snapshot";
const LOG_FILE: &str = "log";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StoreName {
    Subscriptions,
    NotificationSubscriptions,
    Topology,
    HandlerDefs,
    InvocationLog,
    PushedData,
    PushedNotifications,
    PollingDefs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreKind {
    Definition,
    AppendOnly,
    /// Read-only projection of another store.
    View,
}

impl StoreName {
    pub const ALL: [StoreName; 8] = [
        StoreName::Subscriptions,
        StoreName::NotificationSubscriptions,
        StoreName::Topology,
        StoreName::HandlerDefs,
        StoreName::InvocationLog,
        StoreName::PushedData,
        StoreName::PushedNotifications,
        StoreName::PollingDefs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StoreName::Subscriptions => "subscriptions",
            StoreName::NotificationSubscriptions => "notification-subscriptions",
            StoreName::Topology => "topology",
            StoreName::HandlerDefs => "handler-defs",
            StoreName::InvocationLog => "invocation-log",
            StoreName::PushedData => "pushed-data",
            StoreName::PushedNotifications => "pushed-notifications",
            StoreName::PollingDefs => "polling-defs",
        }
    }

    pub fn kind(self) -> StoreKind {
        match self {
            StoreName::InvocationLog | StoreName::PushedData | StoreName::PushedNotifications => StoreKind::AppendOnly,
            StoreName::NotificationSubscriptions => StoreKind::View,
            _ => StoreKind::Definition,
        }
    }

    fn accepts(self, record: &Record) -> bool {
        matches!(
            (self, record),
            (StoreName::Subscriptions, Record::Subscription(_))
                | (StoreName::Topology, Record::Topology(_))
                | (StoreName::HandlerDefs, Record::HandlerDef(_))
                | (StoreName::PollingDefs, Record::PollingDef(_))
                | (StoreName::InvocationLog, Record::Invocation(_))
                | (StoreName::PushedData, Record::Sample(_))
                | (StoreName::PushedNotifications, Record::Notification(_))
        )
    }
}

impl fmt::Display for StoreName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StoreName {
    type Err = RepoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StoreName::ALL.into_iter().find(|n| n.as_str() == s).ok_or_else(|| RepoError::UnknownStore(s.into()))
    }
}

/// A device on the network map, authored by hand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyNode {
    pub device: String,
    pub host: String,
    pub port: u16,
    #[serde(default)]
    pub x: i32,
    #[serde(default)]
    pub y: i32,
    #[serde(default)]
    pub links: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "doc", rename_all = "kebab-case")]
pub enum Record {
    Subscription(SubscriptionRecord),
    Topology(TopologyNode),
    HandlerDef(EventHandlerDef),
    PollingDef(PollingDefinition),
    Invocation(Invocation),
    Sample(Sample),
    Notification(NotificationRecord),
}

impl Record {
    /// Key within a definition store.
    pub fn key(&self) -> String {
        match self {
            Record::Subscription(r) => subscription_key(&r.agent, &r.subscription.id),
            Record::Topology(n) => n.device.clone(),
            Record::HandlerDef(h) => h.id.clone(),
            Record::PollingDef(p) => p.id.clone(),
            Record::Invocation(i) => format!("{}/{}", i.event_id, i.handler_id),
            Record::Sample(s) => format!("{}/{}/{}", s.device, s.oid, s.time),
            Record::Notification(n) => format!("{}/{}/{}", n.device, n.name, n.time),
        }
    }

    fn device(&self) -> Option<&str> {
        match self {
            Record::Subscription(r) => Some(&r.agent),
            Record::Topology(n) => Some(&n.device),
            Record::PollingDef(p) => Some(&p.agent),
            Record::Sample(s) => Some(&s.device),
            Record::Notification(n) => Some(&n.device),
            Record::HandlerDef(_) | Record::Invocation(_) => None,
        }
    }

    fn oid(&self) -> Option<&Oid> {
        match self {
            Record::Sample(s) => Some(&s.oid),
            _ => None,
        }
    }

    fn time(&self) -> Option<u64> {
        match self {
            Record::Sample(s) => Some(s.time),
            Record::Notification(n) => Some(n.time),
            Record::Invocation(i) => Some(i.timestamp),
            _ => None,
        }
    }
}

pub fn subscription_key(agent: &str, id: &str) -> String {
    format!("{agent}/{id}")
}

/// Selection for `list`. Each present field must match; records without
/// the attribute (e.g. no time on a handler definition) never match a set field.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Filter {
    pub device: Option<String>,
    pub oid: Option<Oid>,
    /// Inclusive lower bound.
    pub from: Option<u64>,
    /// Exclusive upper bound.
    pub to: Option<u64>,
}

impl Filter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn matches(&self, r: &Record) -> bool {
        if let Some(d) = &self.device {
            if r.device() != Some(d.as_str()) {
                return false;
            }
        }
        if let Some(o) = &self.oid {
            if r.oid() != Some(o) {
                return false;
            }
        }
        if self.from.is_some() || self.to.is_some() {
            let Some(t) = r.time() else { return false };
            if self.from.is_some_and(|f| t < f) || self.to.is_some_and(|e| t >= e) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RepoError {
    #[error("unknown store `{0}`")]
    UnknownStore(String),
    #[error("no record `{key}` in store {store}")]
    MissingKey { store: StoreName, key: String },
    #[error("store {0} is append-only")]
    AppendOnly(StoreName),
    #[error("store {0} is not append-only")]
    NotAppendOnly(StoreName),
    #[error("store {0} is a read-only view")]
    ReadOnlyView(StoreName),
    #[error("store {store} does not hold {record} records")]
    WrongRecord { store: StoreName, record: &'static str },
    #[error("repository format version {found}, this build reads {expected}")]
    VersionMismatch { found: String, expected: u32 },
    #[error("restore target {0} is not empty")]
    TargetNotEmpty(PathBuf),
    #[error("corrupt data in {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn record_type(r: &Record) -> &'static str {
    match r {
        Record::Subscription(_) => "subscription",
        Record::Topology(_) => "topology",
        Record::HandlerDef(_) => "handler-def",
        Record::PollingDef(_) => "polling-def",
        Record::Invocation(_) => "invocation",
        Record::Sample(_) => "sample",
        Record::Notification(_) => "notification",
    }
}

/// Filesystem-safe spelling of a key: bytes outside `[A-Za-z0-9._-]` become `%XX`.
pub(crate) fn file_stem(key: &str) -> String {
    const KEEP: &AsciiSet = &NON_ALPHANUMERIC.remove(b'.').remove(b'_').remove(b'-');
    utf8_percent_encode(key, KEEP).to_string()
}

fn encode_record(r: &Record) -> Vec<u8> {
    let json = serde_json::to_vec(r).expect("records always serialize");
    frame(&json).expect("record below frame limit")
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    File::open(dir)?.sync_all()
}

/// Writes `dir/name` through a synced temporary file and a rename.
pub(crate) fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> io::Result<()> {
    let tmp = dir.join(format!("{name}.tmp"));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, dir.join(name))?;
    sync_dir(dir)
}

/// Outcome of scanning a log file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LogRecovery {
    pub batches: u64,
    pub records: u64,
    /// Bytes of a torn or damaged tail that were cut off.
    pub truncated_bytes: u64,
}

#[derive(Debug)]
pub struct Repository {
    root: PathBuf,
    defs: BTreeMap<StoreName, BTreeMap<String, Record>>,
    logs: BTreeMap<StoreName, Vec<Record>>,
    recovery: BTreeMap<StoreName, LogRecovery>,
    /// Pushed-data positions by (device, oid), ordered by (time, position).
    index: BTreeMap<(String, Oid), BTreeSet<(u64, usize)>>,
}

impl Repository {
    /// Opens (creating if needed) a repository rooted at `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, RepoError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let version_path = root.join(VERSION_FILE);
        match fs::read_to_string(&version_path) {
            Ok(text) => {
                let found = text.trim();
                if found != FORMAT_VERSION.to_string() {
                    return Err(RepoError::VersionMismatch { found: found.into(), expected: FORMAT_VERSION });
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                fs::write(&version_path, format!("{FORMAT_VERSION}\n"))?;
            }
            Err(e) => return Err(e.into()),
        }
        let mut repo = Repository {
            root,
            defs: BTreeMap::new(),
            logs: BTreeMap::new(),
            recovery: BTreeMap::new(),
            index: BTreeMap::new(),
        };
        for store in StoreName::ALL {
            match store.kind() {
                StoreKind::View => continue,
                StoreKind::Definition => {
                    let dir = repo.store_dir(store);
                    fs::create_dir_all(&dir)?;
                    let docs = load_definitions(&dir)?;
                    repo.defs.insert(store, docs);
                }
                StoreKind::AppendOnly => {
                    let dir = repo.store_dir(store);
                    fs::create_dir_all(&dir)?;
                    let (records, rec) = recover_log(&dir.join(LOG_FILE))?;
                    if rec.truncated_bytes > 0 {
                        log::warn!("{store}: dropped {} bytes of torn tail", rec.truncated_bytes);
                    }
                    if store == StoreName::PushedData {
                        repo.index_samples(&records, 0);
                    }
                    repo.logs.insert(store, records);
                    repo.recovery.insert(store, rec);
                }
            }
        }
        Ok(repo)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn store_dir(&self, store: StoreName) -> PathBuf {
        self.root.join(store.as_str())
    }

    /// What opening found in an append-only store's log.
    pub fn recovery(&self, store: StoreName) -> Option<LogRecovery> {
        self.recovery.get(&store).copied()
    }

    fn index_samples(&mut self, records: &[Record], first: usize) {
        for (i, r) in records.iter().enumerate() {
            if let Record::Sample(s) = r {
                self.index.entry((s.device.clone(), s.oid.clone())).or_default().insert((s.time, first + i));
            }
        }
    }

    /// Log positions of the samples matching `filter`, in log order.
    fn sample_positions(&self, filter: &Filter) -> Vec<usize> {
        let from = filter.from.unwrap_or(0);
        let to = filter.to.unwrap_or(u64::MAX);
        if from >= to {
            return Vec::new();
        }
        let keys: Box<dyn Iterator<Item = (&(String, Oid), &BTreeSet<(u64, usize)>)>> = match &filter.device {
            Some(d) => Box::new(
                self.index
                    .range((d.clone(), Oid::from_slice(&[0]))..)
                    .take_while(move |((dev, _), _)| dev == d),
            ),
            None => Box::new(self.index.iter()),
        };
        let mut out: Vec<usize> = keys
            .filter(|((_, oid), _)| filter.oid.as_ref().is_none_or(|o| o == oid))
            .flat_map(|(_, times)| times.range((from, 0)..(to, 0)).map(|&(_, pos)| pos))
            .collect();
        out.sort_unstable();
        out
    }

    fn check(&self, store: StoreName, record: &Record) -> Result<(), RepoError> {
        if store.accepts(record) {
            Ok(())
        } else {
            Err(RepoError::WrongRecord { store, record: record_type(record) })
        }
    }

    /// Stores a definition under its natural key. Durable on return.
    pub fn put(&mut self, store: StoreName, record: Record) -> Result<String, RepoError> {
        match store.kind() {
            StoreKind::AppendOnly => return Err(RepoError::AppendOnly(store)),
            StoreKind::View => return Err(RepoError::ReadOnlyView(store)),
            StoreKind::Definition => {}
        }
        self.check(store, &record)?;
        let key = record.key();
        let dir = self.store_dir(store);
        write_atomic(&dir, &format!("{}.rec", file_stem(&key)), &encode_record(&record))?;
        self.defs.entry(store).or_default().insert(key.clone(), record);
        Ok(key)
    }

    pub fn get(&self, store: StoreName, key: &str) -> Result<Record, RepoError> {
        let missing = || RepoError::MissingKey { store, key: key.into() };
        match store.kind() {
            StoreKind::Definition => self.defs[&store].get(key).cloned().ok_or_else(missing),
            StoreKind::View => self
                .notification_view()
                .find(|r| r.key() == key)
                .ok_or_else(missing),
            StoreKind::AppendOnly => self.logs[&store].iter().find(|r| r.key() == key).cloned().ok_or_else(missing),
        }
    }

    pub fn delete(&mut self, store: StoreName, key: &str) -> Result<(), RepoError> {
        match store.kind() {
            StoreKind::AppendOnly => return Err(RepoError::AppendOnly(store)),
            StoreKind::View => return Err(RepoError::ReadOnlyView(store)),
            StoreKind::Definition => {}
        }
        if self.defs.get_mut(&store).and_then(|m| m.remove(key)).is_none() {
            return Err(RepoError::MissingKey { store, key: key.into() });
        }
        let dir = self.store_dir(store);
        fs::remove_file(dir.join(format!("{}.rec", file_stem(key))))?;
        sync_dir(&dir)?;
        Ok(())
    }

    fn notification_view(&self) -> impl Iterator<Item = Record> + '_ {
        self.defs[&StoreName::Subscriptions].values().filter_map(|r| match r {
            Record::Subscription(s) if !s.subscription.notification_filter.is_empty() => Some(r.clone()),
            _ => None,
        })
    }

    pub fn list(&self, store: StoreName, filter: &Filter) -> Result<Vec<Record>, RepoError> {
        Ok(match store.kind() {
            StoreKind::Definition => self.defs[&store].values().filter(|r| filter.matches(r)).cloned().collect(),
            StoreKind::View => self.notification_view().filter(|r| filter.matches(r)).collect(),
            StoreKind::AppendOnly if store == StoreName::PushedData => {
                let log = &self.logs[&store];
                self.sample_positions(filter).into_iter().map(|i| log[i].clone()).collect()
            }
            StoreKind::AppendOnly => self.logs[&store].iter().filter(|r| filter.matches(r)).cloned().collect(),
        })
    }

    pub fn len(&self, store: StoreName) -> usize {
        match store.kind() {
            StoreKind::Definition => self.defs[&store].len(),
            StoreKind::View => self.notification_view().count(),
            StoreKind::AppendOnly => self.logs[&store].len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        StoreName::ALL.iter().all(|&s| self.len(s) == 0)
    }

    /// Appends all records as one batch or none of them. Durable on return.
    pub fn bulk_append(&mut self, store: StoreName, records: &[Record]) -> Result<usize, RepoError> {
        if store.kind() != StoreKind::AppendOnly {
            return Err(RepoError::NotAppendOnly(store));
        }
        for r in records {
            self.check(store, r)?;
        }
        if records.is_empty() {
            return Ok(0);
        }
        let batch = encode_batch(records);
        let path = self.store_dir(store).join(LOG_FILE);
        let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
        let before = f.metadata()?.len();
        if let Err(e) = f.write_all(&batch).and_then(|_| f.sync_data()) {
            // leave no partial batch behind if we can help it
            let _ = f.set_len(before);
            return Err(e.into());
        }
        let first = self.logs[&store].len();
        if store == StoreName::PushedData {
            self.index_samples(records, first);
        }
        self.logs.get_mut(&store).expect("log store loaded").extend_from_slice(records);
        Ok(records.len())
    }

    pub fn subscriptions(&self) -> Vec<SubscriptionRecord> {
        self.defs[&StoreName::Subscriptions]
            .values()
            .filter_map(|r| match r {
                Record::Subscription(s) => Some(s.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn handler_defs(&self) -> Vec<EventHandlerDef> {
        self.defs[&StoreName::HandlerDefs]
            .values()
            .filter_map(|r| match r {
                Record::HandlerDef(h) => Some(h.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn polling_defs(&self) -> Vec<PollingDefinition> {
        self.defs[&StoreName::PollingDefs]
            .values()
            .filter_map(|r| match r {
                Record::PollingDef(p) => Some(p.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn topology(&self) -> Vec<TopologyNode> {
        self.defs[&StoreName::Topology]
            .values()
            .filter_map(|r| match r {
                Record::Topology(t) => Some(t.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn samples(&self, filter: &Filter) -> Vec<Sample> {
        let log = &self.logs[&StoreName::PushedData];
        self.sample_positions(filter)
            .into_iter()
            .filter_map(|i| match &log[i] {
                Record::Sample(s) => Some(s.clone()),
                _ => None,
            })
            .collect()
    }

    /// Writes every store's contents to one snapshot file.
    pub fn snapshot(&self, path: impl AsRef<Path>) -> Result<(), RepoError> {
        let mut out = format!("{SNAPSHOT_MAGIC} {FORMAT_VERSION}\n").into_bytes();
        for store in StoreName::ALL {
            let records: Vec<&Record> = match store.kind() {
                StoreKind::View => continue,
                StoreKind::Definition => self.defs[&store].values().collect(),
                StoreKind::AppendOnly => self.logs[&store].iter().collect(),
            };
            for r in records {
                let entry = SnapshotEntry { store: store.as_str().into(), record: r.clone() };
                let json = serde_json::to_vec(&entry).expect("records always serialize");
                out.extend_from_slice(&frame(&json).expect("record below frame limit"));
            }
        }
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&out)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Rebuilds a repository at `root` (which must be absent or empty) from a snapshot.
    pub fn restore(snapshot: impl AsRef<Path>, root: impl AsRef<Path>) -> Result<Self, RepoError> {
        let snapshot = snapshot.as_ref();
        let root = root.as_ref();
        let bytes = fs::read(snapshot)?;
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| RepoError::Corrupt {
            path: snapshot.into(),
            message: "missing header line".into(),
        })?;
        let header = String::from_utf8_lossy(&bytes[..nl]).to_string();
        let version = header.strip_prefix(SNAPSHOT_MAGIC).map(str::trim);
        match version {
            Some(v) if v == FORMAT_VERSION.to_string() => {}
            Some(v) => return Err(RepoError::VersionMismatch { found: v.into(), expected: FORMAT_VERSION }),
            None => {
                return Err(RepoError::Corrupt { path: snapshot.into(), message: format!("bad header `{header}`") })
            }
        }
        if root.exists() && fs::read_dir(root)?.next().is_some() {
            return Err(RepoError::TargetNotEmpty(root.into()));
        }
        let mut d = Deframer::new();
        d.push(&bytes[nl + 1..]);
        let corrupt = |m: String| RepoError::Corrupt { path: snapshot.into(), message: m };
        let mut defs: Vec<(StoreName, Record)> = Vec::new();
        let mut logs: BTreeMap<StoreName, Vec<Record>> = BTreeMap::new();
        while let Some(payload) = d.next_frame().map_err(|e| corrupt(e.to_string()))? {
            let entry: SnapshotEntry = serde_json::from_slice(&payload).map_err(|e| corrupt(e.to_string()))?;
            let store: StoreName = entry.store.parse()?;
            match store.kind() {
                StoreKind::AppendOnly => logs.entry(store).or_default().push(entry.record),
                _ => defs.push((store, entry.record)),
            }
        }
        d.finish().map_err(|e| corrupt(e.to_string()))?;
        let mut repo = Repository::open(root)?;
        for (store, r) in defs {
            repo.put(store, r)?;
        }
        for (store, records) in logs {
            repo.bulk_append(store, &records)?;
        }
        Ok(repo)
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotEntry {
    store: String,
    record: Record,
}

fn encode_batch(records: &[Record]) -> Vec<u8> {
    let mut inner = Vec::new();
    for r in records {
        inner.extend_from_slice(&encode_record(r));
    }
    let mut payload = crc32fast::hash(&inner).to_be_bytes().to_vec();
    payload.extend_from_slice(&inner);
    frame(&payload).expect("batch below frame limit")
}

fn load_definitions(dir: &Path) -> Result<BTreeMap<String, Record>, RepoError> {
    let mut docs = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        match path.extension().and_then(|e| e.to_str()) {
            Some("rec") => {}
            Some("tmp") => {
                // an interrupted put; the previous version (if any) is intact
                fs::remove_file(&path)?;
                continue;
            }
            _ => continue,
        }
        let bytes = fs::read(&path)?;
        let corrupt = |m: String| RepoError::Corrupt { path: path.clone(), message: m };
        let mut d = Deframer::new();
        d.push(&bytes);
        let payload = d.next_frame().map_err(|e| corrupt(e.to_string()))?.ok_or_else(|| corrupt("empty".into()))?;
        let record: Record = serde_json::from_slice(&payload).map_err(|e| corrupt(e.to_string()))?;
        docs.insert(record.key(), record);
    }
    Ok(docs)
}

/// Reads a log, cutting it back to the last intact batch.
fn recover_log(path: &Path) -> Result<(Vec<Record>, LogRecovery), RepoError> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes)?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((Vec::new(), LogRecovery::default())),
        Err(e) => return Err(e.into()),
    }
    let mut records = Vec::new();
    let mut rec = LogRecovery::default();
    let mut pos = 0usize;
    while pos + 4 <= bytes.len() {
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let end = pos + 4 + len;
        if len < 4 || end > bytes.len() {
            break;
        }
        let payload = &bytes[pos + 4..end];
        let (crc, inner) = payload.split_at(4);
        if crc32fast::hash(inner) != u32::from_be_bytes(crc.try_into().unwrap()) {
            break;
        }
        let mut d = Deframer::new();
        d.push(inner);
        let mut batch = Vec::new();
        let corrupt = |m: String| RepoError::Corrupt { path: path.into(), message: m };
        while let Some(doc) = d.next_frame().map_err(|e| corrupt(e.to_string()))? {
            batch.push(serde_json::from_slice::<Record>(&doc).map_err(|e| corrupt(e.to_string()))?);
        }
        d.finish().map_err(|e| corrupt(e.to_string()))?;
        rec.batches += 1;
        rec.records += batch.len() as u64;
        records.extend(batch);
        pos = end;
    }
    if pos < bytes.len() {
        rec.truncated_bytes = (bytes.len() - pos) as u64;
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(pos as u64)?;
        f.sync_all()?;
    }
    Ok((records, rec))
}

impl SampleSink for Repository {
    fn store_samples(&mut self, samples: &[Sample]) -> Result<(), String> {
        let records: Vec<Record> = samples.iter().cloned().map(Record::Sample).collect();
        self.bulk_append(StoreName::PushedData, &records).map(|_| ()).map_err(|e| e.to_string())
    }

    fn store_notifications(&mut self, notifications: &[NotificationRecord]) -> Result<(), String> {
        let records: Vec<Record> = notifications.iter().cloned().map(Record::Notification).collect();
        self.bulk_append(StoreName::PushedNotifications, &records).map(|_| ()).map_err(|e| e.to_string())
    }
}

impl RecordSink for Repository {
    fn store_invocations(&mut self, invocations: &[Invocation]) -> Result<(), String> {
        let records: Vec<Record> = invocations.iter().cloned().map(Record::Invocation).collect();
        self.bulk_append(StoreName::InvocationLog, &records).map(|_| ()).map_err(|e| e.to_string())
    }
}

/// One line of text per record, for the `dump` command.
pub fn dump_line(r: &Record) -> String {
    serde_json::to_string(r).expect("records always serialize")
}
