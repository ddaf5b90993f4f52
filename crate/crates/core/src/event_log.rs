//! Durable, append-only, topic-partitioned log.
//!
//! Every topic is a directory under the log root holding two files:
//!
//! ```text
//! <root>/<topic segments...>/.index   [MAGIC "RBFL"][FORMAT u32 LE] then 32-byte records
//! <root>/<topic segments...>/.log     [MAGIC "RBFL"][FORMAT u32 LE] then raw payload bytes
//! ```
//!
//! An index record is `seqno u64 | offset u64 | length u32 | crc32 u32 | append_time i64`,
//! little-endian. Sequence numbers start at 1 and are dense. Payload bytes are
//! written (and flushed) before the index record, so an entry exists exactly
//! when its index record does. On open, a torn trailing index record or a
//! record whose payload is missing or fails its CRC is truncated away together
//! with any unreferenced payload bytes.
//!
//! Topic names may contain `/` as a hierarchy separator; each segment maps to
//! a nested directory. Segments may not start with `.`, so the `.index`/`.log`
//! files never collide with a child topic.
//!
//! One writer per topic at a time; readers run concurrently with an append and
//! see a consistent prefix.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use thiserror::Error;

use crate::time::{Clock, SystemClock, Timestamp};

pub const DEFAULT_MAX_BLOCK_SIZE: usize = 64 * 1024;
pub const MAX_TOPIC_NAME_LEN: usize = 255;

const MAGIC: [u8; 4] = *b"RBFL";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: u64 = 8;
const INDEX_RECORD_LEN: usize = 32;
const INDEX_FILE: &str = ".index";
const DATA_FILE: &str = ".log";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("invalid topic name {0:?}: {1}")]
    InvalidTopic(String, &'static str),
    #[error("unknown topic {0}")]
    UnknownTopic(String),
    #[error("payload of {len} bytes exceeds max block size {max}")]
    PayloadTooLarge { len: usize, max: usize },
    #[error("seqno {seqno} not found in topic {topic}")]
    NotFound { topic: String, seqno: u64 },
    #[error("invalid range {from}..={to} (latest {latest})")]
    InvalidRange { from: u64, to: u64, latest: u64 },
    #[error("corrupt log {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("storage failure: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = LogError> = std::result::Result<T, E>;

/// Validated topic name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopicName(String);

impl TopicName {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        let reject = |why| Err(LogError::InvalidTopic(name.clone(), why));
        if name.is_empty() {
            return reject("empty");
        }
        if name.len() > MAX_TOPIC_NAME_LEN {
            return reject("longer than 255 bytes");
        }
        if name.contains('\\') || name.contains('\0') {
            return reject("contains a backslash or NUL");
        }
        for seg in name.split('/') {
            if seg.is_empty() {
                return reject("empty path segment");
            }
            if seg.starts_with('.') {
                return reject("segment starts with '.'");
            }
        }
        Ok(TopicName(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn dir(&self, root: &Path) -> PathBuf {
        self.0.split('/').fold(root.to_path_buf(), |p, seg| p.join(seg))
    }
}

impl fmt::Display for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<&str> for TopicName {
    type Error = LogError;
    fn try_from(s: &str) -> Result<Self> {
        TopicName::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub topic: TopicName,
    pub seqno: u64,
    pub payload: Vec<u8>,
    pub append_time: Timestamp,
}

#[derive(Debug, Clone)]
pub struct LogConfig {
    pub max_block_size: usize,
    /// fsync payload and index before acknowledging an append.
    pub sync: bool,
}

impl Default for LogConfig {
    fn default() -> Self {
        LogConfig { max_block_size: DEFAULT_MAX_BLOCK_SIZE, sync: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct IndexRecord {
    seqno: u64,
    offset: u64,
    length: u32,
    crc: u32,
    time: i64,
}

impl IndexRecord {
    fn encode(&self) -> [u8; INDEX_RECORD_LEN] {
        let mut b = [0u8; INDEX_RECORD_LEN];
        b[0..8].copy_from_slice(&self.seqno.to_le_bytes());
        b[8..16].copy_from_slice(&self.offset.to_le_bytes());
        b[16..20].copy_from_slice(&self.length.to_le_bytes());
        b[20..24].copy_from_slice(&self.crc.to_le_bytes());
        b[24..32].copy_from_slice(&self.time.to_le_bytes());
        b
    }

    fn decode(b: &[u8]) -> Self {
        let u64_at = |i: usize| u64::from_le_bytes(b[i..i + 8].try_into().unwrap());
        IndexRecord {
            seqno: u64_at(0),
            offset: u64_at(8),
            length: u32::from_le_bytes(b[16..20].try_into().unwrap()),
            crc: u32::from_le_bytes(b[20..24].try_into().unwrap()),
            time: u64_at(24) as i64,
        }
    }

    fn end(&self) -> u64 {
        self.offset + self.length as u64
    }
}

struct Writer {
    index: File,
    data: File,
    data_len: u64,
}

struct Topic {
    name: TopicName,
    dir: PathBuf,
    writer: Mutex<Writer>,
    records: RwLock<Vec<IndexRecord>>,
    reader: File,
}

impl Topic {
    fn open(root: &Path, name: TopicName, create: bool) -> Result<Option<Topic>> {
        let dir = name.dir(root);
        let index_path = dir.join(INDEX_FILE);
        let data_path = dir.join(DATA_FILE);
        if !index_path.exists() {
            if !create {
                return Ok(None);
            }
            fs::create_dir_all(&dir)?;
        }
        let mut index = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(&index_path)?;
        let mut data = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(&data_path)?;
        ensure_header(&mut index, &index_path)?;
        ensure_header(&mut data, &data_path)?;

        let mut raw = Vec::new();
        index.seek(SeekFrom::Start(HEADER_LEN))?;
        index.read_to_end(&mut raw)?;
        let data_file_len = data.metadata()?.len();

        let mut records: Vec<IndexRecord> = Vec::with_capacity(raw.len() / INDEX_RECORD_LEN);
        let mut expected_offset = HEADER_LEN;
        for chunk in raw.chunks_exact(INDEX_RECORD_LEN) {
            let rec = IndexRecord::decode(chunk);
            let structurally_ok = rec.seqno == records.len() as u64 + 1 && rec.offset == expected_offset && rec.end() <= data_file_len;
            if !structurally_ok {
                break;
            }
            expected_offset = rec.end();
            records.push(rec);
        }
        // The trailing record may have been acknowledged to nobody; verify its bytes.
        while let Some(last) = records.last().copied() {
            if read_at(&data, last.offset, last.length as usize).map(|p| crc32fast::hash(&p) == last.crc).unwrap_or(false) {
                break;
            }
            records.pop();
        }

        let data_len = records.last().map_or(HEADER_LEN, IndexRecord::end);
        let index_len = HEADER_LEN + (records.len() * INDEX_RECORD_LEN) as u64;
        if index.metadata()?.len() != index_len {
            index.set_len(index_len)?;
            index.sync_all()?;
        }
        if data_file_len != data_len {
            data.set_len(data_len)?;
            data.sync_all()?;
        }
        let reader = File::open(&data_path)?;
        Ok(Some(Topic { name, dir, writer: Mutex::new(Writer { index, data, data_len }), records: RwLock::new(records), reader }))
    }

    fn latest(&self) -> u64 {
        self.records.read().unwrap().len() as u64
    }

    fn append(&self, payload: &[u8], time: Timestamp, sync: bool) -> Result<u64> {
        let mut w = self.writer.lock().unwrap();
        let seqno = self.latest() + 1;
        let offset = w.data_len;
        let rec = IndexRecord { seqno, offset, length: payload.len() as u32, crc: crc32fast::hash(payload), time: time.0 };
        let index_len = HEADER_LEN + (seqno - 1) * INDEX_RECORD_LEN as u64;
        let res = (|| -> io::Result<()> {
            w.data.seek(SeekFrom::Start(offset))?;
            w.data.write_all(payload)?;
            if sync {
                w.data.sync_data()?;
            }
            w.index.seek(SeekFrom::Start(index_len))?;
            w.index.write_all(&rec.encode())?;
            if sync {
                w.index.sync_data()?;
            }
            Ok(())
        })();
        if let Err(e) = res {
            // Roll both files back so the log is unchanged.
            let _ = w.index.set_len(index_len);
            let _ = w.data.set_len(offset);
            return Err(e.into());
        }
        w.data_len = rec.end();
        self.records.write().unwrap().push(rec);
        Ok(seqno)
    }

    fn entry(&self, rec: IndexRecord) -> Result<LogEntry> {
        let payload = read_at(&self.reader, rec.offset, rec.length as usize)?;
        if crc32fast::hash(&payload) != rec.crc {
            return Err(LogError::Corrupt { path: self.dir.join(DATA_FILE), reason: format!("crc mismatch at seqno {}", rec.seqno) });
        }
        Ok(LogEntry { topic: self.name.clone(), seqno: rec.seqno, payload, append_time: Timestamp(rec.time) })
    }

    /// Snapshot of index records for seqnos `from..=to`, clamped to what exists.
    fn slice(&self, from: u64, to: u64) -> Vec<IndexRecord> {
        let records = self.records.read().unwrap();
        let lo = from.saturating_sub(1) as usize;
        let hi = (to as usize).min(records.len());
        if lo >= hi {
            return Vec::new();
        }
        records[lo..hi].to_vec()
    }
}

fn ensure_header(f: &mut File, path: &Path) -> Result<()> {
    let len = f.metadata()?.len();
    if len < HEADER_LEN {
        // Fresh file, or a crash while creating it; nothing was ever acknowledged.
        f.set_len(0)?;
        f.seek(SeekFrom::Start(0))?;
        f.write_all(&MAGIC)?;
        f.write_all(&FORMAT_VERSION.to_le_bytes())?;
        f.sync_all()?;
        return Ok(());
    }
    let mut hdr = [0u8; HEADER_LEN as usize];
    f.seek(SeekFrom::Start(0))?;
    f.read_exact(&mut hdr)?;
    if hdr[0..4] != MAGIC {
        return Err(LogError::Corrupt { path: path.to_path_buf(), reason: "bad magic".into() });
    }
    let version = u32::from_le_bytes(hdr[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(LogError::Corrupt { path: path.to_path_buf(), reason: format!("unsupported format version {version}") });
    }
    Ok(())
}

#[cfg(unix)]
fn read_at(f: &File, offset: u64, len: usize) -> io::Result<Vec<u8>> {
    use std::os::unix::fs::FileExt;
    let mut buf = vec![0u8; len];
    f.read_exact_at(&mut buf, offset)?;
    Ok(buf)
}

#[cfg(windows)]
fn read_at(f: &File, offset: u64, len: usize) -> io::Result<Vec<u8>> {
    use std::os::windows::fs::FileExt;
    let mut buf = vec![0u8; len];
    let mut done = 0;
    while done < len {
        let n = f.seek_read(&mut buf[done..], offset + done as u64)?;
        if n == 0 {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        done += n;
    }
    Ok(buf)
}

/// A directory of topics.
pub struct EventLog {
    root: PathBuf,
    config: LogConfig,
    clock: Arc<dyn Clock>,
    topics: RwLock<HashMap<TopicName, Arc<Topic>>>,
}

impl fmt::Debug for EventLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EventLog").field("root", &self.root).field("config", &self.config).finish()
    }
}

impl EventLog {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        Self::with_config(root, LogConfig::default(), Arc::new(SystemClock))
    }

    pub fn with_config(root: impl AsRef<Path>, config: LogConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        Ok(EventLog { root, config, clock, topics: RwLock::new(HashMap::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn max_block_size(&self) -> usize {
        self.config.max_block_size
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    fn topic(&self, name: &TopicName, create: bool) -> Result<Option<Arc<Topic>>> {
        if let Some(t) = self.topics.read().unwrap().get(name) {
            return Ok(Some(t.clone()));
        }
        let mut topics = self.topics.write().unwrap();
        if let Some(t) = topics.get(name) {
            return Ok(Some(t.clone()));
        }
        match Topic::open(&self.root, name.clone(), create)? {
            Some(t) => {
                let t = Arc::new(t);
                topics.insert(name.clone(), t.clone());
                Ok(Some(t))
            }
            None => Ok(None),
        }
    }

    fn existing(&self, name: &TopicName) -> Result<Arc<Topic>> {
        self.topic(name, false)?.ok_or_else(|| LogError::UnknownTopic(name.to_string()))
    }

    /// Appends one block; creates the topic on first use.
    pub fn append(&self, topic: &TopicName, payload: &[u8]) -> Result<u64> {
        if payload.len() > self.config.max_block_size {
            return Err(LogError::PayloadTooLarge { len: payload.len(), max: self.config.max_block_size });
        }
        let t = self.topic(topic, true)?.expect("created on demand");
        t.append(payload, self.clock.now(), self.config.sync)
    }

    pub fn read(&self, topic: &TopicName, seqno: u64) -> Result<LogEntry> {
        let t = self.existing(topic)?;
        match t.slice(seqno, seqno).first() {
            Some(rec) if seqno >= 1 => t.entry(*rec),
            _ => Err(LogError::NotFound { topic: topic.to_string(), seqno }),
        }
    }

    /// 0 for an empty or unknown topic.
    pub fn latest_seqno(&self, topic: &TopicName) -> Result<u64> {
        Ok(self.topic(topic, false)?.map_or(0, |t| t.latest()))
    }

    pub fn read_range(&self, topic: &TopicName, from: u64, to: u64) -> Result<Vec<LogEntry>> {
        let t = self.existing(topic)?;
        let latest = t.latest();
        if from < 1 || from > to || to > latest {
            return Err(LogError::InvalidRange { from, to, latest });
        }
        t.slice(from, to).into_iter().map(|r| t.entry(r)).collect()
    }

    /// Entries with seqno greater than `after`, as of the call. Never blocks on a writer.
    pub fn poll_since(&self, topic: &TopicName, after: u64) -> Result<Vec<LogEntry>> {
        let t = self.existing(topic)?;
        t.slice(after.saturating_add(1), u64::MAX).into_iter().map(|r| t.entry(r)).collect()
    }

    /// Full scan: seqnos dense from 1 and every payload passes its CRC.
    pub fn verify(&self, topic: &TopicName) -> Result<u64> {
        let t = self.existing(topic)?;
        let records = t.slice(1, u64::MAX);
        for (i, rec) in records.iter().enumerate() {
            if rec.seqno != i as u64 + 1 {
                return Err(LogError::Corrupt { path: t.dir.clone(), reason: format!("gap before seqno {}", rec.seqno) });
            }
            t.entry(*rec)?;
        }
        Ok(records.len() as u64)
    }
}
