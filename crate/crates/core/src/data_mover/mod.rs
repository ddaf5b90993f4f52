//! Versioned file push/pull over the event log.
//!
//! A file `<name>` owns two topics: `file/<name>/data` holds its content in
//! blocks of at most the log's max block size, and `file/<name>/idx` holds one
//! [`FileVersion`] record per push. The index record is appended only after
//! every data block is durable, so a version exists exactly when its index
//! record does; data blocks left behind by a failed push are unreferenced.
//! Index seqno `k` always holds version `k`.
//!
//! Consumers learn about new versions by polling [`Repository::latest`]; there
//! is no push-side notification.

mod wire;

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::event_log::{EventLog, LogError, TopicName};
use crate::time::{Clock, Timestamp};

pub use wire::{serve, serve_connection, RemoteRepository, Status, FILE_VERSION_WIRE_LEN};

/// Prefix reserved for software packages.
pub const SOFTWARE_PREFIX: &str = "sw/";

#[derive(Debug, Error)]
pub enum MoverError {
    #[error("unknown-file: {0}")]
    UnknownFile(String),
    #[error("unknown-version: {name} v{version}")]
    UnknownVersion { name: String, version: u32 },
    #[error("corrupt: {0}")]
    Corrupt(String),
    #[error("malformed: {0}")]
    Malformed(String),
    #[error("timeout waiting for a version of {name} newer than {after}")]
    Timeout { name: String, after: u32 },
    #[error("storage-failure: {0}")]
    Storage(String),
}

impl From<LogError> for MoverError {
    fn from(e: LogError) -> Self {
        match e {
            LogError::Corrupt { .. } => MoverError::Corrupt(e.to_string()),
            LogError::InvalidTopic(..) => MoverError::Malformed(e.to_string()),
            other => MoverError::Storage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for MoverError {
    fn from(e: std::io::Error) -> Self {
        MoverError::Storage(e.to_string())
    }
}

pub type Result<T, E = MoverError> = std::result::Result<T, E>;

/// Index record for one pushed version of a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileVersion {
    pub file_name: String,
    pub version: u32,
    pub start_seq: u64,
    pub end_seq: u64,
    pub byte_length: u64,
    pub checksum: [u8; 32],
    pub push_time: Timestamp,
}

impl FileVersion {
    pub fn block_count(&self) -> u64 {
        self.end_seq - self.start_seq + 1
    }

    pub fn checksum_hex(&self) -> String {
        self.checksum.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn digest(content: &[u8]) -> [u8; 32] {
    Sha256::digest(content).into()
}

/// Push/pull/latest over some location. Local and remote repositories share it.
pub trait Repository: Send + Sync {
    fn push(&self, name: &str, content: &[u8]) -> Result<FileVersion>;

    /// `None` means latest. The checksum is verified before returning.
    fn pull(&self, name: &str, version: Option<u32>) -> Result<Vec<u8>>;

    fn latest(&self, name: &str) -> Result<FileVersion>;
}

impl<R: Repository + ?Sized> Repository for Arc<R> {
    fn push(&self, name: &str, content: &[u8]) -> Result<FileVersion> {
        (**self).push(name, content)
    }
    fn pull(&self, name: &str, version: Option<u32>) -> Result<Vec<u8>> {
        (**self).pull(name, version)
    }
    fn latest(&self, name: &str) -> Result<FileVersion> {
        (**self).latest(name)
    }
}

impl<R: Repository + ?Sized> Repository for Box<R> {
    fn push(&self, name: &str, content: &[u8]) -> Result<FileVersion> {
        (**self).push(name, content)
    }
    fn pull(&self, name: &str, version: Option<u32>) -> Result<Vec<u8>> {
        (**self).pull(name, version)
    }
    fn latest(&self, name: &str) -> Result<FileVersion> {
        (**self).latest(name)
    }
}

/// Repository backed by a local [`EventLog`].
pub struct LocalRepository {
    log: Arc<EventLog>,
    pushers: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl LocalRepository {
    pub fn new(log: Arc<EventLog>) -> Self {
        LocalRepository { log, pushers: Mutex::new(HashMap::new()) }
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(Arc::new(EventLog::open(root)?)))
    }

    pub fn log(&self) -> &Arc<EventLog> {
        &self.log
    }

    fn topics(name: &str) -> Result<(TopicName, TopicName)> {
        if name.is_empty() {
            return Err(MoverError::Malformed("empty file name".into()));
        }
        Ok((TopicName::new(format!("file/{name}/data"))?, TopicName::new(format!("file/{name}/idx"))?))
    }

    /// The index record for `version` of `name`.
    pub fn file_version(&self, name: &str, version: u32) -> Result<FileVersion> {
        let (_, idx) = Self::topics(name)?;
        let latest = self.log.latest_seqno(&idx)?;
        if latest == 0 {
            return Err(MoverError::UnknownFile(name.to_string()));
        }
        if version == 0 || version as u64 > latest {
            return Err(MoverError::UnknownVersion { name: name.to_string(), version });
        }
        let entry = self.log.read(&idx, version as u64)?;
        let fv = wire::decode_file_version(name, &entry.payload)?;
        if fv.version != version {
            return Err(MoverError::Corrupt(format!("index seqno {version} holds version {}", fv.version)));
        }
        Ok(fv)
    }

    /// All versions, oldest first, decoded from the index topic.
    pub fn versions(&self, name: &str) -> Result<Vec<FileVersion>> {
        let (_, idx) = Self::topics(name)?;
        if self.log.latest_seqno(&idx)? == 0 {
            return Err(MoverError::UnknownFile(name.to_string()));
        }
        self.log.poll_since(&idx, 0)?.iter().map(|e| wire::decode_file_version(name, &e.payload)).collect()
    }

    fn pusher_lock(&self, name: &str) -> Arc<Mutex<()>> {
        self.pushers.lock().unwrap().entry(name.to_string()).or_default().clone()
    }
}

impl Repository for LocalRepository {
    fn push(&self, name: &str, content: &[u8]) -> Result<FileVersion> {
        let (data, idx) = Self::topics(name)?;
        let lock = self.pusher_lock(name);
        let _guard = lock.lock().unwrap();

        let block = self.log.max_block_size();
        let mut start_seq = None;
        let mut end_seq = 0;
        if content.is_empty() {
            // Zero-length sentinel keeps start/end defined.
            end_seq = self.log.append(&data, &[])?;
            start_seq = Some(end_seq);
        }
        for chunk in content.chunks(block) {
            end_seq = self.log.append(&data, chunk)?;
            start_seq.get_or_insert(end_seq);
        }
        let version = self.log.latest_seqno(&idx)? + 1;
        let fv = FileVersion {
            file_name: name.to_string(),
            version: u32::try_from(version).map_err(|_| MoverError::Storage("version overflow".into()))?,
            start_seq: start_seq.expect("at least one block"),
            end_seq,
            byte_length: content.len() as u64,
            checksum: digest(content),
            push_time: self.log.clock().now(),
        };
        let seq = self.log.append(&idx, &wire::encode_file_version(&fv))?;
        if seq != version {
            return Err(MoverError::Corrupt(format!("index append landed at {seq}, expected {version}")));
        }
        Ok(fv)
    }

    fn pull(&self, name: &str, version: Option<u32>) -> Result<Vec<u8>> {
        let fv = match version {
            Some(v) => self.file_version(name, v)?,
            None => self.latest(name)?,
        };
        let (data, _) = Self::topics(name)?;
        let entries = self.log.read_range(&data, fv.start_seq, fv.end_seq)?;
        let mut content = Vec::with_capacity(fv.byte_length as usize);
        for e in entries {
            content.extend_from_slice(&e.payload);
        }
        if content.len() as u64 != fv.byte_length || digest(&content) != fv.checksum {
            return Err(MoverError::Corrupt(format!("checksum mismatch for {name} v{}", fv.version)));
        }
        Ok(content)
    }

    fn latest(&self, name: &str) -> Result<FileVersion> {
        let (_, idx) = Self::topics(name)?;
        match self.log.latest_seqno(&idx)? {
            0 => Err(MoverError::UnknownFile(name.to_string())),
            n => self.file_version(name, n as u32),
        }
    }
}

/// Opens `tcp://host:port` as a remote repository, anything else as a local
/// directory.
pub fn open_repository(addr: &str) -> Result<Box<dyn Repository>> {
    match addr.strip_prefix("tcp://") {
        Some(hostport) => Ok(Box::new(RemoteRepository::new(hostport))),
        None => Ok(Box::new(LocalRepository::open(addr)?)),
    }
}

/// Polls `latest` every `poll_interval` until a version newer than `after`
/// appears. A file with no versions yet counts as "nothing new". No lock is
/// held while sleeping.
pub fn wait_for_new_version<R: Repository + ?Sized>(
    repo: &R,
    name: &str,
    after: u32,
    poll_interval: Duration,
    deadline: Option<Timestamp>,
    clock: &dyn Clock,
) -> Result<FileVersion> {
    if poll_interval.is_zero() {
        return Err(MoverError::Malformed("poll interval must be positive".into()));
    }
    loop {
        match repo.latest(name) {
            Ok(fv) if fv.version > after => return Ok(fv),
            Ok(_) | Err(MoverError::UnknownFile(_)) => {}
            Err(e) => return Err(e),
        }
        if deadline.is_some_and(|d| clock.now() >= d) {
            return Err(MoverError::Timeout { name: name.to_string(), after });
        }
        clock.sleep(poll_interval);
    }
}

/// Pushes a software package under the reserved `sw/` prefix.
pub fn distribute_software<R: Repository + ?Sized>(repo: &R, package: &str, content: &[u8]) -> Result<FileVersion> {
    repo.push(&format!("{SOFTWARE_PREFIX}{package}"), content)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Install {
    pub version: u32,
    pub at: Timestamp,
    pub byte_length: u64,
}

/// Edge-side consumer of a software package: installs whenever the latest
/// version moves past what is installed. Intermediate versions may be skipped.
#[derive(Debug, Clone)]
pub struct SoftwareAgent {
    package: String,
    installed: Option<u32>,
    history: Vec<Install>,
}

impl SoftwareAgent {
    pub fn new(package: impl Into<String>) -> Self {
        SoftwareAgent { package: package.into(), installed: None, history: Vec::new() }
    }

    pub fn installed(&self) -> Option<u32> {
        self.installed
    }

    pub fn history(&self) -> &[Install] {
        &self.history
    }

    /// One poll. Returns the newly installed version, if any.
    pub fn poll_once<R: Repository + ?Sized>(&mut self, repo: &R, now: Timestamp) -> Result<Option<u32>> {
        let name = format!("{SOFTWARE_PREFIX}{}", self.package);
        let fv = match repo.latest(&name) {
            Ok(fv) => fv,
            Err(MoverError::UnknownFile(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        if self.installed.is_some_and(|v| v >= fv.version) {
            return Ok(None);
        }
        let bytes = repo.pull(&name, Some(fv.version))?;
        self.installed = Some(fv.version);
        self.history.push(Install { version: fv.version, at: now, byte_length: bytes.len() as u64 });
        Ok(Some(fv.version))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_log::{LogConfig, DEFAULT_MAX_BLOCK_SIZE};
    use crate::time::{ManualClock, MS_PER_MINUTE};

    fn repo(dir: &Path, clock: ManualClock) -> LocalRepository {
        let log = EventLog::with_config(dir, LogConfig::default(), Arc::new(clock)).unwrap();
        LocalRepository::new(Arc::new(log))
    }

    fn blocks_for(bytes: usize) -> u64 {
        bytes.div_ceil(DEFAULT_MAX_BLOCK_SIZE).max(1) as u64
    }

    #[test]
    fn pinn_sized_artifact_spans_five_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let r = repo(dir.path(), ManualClock::default());
        let content = vec![7u8; 290 * 1024];
        let fv = r.push("model/pinn", &content).unwrap();
        assert_eq!(blocks_for(content.len()), 5);
        assert_eq!(fv.block_count(), 5);
        assert_eq!((fv.start_seq, fv.end_seq), (1, 5));
        assert_eq!(fv.byte_length, 290 * 1024);
        assert_eq!(r.pull("model/pinn", None).unwrap(), content);
    }

    #[test]
    fn fno_sized_artifact_reassembles_across_146_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let r = repo(dir.path(), ManualClock::default());
        let len = (9.1 * 1024.0 * 1024.0_f64).round() as usize;
        let content: Vec<u8> = (0..len).map(|i| (i % 251) as u8).collect();
        let fv = r.push("model/fno", &content).unwrap();
        assert_eq!(fv.block_count(), 146);
        assert_eq!(r.pull("model/fno", Some(1)).unwrap(), content);
    }

    #[test]
    fn empty_file_uses_a_single_sentinel_block() {
        let dir = tempfile::tempdir().unwrap();
        let r = repo(dir.path(), ManualClock::default());
        r.push("x", b"abc").unwrap();
        let fv = r.push("x", b"").unwrap();
        assert_eq!(fv.byte_length, 0);
        assert_eq!(fv.start_seq, fv.end_seq);
        assert_eq!(fv.start_seq, 2);
        assert_eq!(r.pull("x", None).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn versions_are_dense_and_immutable() {
        let dir = tempfile::tempdir().unwrap();
        let r = repo(dir.path(), ManualClock::default());
        for (i, c) in [b"first".as_slice(), b"second", b"third"].iter().enumerate() {
            assert_eq!(r.push("f", c).unwrap().version, i as u32 + 1);
        }
        assert_eq!(r.pull("f", Some(1)).unwrap(), b"first");
        assert_eq!(r.pull("f", Some(2)).unwrap(), b"second");
        assert_eq!(r.latest("f").unwrap().version, 3);
        let versions: Vec<u32> = r.versions("f").unwrap().iter().map(|v| v.version).collect();
        assert_eq!(versions, vec![1, 2, 3]);
    }

    #[test]
    fn pull_errors() {
        let dir = tempfile::tempdir().unwrap();
        let r = repo(dir.path(), ManualClock::default());
        assert!(matches!(r.pull("nope", None), Err(MoverError::UnknownFile(_))));
        assert!(matches!(r.latest("nope"), Err(MoverError::UnknownFile(_))));
        r.push("f", b"x").unwrap();
        assert!(matches!(r.pull("f", Some(2)), Err(MoverError::UnknownVersion { version: 2, .. })));
        assert!(matches!(r.pull("f", Some(0)), Err(MoverError::UnknownVersion { version: 0, .. })));
        assert!(matches!(r.push("", b"x"), Err(MoverError::Malformed(_))));
    }

    #[test]
    fn checksum_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let r = repo(dir.path(), ManualClock::default());
        let fv = r.push("f", b"payload").unwrap();
        // Forge an index record that points at the right blocks but with a wrong digest.
        let mut bad = fv.clone();
        bad.version = 2;
        bad.checksum[0] ^= 1;
        let idx = TopicName::new("file/f/idx").unwrap();
        r.log().append(&idx, &wire::encode_file_version(&bad)).unwrap();
        assert!(matches!(r.pull("f", Some(2)), Err(MoverError::Corrupt(_))));
        assert_eq!(r.pull("f", Some(1)).unwrap(), b"payload");
    }

    #[test]
    fn unindexed_blocks_are_not_a_version() {
        let dir = tempfile::tempdir().unwrap();
        let r = repo(dir.path(), ManualClock::default());
        r.push("f", b"v1").unwrap();
        // A push that died after writing data but before its index record.
        r.log().append(&TopicName::new("file/f/data").unwrap(), b"garbage").unwrap();
        assert_eq!(r.latest("f").unwrap().version, 1);
        let fv = r.push("f", b"v2").unwrap();
        assert_eq!(fv.version, 2);
        assert_eq!(fv.start_seq, 3);
        assert_eq!(r.pull("f", None).unwrap(), b"v2");
    }

    #[test]
    fn wait_returns_immediately_when_already_newer() {
        let dir = tempfile::tempdir().unwrap();
        let clock = ManualClock::default();
        let r = repo(dir.path(), clock.clone());
        r.push("f", b"1").unwrap();
        r.push("f", b"2").unwrap();
        let fv = wait_for_new_version(&r, "f", 1, Duration::from_secs(60), None, &clock).unwrap();
        assert_eq!(fv.version, 2);
        assert_eq!(clock.now(), Timestamp(0));
    }

    #[test]
    fn wait_times_out_without_push() {
        let dir = tempfile::tempdir().unwrap();
        let clock = ManualClock::default();
        let r = repo(dir.path(), clock.clone());
        let deadline = Timestamp(5 * MS_PER_MINUTE);
        let err = wait_for_new_version(&r, "never", 0, Duration::from_secs(60), Some(deadline), &clock).unwrap_err();
        assert!(matches!(err, MoverError::Timeout { .. }));
        assert_eq!(clock.now(), deadline);
        assert!(matches!(wait_for_new_version(&r, "never", 0, Duration::ZERO, None, &clock), Err(MoverError::Malformed(_))));
    }

    /// Virtual clock whose sleep performs a push once time reaches `push_at`.
    struct PushingClock<'a> {
        inner: ManualClock,
        push_at: Timestamp,
        repo: &'a LocalRepository,
        pushed: Mutex<bool>,
    }

    impl Clock for PushingClock<'_> {
        fn now(&self) -> Timestamp {
            self.inner.now()
        }
        fn sleep(&self, d: Duration) {
            let now = self.inner.advance(d.as_millis() as i64);
            let mut pushed = self.pushed.lock().unwrap();
            if !*pushed && now >= self.push_at {
                self.inner.set(self.push_at);
                self.repo.push("model/pcr", b"fresh").unwrap();
                self.inner.set(now);
                *pushed = true;
            }
        }
    }

    #[test]
    fn wait_observes_push_at_next_poll_tick() {
        let dir = tempfile::tempdir().unwrap();
        let base = ManualClock::default();
        let r = repo(dir.path(), base.clone());
        for (push_min, expect_min) in [(10.0, 10.0), (9.5, 10.0), (0.25, 1.0)] {
            base.set(Timestamp(0));
            let before = r.latest("model/pcr").map(|v| v.version).unwrap_or(0);
            let clock =
                PushingClock { inner: base.clone(), push_at: Timestamp::from_minutes(push_min), repo: &r, pushed: Mutex::new(false) };
            let fv = wait_for_new_version(&r, "model/pcr", before, Duration::from_secs(60), None, &clock).unwrap();
            assert_eq!(fv.version, before + 1);
            assert_eq!(base.now(), Timestamp::from_minutes(expect_min));
            assert_eq!(fv.push_time, Timestamp::from_minutes(push_min));
        }
    }

    #[test]
    fn software_update_single_and_none() {
        let dir = tempfile::tempdir().unwrap();
        let r = repo(dir.path(), ManualClock::default());
        let mut agent = SoftwareAgent::new("edge-agent");
        assert_eq!(agent.poll_once(&r, Timestamp(0)).unwrap(), None);
        assert!(agent.history().is_empty());
        let fv = distribute_software(&r, "edge-agent", b"binary v1").unwrap();
        assert_eq!(fv.file_name, "sw/edge-agent");
        assert_eq!(agent.poll_once(&r, Timestamp(1)).unwrap(), Some(1));
        assert_eq!(agent.poll_once(&r, Timestamp(2)).unwrap(), None);
        assert_eq!(agent.installed(), Some(1));
        assert_eq!(agent.history().len(), 1);
    }

    #[test]
    fn slow_poller_skips_to_latest() {
        let dir = tempfile::tempdir().unwrap();
        let r = repo(dir.path(), ManualClock::default());
        let mut agent = SoftwareAgent::new("pkg");
        distribute_software(&r, "pkg", b"v1").unwrap();
        distribute_software(&r, "pkg", b"v2").unwrap();
        assert_eq!(agent.poll_once(&r, Timestamp(0)).unwrap(), Some(2));
        let installed: Vec<u32> = agent.history().iter().map(|i| i.version).collect();
        assert_eq!(installed, vec![2]);
    }
}
