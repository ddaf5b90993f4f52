//! Byte-exact remote repository protocol.
//!
//! ```text
//! request  = opcode u8 | name_len u16 | name | body
//!   push   body = reserved u32 (0) | content_len u64 | content
//!   pull   body = version u32 (0 = latest)
//!   latest body = (empty)
//! response = status u8 | body
//!   ok push/latest  body = FileVersion (68 bytes)
//!   ok pull         body = content_len u64 | content
//!   error           body = msg_len u16 | utf-8 message
//! FileVersion = version u32 | start_seq u64 | end_seq u64 | byte_length u64
//!             | checksum [32] | push_time i64 (ms)
//! ```
//!
//! All integers are big-endian. A connection may carry any number of
//! request/response pairs; the server closes it on a malformed request.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;

use super::{FileVersion, MoverError, Repository, Result};
use crate::time::Timestamp;

pub const OP_PUSH: u8 = 1;
pub const OP_PULL: u8 = 2;
pub const OP_LATEST: u8 = 3;

pub const FILE_VERSION_WIRE_LEN: usize = 4 + 8 + 8 + 8 + 32 + 8;

/// Upper bound on a single pushed or pulled content length.
const MAX_CONTENT_LEN: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    UnknownFile = 1,
    UnknownVersion = 2,
    Corrupt = 3,
    Malformed = 4,
    /// Server-side storage failure; not one of the named client errors.
    Storage = 5,
}

impl Status {
    fn from_u8(b: u8) -> Option<Status> {
        Some(match b {
            0 => Status::Ok,
            1 => Status::UnknownFile,
            2 => Status::UnknownVersion,
            3 => Status::Corrupt,
            4 => Status::Malformed,
            5 => Status::Storage,
            _ => return None,
        })
    }

    fn of(err: &MoverError) -> Status {
        match err {
            MoverError::UnknownFile(_) => Status::UnknownFile,
            MoverError::UnknownVersion { .. } => Status::UnknownVersion,
            MoverError::Corrupt(_) => Status::Corrupt,
            MoverError::Malformed(_) => Status::Malformed,
            MoverError::Timeout { .. } | MoverError::Storage(_) => Status::Storage,
        }
    }
}

pub(crate) fn encode_file_version(fv: &FileVersion) -> Vec<u8> {
    let mut b = Vec::with_capacity(FILE_VERSION_WIRE_LEN);
    b.extend_from_slice(&fv.version.to_be_bytes());
    b.extend_from_slice(&fv.start_seq.to_be_bytes());
    b.extend_from_slice(&fv.end_seq.to_be_bytes());
    b.extend_from_slice(&fv.byte_length.to_be_bytes());
    b.extend_from_slice(&fv.checksum);
    b.extend_from_slice(&fv.push_time.0.to_be_bytes());
    b
}

pub(crate) fn decode_file_version(name: &str, b: &[u8]) -> Result<FileVersion> {
    if b.len() != FILE_VERSION_WIRE_LEN {
        return Err(MoverError::Corrupt(format!("file version record of {} bytes", b.len())));
    }
    let u64_at = |i: usize| u64::from_be_bytes(b[i..i + 8].try_into().unwrap());
    let fv = FileVersion {
        file_name: name.to_string(),
        version: u32::from_be_bytes(b[0..4].try_into().unwrap()),
        start_seq: u64_at(4),
        end_seq: u64_at(12),
        byte_length: u64_at(20),
        checksum: b[28..60].try_into().unwrap(),
        push_time: Timestamp(u64_at(60) as i64),
    };
    if fv.start_seq == 0 || fv.start_seq > fv.end_seq {
        return Err(MoverError::Corrupt(format!("bad seq range {}..={}", fv.start_seq, fv.end_seq)));
    }
    Ok(fv)
}

fn read_u8(r: &mut impl Read) -> io::Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u16(r: &mut impl Read) -> io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_be_bytes(b))
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_be_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_be_bytes(b))
}

fn read_vec(r: &mut impl Read, len: u64) -> io::Result<Vec<u8>> {
    let mut v = Vec::new();
    r.take(len).read_to_end(&mut v)?;
    if v.len() as u64 != len {
        return Err(io::ErrorKind::UnexpectedEof.into());
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Request {
    Push { name: String, content: Vec<u8> },
    Pull { name: String, version: Option<u32> },
    Latest { name: String },
}

impl Request {
    pub(crate) fn encode(&self) -> Vec<u8> {
        let (op, name) = match self {
            Request::Push { name, .. } => (OP_PUSH, name),
            Request::Pull { name, .. } => (OP_PULL, name),
            Request::Latest { name } => (OP_LATEST, name),
        };
        let mut b = vec![op];
        b.extend_from_slice(&(name.len() as u16).to_be_bytes());
        b.extend_from_slice(name.as_bytes());
        match self {
            Request::Push { content, .. } => {
                b.extend_from_slice(&0u32.to_be_bytes());
                b.extend_from_slice(&(content.len() as u64).to_be_bytes());
                b.extend_from_slice(content);
            }
            Request::Pull { version, .. } => b.extend_from_slice(&version.unwrap_or(0).to_be_bytes()),
            Request::Latest { .. } => {}
        }
        b
    }

    /// `Ok(None)` on clean EOF before the first byte.
    pub(crate) fn read(r: &mut impl Read) -> io::Result<Option<std::result::Result<Request, String>>> {
        let op = match read_u8(r) {
            Ok(op) => op,
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e),
        };
        if !(OP_PUSH..=OP_LATEST).contains(&op) {
            return Ok(Some(Err(format!("unknown opcode {op}"))));
        }
        let name_len = read_u16(r)?;
        let name = match String::from_utf8(read_vec(r, name_len as u64)?) {
            Ok(n) => n,
            Err(_) => return Ok(Some(Err("file name is not utf-8".into()))),
        };
        let req = match op {
            OP_PUSH => {
                if read_u32(r)? != 0 {
                    return Ok(Some(Err("reserved field must be zero".into())));
                }
                let len = read_u64(r)?;
                if len > MAX_CONTENT_LEN {
                    return Ok(Some(Err(format!("content length {len} too large"))));
                }
                Request::Push { name, content: read_vec(r, len)? }
            }
            OP_PULL => {
                let v = read_u32(r)?;
                Request::Pull { name, version: (v != 0).then_some(v) }
            }
            _ => Request::Latest { name },
        };
        Ok(Some(Ok(req)))
    }
}

fn write_error(w: &mut impl Write, status: Status, msg: &str) -> io::Result<()> {
    let msg = &msg.as_bytes()[..msg.len().min(u16::MAX as usize)];
    w.write_all(&[status as u8])?;
    w.write_all(&(msg.len() as u16).to_be_bytes())?;
    w.write_all(msg)
}

fn respond<R: Repository + ?Sized>(repo: &R, req: Request, w: &mut impl Write) -> io::Result<()> {
    let result = match req {
        Request::Push { name, content } => repo.push(&name, &content).map(|fv| encode_file_version(&fv)),
        Request::Latest { name } => repo.latest(&name).map(|fv| encode_file_version(&fv)),
        Request::Pull { name, version } => repo.pull(&name, version).map(|c| {
            let mut b = Vec::with_capacity(8 + c.len());
            b.extend_from_slice(&(c.len() as u64).to_be_bytes());
            b.extend_from_slice(&c);
            b
        }),
    };
    match result {
        Ok(body) => {
            w.write_all(&[Status::Ok as u8])?;
            w.write_all(&body)
        }
        Err(e) => write_error(w, Status::of(&e), &e.to_string()),
    }
}

/// Serves requests on one connection until EOF or a malformed request.
pub fn serve_connection<R: Repository + ?Sized>(repo: &R, stream: TcpStream) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let req = match Request::read(&mut reader) {
            Ok(Some(req)) => req,
            Ok(None) => return Ok(()),
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                write_error(&mut writer, Status::Malformed, "truncated request")?;
                return writer.flush();
            }
            Err(e) => return Err(e),
        };
        match req {
            Ok(req) => respond(repo, req, &mut writer)?,
            Err(msg) => {
                write_error(&mut writer, Status::Malformed, &msg)?;
                return writer.flush();
            }
        }
        writer.flush()?;
    }
}

/// Accept loop: one thread per connection.
pub fn serve<R: Repository + 'static>(listener: TcpListener, repo: Arc<R>) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let repo = repo.clone();
        thread::spawn(move || {
            let _ = serve_connection(repo.as_ref(), stream);
        });
    }
    Ok(())
}

/// Client for a repository served by [`serve`]. One connection per call.
#[derive(Debug, Clone)]
pub struct RemoteRepository {
    addr: String,
}

impl RemoteRepository {
    pub fn new(addr: impl Into<String>) -> Self {
        RemoteRepository { addr: addr.into() }
    }

    fn call(&self, req: &Request) -> Result<TcpStream> {
        let addr = self.addr.to_socket_addrs()?.next().ok_or_else(|| MoverError::Storage(format!("cannot resolve {}", self.addr)))?;
        let mut stream = TcpStream::connect(addr)?;
        stream.write_all(&req.encode())?;
        stream.flush()?;
        let status = read_u8(&mut stream)?;
        let status = Status::from_u8(status).ok_or_else(|| MoverError::Malformed(format!("status byte {status}")))?;
        if status != Status::Ok {
            let len = read_u16(&mut stream)?;
            let msg = String::from_utf8_lossy(&read_vec(&mut stream, len as u64)?).into_owned();
            return Err(remote_error(status, req, msg));
        }
        Ok(stream)
    }

    fn file_version(&self, req: &Request, name: &str) -> Result<FileVersion> {
        let mut stream = self.call(req)?;
        let body = read_vec(&mut stream, FILE_VERSION_WIRE_LEN as u64)?;
        decode_file_version(name, &body)
    }
}

fn remote_error(status: Status, req: &Request, msg: String) -> MoverError {
    let name = match req {
        Request::Push { name, .. } | Request::Pull { name, .. } | Request::Latest { name } => name.clone(),
    };
    match status {
        Status::UnknownFile => MoverError::UnknownFile(name),
        Status::UnknownVersion => MoverError::UnknownVersion {
            name,
            version: match req {
                Request::Pull { version, .. } => version.unwrap_or(0),
                _ => 0,
            },
        },
        Status::Corrupt => MoverError::Corrupt(msg),
        Status::Malformed => MoverError::Malformed(msg),
        Status::Storage | Status::Ok => MoverError::Storage(msg),
    }
}

impl Repository for RemoteRepository {
    fn push(&self, name: &str, content: &[u8]) -> Result<FileVersion> {
        if name.len() > u16::MAX as usize {
            return Err(MoverError::Malformed("name too long".into()));
        }
        self.file_version(&Request::Push { name: name.to_string(), content: content.to_vec() }, name)
    }

    fn pull(&self, name: &str, version: Option<u32>) -> Result<Vec<u8>> {
        let mut stream = self.call(&Request::Pull { name: name.to_string(), version })?;
        let len = read_u64(&mut stream)?;
        if len > MAX_CONTENT_LEN {
            return Err(MoverError::Malformed(format!("content length {len}")));
        }
        let content = read_vec(&mut stream, len)?;
        Ok(content)
    }

    fn latest(&self, name: &str) -> Result<FileVersion> {
        self.file_version(&Request::Latest { name: name.to_string() }, name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FileVersion {
        FileVersion {
            file_name: "f".into(),
            version: 3,
            start_seq: 10,
            end_seq: 14,
            byte_length: 300_000,
            checksum: [0xAA; 32],
            push_time: Timestamp(-5),
        }
    }

    #[test]
    fn file_version_layout_is_big_endian() {
        let b = encode_file_version(&sample());
        assert_eq!(b.len(), FILE_VERSION_WIRE_LEN);
        assert_eq!(&b[0..4], &[0, 0, 0, 3]);
        assert_eq!(&b[4..12], &10u64.to_be_bytes());
        assert_eq!(&b[12..20], &14u64.to_be_bytes());
        assert_eq!(&b[20..28], &300_000u64.to_be_bytes());
        assert_eq!(&b[28..60], &[0xAA; 32]);
        assert_eq!(&b[60..68], &(-5i64).to_be_bytes());
        assert_eq!(decode_file_version("f", &b).unwrap(), sample());
    }

    #[test]
    fn request_layouts() {
        let push = Request::Push { name: "ab".into(), content: vec![9, 8] }.encode();
        assert_eq!(push, vec![1, 0, 2, b'a', b'b', 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 2, 9, 8]);
        let pull = Request::Pull { name: "a".into(), version: Some(258) }.encode();
        assert_eq!(pull, vec![2, 0, 1, b'a', 0, 0, 1, 2]);
        let latest = Request::Pull { name: "a".into(), version: None }.encode();
        assert_eq!(latest, vec![2, 0, 1, b'a', 0, 0, 0, 0]);
        assert_eq!(Request::Latest { name: "a".into() }.encode(), vec![3, 0, 1, b'a']);
    }

    #[test]
    fn request_decode_round_trip_and_malformed() {
        for req in [
            Request::Push { name: "model/fno".into(), content: vec![1; 100] },
            Request::Pull { name: "x".into(), version: Some(7) },
            Request::Pull { name: "x".into(), version: None },
            Request::Latest { name: "y".into() },
        ] {
            let bytes = req.encode();
            let got = Request::read(&mut bytes.as_slice()).unwrap().unwrap().unwrap();
            assert_eq!(got, req);
        }
        let bad_op = [9u8, 0, 0];
        assert!(Request::read(&mut bad_op.as_slice()).unwrap().unwrap().is_err());
        let bad_reserved = [1u8, 0, 1, b'a', 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0];
        assert!(Request::read(&mut bad_reserved.as_slice()).unwrap().unwrap().is_err());
        assert!(Request::read(&mut [].as_slice()).unwrap().is_none());
        assert!(Request::read(&mut [3u8, 0, 5, b'a'].as_slice()).is_err());
    }

    #[test]
    fn corrupt_records_are_rejected() {
        let mut b = encode_file_version(&sample());
        b[4..12].copy_from_slice(&20u64.to_be_bytes());
        assert!(decode_file_version("f", &b).is_err());
        assert!(decode_file_version("f", &b[..10]).is_err());
    }
}
