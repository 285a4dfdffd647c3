//! Logical-clock write-ahead log.
//!
//! On-disk format, repeated:
//!
//! ```text
//! [len: u32 BE = 8][lcv: u64 BE][crc32c(lcv bytes): u32 BE]
//! ```
//!
//! A bad or short record at the very end of the log is a torn write and is
//! discarded on recovery. A bad record followed by more bytes is corruption.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::{IdentityError, NodeId};
use crate::checksum::crc32c;

/// Length of one complete WAL record.
pub const WAL_RECORD_LEN: usize = 16;
const PAYLOAD_LEN: u32 = 8;

/// A decoded WAL record. `committed` is set when the checksum verified.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalRecord {
    pub lcv: u64,
    pub committed: bool,
}

pub fn encode_wal_record(lcv: u64) -> [u8; WAL_RECORD_LEN] {
    let lcv_bytes = lcv.to_be_bytes();
    let mut out = [0u8; WAL_RECORD_LEN];
    out[..4].copy_from_slice(&PAYLOAD_LEN.to_be_bytes());
    out[4..12].copy_from_slice(&lcv_bytes);
    out[12..].copy_from_slice(&crc32c(&lcv_bytes).to_be_bytes());
    out
}

/// Result of scanning a WAL image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalScan {
    pub records: Vec<WalRecord>,
    /// Byte length of the verified prefix.
    pub valid_len: u64,
    /// Bytes after the verified prefix that belong to a torn tail record.
    pub torn_bytes: u64,
}

impl WalScan {
    pub fn last_lcv(&self) -> u64 {
        self.records.last().map_or(0, |r| r.lcv)
    }
}

/// Parses a WAL image, separating a torn tail from genuine corruption.
pub fn decode_wal(bytes: &[u8]) -> Result<WalScan, IdentityError> {
    let mut records = Vec::with_capacity(bytes.len() / WAL_RECORD_LEN);
    let mut pos = 0usize;
    let mut last = 0u64;
    while pos < bytes.len() {
        let remaining = bytes.len() - pos;
        if remaining < WAL_RECORD_LEN {
            break;
        }
        let rec = &bytes[pos..pos + WAL_RECORD_LEN];
        let len = u32::from_be_bytes(rec[..4].try_into().expect("4 bytes"));
        let lcv_bytes: [u8; 8] = rec[4..12].try_into().expect("8 bytes");
        let crc = u32::from_be_bytes(rec[12..].try_into().expect("4 bytes"));
        let at_tail = remaining == WAL_RECORD_LEN;
        if len != PAYLOAD_LEN || crc32c(&lcv_bytes) != crc {
            if at_tail {
                break;
            }
            return Err(IdentityError::WalCorruption {
                offset: pos as u64,
                reason: if len != PAYLOAD_LEN {
                    format!("bad record length {len}")
                } else {
                    "checksum mismatch before end of log".into()
                },
            });
        }
        let lcv = u64::from_be_bytes(lcv_bytes);
        if lcv <= last {
            return Err(IdentityError::WalCorruption {
                offset: pos as u64,
                reason: format!("lcv {lcv} does not follow {last}"),
            });
        }
        records.push(WalRecord { lcv, committed: true });
        last = lcv;
        pos += WAL_RECORD_LEN;
    }
    Ok(WalScan { records, valid_len: pos as u64, torn_bytes: (bytes.len() - pos) as u64 })
}

/// Durable append-only byte log backing a [`super::LogicalClock`].
///
/// `append` returning `Ok` means the bytes are durable.
pub trait WalStorage: Send {
    fn read_all(&mut self) -> io::Result<Vec<u8>>;
    fn append(&mut self, bytes: &[u8]) -> io::Result<()>;
    fn truncate(&mut self, len: u64) -> io::Result<()>;
    fn len(&self) -> u64;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Scripted failure for the next append on a [`MemWal`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppendFault {
    /// Nothing is written; the append reports an error.
    Fail,
    /// Only the first `n` bytes land before the error.
    Torn(usize),
}

/// In-memory WAL used by the simulator and tests.
#[derive(Debug, Clone, Default)]
pub struct MemWal {
    buf: Vec<u8>,
    faults: VecDeque<AppendFault>,
}

impl MemWal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_bytes(buf: Vec<u8>) -> Self {
        Self { buf, faults: VecDeque::new() }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.buf
    }

    pub fn push_fault(&mut self, fault: AppendFault) {
        self.faults.push_back(fault);
    }

    /// Appends raw bytes without going through a clock; models a write that
    /// was in flight when the process died.
    pub fn write_raw(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }
}

impl WalStorage for MemWal {
    fn read_all(&mut self) -> io::Result<Vec<u8>> {
        Ok(self.buf.clone())
    }

    fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
        match self.faults.pop_front() {
            None => {
                self.buf.extend_from_slice(bytes);
                Ok(())
            }
            Some(AppendFault::Fail) => Err(io::Error::other("injected WAL append failure")),
            Some(AppendFault::Torn(n)) => {
                self.buf.extend_from_slice(&bytes[..n.min(bytes.len())]);
                Err(io::Error::other("injected torn WAL append"))
            }
        }
    }

    fn truncate(&mut self, len: u64) -> io::Result<()> {
        self.buf.truncate(len as usize);
        Ok(())
    }

    fn len(&self) -> u64 {
        self.buf.len() as u64
    }
}

/// File-backed WAL named `wal-<node-id-hex>.log`. Every append is fsynced.
#[derive(Debug)]
pub struct FileWal {
    path: PathBuf,
    file: File,
    len: u64,
}

impl FileWal {
    pub fn file_name(nid: &NodeId) -> String {
        format!("wal-{}.log", nid.to_hex())
    }

    pub fn open(dir: &Path, nid: &NodeId) -> io::Result<Self> {
        let path = dir.join(Self::file_name(nid));
        let file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let len = file.metadata()?.len();
        Ok(Self { path, file, len })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl WalStorage for FileWal {
    fn read_all(&mut self) -> io::Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(self.len as usize);
        let mut reader = File::open(&self.path)?;
        reader.seek(SeekFrom::Start(0))?;
        reader.read_to_end(&mut buf)?;
        Ok(buf)
    }

    fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.file.write_all(bytes)?;
        self.file.sync_data()?;
        self.len += bytes.len() as u64;
        Ok(())
    }

    fn truncate(&mut self, len: u64) -> io::Result<()> {
        self.file.set_len(len)?;
        self.file.sync_all()?;
        self.len = len;
        Ok(())
    }

    fn len(&self) -> u64 {
        self.len
    }
}
