use std::sync::Mutex;

use super::wal::{decode_wal, encode_wal_record, WalStorage};
use super::{CompositeId, IdentityError, NamespaceTag, NodeId};

struct ClockState {
    last_committed: u64,
    last_exposed: u64,
    wal: Box<dyn WalStorage>,
}

/// Per-node LCV generator. Every value is durably logged before it is handed
/// out, so a value is never exposed twice, including across crash/restart.
///
/// `next_id` is safe to call from many threads; each caller receives a
/// distinct value.
pub struct LogicalClock {
    state: Mutex<ClockState>,
}

impl std::fmt::Debug for LogicalClock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = self.state.lock().expect("clock lock poisoned");
        f.debug_struct("LogicalClock")
            .field("last_committed", &s.last_committed)
            .field("last_exposed", &s.last_exposed)
            .finish()
    }
}

/// What recovery found in the log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecoveryReport {
    pub records: usize,
    pub torn_bytes_discarded: u64,
    /// LCV written as a burn marker over a torn tail, never handed out.
    pub burned: Option<u64>,
}

impl LogicalClock {
    pub fn last_committed(&self) -> u64 {
        self.state.lock().expect("clock lock poisoned").last_committed
    }

    pub fn last_exposed(&self) -> u64 {
        self.state.lock().expect("clock lock poisoned").last_exposed
    }

    /// Assigns the next identifier. The WAL record is durable before return;
    /// on append failure the log is rolled back and the clock is unchanged.
    pub fn next_id(&self, nid: NodeId, nst: NamespaceTag) -> Result<CompositeId, IdentityError> {
        let mut s = self.state.lock().expect("clock lock poisoned");
        let lcv = s.last_committed.checked_add(1).ok_or(IdentityError::ClockExhausted)?;
        let before = s.wal.len();
        if let Err(e) = s.wal.append(&encode_wal_record(lcv)) {
            // Drop any partial bytes so the next append starts on a record boundary.
            let _ = s.wal.truncate(before);
            return Err(IdentityError::WalAppendFailure(e));
        }
        s.last_committed = lcv;
        s.last_exposed = lcv;
        Ok(CompositeId::new(nid, lcv, nst))
    }

    /// Releases the backing log, e.g. to model a crash.
    pub fn into_wal(self) -> Box<dyn WalStorage> {
        self.state.into_inner().expect("clock lock poisoned").wal
    }

    pub fn wal_len(&self) -> u64 {
        self.state.lock().expect("clock lock poisoned").wal.len()
    }
}

/// Rebuilds a clock from its WAL.
///
/// A torn trailing record is truncated away and its slot is burned by
/// appending a complete record for `last + 1`, so the next exposed value is
/// strictly above anything that could have been in flight.
pub fn recover_clock(
    mut wal: Box<dyn WalStorage>,
) -> Result<(LogicalClock, RecoveryReport), IdentityError> {
    let image = wal.read_all()?;
    let scan = decode_wal(&image)?;
    let mut last = scan.last_lcv();
    let mut burned = None;
    if scan.torn_bytes > 0 {
        wal.truncate(scan.valid_len)?;
        let burn = last.checked_add(1).ok_or(IdentityError::ClockExhausted)?;
        wal.append(&encode_wal_record(burn))?;
        last = burn;
        burned = Some(burn);
    }
    let report = RecoveryReport {
        records: scan.records.len(),
        torn_bytes_discarded: scan.torn_bytes,
        burned,
    };
    let clock = LogicalClock {
        state: Mutex::new(ClockState { last_committed: last, last_exposed: last, wal }),
    };
    Ok((clock, report))
}
