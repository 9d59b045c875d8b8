//! Shared log structure.
//!
//! Each log records candidate locations that may hold a pointer into the
//! objects owning the log. A log is shared by every hash-region object mapped
//! to the same table entry; `nums` counts those sharers. Logs are append-only
//! until released.

use thiserror::Error;

use crate::logcache::CompressionMode;
use crate::simspace::{RegionKind, SimSpace, WORD_BYTES};

pub const DEFAULT_LANES: usize = 1;
const INITIAL_LANE_CAPACITY: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LogHandle {
    index: u32,
    generation: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntryKind {
    RawAddr,
    BlockKey,
    ContainerId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LogEntry {
    pub kind: EntryKind,
    pub key: u64,
}

impl LogEntry {
    pub fn raw(addr: u64) -> Self {
        LogEntry { kind: EntryKind::RawAddr, key: addr }
    }

    pub fn block(key: u64) -> Self {
        LogEntry { kind: EntryKind::BlockKey, key }
    }

    pub fn container(key: u64) -> Self {
        LogEntry { kind: EntryKind::ContainerId, key }
    }

    /// Entry kind produced for a location key under `mode`.
    pub fn for_mode(mode: CompressionMode, key: u64) -> Self {
        match mode {
            CompressionMode::Off => LogEntry::raw(key),
            CompressionMode::Block(_) => LogEntry::block(key),
            CompressionMode::Full => LogEntry::container(key),
        }
    }
}

/// Word addresses an entry stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Candidates {
    Empty,
    Word(u64),
    /// Every word in `[lo, hi)`.
    Range {
        lo: u64,
        hi: u64,
    },
}

impl Candidates {
    pub fn word_count(self) -> u64 {
        match self {
            Candidates::Empty => 0,
            Candidates::Word(_) => 1,
            Candidates::Range { lo, hi } => (hi - lo) / WORD_BYTES,
        }
    }

    pub fn contains(self, addr: u64) -> bool {
        match self {
            Candidates::Empty => false,
            Candidates::Word(w) => w == addr,
            Candidates::Range { lo, hi } => lo <= addr && addr < hi,
        }
    }

    pub fn addresses(self) -> Vec<u64> {
        match self {
            Candidates::Empty => Vec::new(),
            Candidates::Word(w) => vec![w],
            Candidates::Range { lo, hi } => (lo..hi).step_by(WORD_BYTES as usize).collect(),
        }
    }
}

/// Word addresses covered by `entry`. Container entries cover the container's
/// current extent, or nothing once it is released; entries keyed by a raw
/// stack or global address cover that one word.
pub fn expand(entry: LogEntry, mode: CompressionMode, space: &SimSpace) -> Candidates {
    match entry.kind {
        EntryKind::RawAddr => Candidates::Word(entry.key),
        EntryKind::BlockKey => {
            let bytes = mode.block_bytes().unwrap_or(WORD_BYTES);
            Candidates::Range { lo: entry.key, hi: entry.key + bytes }
        }
        EntryKind::ContainerId => {
            if let Some(obj) = space.object_at(entry.key) {
                let rec = space.record(obj);
                return Candidates::Range { lo: rec.id, hi: rec.end() };
            }
            match space.region_of(entry.key) {
                Some(RegionKind::Stack | RegionKind::Global) => Candidates::Word(entry.key),
                _ => Candidates::Empty,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogError {
    #[error("log {0:?} used after release")]
    UseAfterRelease(LogHandle),
    #[error("log {handle:?} sharer accounting broken (nums = {nums})")]
    AccountingBug { handle: LogHandle, nums: u32 },
}

#[derive(Debug, Clone)]
pub struct Log {
    nums: u32,
    lanes: Vec<Vec<LogEntry>>,
    len: usize,
}

impl Log {
    fn new(lanes: usize) -> Self {
        Log { nums: 1, lanes: (0..lanes).map(|_| Vec::with_capacity(INITIAL_LANE_CAPACITY)).collect(), len: 0 }
    }

    pub fn nums(&self) -> u32 {
        self.nums
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// All entries, lane by lane, in append order.
    pub fn entries(&self) -> impl Iterator<Item = LogEntry> + '_ {
        self.lanes.iter().flatten().copied()
    }
}

#[derive(Debug, Clone)]
struct Slot {
    generation: u32,
    log: Option<Log>,
}

/// Slab of logs addressed by generation-checked handles.
#[derive(Debug, Clone)]
pub struct LogStore {
    slots: Vec<Slot>,
    vacant: Vec<u32>,
    lanes: usize,
    live: usize,
}

impl Default for LogStore {
    fn default() -> Self {
        LogStore::new(DEFAULT_LANES)
    }
}

impl LogStore {
    pub fn new(lanes: usize) -> Self {
        LogStore { slots: Vec::new(), vacant: Vec::new(), lanes: lanes.max(1), live: 0 }
    }

    /// A fresh log with one sharer.
    pub fn create(&mut self) -> LogHandle {
        self.live += 1;
        if let Some(index) = self.vacant.pop() {
            let slot = &mut self.slots[index as usize];
            slot.log = Some(Log::new(self.lanes));
            return LogHandle { index, generation: slot.generation };
        }
        let index = u32::try_from(self.slots.len()).expect("log count fits u32");
        self.slots.push(Slot { generation: 0, log: Some(Log::new(self.lanes)) });
        LogHandle { index, generation: 0 }
    }

    pub fn get(&self, handle: LogHandle) -> Result<&Log, LogError> {
        self.slots
            .get(handle.index as usize)
            .filter(|s| s.generation == handle.generation)
            .and_then(|s| s.log.as_ref())
            .ok_or(LogError::UseAfterRelease(handle))
    }

    fn get_mut(&mut self, handle: LogHandle) -> Result<&mut Log, LogError> {
        self.slots
            .get_mut(handle.index as usize)
            .filter(|s| s.generation == handle.generation)
            .and_then(|s| s.log.as_mut())
            .ok_or(LogError::UseAfterRelease(handle))
    }

    pub fn append(&mut self, handle: LogHandle, entry: LogEntry) -> Result<(), LogError> {
        self.append_to_lane(handle, 0, entry)
    }

    pub fn append_to_lane(&mut self, handle: LogHandle, lane: usize, entry: LogEntry) -> Result<(), LogError> {
        let log = self.get_mut(handle)?;
        let lane = lane % log.lanes.len();
        log.lanes[lane].push(entry);
        log.len += 1;
        Ok(())
    }

    pub fn add_sharer(&mut self, handle: LogHandle) -> Result<u32, LogError> {
        let log = self.get_mut(handle)?;
        log.nums += 1;
        Ok(log.nums)
    }

    /// Decrements `nums` and returns what remains.
    pub fn drop_sharer(&mut self, handle: LogHandle) -> Result<u32, LogError> {
        let log = self.get_mut(handle)?;
        if log.nums == 0 {
            return Err(LogError::AccountingBug { handle, nums: 0 });
        }
        log.nums -= 1;
        Ok(log.nums)
    }

    /// Drops the log. Only legal once every sharer is gone.
    pub fn release(&mut self, handle: LogHandle) -> Result<(), LogError> {
        let nums = self.get(handle)?.nums;
        if nums > 0 {
            return Err(LogError::AccountingBug { handle, nums });
        }
        let slot = &mut self.slots[handle.index as usize];
        slot.log = None;
        slot.generation = slot.generation.wrapping_add(1);
        self.vacant.push(handle.index);
        self.live -= 1;
        Ok(())
    }

    pub fn live_logs(&self) -> usize {
        self.live
    }

    pub fn total_entries(&self) -> usize {
        self.slots.iter().filter_map(|s| s.log.as_ref()).map(Log::len).sum()
    }
}
