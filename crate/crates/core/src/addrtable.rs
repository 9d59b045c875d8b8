//! Object-metadata address table.
//!
//! IDs below `2^N` index a direct-mapped table at `id >> 4`, one log per
//! object. IDs at or above `2^N` go through a sign-tagged hash table whose
//! entries are shared: every object hashing to an occupied entry joins that
//! entry's log.

use std::collections::HashMap;

use thiserror::Error;

use crate::logstore::{LogError, LogHandle, LogStore};
use crate::simspace::{MAX_DIRECT_BITS, MIN_DIRECT_BITS};

pub const DEFAULT_DIRECT_BITS: u8 = 32;
pub const DEFAULT_HASH_BITS: u8 = 20;
pub const MIN_HASH_BITS: u8 = 8;
pub const MAX_HASH_BITS: u8 = 30;

const PAGE_BITS: u32 = 16;
const FIB_MULTIPLIER: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableConfig {
    pub direct_bits: u8,
    pub hash_bits: u8,
    pub program_sign: u8,
}

impl TableConfig {
    pub fn new(direct_bits: u8, hash_bits: u8, program_sign: u8) -> Result<Self, TableError> {
        if !(MIN_DIRECT_BITS..=MAX_DIRECT_BITS).contains(&direct_bits) {
            return Err(TableError::BadDirectBits(direct_bits));
        }
        if !(MIN_HASH_BITS..=MAX_HASH_BITS).contains(&hash_bits) {
            return Err(TableError::BadHashBits(hash_bits));
        }
        if program_sign == 0 {
            return Err(TableError::ZeroSign);
        }
        Ok(TableConfig { direct_bits, hash_bits, program_sign })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TableError {
    #[error("direct-map bits {0} outside [{MIN_DIRECT_BITS}, {MAX_DIRECT_BITS}]")]
    BadDirectBits(u8),
    #[error("hash bits {0} outside [{MIN_HASH_BITS}, {MAX_HASH_BITS}]")]
    BadHashBits(u8),
    #[error("program sign must be nonzero")]
    ZeroSign,
    #[error("direct slot for {0:#x} is already occupied")]
    DuplicateId(u64),
    #[error("no table entry for {0:#x}")]
    NotRegistered(u64),
    #[error(transparent)]
    Log(#[from] LogError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TableEntry {
    pub sign: u8,
    pub log: Option<LogHandle>,
}

/// Lazily materialized array: pages of `2^16` entries appear on first write.
#[derive(Debug, Clone, Default)]
struct PagedArray {
    pages: HashMap<u64, Box<[TableEntry]>>,
}

impl PagedArray {
    fn get(&self, index: u64) -> TableEntry {
        self.pages
            .get(&(index >> PAGE_BITS))
            .map(|page| page[(index & ((1 << PAGE_BITS) - 1)) as usize])
            .unwrap_or_default()
    }

    fn get_mut(&mut self, index: u64) -> &mut TableEntry {
        let page = self
            .pages
            .entry(index >> PAGE_BITS)
            .or_insert_with(|| vec![TableEntry::default(); 1 << PAGE_BITS].into_boxed_slice());
        &mut page[(index & ((1 << PAGE_BITS) - 1)) as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Registration {
    pub log: LogHandle,
    pub shared: bool,
}

#[derive(Debug, Clone)]
pub struct AddrTable {
    config: TableConfig,
    direct: PagedArray,
    hash: PagedArray,
}

impl AddrTable {
    pub fn new(config: TableConfig) -> Self {
        AddrTable { config, direct: PagedArray::default(), hash: PagedArray::default() }
    }

    pub fn config(&self) -> TableConfig {
        self.config
    }

    pub fn is_direct(&self, id: u64) -> bool {
        id < 1u64 << self.config.direct_bits
    }

    pub fn direct_index(id: u64) -> u64 {
        id >> 4
    }

    /// Fibonacci hash of `id >> 4` folded to `hash_bits`.
    pub fn hash_index(&self, id: u64) -> u64 {
        (id >> 4).wrapping_mul(FIB_MULTIPLIER) >> (64 - self.config.hash_bits as u32)
    }

    pub fn register(&mut self, id: u64, logs: &mut LogStore) -> Result<Registration, TableError> {
        if self.is_direct(id) {
            let entry = self.direct.get_mut(Self::direct_index(id));
            if entry.sign != 0 {
                return Err(TableError::DuplicateId(id));
            }
            let log = logs.create();
            *entry = TableEntry { sign: self.config.program_sign, log: Some(log) };
            return Ok(Registration { log, shared: false });
        }
        let sign = self.config.program_sign;
        let entry = self.hash.get_mut(self.hash_index(id));
        match entry.log {
            Some(log) if entry.sign != 0 => {
                logs.add_sharer(log)?;
                Ok(Registration { log, shared: true })
            }
            _ => {
                let log = logs.create();
                *entry = TableEntry { sign, log: Some(log) };
                Ok(Registration { log, shared: false })
            }
        }
    }

    pub fn lookup(&self, id: u64) -> Option<LogHandle> {
        let entry = self.entry(id);
        if entry.sign == 0 {
            None
        } else {
            entry.log
        }
    }

    pub fn entry(&self, id: u64) -> TableEntry {
        if self.is_direct(id) {
            self.direct.get(Self::direct_index(id))
        } else {
            self.hash.get(self.hash_index(id))
        }
    }

    /// Drops one sharer; returns true when the log itself was released and the
    /// entry zeroed.
    pub fn unregister(&mut self, id: u64, logs: &mut LogStore) -> Result<bool, TableError> {
        let index = if self.is_direct(id) { Self::direct_index(id) } else { self.hash_index(id) };
        let table = if self.is_direct(id) { &mut self.direct } else { &mut self.hash };
        let entry = table.get_mut(index);
        let log = match entry.log {
            Some(log) if entry.sign != 0 => log,
            _ => return Err(TableError::NotRegistered(id)),
        };
        if logs.drop_sharer(log)? > 0 {
            return Ok(false);
        }
        logs.release(log)?;
        *entry = TableEntry::default();
        Ok(true)
    }

    pub fn materialized_pages(&self) -> usize {
        self.direct.pages.len() + self.hash.pages.len()
    }
}
