//! Direct-mapped Log Cache and location compression.
//!
//! A slot remembers the last `(pointee ID, location key)` pair that was logged
//! at its index. The index is `(id XOR key) mod 2^index_bits`. A hit requires
//! both halves of the pair to match exactly: remembering only the location
//! lets two pointees congruent modulo the slot count alias, and an aliased hit
//! skips a log append that verification later depends on.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::simspace::{SimSpace, WORD_BYTES};

pub const MIN_INDEX_BITS: u8 = 4;
pub const MAX_INDEX_BITS: u8 = 28;
pub const DEFAULT_INDEX_BITS: u8 = 20;

/// How logged locations are coarsened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CompressionMode {
    /// One entry per word address.
    #[default]
    Off,
    /// One entry per aligned block of this many words.
    Block(u32),
    /// One entry per containing heap object.
    Full,
}

impl CompressionMode {
    pub fn block_bytes(self) -> Option<u64> {
        match self {
            CompressionMode::Block(words) => Some(words as u64 * WORD_BYTES),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("unknown compression mode {0:?} (expected off, block:<words> or full)")]
    BadCompression(String),
    #[error("block size must be a power of two number of words, got {0}")]
    BadBlock(u64),
    #[error("cache index bits {0} outside [{MIN_INDEX_BITS}, {MAX_INDEX_BITS}]")]
    BadIndexBits(u8),
}

impl FromStr for CompressionMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(CompressionMode::Off),
            "full" => Ok(CompressionMode::Full),
            _ => {
                let words = s
                    .strip_prefix("block:")
                    .and_then(|w| w.parse::<u64>().ok())
                    .ok_or_else(|| ConfigError::BadCompression(s.to_string()))?;
                if !words.is_power_of_two() || words > 1 << 24 {
                    return Err(ConfigError::BadBlock(words));
                }
                Ok(CompressionMode::Block(words as u32))
            }
        }
    }
}

impl fmt::Display for CompressionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompressionMode::Off => f.write_str("off"),
            CompressionMode::Block(words) => write!(f, "block:{words}"),
            CompressionMode::Full => f.write_str("full"),
        }
    }
}

/// Key under which a store location is cached and logged.
pub fn loc_key(loc: u64, mode: CompressionMode, space: &SimSpace) -> u64 {
    match mode {
        CompressionMode::Off => loc,
        CompressionMode::Block(words) => loc & !(words as u64 * WORD_BYTES - 1),
        CompressionMode::Full => match space.container_of(loc) {
            Some(obj) => space.record(obj).id,
            None => loc,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    Hit,
    Miss,
}

#[derive(Debug, Clone, Copy, Default)]
struct Slot {
    pointee: u64,
    key: u64,
    epoch: u32,
}

/// Invalidation bumps `epoch`; slots filled under an older epoch are invalid.
#[derive(Debug, Clone)]
pub struct LogCache {
    index_bits: u8,
    slots: Vec<Slot>,
    epoch: u32,
}

impl LogCache {
    pub fn new(index_bits: u8) -> Result<Self, ConfigError> {
        if !(MIN_INDEX_BITS..=MAX_INDEX_BITS).contains(&index_bits) {
            return Err(ConfigError::BadIndexBits(index_bits));
        }
        Ok(LogCache { index_bits, slots: vec![Slot::default(); 1 << index_bits], epoch: 1 })
    }

    pub fn index_bits(&self) -> u8 {
        self.index_bits
    }

    pub fn index(&self, id: u64, key: u64) -> usize {
        ((id ^ key) & ((1u64 << self.index_bits) - 1)) as usize
    }

    /// Probes the slot for `(id, loc_key(loc))`; a miss overwrites the slot and
    /// obliges the caller to append the entry to the pointee's log.
    pub fn probe_and_fill(&mut self, id: u64, loc: u64, mode: CompressionMode, space: &SimSpace) -> Probe {
        self.probe_key(id, loc_key(loc, mode, space))
    }

    pub fn probe_key(&mut self, id: u64, key: u64) -> Probe {
        let epoch = self.epoch;
        let idx = self.index(id, key);
        let slot = &mut self.slots[idx];
        if slot.epoch == epoch && slot.pointee == id && slot.key == key {
            return Probe::Hit;
        }
        *slot = Slot { pointee: id, key, epoch };
        Probe::Miss
    }

    pub fn invalidate_all(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.slots.fill(Slot::default());
            self.epoch = 1;
        }
    }

    pub fn valid_slots(&self) -> usize {
        self.slots.iter().filter(|s| s.epoch == self.epoch).count()
    }
}
