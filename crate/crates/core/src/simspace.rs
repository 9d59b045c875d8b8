//! Simulated sparse 64-bit address space and power-of-two heap allocator.
//!
//! Memory is word-granular. Heap objects own their stored words, so releasing
//! an object unmaps its whole range at once. Words of a live object that were
//! never written read back as `Data(0)`; stack and global words that were never
//! written read back as absent.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::logstore::LogHandle;
use crate::minfat::{self, id_of, MinFatError, SizeClass, TaggedWord};

pub const WORD_BYTES: u64 = 8;
pub const HEAP_LOW_BASE: u64 = 0x10000;
/// Heap-High ends where the stack window starts.
pub const HEAP_HIGH_LIMIT: u64 = 1 << 46;
pub const STACK_BASE: u64 = 1 << 46;
pub const GLOBAL_BASE: u64 = (1 << 46) + (1 << 21);
pub const WINDOW_BYTES: u64 = 1 << 20;
/// Number of addressable word slots in the stack and global windows.
pub const SLOT_COUNT: u64 = WINDOW_BYTES / WORD_BYTES;

pub const MIN_DIRECT_BITS: u8 = 16;
pub const MAX_DIRECT_BITS: u8 = 46;

/// Contents of one simulated word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimValue {
    Pointer(TaggedWord),
    Data(u64),
}

impl SimValue {
    /// The pointee ID if this is a pointer word.
    pub fn pointee(self) -> Option<u64> {
        match self {
            SimValue::Pointer(p) => id_of(p).ok(),
            SimValue::Data(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionKind {
    HeapLow,
    HeapHigh,
    Stack,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub kind: RegionKind,
    pub lo: u64,
    pub hi: u64,
}

impl Region {
    pub fn contains(&self, addr: u64) -> bool {
        self.lo <= addr && addr < self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Placement {
    #[default]
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectState {
    Live,
    UserFreed,
    Released,
}

/// Stable handle to an allocation record. Survives release, unlike the base
/// address, which the allocator may hand out again.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectKey(u32);

impl ObjectKey {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone)]
pub struct ObjectRecord {
    pub id: u64,
    pub class: SizeClass,
    pub placement: Placement,
    pub state: ObjectState,
    pub log: Option<LogHandle>,
    /// Objects whose release waits on this one (its heap free list).
    pub deferred: Vec<ObjectKey>,
}

impl ObjectRecord {
    pub fn end(&self) -> u64 {
        self.id + self.class.alloc_size
    }

    pub fn pointer(&self) -> TaggedWord {
        TaggedWord::from_parts(self.class.exp, self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpaceError {
    #[error(transparent)]
    Size(#[from] MinFatError),
    #[error("no room for a 2^{exp} object in the {placement:?} heap")]
    OutOfSimMemory { placement: Placement, exp: u8 },
    #[error("store to unmapped address {0:#x}")]
    WildStore(u64),
    #[error("address {0:#x} is not word aligned")]
    Misaligned(u64),
    #[error("direct-map bits {0} outside [{MIN_DIRECT_BITS}, {MAX_DIRECT_BITS}]")]
    BadDirectBits(u8),
    #[error("object at {id:#x} cannot move from {from:?} to {to:?}")]
    BadTransition { id: u64, from: ObjectState, to: ObjectState },
}

#[derive(Debug, Clone)]
struct RegionAlloc {
    region: Region,
    bump: u64,
    free: BTreeMap<u8, BTreeSet<u64>>,
}

impl RegionAlloc {
    fn new(region: Region) -> Self {
        RegionAlloc { region, bump: region.lo, free: BTreeMap::new() }
    }

    fn take(&mut self, class: SizeClass) -> Option<u64> {
        if let Some(base) = self.free.get_mut(&class.exp).and_then(|set| set.pop_first()) {
            return Some(base);
        }
        let mask = class.alloc_size - 1;
        let base = self.bump.checked_add(mask)? & !mask;
        let end = base.checked_add(class.alloc_size)?;
        if end > self.region.hi {
            return None;
        }
        self.bump = end;
        Some(base)
    }

    fn give_back(&mut self, class: SizeClass, base: u64) {
        self.free.entry(class.exp).or_default().insert(base);
    }
}

#[derive(Debug, Clone)]
struct Block {
    key: ObjectKey,
    end: u64,
    words: BTreeMap<u64, SimValue>,
}

#[derive(Debug, Clone)]
pub struct SimSpace {
    direct_bits: u8,
    low: RegionAlloc,
    high: RegionAlloc,
    records: Vec<ObjectRecord>,
    blocks: BTreeMap<u64, Block>,
    stack: BTreeMap<u64, SimValue>,
    global: BTreeMap<u64, SimValue>,
}

pub fn stack_addr(slot: u64) -> u64 {
    STACK_BASE + slot * WORD_BYTES
}

pub fn global_addr(slot: u64) -> u64 {
    GLOBAL_BASE + slot * WORD_BYTES
}

impl SimSpace {
    pub fn new(direct_bits: u8) -> Result<Self, SpaceError> {
        if !(MIN_DIRECT_BITS..=MAX_DIRECT_BITS).contains(&direct_bits) {
            return Err(SpaceError::BadDirectBits(direct_bits));
        }
        let split = 1u64 << direct_bits;
        Ok(SimSpace {
            direct_bits,
            low: RegionAlloc::new(Region { kind: RegionKind::HeapLow, lo: HEAP_LOW_BASE, hi: split }),
            high: RegionAlloc::new(Region { kind: RegionKind::HeapHigh, lo: split, hi: HEAP_HIGH_LIMIT }),
            records: Vec::new(),
            blocks: BTreeMap::new(),
            stack: BTreeMap::new(),
            global: BTreeMap::new(),
        })
    }

    pub fn direct_bits(&self) -> u8 {
        self.direct_bits
    }

    pub fn regions(&self) -> [Region; 4] {
        [
            self.low.region,
            self.high.region,
            Region { kind: RegionKind::Stack, lo: STACK_BASE, hi: STACK_BASE + WINDOW_BYTES },
            Region { kind: RegionKind::Global, lo: GLOBAL_BASE, hi: GLOBAL_BASE + WINDOW_BYTES },
        ]
    }

    pub fn region_of(&self, addr: u64) -> Option<RegionKind> {
        self.regions().into_iter().find(|r| r.contains(addr)).map(|r| r.kind)
    }

    /// Reserves a fresh object. Its words read as zero until written.
    pub fn allocate(&mut self, size: u64, placement: Placement) -> Result<(ObjectKey, TaggedWord), SpaceError> {
        let class = minfat::size_class(size)?;
        let heap = match placement {
            Placement::Low => &mut self.low,
            Placement::High => &mut self.high,
        };
        let base = heap.take(class).ok_or(SpaceError::OutOfSimMemory { placement, exp: class.exp })?;
        let key = ObjectKey(u32::try_from(self.records.len()).expect("object count fits u32"));
        self.records.push(ObjectRecord {
            id: base,
            class,
            placement,
            state: ObjectState::Live,
            log: None,
            deferred: Vec::new(),
        });
        self.blocks.insert(base, Block { key, end: base + class.alloc_size, words: BTreeMap::new() });
        Ok((key, minfat::encode(base, class.exp)?))
    }

    /// Live → UserFreed.
    pub fn mark_freed(&mut self, key: ObjectKey) -> Result<(), SpaceError> {
        self.transition(key, ObjectState::Live, ObjectState::UserFreed)
    }

    /// UserFreed → Released: unmaps the range and recycles it.
    pub fn release(&mut self, key: ObjectKey) -> Result<(), SpaceError> {
        self.transition(key, ObjectState::UserFreed, ObjectState::Released)?;
        let rec = &self.records[key.index()];
        let (id, class, placement) = (rec.id, rec.class, rec.placement);
        self.blocks.remove(&id);
        match placement {
            Placement::Low => self.low.give_back(class, id),
            Placement::High => self.high.give_back(class, id),
        }
        Ok(())
    }

    fn transition(&mut self, key: ObjectKey, from: ObjectState, to: ObjectState) -> Result<(), SpaceError> {
        let rec = &mut self.records[key.index()];
        if rec.state != from {
            return Err(SpaceError::BadTransition { id: rec.id, from: rec.state, to });
        }
        rec.state = to;
        Ok(())
    }

    pub fn write_word(&mut self, addr: u64, value: SimValue) -> Result<(), SpaceError> {
        if !addr.is_multiple_of(WORD_BYTES) {
            return Err(SpaceError::Misaligned(addr));
        }
        if let Some(map) = self.window_mut(addr) {
            map.insert(addr, value);
            return Ok(());
        }
        match self.block_at_mut(addr) {
            Some(block) => {
                block.words.insert(addr, value);
                Ok(())
            }
            None => Err(SpaceError::WildStore(addr)),
        }
    }

    /// Last value written at `addr`; `None` when unmapped or never written.
    /// Reads inside user-freed objects still succeed.
    pub fn read_word(&self, addr: u64) -> Option<SimValue> {
        if !addr.is_multiple_of(WORD_BYTES) {
            return None;
        }
        if let Some(map) = self.window(addr) {
            return map.get(&addr).copied();
        }
        self.block_at(addr).map(|block| block.words.get(&addr).copied().unwrap_or(SimValue::Data(0)))
    }

    /// The non-released object whose range contains `addr`.
    pub fn container_of(&self, addr: u64) -> Option<ObjectKey> {
        self.block_at(addr).map(|b| b.key)
    }

    /// The non-released object whose base is exactly `id`.
    pub fn object_at(&self, id: u64) -> Option<ObjectKey> {
        self.blocks.get(&id).map(|b| b.key)
    }

    pub fn record(&self, key: ObjectKey) -> &ObjectRecord {
        &self.records[key.index()]
    }

    pub fn record_mut(&mut self, key: ObjectKey) -> &mut ObjectRecord {
        &mut self.records[key.index()]
    }

    pub fn records(&self) -> impl Iterator<Item = (ObjectKey, &ObjectRecord)> {
        self.records.iter().enumerate().map(|(i, r)| (ObjectKey(i as u32), r))
    }

    pub(crate) fn records_mut(&mut self) -> impl Iterator<Item = (ObjectKey, &mut ObjectRecord)> {
        self.records.iter_mut().enumerate().map(|(i, r)| (ObjectKey(i as u32), r))
    }

    pub fn object_count(&self) -> usize {
        self.records.len()
    }

    /// Calls `f` for every stored word with address in `[lo, hi)`.
    pub fn for_each_word_in(&self, lo: u64, hi: u64, mut f: impl FnMut(u64, SimValue)) {
        if lo >= hi {
            return;
        }
        for map in [&self.stack, &self.global] {
            for (&addr, &value) in map.range(lo..hi) {
                f(addr, value);
            }
        }
        let first = self.blocks.range(..=lo).next_back().map_or(lo, |(&base, _)| base);
        for block in self.blocks.range(first..hi).map(|(_, b)| b) {
            if block.end <= lo {
                continue;
            }
            for (&addr, &value) in block.words.range(lo..hi) {
                f(addr, value);
            }
        }
    }

    /// Every stored word in the space, in address order.
    pub fn for_each_word(&self, mut f: impl FnMut(u64, SimValue)) {
        for block in self.blocks.values() {
            for (&addr, &value) in &block.words {
                f(addr, value);
            }
        }
        for map in [&self.stack, &self.global] {
            for (&addr, &value) in map {
                f(addr, value);
            }
        }
    }

    /// Stored words of one non-released object.
    pub fn object_words(&self, key: ObjectKey) -> Vec<(u64, SimValue)> {
        let rec = self.record(key);
        match self.blocks.get(&rec.id) {
            Some(block) if block.key == key => block.words.iter().map(|(&a, &v)| (a, v)).collect(),
            _ => Vec::new(),
        }
    }

    fn window(&self, addr: u64) -> Option<&BTreeMap<u64, SimValue>> {
        if (STACK_BASE..STACK_BASE + WINDOW_BYTES).contains(&addr) {
            Some(&self.stack)
        } else if (GLOBAL_BASE..GLOBAL_BASE + WINDOW_BYTES).contains(&addr) {
            Some(&self.global)
        } else {
            None
        }
    }

    fn window_mut(&mut self, addr: u64) -> Option<&mut BTreeMap<u64, SimValue>> {
        if (STACK_BASE..STACK_BASE + WINDOW_BYTES).contains(&addr) {
            Some(&mut self.stack)
        } else if (GLOBAL_BASE..GLOBAL_BASE + WINDOW_BYTES).contains(&addr) {
            Some(&mut self.global)
        } else {
            None
        }
    }

    fn block_at(&self, addr: u64) -> Option<&Block> {
        self.blocks.range(..=addr).next_back().map(|(_, b)| b).filter(|b| addr < b.end)
    }

    fn block_at_mut(&mut self, addr: u64) -> Option<&mut Block> {
        self.blocks.range_mut(..=addr).next_back().map(|(_, b)| b).filter(|b| addr < b.end)
    }
}
