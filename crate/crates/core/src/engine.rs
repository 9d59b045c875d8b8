//! Event dispatcher: track (cache probe) → search (table lookup) → handle
//! (log append, delayed free), plus the statistics counters.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::addrtable::{AddrTable, TableConfig, TableError, DEFAULT_DIRECT_BITS, DEFAULT_HASH_BITS};
use crate::logcache::{loc_key, CompressionMode, ConfigError, LogCache, Probe, DEFAULT_INDEX_BITS};
use crate::logstore::{LogEntry, LogError, LogStore};
use crate::minfat::{id_of, MinFatError, TaggedWord};
use crate::reaper::{FreeLists, FreeOutcome, DEFAULT_PERIOD_THRESHOLD};
use crate::simspace::{
    global_addr, stack_addr, ObjectKey, ObjectRecord, ObjectState, Placement, RegionKind, SimSpace, SimValue,
    SpaceError,
};
use crate::traceio::{ExpectedValue, Loc, PtrExpr, Trace, TraceEvent};

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub compression: CompressionMode,
    pub cache_bits: u8,
    pub direct_bits: u8,
    pub hash_bits: u8,
    pub period_threshold: usize,
    /// `High` sends every allocation to the hash-mapped heap.
    pub placement: Placement,
    pub seed: u64,
    pub oracle_check: bool,
    pub final_flush: bool,
    /// Fault injection: probability that a cache probe reports a spurious hit.
    pub false_hit_rate: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            compression: CompressionMode::Off,
            cache_bits: DEFAULT_INDEX_BITS,
            direct_bits: DEFAULT_DIRECT_BITS,
            hash_bits: DEFAULT_HASH_BITS,
            period_threshold: DEFAULT_PERIOD_THRESHOLD,
            placement: Placement::Low,
            seed: 0,
            oracle_check: false,
            final_flush: true,
            false_hit_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    MinFat(#[from] MinFatError),
    #[error("false-hit rate {0} is not a probability")]
    BadFaultRate(String),
    #[error("free of {0:?}, which names no allocation")]
    InvalidFree(TaggedWord),
    #[error("realloc of {0:?}, which is not a live allocation")]
    InvalidRealloc(TaggedWord),
    #[error("store of pointer {0:?} to an object that no longer exists")]
    StaleStore(TaggedWord),
    #[error("pointer {ptr:?} carries a tag that disagrees with its object (B={exp})")]
    TagMismatch { ptr: TaggedWord, exp: u8 },
    #[error("load from unmapped address {0:#x}")]
    LoadFromUnmapped(u64),
    #[error("object {id:#x} released while still referenced from {refs:x?}")]
    PrematureFree { id: u64, refs: Vec<u64> },
    #[error("name {0:?} refers to a released object")]
    UseOfReleased(String),
    #[error("unknown name {0:?}")]
    UnknownName(String),
    #[error("expectation failed: {0}")]
    ExpectFailed(String),
}

/// A failure while replaying a trace, located by event index and source line.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("event {index} (line {line}): {source}")]
pub struct RunError {
    pub index: usize,
    pub line: usize,
    pub source: EngineError,
}

/// Operation counters. The four cost counters mirror the cost model terms:
/// table searches, verified candidate words, log appends, and free handling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub n_obj: u64,
    pub n_ptr_stores: u64,
    pub n_data_stores: u64,
    pub n_logged: u64,
    pub dup_hits: u64,
    pub n_loads: u64,
    pub n_uaf_loads: u64,
    pub n_free_calls: u64,
    pub n_released: u64,
    pub n_double_free: u64,
    pub n_shared_logs: u64,
    pub n_period_passes: u64,
    pub n_cache_invalidations: u64,
    pub n_audits: u64,
    pub searching: u64,
    pub verifying: u64,
    pub handling: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsReport {
    pub counters: Counters,
    pub n_retained_at_end: u64,
    pub n_live_at_end: u64,
    pub dup_rate: f64,
}

impl StatsReport {
    /// The logging counter; every logged store is one append.
    pub fn logging(&self) -> u64 {
        self.counters.n_logged
    }

    pub fn fields(&self) -> Vec<(&'static str, String)> {
        let c = &self.counters;
        vec![
            ("n_obj", c.n_obj.to_string()),
            ("n_ptr_stores", c.n_ptr_stores.to_string()),
            ("n_data_stores", c.n_data_stores.to_string()),
            ("n_logged", c.n_logged.to_string()),
            ("dup_hits", c.dup_hits.to_string()),
            ("dup_rate", format!("{:.6}", self.dup_rate)),
            ("n_loads", c.n_loads.to_string()),
            ("n_uaf_loads", c.n_uaf_loads.to_string()),
            ("n_free_calls", c.n_free_calls.to_string()),
            ("n_released", c.n_released.to_string()),
            ("n_retained_at_end", self.n_retained_at_end.to_string()),
            ("n_live_at_end", self.n_live_at_end.to_string()),
            ("n_double_free", c.n_double_free.to_string()),
            ("n_shared_logs", c.n_shared_logs.to_string()),
            ("n_period_passes", c.n_period_passes.to_string()),
            ("n_cache_invalidations", c.n_cache_invalidations.to_string()),
            ("n_audits", c.n_audits.to_string()),
            ("searching", c.searching.to_string()),
            ("verifying", c.verifying.to_string()),
            ("logging", self.logging().to_string()),
            ("handling", c.handling.to_string()),
        ]
    }

    /// Flat `key=value` lines in a fixed order.
    pub fn to_kv(&self) -> String {
        self.fields().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.counters;
        writeln!(
            f,
            "objects      allocated {:>10}  released {:>10}  retained {:>8}  live {:>8}",
            c.n_obj, c.n_released, self.n_retained_at_end, self.n_live_at_end
        )?;
        writeln!(
            f,
            "pointer      stores    {:>10}  logged   {:>10}  dup hits {:>8}  dup rate {:.4}",
            c.n_ptr_stores, c.n_logged, c.dup_hits, self.dup_rate
        )?;
        writeln!(
            f,
            "free         calls     {:>10}  double   {:>10}  periodic {:>8}",
            c.n_free_calls, c.n_double_free, c.n_period_passes
        )?;
        writeln!(f, "loads        total     {:>10}  uaf      {:>10}", c.n_loads, c.n_uaf_loads)?;
        write!(
            f,
            "cost         searching {:>10}  verifying {:>9}  logging {:>9}  handling {:>8}",
            c.searching,
            c.verifying,
            self.logging(),
            c.handling
        )
    }
}

pub struct Engine {
    pub(crate) config: EngineConfig,
    pub(crate) space: SimSpace,
    pub(crate) table: AddrTable,
    pub(crate) logs: LogStore,
    pub(crate) cache: LogCache,
    pub(crate) lists: FreeLists,
    pub(crate) stats: Counters,
    /// Objects currently user-freed but not released.
    pub(crate) pending: BTreeSet<ObjectKey>,
    /// Most recent object at each base, for telling double frees from wild ones.
    last_at: HashMap<u64, ObjectKey>,
    rng: ChaCha8Rng,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self, EngineError> {
        if !(0.0..=1.0).contains(&config.false_hit_rate) {
            return Err(EngineError::BadFaultRate(config.false_hit_rate.to_string()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let program_sign = rng.gen_range(1..=u8::MAX);
        let table = AddrTable::new(TableConfig::new(config.direct_bits, config.hash_bits, program_sign)?);
        Ok(Engine {
            space: SimSpace::new(config.direct_bits)?,
            table,
            logs: LogStore::default(),
            cache: LogCache::new(config.cache_bits)?,
            lists: FreeLists::new(config.period_threshold),
            stats: Counters::default(),
            pending: BTreeSet::new(),
            last_at: HashMap::new(),
            rng,
            config,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn space(&self) -> &SimSpace {
        &self.space
    }

    pub fn table(&self) -> &AddrTable {
        &self.table
    }

    pub fn logs(&self) -> &LogStore {
        &self.logs
    }

    pub fn counters(&self) -> &Counters {
        &self.stats
    }

    pub fn record(&self, key: ObjectKey) -> &ObjectRecord {
        self.space.record(key)
    }

    pub fn state(&self, key: ObjectKey) -> ObjectState {
        self.space.record(key).state
    }

    /// User-freed objects still held back.
    pub fn retained(&self) -> &BTreeSet<ObjectKey> {
        &self.pending
    }

    pub fn period_list(&self) -> &[ObjectKey] {
        self.lists.period()
    }

    pub fn alloc(&mut self, size: u64, placement: Placement) -> Result<(ObjectKey, TaggedWord), EngineError> {
        let placement = match self.config.placement {
            Placement::High => Placement::High,
            Placement::Low => placement,
        };
        let (key, ptr) = self.space.allocate(size, placement)?;
        let reg = self.table.register(ptr.addr(), &mut self.logs)?;
        if reg.shared {
            self.stats.n_shared_logs += 1;
        }
        self.space.record_mut(key).log = Some(reg.log);
        self.last_at.insert(ptr.addr(), key);
        self.stats.n_obj += 1;
        Ok((key, ptr))
    }

    /// The non-released object a pointer word refers to.
    fn pointee_of(&self, ptr: TaggedWord) -> Result<ObjectKey, EngineError> {
        let id = id_of(ptr)?;
        let key = self.space.object_at(id).ok_or(EngineError::StaleStore(ptr))?;
        let exp = self.space.record(key).class.exp;
        if exp != ptr.exp() {
            return Err(EngineError::TagMismatch { ptr, exp });
        }
        Ok(key)
    }

    pub fn on_store(&mut self, loc: u64, value: SimValue) -> Result<(), EngineError> {
        let ptr = match value {
            SimValue::Data(_) => {
                self.space.write_word(loc, value)?;
                self.stats.n_data_stores += 1;
                return Ok(());
            }
            SimValue::Pointer(ptr) => ptr,
        };
        self.pointee_of(ptr)?;
        self.space.write_word(loc, value)?;
        self.stats.n_ptr_stores += 1;

        let id = id_of(ptr)?;
        let mode = self.config.compression;
        let key = loc_key(loc, mode, &self.space);
        let forced_hit = self.config.false_hit_rate > 0.0 && self.rng.gen_bool(self.config.false_hit_rate);
        if forced_hit || self.cache.probe_key(id, key) == Probe::Hit {
            self.stats.dup_hits += 1;
            return Ok(());
        }
        self.stats.searching += 1;
        let log = self.table.lookup(id).ok_or(TableError::NotRegistered(id))?;
        self.logs.append(log, LogEntry::for_mode(mode, key))?;
        self.stats.n_logged += 1;
        Ok(())
    }

    /// Reads a word. Reads from user-freed objects are tolerated and counted.
    pub fn on_load(&mut self, loc: u64) -> Result<Option<SimValue>, EngineError> {
        self.stats.n_loads += 1;
        match self.space.container_of(loc) {
            Some(key) => {
                if self.state(key) == ObjectState::UserFreed {
                    self.stats.n_uaf_loads += 1;
                }
            }
            None => match self.space.region_of(loc) {
                Some(RegionKind::Stack | RegionKind::Global) => {}
                _ => return Err(EngineError::LoadFromUnmapped(loc)),
            },
        }
        Ok(self.space.read_word(loc))
    }

    pub fn on_free(&mut self, ptr: TaggedWord) -> Result<FreeOutcome, EngineError> {
        self.stats.n_free_calls += 1;
        let id = id_of(ptr).map_err(|_| EngineError::InvalidFree(ptr))?;
        let key = match self.space.object_at(id) {
            Some(key) => key,
            None if self.last_at.contains_key(&id) => {
                self.stats.n_double_free += 1;
                return Ok(FreeOutcome::DoubleFree);
            }
            None => return Err(EngineError::InvalidFree(ptr)),
        };
        if self.state(key) != ObjectState::Live {
            self.stats.n_double_free += 1;
            return Ok(FreeOutcome::DoubleFree);
        }
        self.free_object(key)
    }

    /// Counts a free the caller has already identified as a double free.
    pub fn note_double_free(&mut self) {
        self.stats.n_free_calls += 1;
        self.stats.n_double_free += 1;
    }

    /// Allocate, copy (pointer words are tracked at their new locations),
    /// then free the old object, which stays resident while referenced.
    pub fn on_realloc(&mut self, ptr: TaggedWord, new_size: u64) -> Result<(ObjectKey, TaggedWord), EngineError> {
        let old = id_of(ptr)
            .ok()
            .and_then(|id| self.space.object_at(id))
            .filter(|&k| self.state(k) == ObjectState::Live)
            .ok_or(EngineError::InvalidRealloc(ptr))?;
        let (old_id, old_size, placement) = {
            let rec = self.space.record(old);
            (rec.id, rec.class.alloc_size, rec.placement)
        };
        let (new, new_ptr) = self.alloc(new_size, placement)?;
        let copy_len = old_size.min(self.space.record(new).class.alloc_size);
        for (addr, value) in self.space.object_words(old) {
            let offset = addr - old_id;
            if offset >= copy_len {
                break;
            }
            let dest = new_ptr.addr() + offset;
            match value {
                SimValue::Pointer(_) => self.on_store(dest, value)?,
                SimValue::Data(_) => self.space.write_word(dest, value)?,
            }
        }
        self.on_free(self.space.record(old).pointer())?;
        Ok((new, new_ptr))
    }

    pub fn report(&self) -> StatsReport {
        let c = self.stats;
        let dup_rate = if c.n_ptr_stores == 0 { 0.0 } else { 1.0 - c.n_logged as f64 / c.n_ptr_stores as f64 };
        let n_live_at_end = self.space.records().filter(|(_, r)| r.state == ObjectState::Live).count() as u64;
        StatsReport { counters: c, n_retained_at_end: self.pending.len() as u64, n_live_at_end, dup_rate }
    }

    /// Replays a parsed trace. Expectations are checked in order; unless
    /// disabled, a final flush settles every deferred object.
    pub fn run(&mut self, trace: &Trace) -> Result<StatsReport, RunError> {
        let mut runner = Runner { names: HashMap::new() };
        for (index, line) in trace.events.iter().enumerate() {
            runner.step(self, &line.event).map_err(|source| RunError { index, line: line.line, source })?;
        }
        if self.config.final_flush {
            self.flush_all().map_err(|source| RunError {
                index: trace.events.len(),
                line: trace.events.last().map_or(0, |l| l.line),
                source,
            })?;
        }
        Ok(self.report())
    }
}

#[derive(Debug, Clone, Copy)]
struct Binding {
    ptr: TaggedWord,
    key: ObjectKey,
}

/// Name bindings play the role of registers: they are not memory and are
/// never tracked.
struct Runner {
    names: HashMap<String, Binding>,
}

impl Runner {
    fn binding(&self, name: &str) -> Result<Binding, EngineError> {
        self.names.get(name).copied().ok_or_else(|| EngineError::UnknownName(name.to_string()))
    }

    fn usable(&self, engine: &Engine, name: &str) -> Result<Binding, EngineError> {
        let b = self.binding(name)?;
        if engine.state(b.key) == ObjectState::Released {
            return Err(EngineError::UseOfReleased(name.to_string()));
        }
        Ok(b)
    }

    fn loc(&self, engine: &Engine, loc: &Loc) -> Result<u64, EngineError> {
        Ok(match loc {
            Loc::Stack(slot) => stack_addr(*slot),
            Loc::Global(slot) => global_addr(*slot),
            Loc::Field { name, offset } => self.usable(engine, name)?.ptr.addr() + offset,
        })
    }

    fn value(&self, engine: &Engine, expr: &PtrExpr) -> Result<SimValue, EngineError> {
        Ok(match expr {
            PtrExpr::Null => SimValue::Data(0),
            PtrExpr::Name { name, offset } => SimValue::Pointer(self.usable(engine, name)?.ptr.offset(*offset)),
        })
    }

    fn step(&mut self, engine: &mut Engine, event: &TraceEvent) -> Result<(), EngineError> {
        match event {
            TraceEvent::Alloc { name, size, high } => {
                let placement = if *high { Placement::High } else { Placement::Low };
                let (key, ptr) = engine.alloc(*size, placement)?;
                self.names.insert(name.clone(), Binding { ptr, key });
            }
            TraceEvent::Store { loc, value } => {
                let addr = self.loc(engine, loc)?;
                let value = self.value(engine, value)?;
                engine.on_store(addr, value)?;
            }
            TraceEvent::StoreData { loc, value } => {
                let addr = self.loc(engine, loc)?;
                engine.on_store(addr, SimValue::Data(*value))?;
            }
            TraceEvent::Load { loc } => {
                let addr = self.loc(engine, loc)?;
                engine.on_load(addr)?;
            }
            TraceEvent::Free { ptr: PtrExpr::Null } => {}
            TraceEvent::Free { ptr: PtrExpr::Name { name, offset } } => {
                let b = self.binding(name)?;
                if engine.state(b.key) == ObjectState::Live {
                    engine.on_free(b.ptr.offset(*offset))?;
                } else {
                    engine.note_double_free();
                }
            }
            TraceEvent::Realloc { old, new, size } => {
                let b = self.binding(old)?;
                if engine.state(b.key) != ObjectState::Live {
                    return Err(EngineError::InvalidRealloc(b.ptr));
                }
                let (key, ptr) = engine.on_realloc(b.ptr, *size)?;
                self.names.insert(new.clone(), Binding { ptr, key });
            }
            TraceEvent::Period => {
                engine.periodical_free()?;
            }
            TraceEvent::Flush => engine.flush_all()?,
            TraceEvent::ExpectLive(name) => {
                let state = engine.state(self.binding(name)?.key);
                if state == ObjectState::Released {
                    return Err(EngineError::ExpectFailed(format!("{name} is released")));
                }
            }
            TraceEvent::ExpectReleased(name) => {
                let state = engine.state(self.binding(name)?.key);
                if state != ObjectState::Released {
                    return Err(EngineError::ExpectFailed(format!("{name} is {state:?}, not released")));
                }
            }
            TraceEvent::ExpectValue { loc, value } => {
                let addr = self.loc(engine, loc)?;
                let expected = match value {
                    ExpectedValue::Absent => None,
                    ExpectedValue::Data(v) => Some(SimValue::Data(*v)),
                    ExpectedValue::Ptr(PtrExpr::Null) => Some(SimValue::Data(0)),
                    ExpectedValue::Ptr(PtrExpr::Name { name, offset }) => {
                        Some(SimValue::Pointer(self.binding(name)?.ptr.offset(*offset)))
                    }
                };
                let found = engine.space.read_word(addr);
                if found != expected {
                    return Err(EngineError::ExpectFailed(format!(
                        "word {addr:#x} holds {found:?}, expected {expected:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Parses and runs `text` under `config`.
pub fn run_text(text: &str, config: EngineConfig) -> Result<StatsReport, RunTextError> {
    let trace = crate::traceio::parse(text)?;
    let mut engine = Engine::new(config)?;
    Ok(engine.run(&trace)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunTextError {
    #[error(transparent)]
    Parse(#[from] crate::traceio::ParseError),
    #[error(transparent)]
    Setup(#[from] EngineError),
    #[error(transparent)]
    Run(#[from] RunError),
}
