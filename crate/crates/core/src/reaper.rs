//! Delayed free.
//!
//! A user free re-reads every location in the object's log. Unreferenced
//! objects are released at once. Objects referenced only from inside other
//! heap objects wait on the container of the lowest referencing address and
//! are re-examined when that container is released. Anything referenced from
//! the stack or globals goes to the period list, which is re-verified whenever
//! it grows past the threshold.

use std::collections::{HashSet, VecDeque};

use crate::engine::{Engine, EngineError};
use crate::logcache::CompressionMode;
use crate::logstore::{expand, Candidates, LogStore};
use crate::oracle;
use crate::simspace::{ObjectKey, ObjectState, SimSpace};

pub const DEFAULT_PERIOD_THRESHOLD: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreeOutcome {
    Released,
    DeferredPeriod,
    DeferredHeap(ObjectKey),
    DoubleFree,
}

#[derive(Debug, Clone)]
pub struct FreeLists {
    period: Vec<ObjectKey>,
    threshold: usize,
    in_pass: bool,
}

impl FreeLists {
    pub fn new(threshold: usize) -> Self {
        FreeLists { period: Vec::new(), threshold, in_pass: false }
    }

    pub fn period(&self) -> &[ObjectKey] {
        &self.period
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }
}

/// Current references to `key` reachable through its log, deduplicated, in
/// log order. Also returns how many candidate words were examined.
pub fn verify_object(space: &SimSpace, logs: &LogStore, mode: CompressionMode, key: ObjectKey) -> (Vec<u64>, u64) {
    let rec = space.record(key);
    let Some(log) = rec.log.and_then(|h| logs.get(h).ok()) else {
        return (Vec::new(), 0);
    };
    let id = rec.id;
    let mut seen = HashSet::new();
    let mut refs = Vec::new();
    let mut examined = 0;
    for entry in log.entries() {
        let candidates = expand(entry, mode, space);
        examined += candidates.word_count();
        let mut check = |addr: u64, pointee: Option<u64>| {
            if pointee == Some(id) && seen.insert(addr) {
                refs.push(addr);
            }
        };
        match candidates {
            Candidates::Empty => {}
            Candidates::Word(addr) => check(addr, space.read_word(addr).and_then(|v| v.pointee())),
            Candidates::Range { lo, hi } => space.for_each_word_in(lo, hi, |addr, value| check(addr, value.pointee())),
        }
    }
    (refs, examined)
}

impl Engine {
    pub fn verify_object(&mut self, key: ObjectKey) -> Vec<u64> {
        let (refs, examined) = verify_object(&self.space, &self.logs, self.config.compression, key);
        self.stats.verifying += examined;
        refs
    }

    /// Marks a live object freed and routes it through classification,
    /// including every release it cascades into.
    pub(crate) fn free_object(&mut self, key: ObjectKey) -> Result<FreeOutcome, EngineError> {
        self.space.mark_freed(key)?;
        self.pending.insert(key);
        let mut work = VecDeque::new();
        let outcome = self.classify(key, &mut work)?;
        self.drain(&mut work)?;
        Ok(outcome)
    }

    fn drain(&mut self, work: &mut VecDeque<ObjectKey>) -> Result<(), EngineError> {
        while let Some(next) = work.pop_front() {
            if self.state(next) == ObjectState::UserFreed {
                self.classify(next, work)?;
            }
        }
        Ok(())
    }

    /// Places a user-freed object that is in no list: release, heap deferral
    /// or the period list.
    fn classify(&mut self, key: ObjectKey, work: &mut VecDeque<ObjectKey>) -> Result<FreeOutcome, EngineError> {
        self.stats.handling += 1;
        let refs = self.verify_object(key);
        if refs.is_empty() {
            self.release_now(key, work)?;
            return Ok(FreeOutcome::Released);
        }
        let containers: Option<Vec<(u64, ObjectKey)>> =
            refs.iter().map(|&addr| self.space.container_of(addr).map(|c| (addr, c))).collect();
        if let Some(containers) = containers {
            let (_, root) = *containers.iter().min().expect("refs is non-empty");
            self.space.record_mut(root).deferred.push(key);
            return Ok(FreeOutcome::DeferredHeap(root));
        }
        self.lists.period.push(key);
        if self.lists.period.len() > self.lists.threshold && !self.lists.in_pass {
            self.period_pass(work)?;
        }
        Ok(FreeOutcome::DeferredPeriod)
    }

    /// Releases an object with no remaining references. Its deferred objects
    /// are queued on `work` for reclassification.
    fn release_now(&mut self, key: ObjectKey, work: &mut VecDeque<ObjectKey>) -> Result<(), EngineError> {
        let id = self.space.record(key).id;
        if self.config.oracle_check {
            self.stats.n_audits += 1;
            let sweep = oracle::sweep(&self.space, id);
            if !sweep.is_unreferenced() {
                return Err(EngineError::PrematureFree { id, refs: sweep.refs });
            }
        }
        self.space.release(key)?;
        self.pending.remove(&key);
        self.stats.n_released += 1;
        if self.table.unregister(id, &mut self.logs)? {
            self.cache.invalidate_all();
            self.stats.n_cache_invalidations += 1;
        }
        let rec = self.space.record_mut(key);
        rec.log = None;
        let children = std::mem::take(&mut rec.deferred);
        work.extend(children.into_iter().filter(|&c| c != key));
        Ok(())
    }

    /// One walk of the period list; members without references are released.
    fn period_pass(&mut self, work: &mut VecDeque<ObjectKey>) -> Result<(), EngineError> {
        self.lists.in_pass = true;
        self.stats.n_period_passes += 1;
        let members = std::mem::take(&mut self.lists.period);
        let mut retained = Vec::with_capacity(members.len());
        let mut result = Ok(());
        for (i, key) in members.iter().copied().enumerate() {
            if self.state(key) != ObjectState::UserFreed {
                continue;
            }
            self.stats.handling += 1;
            if self.verify_object(key).is_empty() {
                if let Err(e) = self.release_now(key, work) {
                    retained.extend_from_slice(&members[i..]);
                    result = Err(e);
                    break;
                }
            } else {
                retained.push(key);
            }
        }
        retained.append(&mut self.lists.period);
        self.lists.period = retained;
        self.lists.in_pass = false;
        result
    }

    /// Runs one pass over the period list and settles resulting cascades.
    /// Returns the number of objects released.
    pub fn periodical_free(&mut self) -> Result<u64, EngineError> {
        let before = self.stats.n_released;
        let mut work = VecDeque::new();
        self.period_pass(&mut work)?;
        self.drain(&mut work)?;
        Ok(self.stats.n_released - before)
    }

    /// Re-examines every pending object until nothing more can be released.
    /// Afterwards every retained object is referenced from mapped memory.
    pub fn flush_all(&mut self) -> Result<(), EngineError> {
        loop {
            let before = self.stats.n_released;
            let pending: Vec<ObjectKey> = self.pending.iter().copied().collect();
            self.lists.period.clear();
            for (_, rec) in self.space.records_mut() {
                rec.deferred.clear();
            }
            let mut work: VecDeque<ObjectKey> = pending.into_iter().collect();
            self.lists.in_pass = true;
            let drained = self.drain(&mut work);
            self.lists.in_pass = false;
            drained?;
            if self.stats.n_released == before {
                return Ok(());
            }
        }
    }
}
