//! Synthetic workloads.
//!
//! `mem-intensive` stores pointers to a handful of pointees at many offsets of
//! a few large containers, so many stores share a container. `compute-intensive`
//! stores each pointer once into a distinct stack or global slot, leaving
//! nothing for compression to merge. `mixed` is random churn over both heaps,
//! used for equivalence testing against the sweep oracle.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{render, ExpectedValue, Loc, PtrExpr, TraceEvent};
use crate::minfat::size_class;
use crate::simspace::{SLOT_COUNT, WORD_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pattern {
    ComputeIntensive,
    MemIntensive,
    Mixed,
}

impl FromStr for Pattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "compute-intensive" | "compute" => Ok(Pattern::ComputeIntensive),
            "mem-intensive" | "mem" => Ok(Pattern::MemIntensive),
            "mixed" => Ok(Pattern::Mixed),
            _ => Err(format!("unknown pattern {s:?} (compute-intensive, mem-intensive, mixed)")),
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pattern::ComputeIntensive => "compute-intensive",
            Pattern::MemIntensive => "mem-intensive",
            Pattern::Mixed => "mixed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WorkloadSpec {
    pub pattern: Pattern,
    pub objects: usize,
    pub stores: usize,
    pub seed: u64,
}

/// Deterministic in `spec`.
pub fn generate(spec: &WorkloadSpec) -> String {
    let mut g = Gen::new(spec.seed);
    let objects = spec.objects.max(1);
    let stores = spec.stores.max(1);
    match spec.pattern {
        Pattern::MemIntensive => g.mem_intensive(objects, stores),
        Pattern::ComputeIntensive => g.compute_intensive(objects, stores),
        Pattern::Mixed => g.mixed(objects, stores),
    }
    format!(
        "# pattern={} objects={} stores={} seed={}\n{}",
        spec.pattern,
        spec.objects,
        spec.stores,
        spec.seed,
        render(&g.events)
    )
}

#[derive(Debug, Clone)]
struct Obj {
    name: String,
    alloc_size: u64,
}

struct Gen {
    rng: ChaCha8Rng,
    events: Vec<TraceEvent>,
    next_name: usize,
}

fn ptr(obj: &Obj, offset: u64) -> PtrExpr {
    PtrExpr::Name { name: obj.name.clone(), offset }
}

impl Gen {
    fn new(seed: u64) -> Self {
        Gen { rng: ChaCha8Rng::seed_from_u64(seed), events: Vec::new(), next_name: 0 }
    }

    fn alloc(&mut self, prefix: &str, size: u64, high: bool) -> Obj {
        let name = format!("{prefix}{}", self.next_name);
        self.next_name += 1;
        self.events.push(TraceEvent::Alloc { name: name.clone(), size, high });
        Obj { name, alloc_size: size_class(size).expect("generator sizes are valid").alloc_size }
    }

    fn field(&mut self, obj: &Obj) -> Loc {
        let words = obj.alloc_size / WORD_BYTES;
        Loc::Field { name: obj.name.clone(), offset: self.rng.gen_range(0..words) * WORD_BYTES }
    }

    fn free(&mut self, obj: &Obj) {
        self.events.push(TraceEvent::Free { ptr: ptr(obj, 0) });
    }

    fn mem_intensive(&mut self, containers: usize, stores: usize) {
        const POINTEES: usize = 4;
        const CONTAINER_BYTES: u64 = 4096;
        const STACK_SLOTS: u64 = 64;
        const REPLACEMENTS: usize = 8;
        // The whole pointee pool comes up front so pointees share one page and
        // containers differ from it only in higher address bits.
        let mut spares: Vec<Obj> = (0..POINTEES + REPLACEMENTS).map(|_| self.alloc("p", 48, false)).collect();
        let mut pointees: Vec<Obj> = spares.drain(..POINTEES).collect();
        spares.reverse();
        let boxes: Vec<Obj> = (0..containers).map(|_| self.alloc("c", CONTAINER_BYTES, false)).collect();
        let mut retired = Vec::new();
        let replace_every = (stores / (REPLACEMENTS + 1)).max(1);
        for i in 0..stores {
            if i > 0 && i % replace_every == 0 {
                if let Some(fresh) = spares.pop() {
                    // Free a pointee that containers still reference; a spare takes its place.
                    let idx = self.rng.gen_range(0..pointees.len());
                    let old = std::mem::replace(&mut pointees[idx], fresh);
                    self.free(&old);
                    retired.push(old);
                }
            }
            let target = pointees.choose(&mut self.rng).expect("pointees").clone();
            let offset = self.rng.gen_range(0..target.alloc_size / WORD_BYTES) * WORD_BYTES;
            let loc = if self.rng.gen_ratio(1, 64) {
                Loc::Stack(self.rng.gen_range(0..STACK_SLOTS))
            } else {
                let c = boxes.choose(&mut self.rng).expect("containers").clone();
                self.field(&c)
            };
            self.events.push(TraceEvent::Store { loc, value: ptr(&target, offset) });
            if self.rng.gen_ratio(1, 32) {
                let c = boxes.choose(&mut self.rng).expect("containers").clone();
                let loc = self.field(&c);
                self.events.push(TraceEvent::StoreData { loc, value: i as u64 });
            }
            if i % 4096 == 4095 {
                self.events.push(TraceEvent::Period);
            }
        }
        for slot in 0..STACK_SLOTS {
            self.events.push(TraceEvent::StoreData { loc: Loc::Stack(slot), value: 0 });
        }
        for c in &boxes {
            self.free(c);
        }
        for p in pointees.iter().chain(&spares) {
            self.free(p);
        }
        self.events.push(TraceEvent::Flush);
        for obj in retired.iter().chain(&boxes).chain(&pointees).chain(&spares) {
            self.events.push(TraceEvent::ExpectReleased(obj.name.clone()));
        }
    }

    fn compute_intensive(&mut self, objects: usize, stores: usize) {
        const SLOT_LAG: u64 = 512;
        let mut live: Vec<Obj> = (0..objects)
            .map(|_| {
                let size = self.rng.gen_range(8..=64);
                self.alloc("o", size, false)
            })
            .collect();
        let churn_every = (stores / objects).max(1);
        let slots = 2 * SLOT_COUNT;
        let slot_loc = |k: u64| {
            let k = k % slots;
            if k.is_multiple_of(2) {
                Loc::Stack(k / 2)
            } else {
                Loc::Global(k / 2)
            }
        };
        for i in 0..stores as u64 {
            let target = live[i as usize % live.len()].clone();
            self.events.push(TraceEvent::Store { loc: slot_loc(i), value: ptr(&target, 0) });
            if i >= SLOT_LAG {
                // The frame that held this slot has returned.
                self.events.push(TraceEvent::StoreData { loc: slot_loc(i - SLOT_LAG), value: 0 });
            }
            if i > 0 && (i as usize).is_multiple_of(churn_every) {
                let idx = self.rng.gen_range(0..live.len());
                let size = self.rng.gen_range(8..=64);
                let fresh = self.alloc("o", size, false);
                let old = std::mem::replace(&mut live[idx], fresh);
                self.free(&old);
            }
        }
        for k in (stores as u64).saturating_sub(SLOT_LAG)..stores as u64 {
            self.events.push(TraceEvent::StoreData { loc: slot_loc(k), value: 0 });
        }
        for obj in &live {
            self.free(obj);
        }
    }

    fn mixed(&mut self, objects: usize, stores: usize) {
        let mut live: Vec<Obj> = Vec::new();
        let mut freed: Vec<Obj> = Vec::new();
        let mut allocs = 0usize;
        let mut stored = 0usize;
        let stack_slots = 24;
        let global_slots = 12;

        let size_of = |rng: &mut ChaCha8Rng| -> u64 {
            match rng.gen_range(0..10) {
                0..=5 => rng.gen_range(1..=32),
                6..=8 => rng.gen_range(33..=256),
                _ => rng.gen_range(257..=2048),
            }
        };
        let pick_loc = |g: &mut Gen, live: &[Obj]| -> Loc {
            let roll = g.rng.gen_range(0..100);
            if roll < 35 || live.is_empty() {
                Loc::Stack(g.rng.gen_range(0..stack_slots))
            } else if roll < 50 {
                Loc::Global(g.rng.gen_range(0..global_slots))
            } else {
                let holder = live.choose(&mut g.rng).expect("non-empty").clone();
                g.field(&holder)
            }
        };

        while stored < stores {
            let roll = self.rng.gen_range(0..100);
            if live.len() < 2 || (roll < 16 && allocs < objects) {
                let size = size_of(&mut self.rng);
                let high = self.rng.gen_ratio(3, 10);
                live.push(self.alloc("m", size, high));
                allocs += 1;
            } else if roll < 52 {
                let target = live.choose(&mut self.rng).expect("non-empty").clone();
                let offset = if self.rng.gen_ratio(1, 5) { self.rng.gen_range(0..target.alloc_size) } else { 0 };
                let loc = pick_loc(self, &live);
                self.events.push(TraceEvent::Store { loc, value: ptr(&target, offset) });
                stored += 1;
            } else if roll < 68 {
                let loc = pick_loc(self, &live);
                let value = self.rng.gen_range(0..1000);
                self.events.push(TraceEvent::StoreData { loc, value });
            } else if roll < 72 {
                let loc = pick_loc(self, &live);
                self.events.push(TraceEvent::Load { loc });
            } else if roll < 86 {
                let idx = self.rng.gen_range(0..live.len());
                let obj = live.swap_remove(idx);
                self.free(&obj);
                freed.push(obj);
            } else if roll < 88 {
                if let Some(obj) = freed.choose(&mut self.rng).cloned() {
                    self.free(&obj);
                }
            } else if roll < 93 {
                let idx = self.rng.gen_range(0..live.len());
                let obj = live.swap_remove(idx);
                let size = size_of(&mut self.rng);
                let name = format!("m{}", self.next_name);
                self.next_name += 1;
                self.events.push(TraceEvent::Realloc { old: obj.name.clone(), new: name.clone(), size });
                live.push(Obj { name, alloc_size: size_class(size).expect("valid").alloc_size });
                freed.push(obj);
                allocs += 1;
            } else if roll < 97 {
                self.events.push(TraceEvent::Period);
            } else if roll < 99 {
                self.events.push(TraceEvent::Flush);
            } else {
                let loc = Loc::Stack(self.rng.gen_range(0..stack_slots));
                self.events.push(TraceEvent::StoreData { loc: loc.clone(), value: 7 });
                self.events.push(TraceEvent::ExpectValue { loc, value: ExpectedValue::Data(7) });
            }
        }
        for obj in live.iter().filter(|_| self.rng.gen_ratio(1, 2)).cloned().collect::<Vec<_>>() {
            self.free(&obj);
        }
    }
}
