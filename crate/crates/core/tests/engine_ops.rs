mod common;

use std::collections::{BTreeSet, HashMap};

use dangsim::engine::RunTextError;
use dangsim::oracle::{self, sweep};
use dangsim::reaper;
use dangsim::simspace::{global_addr, stack_addr};
use dangsim::{
    parse, run_text, CompressionMode, Engine, EngineConfig, EngineError, FreeOutcome, ObjectKey, ObjectState,
    Placement, RunError, SimValue, TaggedWord,
};
use proptest::prelude::*;

fn engine() -> Engine {
    Engine::new(EngineConfig::default()).unwrap()
}

fn engine_with(f: impl FnOnce(&mut EngineConfig)) -> Engine {
    let mut config = EngineConfig::default();
    f(&mut config);
    Engine::new(config).unwrap()
}

fn log_len(e: &Engine, key: ObjectKey) -> usize {
    e.logs().get(e.record(key).log.unwrap()).unwrap().len()
}

#[test]
fn store_tracks_first_and_skips_repeat() {
    let mut e = engine();
    let (a, pa) = e.alloc(48, Placement::Low).unwrap();
    e.on_store(stack_addr(0), SimValue::Pointer(pa)).unwrap();
    assert_eq!(log_len(&e, a), 1);
    assert_eq!(e.counters().searching, 1);
    e.on_store(stack_addr(0), SimValue::Pointer(pa)).unwrap();
    assert_eq!(log_len(&e, a), 1);
    assert_eq!(e.counters().dup_hits, 1);
    assert_eq!(e.counters().searching, 1, "a hit must not search the table");
    e.on_store(stack_addr(0), SimValue::Data(7)).unwrap();
    assert!(e.verify_object(a).is_empty());
}

#[test]
fn store_errors() {
    let mut e = engine();
    let (a, pa) = e.alloc(16, Placement::Low).unwrap();
    let wild = 0x7000_0000;
    assert!(matches!(
        e.on_store(wild, SimValue::Data(1)),
        Err(EngineError::Space(dangsim::simspace::SpaceError::WildStore(_)))
    ));
    let bogus = TaggedWord::from_parts(4, 0x9990);
    assert_eq!(e.on_store(stack_addr(0), SimValue::Pointer(bogus)), Err(EngineError::StaleStore(bogus)));
    let wrong_tag = TaggedWord::from_parts(5, pa.addr());
    assert!(matches!(
        e.on_store(stack_addr(0), SimValue::Pointer(wrong_tag)),
        Err(EngineError::TagMismatch { exp: 4, .. })
    ));
    e.on_free(pa).unwrap();
    assert_eq!(e.state(a), ObjectState::Released);
    assert_eq!(e.on_store(stack_addr(0), SimValue::Pointer(pa)), Err(EngineError::StaleStore(pa)));
    assert_eq!(e.on_load(pa.addr()), Err(EngineError::LoadFromUnmapped(pa.addr())));
}

#[test]
fn free_outcomes() {
    let mut e = engine();
    let (_, lone) = e.alloc(32, Placement::Low).unwrap();
    assert_eq!(e.on_free(lone).unwrap(), FreeOutcome::Released);

    let (on_stack, p) = e.alloc(32, Placement::Low).unwrap();
    e.on_store(stack_addr(1), SimValue::Pointer(p)).unwrap();
    assert_eq!(e.on_free(p).unwrap(), FreeOutcome::DeferredPeriod);
    assert_eq!(e.period_list(), &[on_stack]);

    let (obj_a, pa) = e.alloc(64, Placement::Low).unwrap();
    let (child, pc) = e.alloc(16, Placement::Low).unwrap();
    e.on_store(pa.addr() + 8, SimValue::Pointer(pc)).unwrap();
    assert_eq!(e.on_free(pc).unwrap(), FreeOutcome::DeferredHeap(obj_a));
    assert_eq!(e.record(obj_a).deferred, vec![child]);
    assert_eq!(e.on_free(pa).unwrap(), FreeOutcome::Released);
    assert_eq!(e.state(child), ObjectState::Released, "child re-verified when its root goes");
}

#[test]
fn double_and_invalid_frees() {
    let mut e = engine();
    let (_, p) = e.alloc(32, Placement::Low).unwrap();
    e.on_store(stack_addr(0), SimValue::Pointer(p)).unwrap();
    e.on_free(p).unwrap();
    assert_eq!(e.on_free(p).unwrap(), FreeOutcome::DoubleFree);
    e.on_store(stack_addr(0), SimValue::Data(0)).unwrap();
    e.flush_all().unwrap();
    assert_eq!(e.on_free(p).unwrap(), FreeOutcome::DoubleFree);
    assert_eq!(e.counters().n_double_free, 2);
    let never = TaggedWord::from_parts(4, 0x8880);
    assert_eq!(e.on_free(never), Err(EngineError::InvalidFree(never)));
    assert_eq!(e.on_free(TaggedWord::NULL), Err(EngineError::InvalidFree(TaggedWord::NULL)));
}

#[test]
fn mixed_referrers_go_to_period_list() {
    let mut e = engine();
    let (a, pa) = e.alloc(16, Placement::Low).unwrap();
    let (_, ph) = e.alloc(32, Placement::Low).unwrap();
    e.on_store(ph.addr() + 8, SimValue::Pointer(pa)).unwrap();
    e.on_store(global_addr(0), SimValue::Pointer(pa)).unwrap();
    assert_eq!(e.on_free(pa).unwrap(), FreeOutcome::DeferredPeriod);
    assert_eq!(e.period_list(), &[a]);
}

#[test]
fn heap_root_is_lowest_referencing_address() {
    let mut e = engine();
    let (_, target) = e.alloc(16, Placement::Low).unwrap();
    let (low, pl) = e.alloc(64, Placement::Low).unwrap();
    let (_, ph) = e.alloc(64, Placement::Low).unwrap();
    e.on_store(ph.addr(), SimValue::Pointer(target)).unwrap();
    e.on_store(pl.addr() + 56, SimValue::Pointer(target)).unwrap();
    assert_eq!(e.on_free(target).unwrap(), FreeOutcome::DeferredHeap(low));
}

#[test]
fn periodical_free_examples() {
    let mut e = engine();
    let mut keys = Vec::new();
    for i in 0..3 {
        let (k, p) = e.alloc(16, Placement::Low).unwrap();
        e.on_store(stack_addr(i), SimValue::Pointer(p)).unwrap();
        e.on_free(p).unwrap();
        keys.push(k);
    }
    for i in 0..3 {
        e.on_store(stack_addr(i), SimValue::Data(0)).unwrap();
    }
    assert_eq!(e.periodical_free().unwrap(), 3);
    assert!(e.period_list().is_empty());

    let (kept, p) = e.alloc(16, Placement::Low).unwrap();
    let (gone, q) = e.alloc(16, Placement::Low).unwrap();
    e.on_store(stack_addr(10), SimValue::Pointer(p)).unwrap();
    e.on_store(stack_addr(11), SimValue::Pointer(q)).unwrap();
    e.on_free(p).unwrap();
    e.on_free(q).unwrap();
    e.on_store(stack_addr(11), SimValue::Data(0)).unwrap();
    assert_eq!(e.periodical_free().unwrap(), 1);
    assert_eq!(e.period_list(), &[kept]);
    assert_eq!(e.state(gone), ObjectState::Released);
}

#[test]
fn threshold_crossing_triggers_a_pass() {
    let mut e = engine();
    for i in 0..1001u64 {
        let (_, p) = e.alloc(16, Placement::Low).unwrap();
        e.on_store(stack_addr(i), SimValue::Pointer(p)).unwrap();
        assert_eq!(e.on_free(p).unwrap(), FreeOutcome::DeferredPeriod);
        e.on_store(stack_addr(i), SimValue::Data(0)).unwrap();
        if i == 999 {
            assert_eq!(e.period_list().len(), 1000);
            assert_eq!(e.counters().n_period_passes, 0);
        }
    }
    // The pass runs inside the 1001st free, while that object is still on the stack.
    assert_eq!(e.counters().n_period_passes, 1);
    assert_eq!(e.period_list().len(), 1);
    assert_eq!(e.counters().n_released, 1000);
}

#[test]
fn releasing_root_moves_stack_referenced_child_to_period_list() {
    let mut e = engine_with(|c| c.oracle_check = true);
    let (obj_a, pa) = e.alloc(32, Placement::Low).unwrap();
    let (child, pc) = e.alloc(32, Placement::Low).unwrap();
    e.on_store(pa.addr(), SimValue::Pointer(pc)).unwrap();
    assert_eq!(e.on_free(pc).unwrap(), FreeOutcome::DeferredHeap(obj_a));
    e.on_store(stack_addr(5), SimValue::Pointer(pc)).unwrap();
    assert_eq!(e.on_free(pa).unwrap(), FreeOutcome::Released);
    assert_eq!(e.period_list(), &[child]);
    assert_eq!(sweep(e.space(), pc.addr()).refs, vec![stack_addr(5)]);
}

#[test]
fn flush_settles_heap_chain() {
    let mut e = engine_with(|c| c.oracle_check = true);
    let (a, pa) = e.alloc(32, Placement::Low).unwrap();
    let (b, pb) = e.alloc(32, Placement::Low).unwrap();
    let (c, pc) = e.alloc(32, Placement::Low).unwrap();
    let (holder, ph) = e.alloc(32, Placement::Low).unwrap();
    e.on_store(ph.addr(), SimValue::Pointer(pa)).unwrap();
    e.on_store(pa.addr(), SimValue::Pointer(pb)).unwrap();
    e.on_store(pb.addr(), SimValue::Pointer(pc)).unwrap();
    for p in [pc, pb, pa] {
        assert!(matches!(e.on_free(p).unwrap(), FreeOutcome::DeferredHeap(_)));
    }
    for (addr, _) in [(pa.addr(), 0), (pb.addr(), 0), (ph.addr(), 0)] {
        e.on_store(addr, SimValue::Data(0)).unwrap();
    }
    for id in [pa.addr(), pb.addr(), pc.addr()] {
        assert!(sweep(e.space(), id).is_unreferenced());
    }
    e.flush_all().unwrap();
    for k in [a, b, c] {
        assert_eq!(e.state(k), ObjectState::Released);
    }
    assert_eq!(e.state(holder), ObjectState::Live);
    assert!(e.retained().is_empty());
}

#[test]
fn flush_keeps_globally_referenced_object() {
    let mut e = engine();
    e.flush_all().unwrap();
    let (k, p) = e.alloc(64, Placement::Low).unwrap();
    e.on_store(global_addr(3), SimValue::Pointer(p.offset(16))).unwrap();
    e.on_free(p).unwrap();
    e.flush_all().unwrap();
    assert_eq!(e.state(k), ObjectState::UserFreed);
    assert_eq!(e.retained(), &BTreeSet::from([k]));
}

/// Two high-heap objects sharing one hash entry, found by allocating until
/// the table's own hash maps two IDs to the same slot.
fn sharing_pair(e: &mut Engine) -> ((ObjectKey, TaggedWord), (ObjectKey, TaggedWord)) {
    let mut seen: HashMap<u64, (ObjectKey, TaggedWord)> = HashMap::new();
    loop {
        let (k, p) = e.alloc(16, Placement::High).unwrap();
        let slot = e.table().hash_index(p.addr());
        if let Some(&first) = seen.get(&slot) {
            return (first, (k, p));
        }
        seen.insert(slot, (k, p));
    }
}

#[test]
fn shared_logs_release_with_last_sharer() {
    let mut e = engine_with(|c| c.hash_bits = 8);
    let ((a, pa), (b, pb)) = sharing_pair(&mut e);
    let log = e.record(a).log.unwrap();
    assert_eq!(e.record(b).log, Some(log));
    assert_eq!(e.logs().get(log).unwrap().nums(), 2);

    // Only b's location holds a pointer; a finds nothing through the shared log.
    e.on_store(stack_addr(0), SimValue::Pointer(pb)).unwrap();
    assert!(e.verify_object(a).is_empty());
    assert_eq!(e.verify_object(b), vec![stack_addr(0)]);

    let before = e.counters().n_cache_invalidations;
    assert_eq!(e.on_free(pa).unwrap(), FreeOutcome::Released);
    assert_eq!(e.logs().get(log).unwrap().nums(), 1);
    assert_ne!(e.table().entry(pb.addr()).sign, 0);
    assert_eq!(e.counters().n_cache_invalidations, before);

    e.on_store(stack_addr(0), SimValue::Data(0)).unwrap();
    assert_eq!(e.on_free(pb).unwrap(), FreeOutcome::Released);
    assert_eq!(e.table().entry(pb.addr()).sign, 0);
    assert!(e.logs().get(log).is_err());
    assert_eq!(e.counters().n_cache_invalidations, before + 1);
}

#[test]
fn realloc_unreferenced_copies_contents() {
    let mut e = engine();
    let (old, p) = e.alloc(32, Placement::Low).unwrap();
    e.on_store(p.addr() + 8, SimValue::Data(42)).unwrap();
    let (_, q) = e.on_realloc(p, 100).unwrap();
    assert_eq!(e.state(old), ObjectState::Released);
    assert_eq!(e.space().read_word(q.addr() + 8), Some(SimValue::Data(42)));
    assert_eq!(q.exp(), 7);
}

#[test]
fn realloc_keeps_referenced_old_object() {
    let mut e = engine();
    let (old, p) = e.alloc(32, Placement::Low).unwrap();
    e.on_store(stack_addr(2), SimValue::Pointer(p)).unwrap();
    let (new, _) = e.on_realloc(p, 64).unwrap();
    assert_eq!(e.state(old), ObjectState::UserFreed);
    assert_eq!(e.state(new), ObjectState::Live);
    assert_eq!(e.on_realloc(p, 64), Err(EngineError::InvalidRealloc(p)));
}

#[test]
fn realloc_copied_pointers_are_tracked_at_new_locations() {
    let mut e = engine_with(|c| c.oracle_check = true);
    let (t, pt) = e.alloc(16, Placement::Low).unwrap();
    let (_, pa) = e.alloc(64, Placement::Low).unwrap();
    e.on_store(pa.addr() + 8, SimValue::Pointer(pt)).unwrap();
    e.on_store(pa.addr() + 48, SimValue::Pointer(pt.offset(8))).unwrap();
    let (_, pb) = e.on_realloc(pa, 128).unwrap();
    let found: BTreeSet<u64> = e.verify_object(t).into_iter().collect();
    let truth: BTreeSet<u64> = sweep(e.space(), pt.addr()).refs.into_iter().collect();
    assert_eq!(truth, BTreeSet::from([pb.addr() + 8, pb.addr() + 48]));
    assert_eq!(found, truth);
}

#[test]
fn forced_false_hit_is_caught_by_audit() {
    let mut e = engine_with(|c| {
        c.oracle_check = true;
        c.false_hit_rate = 1.0;
    });
    let (_, p) = e.alloc(16, Placement::Low).unwrap();
    e.on_store(stack_addr(0), SimValue::Pointer(p)).unwrap();
    assert_eq!(e.on_free(p), Err(EngineError::PrematureFree { id: p.addr(), refs: vec![stack_addr(0)] }));
    assert!(!oracle::check_release(e.space(), p.addr()));
}

#[test]
fn config_validation() {
    assert!(Engine::new(EngineConfig { cache_bits: 2, ..EngineConfig::default() }).is_err());
    assert!(Engine::new(EngineConfig { hash_bits: 40, ..EngineConfig::default() }).is_err());
    assert!(Engine::new(EngineConfig { direct_bits: 50, ..EngineConfig::default() }).is_err());
    assert!(Engine::new(EngineConfig { false_hit_rate: 1.5, ..EngineConfig::default() }).is_err());
}

#[test]
fn run_empty_trace() {
    let report = run_text("", EngineConfig::default()).unwrap();
    assert_eq!(report.counters, Default::default());
    assert_eq!(report.dup_rate, 0.0);
    assert_eq!(report.n_retained_at_end, 0);
}

const SAME_CONTAINER: &str = "alloc obj 16
alloc buf 128
store buf+0x28 obj
store buf+0x40 obj
";

#[test]
fn run_same_container_dup_rate_by_mode() {
    let full =
        run_text(SAME_CONTAINER, EngineConfig { compression: CompressionMode::Full, ..Default::default() }).unwrap();
    assert_eq!(full.dup_rate, 0.5);
    let off = run_text(SAME_CONTAINER, EngineConfig::default()).unwrap();
    assert_eq!(off.dup_rate, 0.0);
}

#[test]
fn run_reports_failing_event() {
    let err = run_text("alloc a 16\n# note\nstore stack:0 a\nfree a\nexpect-released a\n", EngineConfig::default())
        .unwrap_err();
    match err {
        RunTextError::Run(run) => {
            assert_eq!(run.index, 3);
            assert_eq!(run.line, 5);
            assert!(matches!(run.source, EngineError::ExpectFailed(_)));
        }
        other => panic!("unexpected {other:?}"),
    }
    let err = run_text("alloc a 16\nfree a\nstorei a+8 1\n", EngineConfig::default()).unwrap_err();
    assert!(matches!(err, RunTextError::Run(RunError { source: EngineError::UseOfReleased(_), .. })));
    assert!(matches!(run_text("free x", EngineConfig::default()), Err(RunTextError::Parse(_))));
}

#[test]
fn no_final_flush_leaves_deferred_objects() {
    let text = "alloc a 16\nstore stack:0 a\nfree a\nstorei stack:0 0\n";
    let lazy = run_text(text, EngineConfig { final_flush: false, ..Default::default() }).unwrap();
    assert_eq!(lazy.n_retained_at_end, 1);
    let settled = run_text(text, EngineConfig::default()).unwrap();
    assert_eq!(settled.n_retained_at_end, 0);
}

#[test]
fn uaf_loads_are_counted() {
    let text = "alloc a 32\nstore stack:0 a\nstorei a+8 5\nfree a\nload a+8\nload stack:0\nexpect-value a+8 5\n";
    let report = run_text(text, EngineConfig::default()).unwrap();
    assert_eq!(report.counters.n_loads, 2);
    assert_eq!(report.counters.n_uaf_loads, 1);
}

/// Checks the structural invariants that must hold between any two events.
fn check_invariants(e: &mut Engine) {
    // Registration is total and hash-entry sharer counts match enumeration.
    let mut sharers: HashMap<u64, u32> = HashMap::new();
    let live: Vec<(ObjectKey, u64, bool)> = e
        .space()
        .records()
        .filter(|(_, r)| r.state != ObjectState::Released)
        .map(|(k, r)| (k, r.id, e.table().is_direct(r.id)))
        .collect();
    for &(k, id, direct) in &live {
        assert_eq!(e.table().lookup(id), e.record(k).log);
        if !direct {
            *sharers.entry(e.table().hash_index(id)).or_default() += 1;
        }
    }
    for &(k, id, direct) in &live {
        if !direct {
            let nums = e.logs().get(e.record(k).log.unwrap()).unwrap().nums();
            assert_eq!(nums, sharers[&e.table().hash_index(id)]);
        }
    }
    // Verification through logs finds exactly what the sweep finds.
    let mode = e.config().compression;
    for &(k, id, _) in &live {
        let (found, _) = reaper::verify_object(e.space(), e.logs(), mode, k);
        let found: BTreeSet<u64> = found.into_iter().collect();
        let truth: BTreeSet<u64> = sweep(e.space(), id).refs.into_iter().collect();
        assert_eq!(found, truth, "object {id:#x}");
    }
    // Every pending object sits in exactly one list.
    let mut listed: Vec<ObjectKey> = e.period_list().to_vec();
    for (_, r) in e.space().records() {
        listed.extend(&r.deferred);
    }
    listed.sort();
    let pending: Vec<ObjectKey> = e.retained().iter().copied().collect();
    assert_eq!(listed, pending);
}

#[test]
fn invariants_hold_between_events() {
    for i in 0..60 {
        let (trace, config) = common::random_case(i);
        for cut in [trace.len() / 3, 2 * trace.len() / 3, trace.len()] {
            let prefix = dangsim::Trace { events: trace.events[..cut].to_vec() };
            let mut e = Engine::new(EngineConfig { final_flush: false, ..config.clone() }).unwrap();
            e.run(&prefix).unwrap();
            check_invariants(&mut e);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn verify_matches_sweep_and_counters_balance(seed in 1000u64..1_000_000) {
        let (trace, config) = common::random_case(seed);
        let mut e = Engine::new(EngineConfig { final_flush: false, ..config }).unwrap();
        let report = e.run(&trace).unwrap();
        let c = report.counters;
        prop_assert_eq!(c.n_ptr_stores, c.n_logged + c.dup_hits);
        prop_assert_eq!(c.searching, c.n_logged);
        prop_assert!((0.0..=1.0).contains(&report.dup_rate));
        check_invariants(&mut e);
        e.flush_all().unwrap();
        prop_assert_eq!(e.retained(), &oracle::still_referenced(e.space()));
    }
}

#[test]
fn parse_render_identity_on_generated() {
    for i in 0..20 {
        let (trace, _) = common::random_case(i);
        let text = dangsim::render(trace.iter());
        let again = parse(&text).unwrap();
        assert_eq!(trace.iter().collect::<Vec<_>>(), again.iter().collect::<Vec<_>>());
    }
}
