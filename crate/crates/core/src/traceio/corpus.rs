//! Hand-written use-after-free and double-free scenarios.
//!
//! Every base scenario is also emitted with all allocations forced into the
//! hash-mapped heap, so each case runs through both table paths.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusTrace {
    pub name: String,
    pub text: String,
}

const BASE: &[(&str, &str)] = &[
    (
        "uaf_read_last_value",
        "alloc a 32
store stack:0 a
storei a+8 1234
free a
load a+8
expect-value a+8 1234
expect-live a
flush
expect-live a
storei stack:0 0
flush
expect-released a
",
    ),
    (
        "uaf_write_into_deferred",
        "alloc a 64
store global:0 a
free a
storei a+16 99
expect-value a+16 99
store a+24 a
storei global:0 0
flush
expect-live a  # only its own field points at it now
storei a+24 0
flush
expect-released a
",
    ),
    (
        "double_free_unreferenced",
        "alloc a 32
free a
expect-released a
free a
expect-released a
",
    ),
    (
        "double_free_while_deferred",
        "alloc a 32
store stack:3 a
free a
free a
expect-live a
storei stack:3 0
flush
expect-released a
free a
expect-released a
",
    ),
    (
        "free_then_alloc_no_alias",
        "alloc a 32
store stack:0 a+8
storei a+8 777
free a
alloc b 32
storei b+8 555
expect-value a+8 777
expect-live a
storei stack:0 0
flush
expect-released a
alloc c 32
expect-value c+8 0
expect-live b
",
    ),
    (
        "free_then_realloc_alias",
        "alloc a 64
alloc b 64
store b a
store stack:1 b
free a
realloc b b2 128
expect-live a
expect-live b
expect-value b2 a
storei stack:1 0
flush
expect-released b
expect-live a
storei b2 0
flush
expect-released a
expect-live b2
",
    ),
    (
        "heap_chain_cascade",
        "alloc a 32
alloc b 32
alloc c 32
store a b
store b c
store stack:0 a
free c
free b
expect-live b
expect-live c
free a
expect-live a
storei stack:0 0
period
expect-released a
expect-released b
expect-released c
",
    ),
    (
        "heap_root_stays_live",
        "alloc root 64
alloc kid 16
store root+8 kid
free kid
expect-live kid
storei root+8 0
flush
expect-released kid
expect-live root
",
    ),
    (
        "heap_root_freed_child_on_stack",
        "alloc objA 32
alloc child 32
store objA child
free child
store stack:5 child
free objA
expect-released objA
expect-live child
storei stack:5 0
period
expect-released child
",
    ),
    (
        "mixed_referrers",
        "alloc a 16
alloc h 32
store h+8 a
store stack:2 a
free a
storei stack:2 0
period
expect-live a
storei h+8 0
period
expect-released a
expect-live h
",
    ),
    (
        "interior_pointer_keeps_object",
        "alloc buf 256
store global:1 buf+0x80
free buf
expect-live buf
load buf+0x80
storei global:1 0
flush
expect-released buf
",
    ),
    (
        "free_through_interior_pointer",
        "alloc a 64
free a+0x20
expect-released a
",
    ),
    (
        "overwrite_then_flush",
        "alloc a 48
store stack:0 a
store stack:1 a
free a
storei stack:0 0
storei stack:1 0
flush
expect-released a
",
    ),
    (
        "same_container_two_slots",
        "alloc obj 16
alloc buf 128
store buf+0x28 obj
store buf+0x40 obj
free obj
expect-live obj
storei buf+0x28 0
flush
expect-live obj
storei buf+0x40 0
flush
expect-released obj
",
    ),
    (
        "cycle_retained_until_broken",
        "alloc x 32
alloc y 32
store x y
store y x
free x
free y
flush
expect-live x
expect-live y
storei x 0
flush
expect-released y
expect-released x
",
    ),
    (
        "dangling_pointer_moved",
        "alloc a 32
store stack:0 a
free a
store stack:1 a
storei stack:0 0
period
expect-live a
storei stack:1 0
period
expect-released a
",
    ),
    (
        "realloc_unreferenced",
        "alloc a 32
storei a+8 42
realloc a b 64
expect-released a
expect-value b+8 42
",
    ),
    (
        "realloc_shrink_tracks_copies",
        "alloc t 16
alloc a 128
store a t
store a+0x70 t
realloc a b 32
expect-value b t
expect-released a
free t
expect-live t
free b
expect-released b
expect-released t
",
    ),
    (
        "double_free_after_realloc",
        "alloc a 32
realloc a b 48
free a
expect-released a
expect-live b
",
    ),
    (
        "stack_and_global_refs",
        "alloc g 64
store global:7 g+8
store stack:7 g+16
free g
storei global:7 0
period
expect-live g
storei stack:7 0
period
expect-released g
",
    ),
    (
        "uaf_load_through_heap_pointer",
        "alloc node 32
alloc list 32
store list node
storei node+8 31337
free node
load list
load node+8
expect-value node+8 31337
expect-live node
free list
expect-released list
expect-released node
",
    ),
    (
        "free_null_is_noop",
        "alloc a 16
free null
expect-live a
free a
expect-released a
",
    ),
    (
        "dangling_copy_into_heap",
        "alloc a 16
alloc b 64
store stack:0 a
free a
store b+0x10 a
storei stack:0 0
period
expect-live a
free b
flush
expect-released a
expect-released b
",
    ),
    (
        "container_holds_many_pointees",
        "alloc c 512
alloc p1 16
alloc p2 16
alloc p3 16
store c p1
store c+8 p2
store c+0x10 p3
free p1
free p2
free p3
expect-live p2
free c
expect-released c
expect-released p1
expect-released p2
expect-released p3
",
    ),
    (
        "repeated_store_same_slot",
        "alloc a 32
store stack:9 a
store stack:9 a
store stack:9 a
free a
expect-live a
store stack:9 null
flush
expect-released a
",
    ),
    (
        "reused_memory_after_release",
        "alloc a 32
alloc h 64
store h+8 a
free a
storei h+8 0
flush
expect-released a
alloc b 32
store h+8 b
free b
expect-live b
storei h+8 0
flush
expect-released b
",
    ),
];

fn hash_variant(text: &str) -> String {
    text.lines()
        .map(|line| {
            if line.starts_with("alloc ") {
                let (body, comment) = match line.split_once('#') {
                    Some((b, c)) => (b.trim_end(), format!("  #{c}")),
                    None => (line, String::new()),
                };
                format!("{body} high{comment}\n")
            } else {
                format!("{line}\n")
            }
        })
        .collect()
}

/// The scenario corpus, low-heap variants first, then hash-heap variants.
pub fn cwe416_corpus() -> Vec<CorpusTrace> {
    let low = BASE.iter().map(|(name, text)| CorpusTrace { name: (*name).to_string(), text: (*text).to_string() });
    let high = BASE.iter().map(|(name, text)| CorpusTrace { name: format!("{name}_hash"), text: hash_variant(text) });
    low.chain(high).collect()
}
