#![allow(dead_code)]

use dangsim::{generate, parse, CompressionMode, EngineConfig, Pattern, Placement, Trace, WorkloadSpec};

/// A seeded random case: a generated trace plus a config that varies
/// compression, cache and hash sizes, threshold and heap placement.
pub fn random_case(i: u64) -> (Trace, EngineConfig) {
    let spec = match i % 10 {
        0 => WorkloadSpec { pattern: Pattern::MemIntensive, objects: 2, stores: 150, seed: i },
        1 => WorkloadSpec { pattern: Pattern::ComputeIntensive, objects: 20, stores: 150, seed: i },
        _ => WorkloadSpec { pattern: Pattern::Mixed, objects: 60, stores: 100, seed: i },
    };
    let compression = match i % 3 {
        0 => CompressionMode::Off,
        1 => CompressionMode::Block(1 << (i % 5)),
        _ => CompressionMode::Full,
    };
    let config = EngineConfig {
        compression,
        cache_bits: 4 + (i % 9) as u8,
        hash_bits: 8 + (i % 4) as u8,
        period_threshold: [0, 1, 3, 10, 1000][(i % 5) as usize],
        placement: if i.is_multiple_of(7) { Placement::High } else { Placement::Low },
        seed: i,
        ..EngineConfig::default()
    };
    let trace = parse(&generate(&spec)).expect("generated traces parse");
    (trace, config)
}
