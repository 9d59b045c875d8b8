//! Trace-driven simulator of a dangling-pointer elimination runtime.
//!
//! Pointers carry their allocation's size exponent in the top bits, so any
//! interior pointer truncates to the allocation base, which serves as the
//! object's implicit ID. The ID indexes a direct-mapped or shared-hash table
//! of logs that record where pointers to each object were stored. A
//! direct-mapped Log Cache filters repeated `(object, location)` pairs before
//! they reach the table, and location compression widens what one entry
//! covers. A `free` only releases memory once re-reading the logged locations
//! finds no remaining pointer; otherwise the object is deferred.
//!
//! Everything runs over a simulated sparse address space, with a brute-force
//! sweep oracle available to audit each release.

pub mod addrtable;
pub mod engine;
pub mod logcache;
pub mod logstore;
pub mod minfat;
pub mod oracle;
pub mod reaper;
pub mod simspace;
pub mod traceio;

pub use engine::{run_text, Counters, Engine, EngineConfig, EngineError, RunError, StatsReport};
pub use logcache::CompressionMode;
pub use minfat::{encode, id_of, size_class, strip, SizeClass, TaggedWord};
pub use reaper::FreeOutcome;
pub use simspace::{ObjectKey, ObjectState, Placement, SimValue};
pub use traceio::{cwe416_corpus, generate, parse, render, Pattern, Trace, TraceEvent, WorkloadSpec};
