//! Python bindings for the dangling-pointer elimination simulator.
//!
//! Pointers cross the boundary as plain integers holding the tagged word.
//! Objects are addressed by the pointer returned from `alloc`.

use std::collections::HashMap;

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dangsim::simspace::{global_addr, stack_addr};
use dangsim::{
    CompressionMode, Engine, EngineConfig, FreeOutcome, ObjectKey, ObjectState, Pattern, Placement, SimValue,
    StatsReport, TaggedWord, WorkloadSpec,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn placement(high: bool) -> Placement {
    if high {
        Placement::High
    } else {
        Placement::Low
    }
}

fn stats_dict<'py>(py: Python<'py>, report: &StatsReport) -> PyResult<Bound<'py, PyDict>> {
    let dict = PyDict::new(py);
    for (key, value) in report.fields() {
        match value.parse::<u64>() {
            Ok(n) => dict.set_item(key, n)?,
            Err(_) => dict.set_item(key, value.parse::<f64>().map_err(value_err)?)?,
        }
    }
    Ok(dict)
}

fn state_name(state: ObjectState) -> &'static str {
    match state {
        ObjectState::Live => "live",
        ObjectState::UserFreed => "user_freed",
        ObjectState::Released => "released",
    }
}

#[allow(clippy::too_many_arguments)]
fn make_config(
    compression: &str,
    cache_bits: u8,
    direct_bits: u8,
    hash_bits: u8,
    period_threshold: usize,
    high: bool,
    seed: u64,
    oracle_check: bool,
    final_flush: bool,
) -> PyResult<EngineConfig> {
    Ok(EngineConfig {
        compression: compression.parse::<CompressionMode>().map_err(value_err)?,
        cache_bits,
        direct_bits,
        hash_bits,
        period_threshold,
        placement: placement(high),
        seed,
        oracle_check,
        final_flush,
        ..EngineConfig::default()
    })
}

/// Size class for a request: `(exponent, allocated bytes)`.
#[pyfunction]
fn size_class(size: u64) -> PyResult<(u8, u64)> {
    let class = dangsim::size_class(size).map_err(value_err)?;
    Ok((class.exp, class.alloc_size))
}

/// Tags `base` with exponent `exp`.
#[pyfunction]
fn encode(base: u64, exp: u8) -> PyResult<u64> {
    Ok(dangsim::encode(base, exp).map_err(value_err)?.raw())
}

/// Base address of the object a tagged word points into.
#[pyfunction]
fn id_of(word: u64) -> PyResult<u64> {
    dangsim::id_of(TaggedWord::from_raw(word)).map_err(value_err)
}

#[pyfunction]
fn strip(word: u64) -> u64 {
    dangsim::strip(TaggedWord::from_raw(word))
}

#[pyfunction(name = "stack_addr")]
fn py_stack_addr(slot: u64) -> u64 {
    stack_addr(slot)
}

#[pyfunction(name = "global_addr")]
fn py_global_addr(slot: u64) -> u64 {
    global_addr(slot)
}

/// Validates a trace and returns its event count.
#[pyfunction]
fn parse_trace(text: &str) -> PyResult<usize> {
    Ok(dangsim::parse(text).map_err(value_err)?.len())
}

#[pyfunction]
#[pyo3(signature = (pattern, objects, stores, seed = 0))]
fn generate(pattern: &str, objects: usize, stores: usize, seed: u64) -> PyResult<String> {
    let pattern = pattern.parse::<Pattern>().map_err(value_err)?;
    Ok(dangsim::generate(&WorkloadSpec { pattern, objects, stores, seed }))
}

/// The scenario corpus as `(name, text)` pairs.
#[pyfunction]
fn corpus() -> Vec<(String, String)> {
    dangsim::cwe416_corpus().into_iter().map(|c| (c.name, c.text)).collect()
}

/// A simulated runtime. Drive it event by event or replay whole traces.
#[pyclass(name = "Engine", module = "dangsim")]
struct PyEngine {
    inner: Engine,
    // Latest object allocated at each base address, so released objects stay addressable.
    by_id: HashMap<u64, ObjectKey>,
}

impl PyEngine {
    fn key(&self, ptr: u64) -> PyResult<ObjectKey> {
        let id = dangsim::id_of(TaggedWord::from_raw(ptr)).map_err(value_err)?;
        self.by_id
            .get(&id)
            .copied()
            .or_else(|| self.inner.space().object_at(id))
            .ok_or_else(|| PyKeyError::new_err(format!("no object at {id:#x}")))
    }
}

#[pymethods]
impl PyEngine {
    #[new]
    #[pyo3(signature = (
        compression = "off",
        cache_bits = 20,
        direct_bits = 32,
        hash_bits = 20,
        period_threshold = 1000,
        high = false,
        seed = 0,
        oracle_check = false,
        final_flush = true,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        compression: &str,
        cache_bits: u8,
        direct_bits: u8,
        hash_bits: u8,
        period_threshold: usize,
        high: bool,
        seed: u64,
        oracle_check: bool,
        final_flush: bool,
    ) -> PyResult<Self> {
        let config = make_config(
            compression,
            cache_bits,
            direct_bits,
            hash_bits,
            period_threshold,
            high,
            seed,
            oracle_check,
            final_flush,
        )?;
        Ok(PyEngine { inner: Engine::new(config).map_err(value_err)?, by_id: HashMap::new() })
    }

    /// Allocates `size` bytes and returns the tagged pointer.
    #[pyo3(signature = (size, high = false))]
    fn alloc(&mut self, size: u64, high: bool) -> PyResult<u64> {
        let (key, ptr) = self.inner.alloc(size, placement(high)).map_err(runtime_err)?;
        self.by_id.insert(ptr.addr(), key);
        Ok(ptr.raw())
    }

    fn store_pointer(&mut self, loc: u64, ptr: u64) -> PyResult<()> {
        let value = if ptr == 0 { SimValue::Data(0) } else { SimValue::Pointer(TaggedWord::from_raw(ptr)) };
        self.inner.on_store(loc, value).map_err(runtime_err)
    }

    fn store_data(&mut self, loc: u64, value: u64) -> PyResult<()> {
        self.inner.on_store(loc, SimValue::Data(value)).map_err(runtime_err)
    }

    /// Reads a word: an int for data, `("ptr", word)` for a pointer, None if unwritten.
    fn load(&mut self, py: Python<'_>, loc: u64) -> PyResult<Py<PyAny>> {
        Ok(match self.inner.on_load(loc).map_err(runtime_err)? {
            None => py.None(),
            Some(SimValue::Data(v)) => v.into_pyobject(py)?.into_any().unbind(),
            Some(SimValue::Pointer(p)) => ("ptr", p.raw()).into_pyobject(py)?.into_any().unbind(),
        })
    }

    /// Frees a pointer and reports what happened to the object.
    fn free(&mut self, ptr: u64) -> PyResult<&'static str> {
        let outcome = self.inner.on_free(TaggedWord::from_raw(ptr)).map_err(runtime_err)?;
        Ok(match outcome {
            FreeOutcome::Released => "released",
            FreeOutcome::DeferredPeriod => "deferred_period",
            FreeOutcome::DeferredHeap(_) => "deferred_heap",
            FreeOutcome::DoubleFree => "double_free",
        })
    }

    fn realloc(&mut self, ptr: u64, size: u64) -> PyResult<u64> {
        let (key, new) = self.inner.on_realloc(TaggedWord::from_raw(ptr), size).map_err(runtime_err)?;
        self.by_id.insert(new.addr(), key);
        Ok(new.raw())
    }

    /// Runs one periodical pass; returns how many objects it released.
    fn period(&mut self) -> PyResult<u64> {
        self.inner.periodical_free().map_err(runtime_err)
    }

    fn flush(&mut self) -> PyResult<()> {
        self.inner.flush_all().map_err(runtime_err)
    }

    fn state(&self, ptr: u64) -> PyResult<&'static str> {
        Ok(state_name(self.inner.state(self.key(ptr)?)))
    }

    /// Locations the object's log says may still point at it.
    fn verify(&mut self, ptr: u64) -> PyResult<Vec<u64>> {
        let key = self.key(ptr)?;
        Ok(self.inner.verify_object(key))
    }

    /// Base addresses of freed objects that are still held back.
    fn retained(&self) -> Vec<u64> {
        self.inner.retained().iter().map(|&k| self.inner.record(k).id).collect()
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        stats_dict(py, &self.inner.report())
    }

    /// Replays a trace on this engine and returns the stats.
    fn run_trace<'py>(&mut self, py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyDict>> {
        let trace = dangsim::parse(text).map_err(value_err)?;
        let report = self.inner.run(&trace).map_err(runtime_err)?;
        stats_dict(py, &report)
    }
}

/// One-shot replay of a trace under a fresh engine.
#[pyfunction]
#[pyo3(signature = (
    text,
    compression = "off",
    cache_bits = 20,
    direct_bits = 32,
    hash_bits = 20,
    period_threshold = 1000,
    high = false,
    seed = 0,
    oracle_check = false,
    final_flush = true,
))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    text: &str,
    compression: &str,
    cache_bits: u8,
    direct_bits: u8,
    hash_bits: u8,
    period_threshold: usize,
    high: bool,
    seed: u64,
    oracle_check: bool,
    final_flush: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let config = make_config(
        compression,
        cache_bits,
        direct_bits,
        hash_bits,
        period_threshold,
        high,
        seed,
        oracle_check,
        final_flush,
    )?;
    let report = dangsim::run_text(text, config).map_err(runtime_err)?;
    stats_dict(py, &report)
}

#[pymodule(name = "dangsim")]
fn dangsim_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEngine>()?;
    m.add_function(wrap_pyfunction!(size_class, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(id_of, m)?)?;
    m.add_function(wrap_pyfunction!(strip, m)?)?;
    m.add_function(wrap_pyfunction!(py_stack_addr, m)?)?;
    m.add_function(wrap_pyfunction!(py_global_addr, m)?)?;
    m.add_function(wrap_pyfunction!(parse_trace, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(corpus, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
