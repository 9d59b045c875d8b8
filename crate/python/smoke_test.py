"""Smoke test for the dangsim Python module.

Build and install first:
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o target/wheels
    pip install target/wheels/dangsim-*.whl
Then run: python python/smoke_test.py
"""

import dangsim


def check_tagging():
    assert dangsim.size_class(17) == (5, 32)
    p = dangsim.encode(0x3000F0, 4)
    assert dangsim.id_of(p + 1) == 0x3000F0
    assert dangsim.strip(p) == 0x3000F0


def check_engine():
    e = dangsim.Engine(compression="full", oracle_check=True)
    obj = e.alloc(16)
    buf = e.alloc(128)
    buf_base = dangsim.strip(buf)
    e.store_pointer(buf_base + 0x28, obj)
    e.store_pointer(buf_base + 0x40, obj)
    assert e.stats()["dup_rate"] == 0.5

    assert e.free(obj) == "deferred_heap"
    assert e.state(obj) == "user_freed"
    assert dangsim.id_of(obj) in e.retained()
    e.store_data(buf_base + 0x28, 0)
    e.store_data(buf_base + 0x40, 0)
    e.flush()
    assert e.state(obj) == "released"
    assert e.retained() == []
    assert e.free(obj) == "double_free"

    slot = dangsim.stack_addr(3)
    p = e.alloc(32)
    e.store_pointer(slot, p)
    assert e.load(slot) == ("ptr", p)
    assert e.verify(p) == [slot]
    assert e.free(p) == "deferred_period"
    e.store_data(slot, 0)
    assert e.period() == 1


def check_traces():
    traces = dangsim.corpus()
    assert len(traces) >= 32
    for name, text in traces:
        stats = dangsim.run(text, compression="block:4", oracle_check=True)
        assert stats["n_ptr_stores"] == stats["n_logged"] + stats["dup_hits"], name

    text = dangsim.generate("mem-intensive", 8, 20000, seed=1)
    assert dangsim.parse_trace(text) > 20000
    full = dangsim.run(text, compression="full")["dup_rate"]
    off = dangsim.run(text, compression="off")["dup_rate"]
    assert full >= 0.95 and full > off, (full, off)

    e = dangsim.Engine(high=True, hash_bits=8)
    stats = e.run_trace(traces[0][1])
    assert stats["n_retained_at_end"] == 0

    try:
        dangsim.Engine(compression="block:3")
    except ValueError:
        pass
    else:
        raise AssertionError("bad compression accepted")


if __name__ == "__main__":
    check_tagging()
    check_engine()
    check_traces()
    print("dangsim smoke test passed")
