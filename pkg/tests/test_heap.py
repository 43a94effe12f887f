"""Allocator model: address arithmetic, bin behavior, corruption outcomes.

Addresses are frozen from the chunk layout rules: 8-byte headers, 16-byte
minimum, 8-byte alignment, first chunk at the arena base.  Each frozen
constant is derived in a comment next to its assertion.
"""

import pytest

from chaffc.frontend import parse
from chaffc.heap import (
    CORRUPTION_TRIPLE,
    FASTBIN_MAX,
    LARGE_THRESHOLD,
    MIN_CHUNK,
    AllocatorAbort,
    HeapModel,
    check_corruption_cases,
    chunk_size_for,
    corrupted_addresses,
)
from chaffc.interp import run_program
from chaffc.interp.memory import HEAP_BASE, HEAP_LIMIT, Memory


def fresh():
    return HeapModel(Memory())


# ---------------------------------------------------------------------------
# Size classes and address arithmetic
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("request_,csz", [
    (0, 16),     # floor
    (8, 16),     # 8+8 exactly fills the minimum
    (9, 24),     # align8(17)
    (24, 32),    # fastbin ceiling
    (25, 40),    # first normal size
    (40, 48),
    (200, 208),  # consolidation threshold
])
def test_chunk_size_for(request_, csz):
    assert chunk_size_for(request_) == csz


def test_thresholds_are_size_classes():
    assert MIN_CHUNK == 16
    assert chunk_size_for(FASTBIN_MAX - 8) == FASTBIN_MAX
    assert chunk_size_for(LARGE_THRESHOLD - 8) == LARGE_THRESHOLD


def test_first_allocation_addresses():
    m = fresh()
    p = m.malloc(24)
    # first chunk sits at the arena base; user data starts past the header
    assert p == HEAP_BASE + 8
    # size word: 32 | PREV_INUSE
    assert m.mem.raw_u32(HEAP_BASE + 4) == 33
    assert m.top == HEAP_BASE + 32
    q = m.malloc(24)
    assert q == HEAP_BASE + 40


def test_oom_returns_null():
    m = fresh()
    assert m.malloc(HEAP_LIMIT) == 0
    # arena untouched, later allocations still work
    assert m.malloc(8) == HEAP_BASE + 8


# ---------------------------------------------------------------------------
# Bin behavior
# ---------------------------------------------------------------------------


def test_fastbin_reuse_is_lifo_same_address():
    m = fresh()
    p = m.malloc(24)
    q = m.malloc(24)
    m.free(p)
    m.free(q)
    assert m.malloc(24) == q
    assert m.malloc(24) == p


def test_fast_free_leaves_next_prev_inuse_set():
    m = fresh()
    p = m.malloc(24)
    m.malloc(8)
    m.free(p)
    # fast frees never clear the neighbor's PREV_INUSE bit
    assert m.mem.raw_u32(HEAP_BASE + 32 + 4) & 1 == 1


def test_smallbin_reuse_same_address():
    m = fresh()
    p = m.malloc(40)
    m.malloc(8)          # guard keeps p from melting into top
    m.free(p)
    assert m.malloc(40) == p


def test_backward_merge_coalesces_neighbors():
    m = fresh()
    p = m.malloc(40)
    q = m.malloc(40)
    m.malloc(8)
    m.free(p)
    m.free(q)            # prev is free: merges into one 96-byte chunk at p
    assert m.malloc(88) == p


def test_adjacent_to_top_melts_back():
    m = fresh()
    p = m.malloc(40)
    m.free(p)
    assert m.top == HEAP_BASE
    assert m.malloc(40) == p


def test_large_split_returns_remainder_separately():
    m = fresh()
    big = m.malloc(200)
    m.malloc(8)
    m.free(big)
    # best fit splits 208 into 112 + 96; both land at known offsets
    assert m.malloc(100) == big
    assert m.malloc(88) == big + 112


def test_consolidate_threshold_sweeps_fastbins():
    m = fresh()
    p = m.malloc(24)
    m.malloc(8)
    m.free(p)
    assert m.fastbins[32]
    m.malloc(200)        # csz 208 triggers consolidation first
    assert not m.fastbins[32]


# ---------------------------------------------------------------------------
# Free argument validation
# ---------------------------------------------------------------------------


def test_free_null_is_noop():
    m = fresh()
    m.free(0)
    assert m.free_count == 0


def test_free_non_live_pointer_aborts():
    m = fresh()
    p = m.malloc(24)
    with pytest.raises(AllocatorAbort, match=r"free\(\): invalid pointer"):
        m.free(p + 4)


def test_double_free_aborts():
    m = fresh()
    p = m.malloc(40)
    m.malloc(8)
    m.free(p)
    with pytest.raises(AllocatorAbort, match=r"free\(\): invalid pointer"):
        m.free(p)


# ---------------------------------------------------------------------------
# Corruption outcomes per successor class
# ---------------------------------------------------------------------------


def corrupted(cls):
    from chaffc.heap import _apply_corruption, _build_scenario
    sc = _build_scenario(cls)
    _apply_corruption(sc)
    return sc


def test_triple_lands_in_declared_spans():
    covered = corrupted_addresses(0)
    for off, _ in CORRUPTION_TRIPLE:
        assert {off, off + 1, off + 2, off + 3} <= covered


def test_top_class_aborts_on_any_malloc():
    sc = corrupted("top")
    with pytest.raises(AllocatorAbort, match=r"malloc\(\): corrupted top size"):
        sc.model.malloc(8)


def test_in_use_class_aborts_on_free():
    sc = corrupted("in-use-16")
    with pytest.raises(AllocatorAbort, match=r"free\(\): invalid size"):
        sc.model.free(sc.handles[0])


def test_in_use_class_silent_on_unrelated_malloc():
    sc = corrupted("in-use-16")
    assert sc.model.malloc(8) != 0


def test_fast_class_aborts_on_same_size_malloc():
    sc = corrupted("free-fast")
    with pytest.raises(AllocatorAbort, match=r"malloc\(\): memory corruption \(fast\)"):
        sc.model.malloc(24)


def test_fast_class_aborts_during_consolidation():
    sc = corrupted("free-fast")
    with pytest.raises(AllocatorAbort, match="corrupted size vs. prev_size"):
        sc.model.malloc(200)


def test_small_class_aborts_on_bin_pop():
    sc = corrupted("free-small")
    with pytest.raises(AllocatorAbort, match=r"malloc\(\): memory corruption$"):
        sc.model.malloc(40)


def test_large_class_aborts_on_bin_pop():
    sc = corrupted("free-large")
    with pytest.raises(AllocatorAbort, match=r"malloc\(\): memory corruption"):
        sc.model.malloc(200)


def test_aborts_consult_the_corrupted_bytes():
    sc = corrupted("free-fast")
    bad = corrupted_addresses(sc.victim)
    with pytest.raises(AllocatorAbort) as exc:
        sc.model.malloc(24)
    touched = {
        addr + i for addr, width in exc.value.consulted for i in range(width)}
    assert touched & bad


# ---------------------------------------------------------------------------
# Exhaustive case table
# ---------------------------------------------------------------------------


def test_case_table_depth_two_frozen_counts():
    res = check_corruption_cases(depth=2)
    assert res.depth == 2
    assert len(res.rows) == 195
    assert res.aborts == 105
    assert res.silents == 90
    assert res.escapes == 0
    assert res.differential_aborts == 0


def test_case_table_exercises_every_abort_message():
    res = check_corruption_cases(depth=2)
    messages = {r.message for r in res.rows if r.outcome == "abort"}
    assert messages == {
        "malloc(): corrupted top size",
        "malloc(): memory corruption (fast)",
        "malloc(): memory corruption",
        "free(): invalid size",
        "corrupted size vs. prev_size",
    }


def test_case_table_rows_record_step_and_consultation():
    res = check_corruption_cases(depth=1)
    by_key = {(r.scenario, r.sequence): r for r in res.rows}
    row = by_key[("free-fast", ("m24",))]
    assert row.outcome == "abort"
    assert row.step == 1
    assert row.consulted_corrupted
    row = by_key[("top", ())]
    assert row.outcome == "silent"
    assert row.step == 0


# ---------------------------------------------------------------------------
# End-to-end through the interpreter
# ---------------------------------------------------------------------------


def test_program_level_header_smash_aborts_on_free():
    src = """
    int main(void) {
        char *v;
        char *n;
        int i;
        v = malloc(24);
        n = malloc(8);
        if (v != 0) {
            i = 0;
            while (i < 16) {
                v[16 + i] = 0;
                i = i + 1;
            }
            v[16] = 16;
            v[24] = 12;
            free(n);
        }
        return 0;
    }
    """
    res = run_program(parse(src, "<heap>"), b"")
    assert res.status == "fault"
    assert res.fault.kind == "allocator-abort"
    assert res.fault.detail == "free(): invalid size"


def test_program_level_clean_heap_traffic():
    src = """
    int main(void) {
        char *a;
        char *b;
        a = malloc(24);
        b = malloc(40);
        free(a);
        free(b);
        a = malloc(24);
        print_int(a != 0);
        return 0;
    }
    """
    res = run_program(parse(src, "<heap>"), b"")
    assert res.status == "ok"
    assert res.output == b"1\n"
    assert res.heap_allocs == 3
    assert res.heap_frees == 2
