"""Trace mining: data-site discovery, attack points, candidate pairing.

The main fixture routes four little-endian words through a parse loop
(two reach a callee), then copies the head of the input into a heap
block.  Input bytes [5,0,0,0, 7,0,0,0, 9,0,0,0, 11,0,0,0] keep every
branch byte-independent: the loop condition tests only the untainted
count, and accept() compares id against a million, far above 11, so the
branch outcome never pins any input byte.
"""

import pytest

from chaffc.frontend.parser import parse
from chaffc.frontend.resolve import resolve
from chaffc.interp.machine import run_program
from chaffc.mining import (
    QuotaInfeasible,
    find_attack_points,
    find_duas,
    pair_candidates,
)

MINE_SRC = """
int total;

int accept(int id) {
    if (id > 1000000) {
        return 0;
    }
    return 1;
}

void store(int id, int val) {
    total = total + val;
    return;
}

int main(void) {
    char buf[64];
    int n;
    int off;
    int id;
    int val;
    char *name;
    char tag;
    n = read_input(buf, 64);
    off = 0;
    while (off + 8 <= n) {
        memcpy(&id, buf + off, 4);
        memcpy(&val, buf + off + 4, 4);
        if (accept(id)) {
            store(id, val);
        }
        off = off + 8;
    }
    name = malloc(16);
    if (name != 0) {
        memcpy(name, buf, 8);
        name[8] = 0;
        tag = name[2];
        total = total + tag;
        free(name);
    }
    print_int(total);
    return 0;
}
"""

SEED_INPUT = bytes([5, 0, 0, 0, 7, 0, 0, 0, 9, 0, 0, 0, 11, 0, 0, 0])

QUOTA = {"oc-stack": 1, "oc-heap": 2, "unused-stack": 1}


@pytest.fixture(scope="module")
def mined():
    prog = resolve(parse(MINE_SRC, "mine.c"))
    res = run_program(prog, SEED_INPUT)
    assert res.status == "ok"
    duas = find_duas(res.events, prog)
    atps = find_attack_points(res.events, prog)
    return prog, res, duas, atps


def test_dua_inventory(mined):
    # Six observations qualify: id and val both as the copied-to local in
    # main and as the parameter in the callee (tcn 0, four distinct
    # single-offset labels: controllable), plus total twice.  total sums
    # tainted values, so its tcn grows by one per addition (7 arrives
    # after one add, 7+9+11+tag after three more) and the label sets
    # merge, which disqualifies it as a trigger but not as attack data.
    duas, _ = (mined[2], mined[3])
    shape = [(d.path, d.func, d.width, d.controllable, max(d.tcn),
              max(d.liveness), d.guarded) for d in duas]
    assert shape == [
        ("id", "main", 4, True, 0, 0, False),
        ("id", "accept", 4, True, 0, 0, False),
        ("val", "main", 4, True, 0, 0, False),
        ("val", "store", 4, True, 0, 0, False),
        ("total", "store", 4, False, 1, 0, False),
        ("total", "main", 4, False, 2, 0, False),
    ]


def test_trigger_positions_are_stream_offsets(mined):
    duas = mined[2]
    by = {(d.path, d.func): d for d in duas}
    # first loop iteration: id from bytes 0..3, val from bytes 4..7
    assert by[("id", "main")].trigger_positions() == (0, 1, 2, 3)
    assert by[("val", "main")].trigger_positions() == (4, 5, 6, 7)
    assert by[("id", "accept")].trigger_positions() == (0, 1, 2, 3)


def test_one_record_per_site(mined):
    # the loop body runs twice but each (statement, path) reports once
    duas = mined[2]
    sites = [(d.nid, d.path) for d in duas]
    assert len(sites) == len(set(sites))


def test_records_sorted_by_trace_order(mined):
    duas = mined[2]
    idx = [d.trace_index for d in duas]
    assert idx == sorted(idx)


def test_attack_point_counts(mined):
    atps = mined[3]
    stack = [a for a in atps if a.kind == "stack-frame"]
    heap = [a for a in atps if a.kind == "heap-adjacent"]
    # every non-return, non-block statement first entered after the
    # input read hosts a stack point; those before the last allocator
    # event also host a heap point (free(name) is the last one, so only
    # the statements after it drop out)
    assert (len(stack), len(heap)) == (17, 16)
    assert sorted({a.func for a in atps}) == ["accept", "main", "store"]


def test_attack_points_follow_first_input(mined):
    _, res, _, atps = mined
    from chaffc.interp.trace import InputRead
    first = next(i for i, ev in enumerate(res.events)
                 if isinstance(ev, InputRead))
    assert all(a.trace_index > first for a in atps)


def test_heap_points_precede_last_allocator_event(mined):
    _, res, _, atps = mined
    from chaffc.interp.trace import HeapAlloc, HeapFree
    last = max(i for i, ev in enumerate(res.events)
               if isinstance(ev, (HeapAlloc, HeapFree)))
    assert all(a.trace_index < last for a in atps
               if a.kind == "heap-adjacent")


def test_loop_body_exec_counts(mined):
    atps = mined[3]
    # 16 input bytes feed exactly two loop iterations
    assert sorted({a.exec_count for a in atps}) == [1, 2]


def test_pairing_frozen_selection(mined):
    _, _, duas, atps = mined
    cands = pair_candidates(duas, atps, QUOTA, 7, input_id="i0")
    got = [(c.bug_type, c.stack_target, c.trigger.path, c.trigger.func,
            (c.attack.path, c.attack.func) if c.attack else None,
            c.atp.func, c.atp.kind) for c in cands]
    assert got == [
        ("oc-stack", "return-address", "id", "accept",
         ("total", "store"), "main", "stack-frame"),
        ("oc-heap", "", "id", "accept",
         ("total", "store"), "main", "heap-adjacent"),
        ("unused-stack", "", "id", "accept",
         ("val", "main"), "store", "stack-frame"),
        ("oc-heap", "", "val", "store",
         ("val", "main"), "main", "heap-adjacent"),
    ]


def test_pairing_deterministic(mined):
    _, _, duas, atps = mined
    a = pair_candidates(duas, atps, QUOTA, 7, input_id="i0")
    b = pair_candidates(duas, atps, QUOTA, 7, input_id="i0")
    assert [c.key() for c in a] == [c.key() for c in b]


def test_pairing_varies_with_seed(mined):
    _, _, duas, atps = mined
    a = pair_candidates(duas, atps, QUOTA, 7, input_id="i0")
    b = pair_candidates(duas, atps, QUOTA, 11, input_id="i0")
    assert [c.key() for c in a] != [c.key() for c in b]


def test_ordering_invariants(mined):
    _, _, duas, atps = mined
    cands = pair_candidates(duas, atps, QUOTA, 7, input_id="i0")
    for c in cands:
        assert c.trigger.trace_index < c.atp.trace_index
        assert c.trigger.controllable
        if c.attack is not None:
            assert c.attack.trace_index < c.atp.trace_index
            assert c.attack.key() != c.trigger.key()
        if c.bug_type in ("oc-stack", "oc-heap"):
            assert c.attack is not None


def test_stack_family_claims_one_function_each(mined):
    _, _, duas, atps = mined
    cands = pair_candidates(duas, atps, QUOTA, 7, input_id="i0")
    funcs = [c.atp.func for c in cands if c.bug_type != "oc-heap"]
    assert len(funcs) == len(set(funcs))


def test_heap_bugs_run_their_allocation_once(mined):
    _, _, duas, atps = mined
    cands = pair_candidates(duas, atps, QUOTA, 7, input_id="i0")
    assert all(c.atp.exec_count == 1 for c in cands
               if c.bug_type == "oc-heap")


def test_quota_infeasible_reports_availability(mined):
    # three functions exist, each claimable once
    _, _, duas, atps = mined
    full = pair_candidates(duas, atps, {"unused-stack": 3}, 7)
    assert sorted(c.atp.func for c in full) == ["accept", "main", "store"]
    with pytest.raises(QuotaInfeasible) as exc:
        pair_candidates(duas, atps, {"unused-stack": 4}, 7)
    assert exc.value.bug_type == "unused-stack"
    assert exc.value.available == 3


def test_preexisting_claims_respected(mined):
    _, _, duas, atps = mined
    with pytest.raises(QuotaInfeasible):
        pair_candidates(duas, atps, {"unused-stack": 2}, 7,
                        claimed=("store", "accept"))
    only = pair_candidates(duas, atps, {"unused-stack": 1}, 7,
                           claimed=("store", "accept"))
    assert only[0].atp.func == "main"


def test_heap_kind_ignores_claims(mined):
    _, _, duas, atps = mined
    cands = pair_candidates(duas, atps, {"oc-heap": 1}, 7,
                            claimed=("main", "store", "accept"))
    assert len(cands) == 1


def test_exclusion_skips_failed_candidates(mined):
    _, _, duas, atps = mined
    first = pair_candidates(duas, atps, QUOTA, 7, input_id="i0")
    victim = next(c for c in first if c.bug_type == "unused-stack")
    redo = pair_candidates(duas, atps, QUOTA, 7, input_id="i0",
                           exclude=[victim.key()])
    assert victim.key() not in {c.key() for c in redo}


def test_unknown_bug_type_rejected(mined):
    _, _, duas, atps = mined
    with pytest.raises(ValueError):
        pair_candidates(duas, atps, {"oc-everything": 1}, 7)


# ---------------------------------------------------------------------------
# Liveness: a branch on a byte's labels disqualifies later sightings.
# ---------------------------------------------------------------------------

LIVE_SRC = """
int main(void) {
    char buf[8];
    int a;
    int b;
    int n;
    n = read_input(buf, 8);
    memcpy(&a, buf, 4);
    if (a > 0) {
        b = 0;
    }
    memcpy(&b, buf + 4, 4);
    a = a + 0;
    print_int(a + b);
    return 0;
}
"""


@pytest.fixture(scope="module")
def live_trace():
    prog = resolve(parse(LIVE_SRC, "live.c"))
    res = run_program(prog, bytes([1, 0, 0, 0, 2, 0, 0, 0]))
    assert res.status == "ok"
    return prog, res


def test_branch_read_itself_still_dead(live_trace):
    # reading a inside the condition precedes the branch decision, so
    # that one observation still has liveness 0
    prog, res = live_trace
    duas = find_duas(res.events, prog)
    assert [(d.path, max(d.liveness)) for d in duas] == [("a", 0), ("b", 0)]


def test_post_branch_observations_rejected(live_trace):
    prog, res = live_trace
    strict = {(d.path, d.trace_index) for d in find_duas(res.events, prog)}
    # raising the threshold readmits both later sightings of a
    loose = {(d.path, d.trace_index)
             for d in find_duas(res.events, prog, liveness_max=2)}
    extra = loose - strict
    assert len(extra) == 2 and all(p == "a" for p, _ in extra)


def test_untouched_bytes_stay_dead(live_trace):
    # b comes from bytes 4..7, which no branch ever consumed
    prog, res = live_trace
    by = {d.path: d for d in find_duas(res.events, prog)}
    assert by["b"].controllable
    assert by["b"].trigger_positions() == (4, 5, 6, 7)


# ---------------------------------------------------------------------------
# Guarded records: data parked behind a char pointer needs a siphon guard.
# ---------------------------------------------------------------------------

GUARD_SRC = """
int main(void) {
    char buf[8];
    char *p;
    int n;
    n = read_input(buf, 8);
    p = malloc(8);
    if (p != 0) {
        p[2] = buf[2];
        print_int(1);
    }
    free(p);
    return 0;
}
"""


def test_char_pointer_site_is_guarded():
    prog = resolve(parse(GUARD_SRC, "guard.c"))
    res = run_program(prog, bytes([65, 66, 67, 68, 69, 70, 71, 72]))
    assert res.status == "ok"
    duas = find_duas(res.events, prog)
    assert [(d.path, d.width, d.guarded, d.guard_base, d.guard_offset)
            for d in duas] == [("p[2]", 1, True, "p", 2)]
    d = duas[0]
    assert d.labels == (frozenset({2}),)
    assert not d.controllable
