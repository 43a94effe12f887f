"""Validation gates: clean replay, trigger faults, proof bundles, triage.

Reuses the synthesis fixture program so the expected fault sites match
the ones frozen in test_synth.  The negative fixtures deliberately break
a claim (a chain whose masks do not AND to zero, a spray loop extended
past its declared region, a label that reaches the output) and expect a
concrete counterexample witness back.
"""

import copy
import dataclasses
import itertools
import json
import math

import pytest

import test_synth as ts
from _oracles import chain_outcomes_exhaustive

from chaffc.frontend.nodes import Binary, Ident, IntLit, While, program_stmts
from chaffc.frontend.parser import parse
from chaffc.frontend.resolve import resolve
from chaffc.interp.machine import AuditConfig, run_program
from chaffc.mining import BugCandidate, find_attack_points, find_duas
from chaffc.synth import audit_config_for, synthesize_bug
from chaffc.validate import (
    ABORT,
    DORMANT,
    EXPLOITABLE_MIMIC,
    PROBABLY_EXPLOITABLE_MIMIC,
    REQUIRED_CHECKS,
    Counterexample,
    ProofBundle,
    ProofCheck,
    TriggerCheck,
    build_report,
    chain_zero_check,
    classify,
    clean_check,
    first_divergence,
    heap_case_check,
    prove_non_exploitable,
    taint_escape_check,
    trigger_check,
    validate_bug,
    validate_clean,
    validate_trigger,
    write_audit_check,
)

SEED = ts.SEED


@pytest.fixture(scope="module")
def setup():
    """Original program, three accumulated bugs, and their audit map."""
    prog = resolve(parse(ts.SYNTH_SRC, "synth.c"))
    base = run_program(prog, SEED)
    duas = find_duas(base.events, prog)
    atps = find_attack_points(base.events, prog)
    cands = ts._candidates(duas, atps)
    cur, records, taken = prog, [], []
    for i, key in enumerate(("fp", "heap", "unused"), start=1):
        cur, rec = synthesize_bug(cur, base.events, cands[key], i, 42,
                                  [SEED], SEED, taken_magics=taken)
        taken.append(rec.magic)
        records.append(rec)
    return prog, cur, records, audit_config_for(records)


def _trigger_run(setup, rec):
    _, cur, _, audit = setup
    return run_program(cur, rec.trigger_input, audit=audit)


# ---------------------------------------------------------------------------
# Clean gate
# ---------------------------------------------------------------------------


def test_first_divergence_offsets():
    assert first_divergence(b"abc", b"abc") == -1
    assert first_divergence(b"abc", b"axc") == 1
    assert first_divergence(b"abc", b"abcd") == 3
    assert first_divergence(b"", b"x") == 0


def test_clean_gate_passes_on_all_inputs(setup):
    prog, cur, _, audit = setup
    checks = validate_clean(prog, cur, [("s", SEED)], audit=audit)
    assert all(c.ok for c in checks)
    assert checks[0].input_id == "s"
    assert checks[0].first_diff == -1


def test_clean_gate_reports_first_differing_byte():
    a = resolve(parse("int main(void) { print_int(15); return 0; }", "a.c"))
    b = resolve(parse("int main(void) { print_int(19); return 0; }", "b.c"))
    ra = run_program(a, b"", trace=False)
    rb = run_program(b, b"", trace=False)
    c = clean_check("x", ra, rb)
    assert not c.ok
    assert c.first_diff == 1
    assert "byte 1" in c.detail


def test_clean_gate_flags_uninitialized_reads():
    ok_src = "int main(void) { print_int(3); return 0; }"
    bad_src = """
    int main(void) {
        char *p;
        char c;
        p = malloc(8);
        if (p != 0) {
            c = p[0];
            print_int(c);
        }
        return 0;
    }
    """
    ra = run_program(resolve(parse(ok_src, "ok.c")), b"", trace=False)
    rb = run_program(resolve(parse(bad_src, "bad.c")), b"", trace=False)
    c = clean_check("u", ra, rb)
    assert not c.ok
    assert "uninitialized" in c.detail


def test_clean_gate_rejects_chaff_writes_on_clean_input(setup):
    prog, cur, records, audit = setup
    # replaying bug 1's trigger as if it were a corpus input must fail
    # the gate even though the run itself completes under no audit
    o = run_program(prog, records[0].trigger_input, trace=False)
    t = run_program(cur, records[0].trigger_input, trace=False, audit=audit)
    c = clean_check("t1", o, t)
    assert not c.ok


# ---------------------------------------------------------------------------
# Trigger gate
# ---------------------------------------------------------------------------


def test_trigger_gate_saved_fp(setup):
    _, cur, records, audit = setup
    rec = records[0]
    c = validate_trigger(cur, rec, audit=audit)
    assert c.ok
    assert c.expected == "read-unmapped|write-unmapped"
    assert c.observed == "read-unmapped"
    assert c.fault.func == "main"


def test_trigger_gate_return_address(setup):
    prog, _, _, _ = setup
    base = run_program(prog, SEED)
    duas = find_duas(base.events, prog)
    atps = find_attack_points(base.events, prog)
    cand = ts._candidates(duas, atps)["ra"]
    cur, rec = synthesize_bug(prog, base.events, cand, 1, 42, [SEED], SEED)
    c = validate_trigger(cur, rec, audit=audit_config_for([rec]))
    assert c.ok
    assert c.observed == "pc-unmapped"
    assert c.fault.func == "apply"
    assert c.fault.addr == 0


def test_trigger_gate_heap(setup):
    _, cur, records, audit = setup
    c = validate_trigger(cur, records[1], audit=audit)
    assert c.ok
    assert c.observed == "allocator-abort"
    assert "corrupted top size" in c.fault.detail


def test_trigger_gate_dormant_unused(setup):
    prog, cur, records, audit = setup
    rec = records[2]
    baseline = run_program(prog, rec.trigger_input, trace=False).output
    c = validate_trigger(cur, rec, audit=audit, baseline_output=baseline)
    assert c.ok
    assert c.observed == "ok"
    assert c.reason == "no-crash-by-design"


def test_trigger_gate_dormant_checks_baseline(setup):
    _, _, records, _ = setup
    rec = records[2]
    run = _trigger_run(setup, rec)
    assert trigger_check(rec, run, baseline_output=run.output).ok
    c = trigger_check(rec, run, baseline_output=b"nope")
    assert not c.ok
    assert "diverges" in c.detail


def test_trigger_gate_crash_marker(setup):
    prog, _, _, _ = setup
    base = run_program(prog, SEED)
    duas = find_duas(base.events, prog)
    atps = find_attack_points(base.events, prog)
    cand = ts._candidates(duas, atps)["unused"]
    cur, rec = synthesize_bug(prog, base.events, cand, 4, 42, [SEED], SEED,
                              crash_marker=True)
    c = validate_trigger(cur, rec, audit=audit_config_for([rec]))
    assert c.ok
    assert c.expected == "div-zero"
    assert c.observed == "div-zero"
    assert c.fault.nid == rec.marker_nid


WRAP_SRC = """
int total;

int check(int v) {
    if (v > 100) {
        return 1;
    }
    return 0;
}

void quiet(int code, int amt) {
    total = total + amt;
    return;
}

void shim(int code, int amt) {
    quiet(code, amt);
    return;
}

int main(void) {
    char buf[32];
    int n;
    int code;
    int amt;
    n = read_input(buf, 32);
    memcpy(&code, buf, 4);
    memcpy(&amt, buf + 4, 4);
    if (check(code)) {
        total = total + 1;
    }
    if (check(amt)) {
        total = total + 2;
    }
    shim(code, amt);
    print_int(total);
    return 0;
}
"""


def test_trigger_gate_fp_never_dereferenced():
    # the victim's caller touches no local after the call, so the
    # clobbered frame pointer is never consulted and the candidate is
    # rejected with the documented reason
    prog = resolve(parse(WRAP_SRC, "wrap.c"))
    base = run_program(prog, SEED)
    duas = find_duas(base.events, prog)
    atps = find_attack_points(base.events, prog)
    atp = next(a for a in atps if a.func == "quiet" and a.kind == "stack-frame")
    code = next(d for d in duas if d.path == "code")
    amt = next(d for d in duas if d.path == "amt")
    cand = BugCandidate("oc-stack", "saved-fp", code, amt, atp, "s")
    cur, rec = synthesize_bug(prog, base.events, cand, 1, 42, [SEED], SEED)
    c = validate_trigger(cur, rec, audit=audit_config_for([rec]))
    assert not c.ok
    assert c.observed == "ok"
    assert c.reason == "fp-never-dereferenced"


HEAPQUIET_SRC = """
int total;

int check(int v) {
    if (v > 100) {
        return 1;
    }
    return 0;
}

int main(void) {
    char buf[32];
    int n;
    int code;
    int amt;
    char *name;
    char tag;
    n = read_input(buf, 32);
    memcpy(&code, buf, 4);
    memcpy(&amt, buf + 4, 4);
    if (check(code)) {
        total = total + 1;
    }
    if (check(amt)) {
        total = total + 2;
    }
    name = malloc(16);
    if (name != 0) {
        memcpy(name, buf + 8, 4);
        tag = name[1];
        total = total + tag;
        free(name);
    }
    print_int(total);
    return 0;
}
"""


def test_trigger_gate_heap_corruption_never_consulted():
    # the only allocator traffic after the corruption is a fastbin
    # free, which never reads the successor header, so the run ends
    # cleanly and the candidate is rejected
    prog = resolve(parse(HEAPQUIET_SRC, "hq.c"))
    base = run_program(prog, SEED)
    duas = find_duas(base.events, prog)
    atps = find_attack_points(base.events, prog)
    atp = next(a for a in atps if a.kind == "heap-adjacent")
    code = next(d for d in duas if d.path == "code")
    amt = next(d for d in duas if d.path == "amt")
    cand = BugCandidate("oc-heap", "", code, amt, atp, "s")
    cur, rec = synthesize_bug(prog, base.events, cand, 1, 42, [SEED], SEED)
    c = validate_trigger(cur, rec, audit=audit_config_for([rec]))
    assert not c.ok
    assert c.observed == "ok"
    assert c.reason == "corruption-never-consulted"


# ---------------------------------------------------------------------------
# Constraint proof
# ---------------------------------------------------------------------------


def _schedule_count(k):
    base = sum(math.comb(k + 1, r) * math.factorial(r) for r in range(k + 2))
    return 2 * base - 1


def test_chain_zero_check_enumerates_all_schedules(setup):
    _, _, records, _ = setup
    c = chain_zero_check(records[0], seed=42)
    assert c.ok
    # 10000 sampled words plus zero, all-ones, the magic, and each
    # mask with its complement
    assert c.detail == (
        f"{_schedule_count(2)} schedules x 10007 values all fold to zero")


def test_chain_zero_check_is_deterministic(setup):
    _, _, records, _ = setup
    a = chain_zero_check(records[1], seed=7)
    b = chain_zero_check(records[1], seed=7)
    assert a == b


def test_chain_zero_check_finds_broken_masks(setup):
    _, _, records, _ = setup
    # masks that do not AND to zero leak low bits through every
    # full-order schedule; the oracle confirms before the check runs
    bad = (0x000000FF, 0x000001FF)
    assert any(v != 0 for v in chain_outcomes_exhaustive(bad, 0xFFFFFFFF))
    rec = dataclasses.replace(records[0], chain_masks=bad)
    c = chain_zero_check(rec, seed=42)
    assert not c.ok
    assert c.counterexample.kind == "constraint"
    leaked = int(c.counterexample.witness.split()[-1], 16)
    assert leaked != 0


def test_chain_zero_check_requires_a_chain(setup):
    _, _, records, _ = setup
    c = chain_zero_check(records[2], seed=42)
    assert not c.ok
    assert "no constraint chain" in c.detail


def test_chain_zero_check_caps_stage_count(setup):
    _, _, records, _ = setup
    rec = dataclasses.replace(records[0],
                              chain_masks=(1, 2, 4, 8, 16, 0xFFFFFFE0))
    with pytest.raises(ValueError):
        chain_zero_check(rec, seed=42)


# ---------------------------------------------------------------------------
# Write audit proof
# ---------------------------------------------------------------------------


def test_write_audit_confined(setup):
    _, _, records, _ = setup
    rec = records[0]
    run = _trigger_run(setup, rec)
    c = write_audit_check(rec, run)
    assert c.ok
    assert "4 writes" in c.detail


def test_write_audit_requires_execution(setup):
    _, cur, records, audit = setup
    # bug 1's trigger never arms bug 3, so bug 3's stores are absent
    run = run_program(cur, records[0].trigger_input, audit=audit)
    c = write_audit_check(records[2], run)
    assert not c.ok
    assert "never executed" in c.detail


def test_write_audit_catches_clean_run_stores(setup):
    _, _, records, _ = setup
    rec = records[0]
    run = _trigger_run(setup, rec)
    c = write_audit_check(rec, run, clean_runs=[("s", run)])
    assert not c.ok
    assert c.counterexample.kind == "write-audit"
    assert "clean input s" in c.counterexample.witness


def test_write_audit_catches_extended_overflow(setup):
    # lengthen bug 3's spray loop from 16 to 20 iterations: the last
    # four stores land past the second dummy and out of the declared
    # region, and the audit must name the escaping write
    _, cur, records, audit = setup
    rec = records[2]
    mutated = copy.deepcopy(cur)
    bound = None
    for s in program_stmts(mutated):
        if isinstance(s, While) and isinstance(s.cond, Binary) \
                and s.cond.op == "<" \
                and isinstance(s.cond.left, Ident) \
                and s.cond.left.name == rec.names.idx \
                and isinstance(s.cond.right, IntLit) \
                and s.cond.right.value == 16:
            bound = s.cond.right
    assert bound is not None
    object.__setattr__(bound, "value", 20)
    run = run_program(mutated, rec.trigger_input, audit=audit)
    c = write_audit_check(rec, run)
    assert not c.ok
    assert c.counterexample.kind == "write-audit"
    assert c.counterexample.witness.startswith("3:")
    assert "outside locals region" in c.counterexample.witness


# ---------------------------------------------------------------------------
# Heap case proof
# ---------------------------------------------------------------------------


def test_heap_case_check_references_full_table(setup):
    _, _, records, _ = setup
    c = heap_case_check(records[1], depth=2)
    assert c.ok
    assert "105 abort, 90 silent, 0 escape over 195 futures" in c.detail


# ---------------------------------------------------------------------------
# Taint escape proof
# ---------------------------------------------------------------------------


def test_taint_escape_clean_on_real_bug(setup):
    _, _, records, _ = setup
    rec = records[2]
    run = _trigger_run(setup, rec)
    c = taint_escape_check(rec, run)
    assert c.ok
    assert "branch evaluations" in c.detail


def _tainted_run(src, label_nid_pred, label):
    prog = resolve(parse(src, "t.c"))
    audit = AuditConfig()
    for s in program_stmts(prog):
        if label_nid_pred(s):
            audit.label_tags[s.nid] = label
    assert audit.label_tags
    return run_program(prog, bytes([7, 0, 0, 0]), audit=audit)


def _is_g_store(s):
    from chaffc.frontend.nodes import Assign, ExprStmt
    return isinstance(s, ExprStmt) and isinstance(s.expr, Assign) \
        and isinstance(s.expr.target, Ident) and s.expr.target.name == "g"


def test_taint_escape_catches_output_flow(setup):
    _, _, records, _ = setup
    src = """
    unsigned g;

    int main(void) {
        char buf[8];
        int n;
        int x;
        n = read_input(buf, 8);
        memcpy(&x, buf, 4);
        g = x;
        print_int(g);
        return 0;
    }
    """
    rec = dataclasses.replace(records[2], bug_id=9)
    run = _tainted_run(src, _is_g_store, rec.label)
    c = taint_escape_check(rec, run)
    assert not c.ok
    assert c.counterexample.kind == "taint-escape"
    assert "output byte 0" in c.counterexample.witness


def test_taint_escape_catches_branch_flow(setup):
    _, _, records, _ = setup
    src = """
    unsigned g;

    int main(void) {
        char buf[8];
        int n;
        int x;
        n = read_input(buf, 8);
        memcpy(&x, buf, 4);
        g = x;
        if (g > 5) {
            print_int(1);
        }
        return 0;
    }
    """
    rec = dataclasses.replace(records[2], bug_id=9)
    run = _tainted_run(src, _is_g_store, rec.label)
    c = taint_escape_check(rec, run)
    assert not c.ok
    assert "branch" in c.counterexample.witness
    assert "trigger run" in c.counterexample.witness


# ---------------------------------------------------------------------------
# Bundles and classification
# ---------------------------------------------------------------------------


def test_proof_bundles_match_required_checks(setup):
    prog, cur, records, audit = setup
    for rec in records:
        run = run_program(cur, rec.trigger_input, audit=audit)
        bundle = prove_non_exploitable(rec, run, seed=42)
        assert bundle.complete
        assert bundle.ok
        assert tuple(c.name for c in bundle.checks) \
            == REQUIRED_CHECKS[rec.bug_type]
        assert bundle.counterexamples == ()


def test_proof_bundle_completeness_requires_order():
    checks = (ProofCheck("write-audit", True), ProofCheck("constraint", True))
    bundle = ProofBundle(1, "oc-stack", checks)
    assert not bundle.complete
    assert not bundle.ok


def test_classify_triage_labels(setup):
    _, cur, records, audit = setup
    expected = {
        "oc-stack": EXPLOITABLE_MIMIC,
        "oc-heap": EXPLOITABLE_MIMIC,
        "unused-stack": DORMANT,
    }
    for rec in records:
        c = validate_trigger(cur, rec, audit=audit)
        assert classify(rec, c).label == expected[rec.bug_type]


def test_classify_return_address_is_probably_exploitable(setup):
    prog, _, _, _ = setup
    base = run_program(prog, SEED)
    duas = find_duas(base.events, prog)
    atps = find_attack_points(base.events, prog)
    cand = ts._candidates(duas, atps)["ra"]
    cur, rec = synthesize_bug(prog, base.events, cand, 1, 42, [SEED], SEED)
    c = validate_trigger(cur, rec, audit=audit_config_for([rec]))
    got = classify(rec, c)
    assert got.label == PROBABLY_EXPLOITABLE_MIMIC
    assert "0x00000000" in got.rationale


def test_classify_crash_marker_is_abort(setup):
    prog, _, _, _ = setup
    base = run_program(prog, SEED)
    duas = find_duas(base.events, prog)
    atps = find_attack_points(base.events, prog)
    cand = ts._candidates(duas, atps)["unused"]
    cur, rec = synthesize_bug(prog, base.events, cand, 4, 42, [SEED], SEED,
                              crash_marker=True)
    c = validate_trigger(cur, rec, audit=audit_config_for([rec]))
    assert classify(rec, c).label == ABORT


def test_classify_is_total_over_fault_kinds(setup):
    _, _, records, _ = setup
    rec = records[0]
    for kind, label in (
        ("allocator-abort", EXPLOITABLE_MIMIC),
        ("read-unmapped", EXPLOITABLE_MIMIC),
        ("write-unmapped", EXPLOITABLE_MIMIC),
        ("pc-unmapped", PROBABLY_EXPLOITABLE_MIMIC),
        ("div-zero", ABORT),
    ):
        check = TriggerCheck(rec.bug_id, True, kind, kind)
        assert classify(rec, check).label == label
    dormant = TriggerCheck(rec.bug_id, True, "not-triggered", "ok",
                           reason="no-crash-by-design")
    assert classify(rec, dormant).label == DORMANT
    with pytest.raises(ValueError):
        classify(rec, TriggerCheck(rec.bug_id, True, "x", "banana"))


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def test_validate_bug_and_report_round_trip(setup):
    prog, cur, records, audit = setup
    baseline = {
        r.bug_id: run_program(prog, r.trigger_input, trace=False).output
        for r in records
    }
    vals = [
        validate_bug(cur, rec, audit=audit, seed=42,
                     baseline_output=baseline[rec.bug_id])
        for rec in records
    ]
    assert all(v.ok for v in vals)
    assert all(v.classification is not None for v in vals)
    report = build_report(
        validate_clean(prog, cur, [("s", SEED)], audit=audit),
        [vals[2], vals[0], vals[1]])
    assert report.ok
    assert [b.bug_id for b in report.bugs] == [1, 2, 3]
    blob = json.dumps(report.as_dict(), indent=2)
    data = json.loads(blob)
    assert data["ok"] is True
    assert data["bugs"][1]["trigger"]["fault"]["kind"] == "allocator-abort"
    assert data["bugs"][2]["classification"]["label"] == DORMANT


def test_failed_trigger_leaves_bug_unclassified():
    prog = resolve(parse(WRAP_SRC, "wrap.c"))
    base = run_program(prog, SEED)
    duas = find_duas(base.events, prog)
    atps = find_attack_points(base.events, prog)
    atp = next(a for a in atps if a.func == "quiet" and a.kind == "stack-frame")
    code = next(d for d in duas if d.path == "code")
    amt = next(d for d in duas if d.path == "amt")
    cand = BugCandidate("oc-stack", "saved-fp", code, amt, atp, "s")
    cur, rec = synthesize_bug(prog, base.events, cand, 1, 42, [SEED], SEED)
    v = validate_bug(cur, rec, audit=audit_config_for([rec]), seed=42)
    assert not v.ok
    assert v.classification is None
    report = build_report([], [v])
    assert not report.ok
    assert json.loads(json.dumps(report.as_dict()))["bugs"][0][
        "classification"] is None
