"""Validation gates: clean equivalence, trigger faults, proof bundles.

Every bug the injector reports has passed three gates.  The clean gate
replays the whole input corpus and demands byte-identical output with
zero corruption-store activity.  The trigger gate replays the bug's
trigger input and demands the exact fault its type promises, or the
documented absence of one for dormant bugs.  The proof gate then
machine-checks why the bug cannot be more than it appears: the
constraint chain folds every attacker word to zero under every
execution schedule, the corruption writes stay inside their declared
region, planted heap corruption aborts or stays silent in every
allocator future, and sprayed bytes never reach a branch or the output.

The checks here are pure functions over execution results wherever
possible, so a driver can run each program once and feed the same
result to several gates.  The validate_* wrappers execute and delegate.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .heap import check_corruption_cases
from .interp.machine import AuditConfig, ExecResult, FaultReport, run_program
from .interp.trace import BranchEval, Return
from .frontend.nodes import Program
from .synth import BugRecord

EXPLOITABLE_MIMIC = "EXPLOITABLE_MIMIC"
PROBABLY_EXPLOITABLE_MIMIC = "PROBABLY_EXPLOITABLE_MIMIC"
ABORT = "ABORT"
DORMANT = "NONE"

# random 32-bit words fed to every chain schedule, on top of the
# structured specials (zero, all-ones, each mask and its complement)
CHAIN_VALUE_SAMPLES = 10_000

MAX_PROVABLE_STAGES = 5

# checks a complete proof bundle must contain, by bug type
REQUIRED_CHECKS = {
    "oc-stack": ("constraint", "write-audit"),
    "oc-heap": ("constraint", "write-audit", "heap-case"),
    "unused-stack": ("write-audit", "taint-escape"),
}


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CleanCheck:
    """Outcome of replaying one corpus input on the transformed program."""

    input_id: str
    ok: bool
    first_diff: int = -1
    detail: str = ""


@dataclass(frozen=True)
class Counterexample:
    """A concrete witness that a non-exploitability claim is false."""

    kind: str           # constraint | write-audit | heap-case | taint-escape
    witness: str


@dataclass(frozen=True)
class TriggerCheck:
    """Outcome of replaying a bug's trigger input.

    `observed` is the fault kind, or "ok" / "error" for runs that ended
    without one.  `reason` is set when the meaningful outcome is the
    absence of a fault: "no-crash-by-design" marks the one passing case,
    the others name why a candidate was rejected.
    """

    bug_id: int
    ok: bool
    expected: str
    observed: str
    reason: str = ""
    detail: str = ""
    fault: Optional[FaultReport] = None


@dataclass(frozen=True)
class ProofCheck:
    name: str
    ok: bool
    detail: str = ""
    counterexample: Optional[Counterexample] = None


@dataclass(frozen=True)
class ProofBundle:
    bug_id: int
    bug_type: str
    checks: tuple[ProofCheck, ...]

    @property
    def complete(self) -> bool:
        return tuple(c.name for c in self.checks) == REQUIRED_CHECKS[self.bug_type]

    @property
    def ok(self) -> bool:
        return self.complete and all(c.ok for c in self.checks)

    @property
    def counterexamples(self) -> tuple[Counterexample, ...]:
        return tuple(c.counterexample for c in self.checks
                     if c.counterexample is not None)


@dataclass(frozen=True)
class Classification:
    bug_id: int
    label: str
    rationale: str


@dataclass(frozen=True)
class BugValidation:
    bug_id: int
    bug_type: str
    stack_target: str
    trigger: TriggerCheck
    proof: ProofBundle
    classification: Optional[Classification]

    @property
    def ok(self) -> bool:
        return self.trigger.ok and self.proof.ok


@dataclass(frozen=True)
class ValidationReport:
    clean: tuple[CleanCheck, ...]
    bugs: tuple[BugValidation, ...]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.clean) and all(b.ok for b in self.bugs)

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "clean": [
                {
                    "input_id": c.input_id,
                    "ok": c.ok,
                    "first_diff": c.first_diff,
                    "detail": c.detail,
                }
                for c in self.clean
            ],
            "bugs": [_bug_dict(b) for b in self.bugs],
        }


def _bug_dict(b: BugValidation) -> dict:
    t = b.trigger
    return {
        "bug_id": b.bug_id,
        "bug_type": b.bug_type,
        "stack_target": b.stack_target,
        "ok": b.ok,
        "trigger": {
            "ok": t.ok,
            "expected": t.expected,
            "observed": t.observed,
            "reason": t.reason,
            "detail": t.detail,
            "fault": None if t.fault is None else {
                "kind": t.fault.kind,
                "addr": t.fault.addr,
                "nid": t.fault.nid,
                "func": t.fault.func,
                "detail": t.fault.detail,
            },
        },
        "proof": {
            "complete": b.proof.complete,
            "ok": b.proof.ok,
            "checks": [
                {
                    "name": c.name,
                    "ok": c.ok,
                    "detail": c.detail,
                    "counterexample": None if c.counterexample is None else {
                        "kind": c.counterexample.kind,
                        "witness": c.counterexample.witness,
                    },
                }
                for c in b.proof.checks
            ],
        },
        "classification": None if b.classification is None else {
            "label": b.classification.label,
            "rationale": b.classification.rationale,
        },
    }


# ---------------------------------------------------------------------------
# Clean gate
# ---------------------------------------------------------------------------


def first_divergence(a: bytes, b: bytes) -> int:
    """Offset of the first differing byte, or -1 when equal.  A strict
    prefix diverges at the shorter length."""
    if a == b:
        return -1
    for i in range(min(len(a), len(b))):
        if a[i] != b[i]:
            return i
    return min(len(a), len(b))


def clean_check(input_id: str, original_run: ExecResult,
                transformed_run: ExecResult) -> CleanCheck:
    """Compare one input's runs.  Divergence is a result, not an error:
    the offset of the first differing byte is reported either way."""
    if original_run.status != "ok":
        what = original_run.error or (
            original_run.fault.kind if original_run.fault else "fault")
        return CleanCheck(input_id, False,
                          detail=f"original run {original_run.status}: {what}")
    if transformed_run.status != "ok":
        what = transformed_run.error or (
            transformed_run.fault.kind if transformed_run.fault else "fault")
        return CleanCheck(input_id, False,
                          detail=f"transformed run {transformed_run.status}: {what}")
    if transformed_run.audit_writes:
        bugs = ", ".join(sorted(transformed_run.audit_writes))
        return CleanCheck(
            input_id, False,
            detail=f"corruption stores executed on a clean input (bug {bugs})")
    off = first_divergence(original_run.output, transformed_run.output)
    if off >= 0:
        return CleanCheck(input_id, False, first_diff=off,
                          detail=f"output diverges at byte {off}")
    return CleanCheck(input_id, True)


def validate_clean(original: Program, transformed: Program,
                   inputs: Sequence[tuple[str, bytes]], *,
                   audit: Optional[AuditConfig] = None) -> tuple[CleanCheck, ...]:
    out = []
    for input_id, data in inputs:
        o = run_program(original, data, trace=False)
        t = run_program(transformed, data, trace=False, audit=audit)
        out.append(clean_check(input_id, o, t))
    return tuple(out)


# ---------------------------------------------------------------------------
# Trigger gate
# ---------------------------------------------------------------------------


def _fault_expectation(record: BugRecord) -> str:
    if record.bug_type == "oc-heap":
        return "allocator-abort"
    if record.bug_type == "oc-stack":
        if record.stack_target == "return-address":
            return "pc-unmapped"
        return "read-unmapped|write-unmapped"
    return "div-zero" if record.marker_nid >= 0 else "not-triggered"


def _returned_from(run: ExecResult, func: str) -> bool:
    """Did `func` return before the run ended?  Attested from the trace
    when one exists, otherwise from the fault address looking like a
    small offset from a zeroed frame pointer."""
    if run.events is not None:
        return any(isinstance(e, Return) and e.func == func
                   for e in run.events)
    if run.fault is None:
        return False
    addr = run.fault.addr
    return addr < 0x10000 or addr > 0xFFFF0000


def trigger_check(record: BugRecord, run: ExecResult,
                  baseline_output: Optional[bytes] = None) -> TriggerCheck:
    """Judge one trigger replay against the fault its bug type promises.

    For dormant bugs `baseline_output` is the original program's output
    on the trigger input; when provided, the dormant run must reproduce
    it byte for byte.
    """
    bid = record.bug_id
    expected = _fault_expectation(record)
    if run.status == "error":
        return TriggerCheck(bid, False, expected, "error",
                            detail=run.error or "")

    if record.bug_type == "unused-stack":
        return _check_unused_trigger(record, run, expected, baseline_output)

    if run.status == "ok":
        if record.bug_type == "oc-heap":
            reason = "corruption-never-consulted"
        elif record.stack_target == "saved-fp":
            reason = "fp-never-dereferenced"
        else:
            reason = "no-fault"
        return TriggerCheck(bid, False, expected, "ok", reason=reason)

    fault = run.fault
    assert fault is not None
    if record.bug_type == "oc-heap":
        ok = fault.kind == "allocator-abort"
        detail = "" if ok else f"faulted {fault.kind} instead of an allocator abort"
    elif record.stack_target == "return-address":
        ok = fault.kind == "pc-unmapped" and fault.func == record.func
        detail = "" if ok else (
            f"faulted {fault.kind} in {fault.func}, wanted a pc fault "
            f"returning from {record.func}")
    else:
        ok = fault.kind in ("read-unmapped", "write-unmapped") \
            and _returned_from(run, record.func)
        detail = "" if ok else (
            f"faulted {fault.kind} at 0x{fault.addr:08x} without evidence "
            f"of {record.func} having returned")
    return TriggerCheck(bid, ok, expected, fault.kind, detail=detail,
                        fault=fault)


def _check_unused_trigger(record: BugRecord, run: ExecResult, expected: str,
                          baseline_output: Optional[bytes]) -> TriggerCheck:
    bid = record.bug_id
    if record.marker_nid >= 0:
        if run.status == "fault" and run.fault.kind == "div-zero" \
                and run.fault.nid == record.marker_nid:
            return TriggerCheck(bid, True, expected, "div-zero",
                                fault=run.fault)
        observed = run.fault.kind if run.fault else run.status
        return TriggerCheck(bid, False, expected, observed, fault=run.fault,
                            detail="crash marker did not fire")
    if run.status != "ok":
        observed = run.fault.kind if run.fault else "error"
        return TriggerCheck(bid, False, expected, observed, fault=run.fault,
                            detail="dormant bug crashed")
    writes = run.audit_writes.get(str(bid), ())
    if not writes:
        return TriggerCheck(bid, False, expected, "ok",
                            reason="guard-never-armed",
                            detail="trigger input never reached the spray")
    violations = [v for v in run.audit_violations if v.startswith(f"{bid}:")]
    if violations:
        return TriggerCheck(bid, False, expected, "ok", detail=violations[0])
    if baseline_output is not None and run.output != baseline_output:
        off = first_divergence(baseline_output, run.output)
        return TriggerCheck(
            bid, False, expected, "ok",
            detail=f"dormant run diverges from baseline at byte {off}")
    return TriggerCheck(bid, True, expected, "ok",
                        reason="no-crash-by-design")


def validate_trigger(transformed: Program, record: BugRecord, *,
                     audit: Optional[AuditConfig] = None,
                     baseline_output: Optional[bytes] = None) -> TriggerCheck:
    run = run_program(transformed, record.trigger_input, audit=audit)
    return trigger_check(record, run, baseline_output)


# ---------------------------------------------------------------------------
# Proof bundle
# ---------------------------------------------------------------------------


def _schedules(k: int) -> list[tuple[int, ...]]:
    """Every subset of {siphon, stage 1..k} in every order, plus each
    such schedule run twice back to back to cover re-execution."""
    ops = range(k + 1)
    base: list[tuple[int, ...]] = []
    for r in range(k + 2):
        for subset in itertools.combinations(ops, r):
            base.extend(itertools.permutations(subset))
    return base + [s + s for s in base if s]


def _chain_finals(masks: Sequence[int], schedule: Sequence[int],
                  values: np.ndarray) -> np.ndarray:
    cells = [np.zeros_like(values) for _ in range(len(masks) + 1)]
    for op in schedule:
        if op == 0:
            cells[0] = values.copy()
        else:
            cells[op] = cells[op - 1] & np.uint32(masks[op - 1])
    return cells[len(masks)]


def chain_zero_check(record: BugRecord, seed: int,
                     samples: int = CHAIN_VALUE_SAMPLES) -> ProofCheck:
    """Enumerate every schedule of the bug's constraint chain and demand
    a zero payload for each of many attacker words."""
    masks = record.chain_masks
    k = len(masks)
    if k == 0:
        return ProofCheck("constraint", False,
                          detail="bug carries no constraint chain")
    if k > MAX_PROVABLE_STAGES:
        raise ValueError(
            f"cannot enumerate schedules for {k} stages (max {MAX_PROVABLE_STAGES})")
    rng = np.random.default_rng((seed & 0xFFFFFFFF, record.bug_id))
    specials = [0, 0xFFFFFFFF, record.magic]
    specials += list(masks) + [~m & 0xFFFFFFFF for m in masks]
    values = np.concatenate([
        np.array(specials, dtype=np.uint32),
        rng.integers(0, 2 ** 32, size=samples, dtype=np.uint32),
    ])
    schedules = _schedules(k)
    for sched in schedules:
        finals = _chain_finals(masks, sched, values)
        bad = np.nonzero(finals)[0]
        if bad.size:
            i = int(bad[0])
            return ProofCheck(
                "constraint", False,
                counterexample=Counterexample(
                    "constraint",
                    f"schedule {sched} on 0x{int(values[i]):08x} "
                    f"leaves 0x{int(finals[i]):08x}"))
    return ProofCheck(
        "constraint", True,
        f"{len(schedules)} schedules x {values.size} values all fold to zero")


def write_audit_check(record: BugRecord, trigger_run: ExecResult,
                      clean_runs: Sequence[tuple[str, ExecResult]] = ()
                      ) -> ProofCheck:
    """The corruption stores must have executed on the trigger input,
    stayed inside the declared region, and stayed silent on every clean
    run supplied."""
    bid = str(record.bug_id)
    violations = [v for v in trigger_run.audit_violations
                  if v.startswith(bid + ":")]
    if violations:
        return ProofCheck("write-audit", False,
                          counterexample=Counterexample("write-audit",
                                                        violations[0]))
    writes = trigger_run.audit_writes.get(bid, [])
    if not writes:
        return ProofCheck(
            "write-audit", False,
            detail="corruption stores never executed on the trigger input")
    for input_id, run in clean_runs:
        if run.audit_writes.get(bid):
            return ProofCheck(
                "write-audit", False,
                counterexample=Counterexample(
                    "write-audit",
                    f"corruption store executed on clean input {input_id}"))
    lo = min(a for a, _, _ in writes)
    hi = max(a + w for a, w, _ in writes)
    return ProofCheck(
        "write-audit", True,
        f"{len(writes)} writes confined to 0x{lo:08x}..0x{hi:08x}")


@lru_cache(maxsize=4)
def _heap_case_table(depth: int):
    return check_corruption_cases(depth)


def heap_case_check(record: BugRecord, depth: int = 3) -> ProofCheck:
    """Tabulate every allocator future after the planted corruption and
    demand that none of them reads or writes through corrupted metadata
    without aborting."""
    res = _heap_case_table(depth)
    if res.escapes:
        row = next(r for r in res.rows if r.outcome == "escape")
        return ProofCheck(
            "heap-case", False,
            counterexample=Counterexample(
                "heap-case", f"{row.scenario}: {' '.join(row.sequence)}"))
    if res.differential_aborts:
        return ProofCheck(
            "heap-case", False,
            counterexample=Counterexample(
                "heap-case",
                f"{res.differential_aborts} aborts without corruption"))
    return ProofCheck(
        "heap-case", True,
        f"depth {res.depth}: {res.aborts} abort, {res.silents} silent, "
        f"0 escape over {len(res.rows)} futures")


def taint_escape_check(record: BugRecord, trigger_run: ExecResult,
                       clean_runs: Sequence[tuple[str, ExecResult]] = ()
                       ) -> ProofCheck:
    """The bug's taint label must reach no branch condition and no
    output byte.  Clean runs cannot introduce the label unless a
    corruption store executed, which the clean gate already forbids, so
    scanning them is belt and braces."""
    label = record.label
    branches = 0
    for input_id, run in [("trigger", trigger_run)] + list(clean_runs):
        for i, taints in enumerate(run.output_taint):
            if label in taints:
                return ProofCheck(
                    "taint-escape", False,
                    counterexample=Counterexample(
                        "taint-escape",
                        f"output byte {i} tainted on the {input_id} run"))
        for e in run.events or ():
            if isinstance(e, BranchEval):
                branches += 1
                if label in e.taint:
                    return ProofCheck(
                        "taint-escape", False,
                        counterexample=Counterexample(
                            "taint-escape",
                            f"branch {e.nid} in {e.func} tainted on the "
                            f"{input_id} run"))
    return ProofCheck(
        "taint-escape", True,
        f"label absent from {branches} branch evaluations and all output bytes")


def prove_non_exploitable(record: BugRecord, trigger_run: ExecResult, *,
                          seed: int,
                          clean_runs: Sequence[tuple[str, ExecResult]] = (),
                          samples: int = CHAIN_VALUE_SAMPLES,
                          heap_depth: int = 3) -> ProofBundle:
    """Assemble the proof bundle prescribed for the bug's type."""
    checks = []
    if record.bug_type in ("oc-stack", "oc-heap"):
        checks.append(chain_zero_check(record, seed, samples))
    checks.append(write_audit_check(record, trigger_run, clean_runs))
    if record.bug_type == "oc-heap":
        checks.append(heap_case_check(record, heap_depth))
    if record.bug_type == "unused-stack":
        checks.append(taint_escape_check(record, trigger_run, clean_runs))
    return ProofBundle(record.bug_id, record.bug_type, tuple(checks))


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


def classify(record: BugRecord, check: TriggerCheck) -> Classification:
    """Map a validated trigger outcome to the verdict a crash triage
    tool would reach."""
    bid = record.bug_id
    obs = check.observed
    addr = check.fault.addr if check.fault else 0
    if obs == "allocator-abort":
        return Classification(
            bid, EXPLOITABLE_MIMIC,
            "allocator abort on corrupted chunk metadata, the signature "
            "triage reads as a heap corruption primitive")
    if obs in ("read-unmapped", "write-unmapped"):
        return Classification(
            bid, EXPLOITABLE_MIMIC,
            f"locals resolved through a clobbered frame pointer "
            f"({obs} at 0x{addr:08x}), the signature of an "
            f"attacker-steered pointer")
    if obs == "pc-unmapped":
        return Classification(
            bid, PROBABLY_EXPLOITABLE_MIMIC,
            f"control transfer to unmapped 0x{addr:08x}; the near-null "
            f"target keeps triage one notch below exploitable")
    if obs == "div-zero":
        return Classification(bid, ABORT, "arithmetic fault at the crash marker")
    if obs == "ok" and check.reason == "no-crash-by-design":
        return Classification(bid, DORMANT, "does not crash by design")
    raise ValueError(f"no classification for trigger outcome {obs!r}")


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def validate_bug(transformed: Program, record: BugRecord, *,
                 audit: AuditConfig, seed: int,
                 baseline_output: Optional[bytes] = None,
                 clean_runs: Sequence[tuple[str, ExecResult]] = (),
                 samples: int = CHAIN_VALUE_SAMPLES,
                 heap_depth: int = 3) -> BugValidation:
    """Run one bug's trigger and evaluate both per-bug gates on it."""
    run = run_program(transformed, record.trigger_input, audit=audit)
    trig = trigger_check(record, run, baseline_output)
    proof = prove_non_exploitable(record, run, seed=seed,
                                  clean_runs=clean_runs, samples=samples,
                                  heap_depth=heap_depth)
    cls = classify(record, trig) if trig.ok else None
    return BugValidation(record.bug_id, record.bug_type, record.stack_target,
                         trig, proof, cls)


def build_report(clean: Sequence[CleanCheck],
                 bugs: Sequence[BugValidation]) -> ValidationReport:
    """Merge per-bug results into one report, ordered by bug id."""
    return ValidationReport(tuple(clean),
                            tuple(sorted(bugs, key=lambda b: b.bug_id)))
