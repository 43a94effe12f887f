"""Mine injection raw material from an execution trace.

A usable piece of attacker-controlled data has to be three things at the
moment we see it: dead (its source bytes have decided no branch so far),
uncomplicated (little computation between the input bytes and the value),
and available (resident in an lvalue we can name again in source at that
point, with evidence the program itself considers it initialized).  Such
an observation becomes a DuaRecord.  Attack points are statement
positions reached after the first input read; each carries the caller
chain and frame geometry needed to stage an overflow there.

Pairing turns the two pools into bug candidates under a policy: per-type
quotas, trace ordering (both data sites strictly before the attack
point), one frame-corrupting bug per function, and a seeded shuffle so
selections are reproducible but not clustered at the top of the trace.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .frontend.nodes import (
    Block,
    Program,
    Return as ReturnStmt,
    expr_anchors,
    program_stmts,
)
from .interp.machine import FrameGeometry, measure_frame_geometry
from .interp.trace import (
    BranchEval,
    CallEnter,
    HeapAlloc,
    HeapFree,
    InputRead,
    LvalueObserved,
    Return as ReturnEvent,
    StmtEnter,
)

DEFAULT_TCN_MAX = 10
DEFAULT_LIVENESS_MAX = 0

BUG_TYPES = ("oc-stack", "oc-heap", "unused-stack")
STACK_TARGETS = ("saved-fp", "return-address")


@dataclass(frozen=True)
class DuaRecord:
    """One observation of attacker data resting in a nameable lvalue."""

    trace_index: int
    nid: int                  # statement the observation happened under
    func: str
    path: str                 # lvalue rendered as a C expression
    width: int                # 4 for scalars, 1 for char elements
    labels: tuple             # per-byte frozenset of input stream offsets
    tcn: tuple
    liveness: tuple
    evidence_index: int       # trace index of the prior in-scope reference
    controllable: bool        # four distinct single-label bytes, all tcn 0
    guarded: bool             # needs a null + strlen guard when siphoned
    guard_base: str = ""
    guard_offset: int = 0

    def key(self) -> tuple:
        return (self.trace_index, self.nid, self.path)

    def trigger_positions(self) -> tuple[int, ...]:
        """Input stream offsets controlling each byte, low byte first."""
        return tuple(next(iter(ls)) for ls in self.labels)


@dataclass(frozen=True)
class AttackPoint:
    trace_index: int
    nid: int
    kind: str                 # stack-frame | heap-adjacent
    func: str
    caller_chain: tuple       # ((func, via_indirect_call), ...) outermost first
    geometry: FrameGeometry
    indirect_reachable: bool
    frame_returns: bool       # the enclosing activation returns later on
    exec_count: int           # times the anchor ran under the seed input

    def key(self) -> tuple:
        return (self.trace_index, self.nid, self.kind)


@dataclass(frozen=True)
class BugCandidate:
    bug_type: str
    stack_target: str         # saved-fp | return-address | ""
    trigger: DuaRecord
    attack: Optional[DuaRecord]
    atp: AttackPoint
    input_id: str = ""

    def key(self) -> tuple:
        atk = self.attack.key() if self.attack is not None else None
        return (self.bug_type, self.stack_target, self.trigger.key(), atk,
                self.atp.key())


class QuotaInfeasible(Exception):
    def __init__(self, bug_type: str, available: int) -> None:
        super().__init__(
            f"cannot fill quota for {bug_type}: only {available} candidate(s)")
        self.bug_type = bug_type
        self.available = available


def _int_labels(taint: tuple) -> bool:
    return all(ls and all(isinstance(l, int) for l in ls) for ls in taint)


def _controllable(ev: LvalueObserved) -> bool:
    if ev.width != 4:
        return False
    if any(t != 0 for t in ev.tcn):
        return False
    singles = []
    for ls in ev.taint:
        if len(ls) != 1:
            return False
        singles.append(next(iter(ls)))
    return len(set(singles)) == 4


def find_duas(events: Sequence, program: Program, *,
              tcn_max: int = DEFAULT_TCN_MAX,
              liveness_max: int = DEFAULT_LIVENESS_MAX) -> list[DuaRecord]:
    """Scan a trace for dead, uncomplicated, available data.

    One record per (statement, path): the first eligible observation
    wins, later executions of the same site add nothing.
    """
    # Observations carry the expression node that touched the lvalue;
    # translate to the directly enclosing statement, which is where a
    # siphon can be inserted.  Return statements cannot anchor an
    # insertion that still runs, and declaration initializers are not
    # statement positions at all (they drop out of the anchor map).
    to_stmt = expr_anchors(program)
    returns = {s.nid for s in program_stmts(program)
               if isinstance(s, ReturnStmt)}
    branch_hits: dict[int, int] = {}
    last_ref: dict[tuple[int, str], int] = {}
    seen: set[tuple[int, str]] = set()
    out: list[DuaRecord] = []

    for i, ev in enumerate(events):
        if isinstance(ev, BranchEval):
            for label in ev.taint:
                if isinstance(label, int):
                    branch_hits[label] = branch_hits.get(label, 0) + 1
            continue
        if not isinstance(ev, LvalueObserved):
            continue
        ref_key = (ev.serial, ev.path)
        prior = last_ref.get(ref_key)
        last_ref[ref_key] = i
        if ev.kind == "addrof":
            continue
        anchor = to_stmt.get(ev.nid)
        if anchor is None or anchor in returns:
            continue
        site = (anchor, ev.path)
        if site in seen:
            continue
        if not ev.evidence:
            continue
        if ev.width not in (1, 4) or not _int_labels(ev.taint):
            continue
        if ev.string_rel and ev.base_offset < 0:
            continue
        if "[-" in ev.path:
            continue
        liveness = tuple(
            max(branch_hits.get(l, 0) for l in ls) for ls in ev.taint)
        if max(ev.tcn) > tcn_max or max(liveness) > liveness_max:
            continue
        seen.add(site)
        out.append(DuaRecord(
            trace_index=i,
            nid=anchor,
            func=ev.func,
            path=ev.path,
            width=ev.width,
            labels=tuple(ev.taint),
            tcn=tuple(ev.tcn),
            liveness=liveness,
            evidence_index=prior if prior is not None else i,
            controllable=_controllable(ev),
            guarded=ev.string_rel,
            guard_base=ev.base_path,
            guard_offset=ev.base_offset,
        ))
    return out


def find_attack_points(events: Sequence, program: Program) -> list[AttackPoint]:
    """Statement positions eligible to host an overflow.

    Only positions after the first input read qualify: before that there
    is no attacker data to trigger on.  Heap-adjacent points additionally
    need a later allocator interaction in the trace, since heap metadata
    corruption only surfaces at the next malloc or free.
    """
    first_input = next(
        (i for i, ev in enumerate(events) if isinstance(ev, InputRead)), None)
    if first_input is None:
        return []
    last_heap = -1
    return_at: dict[int, int] = {}
    for i, ev in enumerate(events):
        if isinstance(ev, (HeapAlloc, HeapFree)):
            last_heap = i
        elif isinstance(ev, ReturnEvent):
            return_at[ev.serial] = i

    # Blocks never sit in a statement list they can be spliced into, and
    # nothing can be inserted after a return and still run.
    anchors = {s.nid for s in program_stmts(program)
               if not isinstance(s, (ReturnStmt, Block))}
    geometry: dict[str, FrameGeometry] = {}
    exec_count: dict[int, int] = {}
    for ev in events:
        if isinstance(ev, StmtEnter):
            exec_count[ev.nid] = exec_count.get(ev.nid, 0) + 1

    stack: list[tuple[str, int, bool]] = []
    firsts: list[tuple[int, StmtEnter, tuple, int]] = []
    taken: set[int] = set()
    for i, ev in enumerate(events):
        if isinstance(ev, CallEnter):
            stack.append((ev.func, ev.serial, ev.indirect))
        elif isinstance(ev, ReturnEvent):
            if stack and stack[-1][1] == ev.serial:
                stack.pop()
        elif isinstance(ev, StmtEnter):
            if i <= first_input or ev.nid in taken or ev.nid not in anchors:
                continue
            taken.add(ev.nid)
            chain = tuple((f, ind) for f, _, ind in stack)
            serial = stack[-1][1] if stack else 0
            firsts.append((i, ev, chain, serial))

    out: list[AttackPoint] = []
    for i, ev, chain, serial in firsts:
        if ev.func not in geometry:
            geometry[ev.func] = measure_frame_geometry(program, ev.func)
        common = dict(
            trace_index=i,
            nid=ev.nid,
            func=ev.func,
            caller_chain=chain,
            geometry=geometry[ev.func],
            indirect_reachable=any(ind for _, ind in chain),
            frame_returns=return_at.get(serial, -1) > i,
            exec_count=exec_count[ev.nid],
        )
        out.append(AttackPoint(kind="stack-frame", **common))
        if i < last_heap:
            out.append(AttackPoint(kind="heap-adjacent", **common))
    out.sort(key=lambda a: a.key())
    return out


class _TypeState:
    """Per-type cursors so successive picks spread across the pools."""

    def __init__(self, atps: list[AttackPoint]) -> None:
        self.atps = atps
        self.atp_pos = 0
        self.trig_pos = 0
        self.atk_pos = 0
        self.filled = 0


def _rotate(seq: list, start: int) -> Iterable:
    n = len(seq)
    for i in range(n):
        yield seq[(start + i) % n]


def pair_candidates(duas: Sequence[DuaRecord], atps: Sequence[AttackPoint],
                    quotas: dict[str, int], seed, *,
                    claimed: Iterable[str] = (),
                    exclude: Iterable[tuple] = (),
                    input_id: str = "",
                    main_name: str = "main") -> list[BugCandidate]:
    """Select quota-many candidates per bug type, deterministically.

    Types are interleaved round-robin so no type monopolizes the early
    trace.  A function hosting one frame-corrupting bug is claimed and
    skipped for further stack-family candidates; `claimed` seeds that set
    (callers pass functions consumed by earlier pairing rounds), and
    `exclude` removes candidate keys already tried and failed.
    """
    for t in quotas:
        if t not in BUG_TYPES:
            raise ValueError(f"unknown bug type {t!r}")
    rng = random.Random(f"{seed}:pair")
    triggers = sorted((d for d in duas if d.controllable),
                      key=DuaRecord.key)
    attacks = sorted(duas, key=DuaRecord.key)
    stack_atps = sorted((a for a in atps if a.kind == "stack-frame"),
                        key=AttackPoint.key)
    heap_atps = sorted((a for a in atps if a.kind == "heap-adjacent"),
                       key=AttackPoint.key)
    # one shuffle per pool, in a fixed order, so reruns agree
    rng.shuffle(triggers)
    rng.shuffle(attacks)
    rng.shuffle(stack_atps)
    rng.shuffle(heap_atps)

    excluded = set(exclude)
    claimed_fns = set(claimed)
    states = {
        "oc-stack": _TypeState(stack_atps),
        "oc-heap": _TypeState(heap_atps),
        "unused-stack": _TypeState(stack_atps),
    }
    remaining = {t: quotas.get(t, 0) for t in BUG_TYPES}
    target_flip = 0
    out: list[BugCandidate] = []

    def pick_attack(st: _TypeState, atp: AttackPoint,
                    trig: DuaRecord) -> Optional[DuaRecord]:
        for k, atk in enumerate(_rotate(attacks, st.atk_pos)):
            if atk.trace_index < atp.trace_index and atk.key() != trig.key():
                st.atk_pos = (st.atk_pos + k + 1) % len(attacks)
                return atk
        return None

    def try_type(t: str) -> Optional[BugCandidate]:
        nonlocal target_flip
        st = states[t]
        if not st.atps or not triggers:
            return None
        for j, atp in enumerate(_rotate(st.atps, st.atp_pos)):
            if t == "oc-heap" and atp.exec_count != 1:
                # re-running the injected allocation would abort at the
                # bug's own site, which validation rejects
                continue
            if t in ("oc-stack", "unused-stack") and atp.func in claimed_fns:
                continue
            if t == "oc-stack" and not atp.frame_returns:
                continue
            targets: tuple[str, ...] = ("",)
            if t == "oc-stack":
                first = STACK_TARGETS[target_flip % 2]
                targets = (first, STACK_TARGETS[(target_flip + 1) % 2])
            for target in targets:
                if target == "saved-fp" and atp.func == main_name:
                    continue
                for k, trig in enumerate(_rotate(triggers, st.trig_pos)):
                    if trig.trace_index >= atp.trace_index:
                        continue
                    attack = pick_attack(st, atp, trig)
                    if t in ("oc-stack", "oc-heap") and attack is None:
                        continue
                    cand = BugCandidate(
                        bug_type=t, stack_target=target, trigger=trig,
                        attack=attack, atp=atp, input_id=input_id)
                    if cand.key() in excluded:
                        continue
                    st.trig_pos = (st.trig_pos + k + 1) % len(triggers)
                    st.atp_pos = (st.atp_pos + j + 1) % len(st.atps)
                    if t == "oc-stack":
                        target_flip += 1
                    if t in ("oc-stack", "unused-stack"):
                        claimed_fns.add(atp.func)
                    return cand
        return None

    while any(remaining[t] > 0 for t in BUG_TYPES):
        progressed = False
        for t in BUG_TYPES:
            if remaining[t] <= 0:
                continue
            cand = try_type(t)
            if cand is None:
                raise QuotaInfeasible(t, states[t].filled)
            states[t].filled += 1
            remaining[t] -= 1
            out.append(cand)
            progressed = True
        if not progressed:
            break
    return out
