"""Harden injected bugs against casual triage.

Two independent devices:

Constraint chains split the "force the corrupting value to zero" step
into k stages scattered along the execution path between the attack
data's siphon and the attack point.  Stage i computes
``c_i = c_{i-1} & mask_i`` into its own zero-initialized global.  The
masks AND to zero, so running every stage in path order pins the final
value to 0; and because every global starts at 0, any skipped, repeated,
or reordered stage can only ever propagate 0 forward.  The final global
is what the attack point writes, so no (subset, order, multiplicity) of
stage executions produces a nonzero corruption value.

Fake dataflow makes an otherwise-unused overflow target look consumed:
the attack point's function gains a by-reference out-parameter, the
overwritten dummy byte is stored through it, and the pointer is threaded
up through a bounded slice of the traced caller chain.  Callers outside
the chain feed a throwaway global so every call site stays well-typed.
The value is written upward but never branched on or printed, which the
taint non-escape check verifies after the fact.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional, Sequence

from .frontend.nodes import (Call, ExprStmt, FuncDef, Program, iter_exprs,
                             iter_stmts, program_stmts, stmt_exprs)
from .interp.trace import StmtEnter
from .mining import AttackPoint

MASK_WIDTH = 32
LISTING_SPLIT = (0x0000FFFF, 0xFFFF0000)


class NotEnoughAnchors(Exception):
    def __init__(self, wanted: int, available: int) -> None:
        super().__init__(f"need {wanted} stage anchors, have {available}")
        self.wanted = wanted
        self.available = available


@dataclass(frozen=True)
class ChainStage:
    anchor_nid: int           # stage statement goes right after this one
    name: str                 # global receiving this stage's result
    mask: int


@dataclass(frozen=True)
class ConstraintChain:
    bug_id: int
    input_name: str           # c0, assigned at the attack-data siphon
    stages: tuple[ChainStage, ...]

    @property
    def final_name(self) -> str:
        return self.stages[-1].name if self.stages else self.input_name

    @property
    def masks(self) -> tuple[int, ...]:
        return tuple(s.mask for s in self.stages)

    def global_names(self) -> tuple[str, ...]:
        return (self.input_name,) + tuple(s.name for s in self.stages)


def partition_masks(k: int, rng: random.Random) -> tuple[int, ...]:
    """k masks whose AND is zero because each clears its own bit group.

    The groups partition the 32-bit word, so the AND of all masks clears
    everything.  k=2 is pinned to the halves split; k=1 must clear the
    whole word by itself.
    """
    if k < 1:
        raise ValueError("stage count must be positive")
    if k == 1:
        return (0,)
    if k == 2:
        return LISTING_SPLIT
    bits = list(range(MASK_WIDTH))
    rng.shuffle(bits)
    cuts = sorted(rng.sample(range(1, MASK_WIDTH), k - 1))
    masks = []
    lo = 0
    for hi in cuts + [MASK_WIDTH]:
        group = 0
        for b in bits[lo:hi]:
            group |= 1 << b
        masks.append(~group & 0xFFFFFFFF)
        lo = hi
    return tuple(masks)


def simulate_chain(masks: Sequence[int], value: int,
                   schedule: Sequence[int]) -> int:
    """Replay stage executions and return the final global's value.

    `schedule` entries are 0 for the initial siphon store (c0 = value)
    and i in 1..k for stage i; any subset, order, and multiplicity is a
    valid schedule.  Globals start at zero.
    """
    c = [0] * (len(masks) + 1)
    for op in schedule:
        if op == 0:
            c[0] = value & 0xFFFFFFFF
        else:
            c[op] = c[op - 1] & masks[op - 1]
    return c[len(masks)]


def stage_anchors(events: Sequence, program: Program,
                  lo_index: int, hi_index: int) -> list[tuple[int, int, str]]:
    """Expression-statement positions first executed strictly inside
    (lo_index, hi_index), the window between siphon and attack point."""
    expr_stmts = {s.nid for s in program_stmts(program)
                  if isinstance(s, ExprStmt)}
    seen: set[int] = set()
    out: list[tuple[int, int, str]] = []
    for i, ev in enumerate(events):
        if not isinstance(ev, StmtEnter) or ev.nid in seen:
            continue
        seen.add(ev.nid)
        if lo_index < i < hi_index and ev.nid in expr_stmts:
            out.append((i, ev.nid, ev.func))
    return out


def _spread(anchors: list[tuple[int, int, str]],
            k: int) -> list[tuple[int, int, str]]:
    """Pick k anchors favoring distinct functions, round-robin in path
    order, then restore trace order."""
    by_func: dict[str, list] = {}
    order: list[str] = []
    for a in anchors:
        if a[2] not in by_func:
            order.append(a[2])
        by_func.setdefault(a[2], []).append(a)
    picked: list = []
    round_i = 0
    while len(picked) < k:
        advanced = False
        for fn in order:
            bucket = by_func[fn]
            if round_i < len(bucket):
                picked.append(bucket[round_i])
                advanced = True
                if len(picked) == k:
                    break
        if not advanced:
            break
        round_i += 1
    picked.sort()
    return picked


def plan_constraint_chain(anchors: Sequence[tuple[int, int, str]], k: int,
                          seed, bug_id: int,
                          pad_anchor: Optional[int] = None) -> ConstraintChain:
    """Lay out k stages over the available path anchors.

    With fewer anchors than stages, remaining stages pile onto
    `pad_anchor` (normally the siphon statement itself); without a pad
    the shortfall is an error.
    """
    if k < 1:
        raise ValueError("stage count must be positive")
    pool = sorted(anchors)
    if len(pool) < k and pad_anchor is None:
        raise NotEnoughAnchors(k, len(pool))
    rng = random.Random(f"{seed}:chain:{bug_id}")
    masks = partition_masks(k, rng)
    chosen = _spread(pool, min(k, len(pool)))
    anchor_nids = [nid for _, nid, _ in chosen]
    while len(anchor_nids) < k:
        anchor_nids.append(pad_anchor)
    stages = tuple(
        ChainStage(anchor_nid=anchor_nids[i],
                   name=f"chaff_c{i + 1}_{bug_id}",
                   mask=masks[i])
        for i in range(k))
    return ConstraintChain(bug_id=bug_id,
                           input_name=f"chaff_c0_{bug_id}",
                           stages=stages)


@dataclass(frozen=True)
class DataflowPlan:
    bug_id: int
    atp_func: str
    modified: tuple[str, ...]     # attack point's function first, then parents
    param_name: str
    flow_global: str              # receives the value at the chain's root
    sink_global: str              # fed by call sites outside the chain
    degenerate_write: bool        # no threading possible: write flow_global directly
    call_sites: tuple[tuple[int, str], ...]   # (call nid, extra argument text)

    @property
    def empty(self) -> bool:
        return not self.modified and not self.degenerate_write

    def uses_sink(self) -> bool:
        return any(arg.endswith(self.sink_global) for _, arg in self.call_sites)


def plan_fake_dataflow(atp: AttackPoint, depth: int, program: Program,
                       bug_id: int) -> DataflowPlan:
    """Thread a write-only out-parameter through eligible callers.

    main never gains a parameter, and neither does any function whose
    address is taken: its indirect call sites could not be rewritten.
    When the attack point's own function is ineligible (or depth is 0
    with no room to thread), the plan degrades to a direct store into
    the flow global at the overflow site.
    """
    param_name = f"chaff_out_{bug_id}"
    flow_global = f"chaff_flow_{bug_id}"
    sink_global = f"chaff_sink_{bug_id}"

    def blocked(name: str) -> bool:
        if name == "main" or name in program.address_taken:
            return True
        try:
            program.function(name)
        except KeyError:
            return True
        return False

    base = dict(bug_id=bug_id, atp_func=atp.func, param_name=param_name,
                flow_global=flow_global, sink_global=sink_global)
    if depth == 0:
        return DataflowPlan(modified=(), degenerate_write=False,
                            call_sites=(), **base)
    if blocked(atp.func) or atp.indirect_reachable:
        return DataflowPlan(modified=(), degenerate_write=True,
                            call_sites=(), **base)

    chain = [f for f, _ in atp.caller_chain]   # outermost first
    modified = [atp.func]
    for parent in reversed(chain[:-1]):
        if len(modified) - 1 >= depth or blocked(parent) or parent in modified:
            break
        modified.append(parent)

    outermost = modified[-1]
    call_sites: list[tuple[int, str]] = []
    for func in program.functions():
        for node in _function_calls(func):
            if node.indirect or node.callee not in modified:
                continue
            if func.name in modified:
                arg = param_name
            elif node.callee == outermost:
                arg = f"&{flow_global}"
            else:
                arg = f"&{sink_global}"
            call_sites.append((node.nid, arg))
    call_sites.sort()
    return DataflowPlan(modified=tuple(modified), degenerate_write=False,
                        call_sites=tuple(call_sites), **base)


def _function_calls(func: FuncDef) -> list[Call]:
    """Every call expression in the function, declaration initializers
    included: each one needs the extra argument when its callee gains a
    parameter."""
    from .frontend.nodes import Block
    out: list[Call] = []
    for stmt in iter_stmts(func.body):
        nodes = list(stmt_exprs(stmt))
        if isinstance(stmt, Block):
            for d in stmt.decls:
                if d.init is not None:
                    nodes.extend(iter_exprs(d.init))
        out.extend(n for n in nodes if isinstance(n, Call))
    return out
