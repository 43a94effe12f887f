"""Turn a mined candidate into concrete injected code.

Every bug follows the same skeleton: a trigger global siphons one
controllable word of input; a guard compares it against a magic value
chosen to be absent from every corpus input; under the guard, a small
loop overflows a planted buffer.  What the overflow can reach is pinned
by construction:

* oc-stack smashes the saved frame pointer or return address of its own
  function with a constraint-chain value that is provably always zero.
* oc-heap plants fixed fake metadata past the end of its own allocation
  plus the chain value as the next chunk's size word, so the allocator
  aborts at the next operation without any attacker-chosen state.
* unused-stack sprays an attacker payload across two dummy arrays whose
  frame slots sit between the planted buffer and the live frame, then
  leaks one byte through the fake-dataflow out-parameter so the store
  is not trivially dead.

Synthesis is two-phase: declarations first, then a re-measure of the
edited frame so each folded index constant comes from the layout that
will actually execute, then the statements.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

from .frontend.edits import EditScript, apply_edits
from .frontend.nodes import (
    Assign,
    Binary,
    ExprStmt,
    Ident,
    If,
    Index,
    IntLit,
    Program,
    Unary,
    program_stmts,
)
from .interp.machine import (
    AuditConfig,
    measure_frame_geometry,
    run_program,
    static_frame_layout,
)
from .interp.trace import StmtEnter
from .mining import AttackPoint, BugCandidate, DuaRecord
from .obfuscate import (
    ConstraintChain,
    DataflowPlan,
    plan_constraint_chain,
    plan_fake_dataflow,
    stage_anchors,
)

MAGIC_ATTEMPTS = 4096
MAGIC_PATH_TRIES = 8
DEFAULT_STAGES = 2
DEFAULT_FLOW_DEPTH = 2

# oc-heap geometry against the allocator model: a 24-byte request takes a
# 32-byte chunk, so user offsets 24..31 overlay the next chunk's header.
# 16..19 stay inside the block and hold a believable fake size field.
HEAP_BLOCK = 24
HEAP_FAKE_OFF = 16
HEAP_FAKE_WORD = 16
HEAP_NEXT_OFF = 24
HEAP_PREV_WORD = 12
HEAP_CHAIN_OFF = 28
HEAP_SPANS = ((HEAP_FAKE_OFF, 4), (HEAP_NEXT_OFF, 8))

DUMMY_SPAN = 16     # two 8-byte dummies absorb the unused-stack spray


class MagicExhausted(Exception):
    pass


class BytesNotIndependent(Exception):
    pass


def input_windows(corpus: Iterable[bytes]) -> set[int]:
    """Every 4-byte little-endian window occurring in any corpus input."""
    seen: set[int] = set()
    for data in corpus:
        for i in range(len(data) - 3):
            seen.add(int.from_bytes(data[i:i + 4], "little"))
    return seen


def choose_magic(seed, bug_id: int, corpus: Iterable[bytes],
                 taken: Iterable[int] = ()) -> int:
    """Draw a nonzero trigger word no corpus input contains.

    Zero is reserved: untouched globals hold zero, so a zero magic would
    fire before any input byte arrived.
    """
    avoid = input_windows(corpus) | set(taken)
    rng = random.Random(f"{seed}:magic:{bug_id}")
    for _ in range(MAGIC_ATTEMPTS):
        v = rng.getrandbits(32)
        if v != 0 and v not in avoid:
            return v
    raise MagicExhausted(
        f"no usable magic after {MAGIC_ATTEMPTS} draws for bug {bug_id}")


def make_trigger_input(seed_input: bytes, trigger: DuaRecord,
                       magic: int) -> bytes:
    """Copy the seed input and plant the magic on the trigger bytes.

    Only the four stream positions feeding the trigger word change;
    everything else, attack bytes included, stays as recorded, so the
    tampered input follows the seed's control-flow path up to the guard.
    """
    positions = trigger.trigger_positions()
    if len(set(positions)) != 4:
        raise BytesNotIndependent(
            f"trigger bytes for {trigger.path} overlap: {positions}")
    if max(positions) >= len(seed_input):
        raise BytesNotIndependent(
            f"trigger byte {max(positions)} outside the seed input")
    buf = bytearray(seed_input)
    for i, p in enumerate(positions):
        buf[p] = (magic >> (8 * i)) & 0xFF
    return bytes(buf)


def path_independent(program: Program, events: Sequence,
                     trigger_input: bytes, atp_index: int) -> bool:
    """True when the tampered input follows the recorded statement path
    through the attack point.

    Planting the magic can flip a branch that consumes the trigger
    bytes; if that happens before the attack point, the siphons or the
    guard may never run and every measurement taken from the seed
    trace is suspect.  The program may carry edits applied after the
    trace was recorded; statements the trace never saw are ignored.
    """
    known = {e.nid for e in events if isinstance(e, StmtEnter)}
    want = [e.nid for e in events[:atp_index + 1]
            if isinstance(e, StmtEnter)]
    replay = run_program(program, trigger_input)
    got: list[int] = []
    for e in replay.events:
        if isinstance(e, StmtEnter) and e.nid in known:
            got.append(e.nid)
            if len(got) == len(want):
                break
    return got == want


@dataclass(frozen=True)
class BugNames:
    trig: str
    idx: str
    c_globals: tuple[str, ...]   # c0..ck for oc types, () otherwise
    buf: str = ""
    ptr: str = ""
    pay: str = ""
    dum0: str = ""
    dum1: str = ""
    out: str = ""
    flow: str = ""
    sink: str = ""


@dataclass(frozen=True)
class BugRecord:
    """Everything validation and reporting need to know about one bug."""

    bug_id: int
    bug_type: str
    stack_target: str
    func: str
    atp_nid: int
    atp_kind: str
    magic: int
    trigger_path: str
    trigger_func: str
    trigger_nid: int
    trigger_positions: tuple[int, ...]
    attack_path: str
    attack_func: str
    attack_nid: int
    chain_masks: tuple[int, ...]
    stage_anchor_nids: tuple[int, ...]
    dataflow_modified: tuple[str, ...]
    claims: tuple[str, ...]
    input_id: str
    trigger_input: bytes
    names: BugNames
    guard_nid: int
    store_nids: tuple[int, ...]
    consume_nid: int
    region: tuple
    consume_region: tuple
    marker_nid: int = -1

    @property
    def label(self) -> str:
        return f"chaff:{self.bug_id}"


def _names_for(bug_id: int, bug_type: str, stages: int) -> BugNames:
    k = f"_{bug_id}"
    chain = tuple(f"chaff_c{i}{k}" for i in range(stages + 1)) \
        if bug_type in ("oc-stack", "oc-heap") else ()
    return BugNames(
        trig=f"chaff_trig{k}",
        idx=f"chaff_i{k}",
        c_globals=chain,
        buf=f"chaff_buf{k}" if bug_type != "oc-heap" else "",
        ptr=f"chaff_ptr{k}" if bug_type == "oc-heap" else "",
        pay=f"chaff_pay{k}" if bug_type == "unused-stack" else "",
        dum0=f"chaff_dum0{k}" if bug_type == "unused-stack" else "",
        dum1=f"chaff_dum1{k}" if bug_type == "unused-stack" else "",
    )


def _siphon(target: str, dua: DuaRecord) -> str:
    stmt = f"{target} = {dua.path};"
    if dua.guarded:
        # re-evaluating a char-pointer path later in the run can fault if
        # the pointer went null or the string shrank; gate on both
        return (f"if ({dua.guard_base} != 0 && "
                f"strlen({dua.guard_base}) > {dua.guard_offset}) {{ "
                f"{stmt} }}")
    return stmt


def _trigger_siphon(target: str, dua: DuaRecord) -> str:
    """Latch the first nonzero value the trigger site sees.

    The site may sit in a loop and re-execute with bytes from later
    stream positions; a plain store would let those clobber the planted
    magic before the guard runs.  Latching keeps the first observation,
    which is the one the trigger positions describe.  Corpus inputs can
    never latch the magic itself since it avoids every input window.
    """
    return (f"if ({target} == 0) {{ {target} = {dua.path}; }}")


def _overflow_loop(names: BugNames, base: str, start: int, count: int,
                   word: str, byte_rotate: bool) -> str:
    shift = f"({names.idx} & 3) * 8" if byte_rotate else f"{names.idx} * 8"
    return (
        f"{names.idx} = 0;\n"
        f"while ({names.idx} < {count}) {{\n"
        f"    {base}[{start} + {names.idx}] = ({word} >> ({shift})) & 255;\n"
        f"    {names.idx} = {names.idx} + 1;\n"
        f"}}"
    )


def synthesize_bug(program: Program, events: Sequence, cand: BugCandidate,
                   bug_id: int, seed, corpus: Sequence[bytes],
                   seed_input: bytes, *,
                   stage_count: int = DEFAULT_STAGES,
                   flow_depth: int = DEFAULT_FLOW_DEPTH,
                   crash_marker: bool = False,
                   taken_magics: Iterable[int] = ()) -> tuple[Program, BugRecord]:
    """Build and apply the edits for one candidate.

    `events` is the trace of the input the candidate was mined from and
    is only consulted for statement anchors, which survive later edit
    rounds because node ids are stable.  Returns the edited program and
    the bug's dossier; the caller decides whether it survives validation.
    """
    if cand.bug_type not in ("oc-stack", "oc-heap", "unused-stack"):
        raise ValueError(f"unknown bug type {cand.bug_type!r}")
    names = _names_for(bug_id, cand.bug_type, stage_count)
    atp = cand.atp
    func = atp.func

    # a magic that reroutes execution before the guard is useless, so
    # burn through a few draws looking for one the program shrugs off
    avoid = list(taken_magics)
    for _ in range(MAGIC_PATH_TRIES):
        magic = choose_magic(seed, bug_id, corpus, avoid)
        trigger_input = make_trigger_input(seed_input, cand.trigger, magic)
        if path_independent(program, events, trigger_input, atp.trace_index):
            break
        avoid.append(magic)
    else:
        raise BytesNotIndependent(
            f"every trigger value tried for {cand.trigger.path} redirects "
            f"control flow before the attack point")

    chain: Optional[ConstraintChain] = None
    flow: Optional[DataflowPlan] = None

    phase1 = EditScript()
    phase1.add_global(f"unsigned {names.trig};")
    phase1.add_global(f"unsigned {names.idx};")

    if cand.bug_type in ("oc-stack", "oc-heap"):
        attack = cand.attack
        assert attack is not None
        anchors = stage_anchors(events, program,
                                attack.trace_index, atp.trace_index)
        chain = plan_constraint_chain(anchors, stage_count, seed, bug_id,
                                      pad_anchor=attack.nid)
        for g in chain.global_names():
            phase1.add_global(f"unsigned {g};")

    if cand.bug_type == "oc-stack":
        phase1.add_local(func, f"char {names.buf}[4];")
    elif cand.bug_type == "oc-heap":
        phase1.add_global(f"char *{names.ptr};")
    else:
        flow = plan_fake_dataflow(atp, flow_depth, program, bug_id)
        names = replace(
            names,
            out=flow.param_name if flow.modified else "",
            flow=flow.flow_global if not flow.empty else "",
            sink=flow.sink_global if flow.uses_sink() else "")
        phase1.add_global(f"unsigned {names.pay};")
        phase1.add_local(func, f"char {names.dum0}[8];")
        phase1.add_local(func, f"char {names.dum1}[8];")
        phase1.add_local(func, f"char {names.buf}[4];")
        if names.flow:
            phase1.add_global(f"unsigned {names.flow};")
        if names.sink:
            phase1.add_global(f"unsigned {names.sink};")
        for f in flow.modified:
            phase1.add_param(f, f"unsigned *{names.out}")
        for call_nid, arg in flow.call_sites:
            phase1.append_call_arg(call_nid, arg)

    prog1 = apply_edits(program, phase1)

    phase2 = EditScript()
    phase2.insert_after(cand.trigger.nid,
                        _trigger_siphon(names.trig, cand.trigger))
    if chain is not None:
        attack = cand.attack
        phase2.insert_after(attack.nid, _siphon(names.c_globals[0], attack))
        for stage, prev in zip(chain.stages, chain.global_names()):
            phase2.insert_after(
                stage.anchor_nid,
                f"{stage.name} = {prev} & 0x{stage.mask:08x};")
    elif cand.attack is not None:
        phase2.insert_after(cand.attack.nid, _siphon(names.pay, cand.attack))
    else:
        # no separate attack site: the trigger word doubles as payload
        phase2.insert_after(cand.trigger.nid,
                            f"{names.pay} = {names.trig};")

    if cand.bug_type == "oc-stack":
        geo = measure_frame_geometry(prog1, func)
        start = geo.distance_ra if cand.stack_target == "return-address" \
            else geo.distance_saved_fp
        body = _overflow_loop(names, names.buf, start, 4,
                              chain.final_name, byte_rotate=False)
        region = ("stack_range", func,
                  "ra" if cand.stack_target == "return-address" else "saved_fp")
        consume_region: tuple = ()
    elif cand.bug_type == "oc-heap":
        plant = []
        for off, word in ((HEAP_FAKE_OFF, HEAP_FAKE_WORD),
                          (HEAP_NEXT_OFF, HEAP_PREV_WORD)):
            for i in range(4):
                plant.append(
                    f"{names.ptr}[{off + i}] = {(word >> (8 * i)) & 255};")
        loop = _overflow_loop(names, names.ptr, HEAP_CHAIN_OFF, 4,
                              chain.final_name, byte_rotate=False)
        body = (
            f"{names.ptr} = malloc({HEAP_BLOCK});\n"
            f"if ({names.ptr} != 0) {{\n"
            + "\n".join(plant) + "\n"
            + loop + "\n"
            f"}}"
        )
        region = ("heap_offsets", names.ptr, HEAP_SPANS)
        consume_region = ()
    else:
        layout = static_frame_layout(prog1.function(func))
        start = layout.offsets[names.buf] - layout.offsets[names.dum1]
        # the spray must clear the copied-args band and the buffer itself
        # before it reaches the dummies; anything else means padding crept
        # between the planted locals
        expected = 4 + 4 * len(prog1.function(func).params)
        if start != expected:
            raise AssertionError(
                f"planted locals not contiguous in {func}: "
                f"{start} != {expected}")
        body = _overflow_loop(names, names.buf, start, DUMMY_SPAN,
                              names.pay, byte_rotate=True)
        assert flow is not None
        if names.out:
            body += f"\n*{names.out} = {names.dum1}[0];"
        elif names.flow:
            body += f"\n{names.flow} = {names.dum1}[0];"
        if crash_marker:
            # the denominator is zero exactly when the guard passed, so
            # the bug announces itself with a clean arithmetic fault
            # instead of staying silent
            body += (f"\n{names.idx} = {names.idx} / "
                     f"({names.trig} - 0x{magic:08x});")
        region = ("locals", func, (names.dum1, names.dum0))
        targets = tuple(n for n in (names.flow, names.sink) if n)
        consume_region = ("global", targets) if targets else ()

    phase2.insert_before(
        atp.nid,
        f"if ({names.trig} == 0x{magic:08x}) {{\n{body}\n}}")
    prog2 = apply_edits(prog1, phase2)

    guard_nid, store_nids, consume_nid, marker_nid = _locate_injected(
        prog2, names, prog1.next_id, magic)
    claims: tuple[str, ...]
    if cand.bug_type == "oc-stack":
        claims = (func,)
    elif cand.bug_type == "oc-heap":
        claims = ()
    else:
        assert flow is not None
        claims = tuple(dict.fromkeys((func,) + flow.modified))

    record = BugRecord(
        bug_id=bug_id,
        bug_type=cand.bug_type,
        stack_target=cand.stack_target,
        func=func,
        atp_nid=atp.nid,
        atp_kind=atp.kind,
        magic=magic,
        trigger_path=cand.trigger.path,
        trigger_func=cand.trigger.func,
        trigger_nid=cand.trigger.nid,
        trigger_positions=cand.trigger.trigger_positions(),
        attack_path=cand.attack.path if cand.attack else "",
        attack_func=cand.attack.func if cand.attack else "",
        attack_nid=cand.attack.nid if cand.attack else -1,
        chain_masks=chain.masks if chain else (),
        stage_anchor_nids=tuple(s.anchor_nid for s in chain.stages)
        if chain else (),
        dataflow_modified=flow.modified if flow else (),
        claims=claims,
        input_id=cand.input_id,
        trigger_input=trigger_input,
        names=names,
        guard_nid=guard_nid,
        store_nids=store_nids,
        consume_nid=consume_nid,
        region=region,
        consume_region=consume_region,
        marker_nid=marker_nid,
    )
    return prog2, record


def _locate_injected(prog: Program, names: BugNames, low_nid: int,
                     magic: int) -> tuple[int, tuple[int, ...], int, int]:
    """Find the guard, the corruption stores, the consume statement, and
    the crash marker among the freshly numbered nodes."""
    guard_nid = -1
    stores: list[int] = []
    consume_nid = -1
    marker_nid = -1
    overflow_bases = {n for n in (names.buf, names.ptr) if n}
    for s in program_stmts(prog):
        if s.nid < low_nid:
            continue
        if isinstance(s, If) and isinstance(s.cond, Binary) \
                and s.cond.op == "==" \
                and isinstance(s.cond.left, Ident) \
                and s.cond.left.name == names.trig \
                and isinstance(s.cond.right, IntLit) \
                and s.cond.right.value == magic:
            # the zero-latch on the same global shares this shape; only
            # the literal tells them apart
            guard_nid = s.nid
        if not isinstance(s, ExprStmt) or not isinstance(s.expr, Assign):
            continue
        t = s.expr.target
        if isinstance(t, Index) and isinstance(t.base, Ident) \
                and t.base.name in overflow_bases:
            stores.append(s.nid)
        elif isinstance(t, Unary) and t.op == "*" \
                and isinstance(t.operand, Ident) \
                and t.operand.name == names.out:
            consume_nid = s.nid
        elif isinstance(t, Ident) and names.flow and t.name == names.flow:
            consume_nid = s.nid
        elif isinstance(t, Ident) and t.name == names.idx \
                and isinstance(s.expr.value, Binary) \
                and s.expr.value.op == "/":
            # the only division the injector ever emits
            marker_nid = s.nid
    return guard_nid, tuple(stores), consume_nid, marker_nid


def audit_config_for(records: Iterable[BugRecord]) -> AuditConfig:
    """Tag every bug's corruption stores for the non-escape and
    region-containment checks."""
    cfg = AuditConfig()
    for r in records:
        for nid in r.store_nids:
            cfg.label_tags[nid] = r.label
            cfg.region_tags[nid] = (str(r.bug_id), r.region)
        if r.consume_nid >= 0 and r.consume_region:
            cfg.region_tags[r.consume_nid] = (str(r.bug_id), r.consume_region)
    return cfg
