"""Reference interpreter with byte-level taint and frame-accurate stack layout.

Execution model
---------------
Values are 32-bit unsigned words.  Each carries four per-byte taint sets
(input stream offsets, plus string labels in audit mode) and four per-byte
computation depths.  Copies (loads, stores, assignments, argument passing,
memcpy) preserve both per byte.  Arithmetic unions every operand byte into
every result byte and bumps the depth to one past the deepest tainted
operand byte.  Char loads sign-extend and replicate byte zero's taint at
unchanged depth; char stores keep byte zero only.

Stack frames are real memory.  A call allocates an activation record of
two words at B: the caller's frame-pointer register at [B, B+4) and a
synthetic return address CODE_BASE + 16 * serial at [B+4, B+8), where
serial counts activations from program start.  Arguments are copied into
4-byte slots inside the callee frame, so every parameter byte is ordinary
addressable stack data.  Locals and copied arguments live below B:

    slot(name) starts at B - off(name)
    off(local_i)   = sum of sizes of locals declared up to and including i,
                     for every local except the last declared
    off(param_j)   = S' + 4*j   (j is 1-based, S' = sum of those local sizes)
    off(last local)= S + C      (S = all local sizes, C = 4 * param count)

so the last-declared local sits at the frame bottom with the copied
arguments and the other locals packed between it and the saved registers.
The frame spans [B - S - C, B + 8).

Returns read the saved frame pointer and return address back from the
activation record at its true base.  A return address that does not match
the expected synthetic value faults as a jump to an unmapped pc; a
clobbered saved frame pointer takes effect silently and crashes the caller
at its next local or parameter access, or never, if the caller touches no
frame slot before returning.

Other fault and error surfaces: reads and writes outside the mapped
regions fault; reading never-written locals or heap bytes is an
uninitialized-read model error; division or modulo by zero faults; the
allocator aborts become faults attributed to the allocating statement; a
step budget bounds runaway execution.

Observation stream
------------------
When tracing is on the machine emits one event per statement entry,
condition evaluation (with the condition's unioned taint), call, return,
allocation, free, input read, and canonically-pathed lvalue access.
Lvalue events carry an evidence bit: writes are self-evident, parameters
and non-pointer global paths are always available, and anything else
requires a strictly-earlier access to the same path whose conditional
scope chain prefixes the current statement's chain.  That bit is what
makes "a snippet inserted right after this statement may legally name
this path" checkable from a single trace.

Audit mode
----------
An AuditConfig tags statement node ids.  Stores executed under a
label-tagged statement add the tag string to every written byte's taint
set, so label flow can be checked against branch and output taints.
Stores under a region-tagged statement are logged (address, width, value)
and checked against a declared target region; writes that land outside
are collected as violations, not faults.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..frontend.nodes import (
    ArrT,
    Assign,
    Binary,
    Block,
    Call,
    CharLit,
    CharT,
    Empty,
    Expr,
    ExprStmt,
    FnPtrT,
    For,
    FuncDef,
    Ident,
    If,
    Index,
    IntLit,
    Member,
    Program,
    PtrT,
    Return,
    StrLit,
    Stmt,
    StructT,
    Unary,
    UnsignedT,
    VarDecl,
    While,
    is_pointer,
    scalar_width,
    type_align,
    type_size,
)
# Module object, not names: chaffc.heap imports chaffc.interp.memory, which
# initializes this package, which imports this module.  Deferring attribute
# lookups to run time keeps that cycle harmless in both import orders.
from .. import heap as heapmod
from .memory import (
    CODE_BASE,
    GLOBALS_BASE,
    MASK32,
    RODATA_BASE,
    STACK_LIMIT,
    STACK_TOP,
    BudgetExceeded,
    Memory,
    MemoryFault,
    UninitializedRead,
    u32_bytes,
)
from .trace import (
    BranchEval,
    CallEnter,
    HeapAlloc,
    HeapFree,
    InputRead,
    LvalueObserved,
    StmtEnter,
)
from .trace import Return as ReturnEvent

EMPTY = frozenset()
NO_TAINT = (EMPTY, EMPTY, EMPTY, EMPTY)
ZERO_TCN = (0, 0, 0, 0)

DEFAULT_MAX_STEPS = 10_000_000
MAX_CALL_DEPTH = 64


@dataclass(frozen=True, slots=True)
class Value:
    v: int
    taint: tuple = NO_TAINT
    tcn: tuple = ZERO_TCN

    def tainted(self) -> bool:
        return any(self.taint)


def _sext8(b: int) -> int:
    return (b - 256 if b >= 128 else b) & MASK32


def _s32(v: int) -> int:
    return v - (1 << 32) if v >= (1 << 31) else v


def _combine(result: int, *operands: Value) -> Value:
    """Arithmetic taint rule: union every operand byte everywhere, depth
    one past the deepest tainted byte."""
    union = frozenset().union(*(t for o in operands for t in o.taint))
    if not union:
        return Value(result & MASK32)
    depth = 1 + max(o.tcn[i] for o in operands for i in range(4) if o.taint[i])
    return Value(result & MASK32, (union,) * 4, (depth,) * 4)


# ---------------------------------------------------------------------------
# Frame layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrameLayout:
    offsets: dict[str, int]        # name -> distance of slot start below base
    sizes: dict[str, int]
    types: dict[str, object]
    frame_size: int
    param_names: tuple[str, ...]


def static_frame_layout(func: FuncDef) -> FrameLayout:
    decls = func.body.decls
    params = func.params
    copied = 4 * len(params)
    offsets: dict[str, int] = {}
    sizes: dict[str, int] = {}
    types: dict[str, object] = {}
    acc = 0
    for d in decls[:-1]:
        acc += type_size(d.ty)
        offsets[d.name] = acc
        sizes[d.name] = type_size(d.ty)
        types[d.name] = d.ty
    s_head = acc
    for j, p in enumerate(params, start=1):
        offsets[p.name] = s_head + 4 * j
        sizes[p.name] = 4
        types[p.name] = p.ty
    s_all = sum(type_size(d.ty) for d in decls)
    if decls:
        last = decls[-1]
        offsets[last.name] = s_all + copied
        sizes[last.name] = type_size(last.ty)
        types[last.name] = last.ty
    return FrameLayout(offsets, sizes, types, s_all + copied, tuple(p.name for p in params))


@dataclass(frozen=True)
class FrameGeometry:
    """Distances a buffer appended as the newest last-declared local must
    skip to reach the saved registers, and the width of the copied-args
    band at the frame bottom."""

    distance_saved_fp: int
    distance_ra: int
    copied_args_skip: int


def measure_frame_geometry(program: Program, func_name: str) -> FrameGeometry:
    f = program.function(func_name)
    s_all = sum(type_size(d.ty) for d in f.body.decls)
    copied = 4 * len(f.params)
    return FrameGeometry(s_all + copied, s_all + copied + 4, copied)


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass
class FaultReport:
    kind: str           # read-unmapped | write-unmapped | pc-unmapped |
                        # allocator-abort | div-zero
    addr: int
    nid: int
    func: str
    detail: str = ""


@dataclass
class AuditConfig:
    # Statement nid -> taint label added to bytes written by that statement.
    label_tags: dict[int, str] = field(default_factory=dict)
    # Statement nid -> (bug id, region spec).  Region specs:
    #   ("stack_range", func, "saved_fp" | "ra")
    #   ("locals", func, (name, ...))
    #   ("heap_offsets", ptr_global, ((offset, length), ...))
    #   ("global", (name, ...))
    region_tags: dict[int, tuple[str, tuple]] = field(default_factory=dict)


@dataclass
class ExecResult:
    status: str                     # ok | fault | error
    output: bytes
    output_taint: tuple
    fault: FaultReport | None
    error: str | None
    events: list | None
    steps: int
    serial_count: int
    heap_allocs: int
    heap_frees: int
    audit_writes: dict[str, list[tuple[int, int, int]]]
    audit_violations: list[str]


# ---------------------------------------------------------------------------
# Internal control flow
# ---------------------------------------------------------------------------


class _ReturnSignal(Exception):
    def __init__(self, value: Value) -> None:
        self.value = value


class _Fault(Exception):
    def __init__(self, report: FaultReport) -> None:
        self.report = report


class ExecError(Exception):
    """Model-level execution error (not a simulated crash)."""


@dataclass
class _LRef:
    addr: int
    ty: object
    path: str | None
    root: str
    binding: str                    # local | param | global | deref
    deref: bool
    string_rel: bool = False
    base_path: str = ""
    base_offset: int = 0


@dataclass
class _Activation:
    func: str
    serial: int
    base: int
    layout: FrameLayout
    refs: dict[str, set] = field(default_factory=dict)
    pending: list[tuple[str, tuple]] = field(default_factory=list)


_EMPTY_LAYOUT = FrameLayout({}, {}, {}, 0, ())


class Machine:
    def __init__(
        self,
        program: Program,
        input_bytes: bytes,
        *,
        trace: bool = True,
        audit: AuditConfig | None = None,
        max_steps: int = DEFAULT_MAX_STEPS,
    ) -> None:
        self.program = program
        self.input = bytes(input_bytes)
        self.input_pos = 0
        self.mem = Memory()
        self.heap = heapmod.HeapModel(self.mem)
        self.events: list | None = [] if trace else None
        self.audit = audit
        self.max_steps = max_steps
        self.steps = 0
        self.output = bytearray()
        self.output_taint: list = []
        self.serial = 0
        self.fp = 0
        self.frames: list[_Activation] = []
        self.cur_nid = 0
        self.cur_scope: tuple = ()
        self.funcs = {f.name: f for f in program.functions()}
        self.layouts = {f.name: static_frame_layout(f) for f in program.functions()}
        self.audit_writes: dict[str, list[tuple[int, int, int]]] = {}
        self.audit_violations: list[str] = []
        self._ran = False

        self.globals_map: dict[str, tuple[int, object]] = {}
        addr = GLOBALS_BASE
        for g in program.globals():
            d = g.decl
            a = type_align(d.ty)
            addr = (addr + a - 1) // a * a
            self.globals_map[d.name] = (addr, d.ty)
            addr += type_size(d.ty)

        # Function "addresses" live off the 16-byte return-address grid so a
        # return address can never masquerade as a callable target.
        self.func_addrs: dict[str, int] = {}
        self.addr_funcs: dict[int, str] = {}
        for i, f in enumerate(program.functions()):
            fa = CODE_BASE + 4 + 16 * i
            self.func_addrs[f.name] = fa
            self.addr_funcs[fa] = f.name

        self.str_addrs: dict[bytes, int] = {}
        self.rodata_next = RODATA_BASE

    # -- plumbing -------------------------------------------------------------

    def _tick(self) -> None:
        self.steps += 1
        if self.steps > self.max_steps:
            raise BudgetExceeded(f"step budget {self.max_steps} exceeded")

    def _emit(self, ev) -> None:
        if self.events is not None:
            self.events.append(ev)

    def _act(self) -> _Activation:
        return self.frames[-1]

    def _flush_refs(self) -> None:
        act = self._act()
        for path, chain in act.pending:
            act.refs.setdefault(path, set()).add(chain)
        act.pending.clear()

    def _intern_string(self, data: bytes) -> int:
        addr = self.str_addrs.get(data)
        if addr is None:
            addr = self.rodata_next
            self.mem.write(addr, data + b"\x00")
            self.rodata_next = addr + len(data) + 1
            self.str_addrs[data] = addr
        return addr

    # -- setup and top level --------------------------------------------------

    def run(self) -> ExecResult:
        if self._ran:
            raise RuntimeError("a Machine runs once")
        self._ran = True
        status, fault, error = "ok", None, None
        try:
            self._init_globals()
            self._start()
        except _Fault as f:
            status, fault = "fault", f.report
        except MemoryFault as f:
            status = "fault"
            fault = FaultReport(f.kind, f.addr, self.cur_nid, self._func_name())
        except heapmod.AllocatorAbort as a:
            status = "fault"
            fault = FaultReport(
                "allocator-abort", 0, self.cur_nid, self._func_name(), a.message)
        except UninitializedRead as u:
            status, error = "error", f"uninitialized-read:0x{u.addr:08x}"
        except BudgetExceeded:
            status, error = "error", "budget-exceeded"
        except heapmod.HeapEscape as h:
            status, error = "error", f"model-escape: {h}"
        except ExecError as x:
            status, error = "error", str(x)
        return ExecResult(
            status=status,
            output=bytes(self.output),
            output_taint=tuple(self.output_taint),
            fault=fault,
            error=error,
            events=self.events,
            steps=self.steps,
            serial_count=self.serial,
            heap_allocs=self.heap.alloc_count,
            heap_frees=self.heap.free_count,
            audit_writes=self.audit_writes,
            audit_violations=self.audit_violations,
        )

    def _func_name(self) -> str:
        return self.frames[-1].func if self.frames else "_start"

    def _init_globals(self) -> None:
        for name, (addr, ty) in self.globals_map.items():
            self.mem.write(addr, b"\x00" * type_size(ty))
        for g in self.program.globals():
            d = g.decl
            if d.init is None:
                continue
            addr, ty = self.globals_map[d.name]
            if isinstance(d.init, CharLit):
                v = _sext8(d.init.value)
            else:
                v = d.init.value & MASK32
            if isinstance(ty, CharT):
                self.mem.write(addr, bytes([v & 0xFF]))
            else:
                self.mem.write(addr, u32_bytes(v))

    def _start(self) -> None:
        if "main" not in self.funcs:
            raise ExecError("no-main")
        b0 = STACK_TOP - 8
        self.mem.write(b0, u32_bytes(0))
        self.mem.write(b0 + 4, u32_bytes(CODE_BASE))
        self.fp = b0
        self.frames.append(_Activation("_start", 0, b0, _EMPTY_LAYOUT))
        self.call_function("main", [], call_nid=0, indirect=False)

    # -- calls ------------------------------------------------------------------

    def call_function(self, name: str, args: list[Value], call_nid: int,
                      indirect: bool) -> Value:
        self._tick()
        f = self.funcs[name]
        layout = self.layouts[name]
        caller = self._act()
        caller_bottom = caller.base - caller.layout.frame_size
        base = caller_bottom - 8
        if len(self.frames) >= MAX_CALL_DEPTH or base - layout.frame_size < STACK_LIMIT:
            raise ExecError("stack-overflow")
        self.serial += 1
        serial = self.serial
        ra = CODE_BASE + 16 * serial
        self.mem.write(base, u32_bytes(self.fp))
        self.mem.write(base + 4, u32_bytes(ra))
        act = _Activation(name, serial, base, layout)
        for p, a in zip(f.params, args):
            slot = (base - layout.offsets[p.name]) & MASK32
            if isinstance(p.ty, CharT):
                v = _sext8(a.v & 0xFF)
                self.mem.write(slot, u32_bytes(v), [a.taint[0]] * 4, [a.tcn[0]] * 4)
            else:
                self.mem.write(slot, u32_bytes(a.v), list(a.taint), list(a.tcn))
        self.fp = base
        self.frames.append(act)
        self._emit(CallEnter(name, base, serial, indirect, call_nid))
        for p in f.params:
            act.refs[p.name] = {()}
        rv = Value(0)
        try:
            self._exec_decls(f.body)
            for s in f.body.stmts:
                self.exec_stmt(s)
        except _ReturnSignal as r:
            rv = r.value
        self._emit(ReturnEvent(name, serial))
        restored = self.mem.load_u32(act.base)
        ret_view = self.mem.load_u32(act.base + 4)
        self.frames.pop()
        ret = int.from_bytes(ret_view.data, "little")
        if ret != ra:
            raise _Fault(FaultReport("pc-unmapped", ret, self.cur_nid, name))
        self.fp = int.from_bytes(restored.data, "little")
        return rv

    def _exec_decls(self, body: Block) -> None:
        for d in body.decls:
            if d.init is None:
                continue
            self._tick()
            self.cur_nid = d.nid
            self.cur_scope = ()
            rv = self.eval(d.init)
            lv = self._var_lref(d.name)
            self._store_scalar(d.nid, lv, rv)
            self._flush_refs()

    # -- statements ----------------------------------------------------------------

    def exec_stmt(self, s: Stmt) -> None:
        self._tick()
        self._emit(StmtEnter(s.nid, s.func))
        self.cur_nid = s.nid
        self.cur_scope = s.scope_key
        if isinstance(s, ExprStmt):
            self.eval(s.expr)
            self._flush_refs()
        elif isinstance(s, Block):
            for sub in s.stmts:
                self.exec_stmt(sub)
        elif isinstance(s, If):
            v = self._eval_branch(s, s.cond)
            if v.v != 0:
                self.exec_stmt(s.then)
            elif s.els is not None:
                self.exec_stmt(s.els)
        elif isinstance(s, While):
            while True:
                self.cur_nid, self.cur_scope = s.nid, s.scope_key
                v = self._eval_branch(s, s.cond)
                if v.v == 0:
                    break
                self.exec_stmt(s.body)
        elif isinstance(s, For):
            if s.init is not None:
                self.eval(s.init)
                self._flush_refs()
            while True:
                self.cur_nid, self.cur_scope = s.nid, s.scope_key
                if s.cond is not None:
                    v = self._eval_branch(s, s.cond)
                    if v.v == 0:
                        break
                self.exec_stmt(s.body)
                self.cur_nid, self.cur_scope = s.nid, s.scope_key
                if s.step is not None:
                    self.eval(s.step)
                    self._flush_refs()
        elif isinstance(s, Return):
            v = Value(0)
            if s.value is not None:
                v = self.eval(s.value)
            self._flush_refs()
            raise _ReturnSignal(v)
        elif isinstance(s, Empty):
            pass
        else:
            raise ExecError(f"unexecutable statement {type(s).__name__}")

    def _eval_branch(self, s: Stmt, cond: Expr) -> Value:
        v = self.eval(cond)
        union = frozenset().union(*v.taint)
        self._emit(BranchEval(s.nid, s.func, v.v, union))
        self._flush_refs()
        return v

    # -- expressions -----------------------------------------------------------------

    def eval(self, e: Expr) -> Value:
        self._tick()
        if isinstance(e, IntLit):
            return Value(e.value & MASK32)
        if isinstance(e, CharLit):
            return Value(_sext8(e.value))
        if isinstance(e, StrLit):
            return Value(self._intern_string(e.value))
        if isinstance(e, Ident):
            if e.binding == "function":
                return Value(self.func_addrs[e.name])
            return self.read_lvalue(e)
        if isinstance(e, Unary):
            return self._eval_unary(e)
        if isinstance(e, Binary):
            return self._eval_binary(e)
        if isinstance(e, Assign):
            return self._eval_assign(e)
        if isinstance(e, Call):
            return self._eval_call(e)
        if isinstance(e, (Index, Member)):
            return self.read_lvalue(e)
        raise ExecError(f"unevaluable expression {type(e).__name__}")

    def _eval_unary(self, e: Unary) -> Value:
        if e.op == "&":
            lv = self.lvalue(e.operand)
            self._observe(e.nid, lv, "addrof", width=type_size(lv.ty))
            return Value(lv.addr & MASK32)
        if e.op == "*":
            return self.read_lvalue(e)
        v = self.eval(e.operand)
        if e.op == "-":
            return _combine(-v.v, v)
        if e.op == "~":
            return _combine(~v.v, v)
        if e.op == "!":
            return _combine(0 if v.v else 1, v)
        raise ExecError(f"unknown unary {e.op}")

    def _eval_binary(self, e: Binary) -> Value:
        op = e.op
        if op in ("&&", "||"):
            l = self.eval(e.left)
            if op == "&&" and l.v == 0:
                return _combine(0, l)
            if op == "||" and l.v != 0:
                return _combine(1, l)
            r = self.eval(e.right)
            return _combine(1 if r.v else 0, l, r)
        l = self.eval(e.left)
        r = self.eval(e.right)
        lt, rt = _decayed(e.left.ty), _decayed(e.right.ty)
        if op in ("+", "-") and (is_pointer(lt) or is_pointer(rt)):
            if is_pointer(lt):
                scale = type_size(lt.base) if isinstance(lt, PtrT) else 1
                res = l.v + scale * _s32(r.v) if op == "+" else l.v - scale * _s32(r.v)
            else:
                scale = type_size(rt.base) if isinstance(rt, PtrT) else 1
                res = scale * _s32(l.v) + r.v
            return _combine(res, l, r)
        unsigned = (
            isinstance(lt, UnsignedT) or isinstance(rt, UnsignedT)
            or is_pointer(lt) or is_pointer(rt)
        )
        res = _arith(op, l.v, r.v, unsigned, self)
        return _combine(res, l, r)

    def _eval_assign(self, e: Assign) -> Value:
        rv = self.eval(e.value)
        lv = self.lvalue(e.target)
        if e.op in ("+=", "-="):
            w = scalar_width(lv.ty)
            view = self.mem.read(lv.addr, w)
            if w == 1:
                old = Value(_sext8(view.data[0]), (view.taint[0],) * 4, (view.tcn[0],) * 4)
            else:
                old = Value(int.from_bytes(view.data, "little"), view.taint, view.tcn)
            self._observe(e.target.nid, lv, "read", taint=view.taint, tcn=view.tcn, width=w)
            scale = type_size(lv.ty.base) if isinstance(lv.ty, PtrT) else 1
            delta = scale * _s32(rv.v)
            res = old.v + delta if e.op == "+=" else old.v - delta
            final = _combine(res, old, rv)
        else:
            final = rv
        self._store_scalar(e.target.nid, lv, final)
        return final

    # -- lvalues --------------------------------------------------------------------

    def _var_slot(self, name: str) -> tuple[int, object, str]:
        act = self._act()
        if name in act.layout.offsets:
            binding = "param" if name in act.layout.param_names else "local"
            return (self.fp - act.layout.offsets[name]) & MASK32, act.layout.types[name], binding
        if name in self.globals_map:
            addr, ty = self.globals_map[name]
            return addr, ty, "global"
        raise ExecError(f"unbound variable {name}")

    def _var_lref(self, name: str) -> _LRef:
        addr, ty, binding = self._var_slot(name)
        return _LRef(addr, ty, name, name, binding, deref=False)

    def lvalue(self, e: Expr) -> _LRef:
        if isinstance(e, Ident):
            return self._var_lref(e.name)
        if isinstance(e, Unary) and e.op == "*":
            pv = self.eval(e.operand)
            ty = e.ty
            path, string_rel, bp, bo, root = self._deref_path(e.operand, pv.v, ty)
            return _LRef(pv.v & MASK32, ty, path, root, "deref", True, string_rel, bp, bo)
        if isinstance(e, Index):
            base = e.base
            if isinstance(base, Ident) and isinstance(base.ty, ArrT):
                idx = _s32(self.eval(e.index).v)
                slot, aty, binding = self._var_slot(base.name)
                elem = aty.elem
                addr = (slot + idx * type_size(elem)) & MASK32
                return _LRef(addr, elem, f"{base.name}[{idx}]", base.name, binding, False)
            bv = self.eval(base)
            idx = _s32(self.eval(e.index).v)
            elem = e.ty
            addr = (bv.v + idx * type_size(elem)) & MASK32
            path = None
            string_rel = False
            bp, bo = "", 0
            root = ""
            if isinstance(base, Ident):
                root = base.name
                path = f"{base.name}[{idx}]"
                if isinstance(base.ty, PtrT) and isinstance(elem, CharT):
                    string_rel, bp, bo = True, base.name, idx
            return _LRef(addr, elem, path, root, "deref", True, string_rel, bp, bo)
        if isinstance(e, Member):
            if e.arrow:
                pv = self.eval(e.base)
                addr = (pv.v + e.offset) & MASK32
                path = f"{e.base.name}->{e.name}" if isinstance(e.base, Ident) else None
                root = e.base.name if isinstance(e.base, Ident) else ""
                return _LRef(addr, e.ty, path, root, "deref", True)
            blv = self.lvalue(e.base)
            addr = (blv.addr + e.offset) & MASK32
            path = f"{blv.path}.{e.name}" if isinstance(e.base, Ident) else None
            return _LRef(addr, e.ty, path, blv.root, blv.binding, blv.deref)
        raise ExecError(f"not an lvalue: {type(e).__name__}")

    def _deref_path(self, operand: Expr, target: int, ty) -> tuple:
        """Canonical path for *expr when the pointer is rooted at a named
        variable: *p is p[0], *(p+k) is p[k]."""
        root_ident = None
        if isinstance(operand, Ident):
            root_ident = operand
        elif isinstance(operand, Binary) and operand.op in ("+", "-"):
            for side in (operand.left, operand.right):
                if isinstance(side, Ident) and is_pointer(_decayed(side.ty)):
                    root_ident = side
                    break
        if root_ident is None or root_ident.binding == "function":
            return None, False, "", 0, ""
        name = root_ident.name
        try:
            slot, vty, _ = self._var_slot(name)
        except ExecError:
            return None, False, "", 0, ""
        if isinstance(vty, ArrT):
            base_val = slot
            is_char_ptr = False
        else:
            base_val = int.from_bytes(
                self.mem.read(slot, 4, require_init=False).data, "little")
            is_char_ptr = isinstance(vty, PtrT) and isinstance(vty.base, CharT)
        esize = type_size(ty)
        delta = _s32((target - base_val) & MASK32)
        if esize == 0 or delta % esize:
            return None, False, "", 0, ""
        idx = delta // esize
        path = f"{name}[{idx}]"
        if is_char_ptr and isinstance(ty, CharT):
            return path, True, name, idx, name
        return path, False, "", 0, name

    def read_lvalue(self, e: Expr) -> Value:
        lv = self.lvalue(e)
        if isinstance(lv.ty, ArrT):
            self._observe(e.nid, lv, "addrof", width=type_size(lv.ty))
            return Value(lv.addr)
        if isinstance(lv.ty, StructT):
            raise ExecError("whole-struct read")
        w = scalar_width(lv.ty)
        view = self.mem.read(lv.addr, w)
        self._observe(e.nid, lv, "read", taint=view.taint, tcn=view.tcn, width=w)
        if w == 1:
            return Value(_sext8(view.data[0]), (view.taint[0],) * 4, (view.tcn[0],) * 4)
        return Value(int.from_bytes(view.data, "little"), view.taint, view.tcn)

    def _store_scalar(self, nid: int, lv: _LRef, val: Value) -> None:
        w = scalar_width(lv.ty)
        if w == 1:
            data = bytes([val.v & 0xFF])
            taints = [val.taint[0]]
            tcns = [val.tcn[0]]
        else:
            data = u32_bytes(val.v)
            taints = list(val.taint)
            tcns = list(val.tcn)
        if self.audit is not None:
            label = self.audit.label_tags.get(self.cur_nid)
            if label is not None:
                taints = [t | {label} for t in taints]
            tag = self.audit.region_tags.get(self.cur_nid)
            if tag is not None:
                bug, spec = tag
                self._check_region(bug, spec, lv.addr, w)
                self.audit_writes.setdefault(bug, []).append((lv.addr, w, val.v & MASK32))
        self.mem.write(lv.addr, data, taints, tcns)
        self._observe(nid, lv, "write", taint=tuple(taints), tcn=tuple(tcns), width=w)

    def _observe(self, nid: int, lv: _LRef, kind: str, taint: tuple = (),
                 tcn: tuple = (), width: int = 0) -> None:
        if lv.path is None:
            return
        act = self._act()
        if kind == "write":
            evidence = True
        else:
            evidence = self._evidence(lv)
        self._emit(LvalueObserved(
            nid, act.func, act.serial, lv.path, lv.addr & MASK32, width, kind,
            evidence, taint, tcn, lv.string_rel, lv.base_path, lv.base_offset))
        act.pending.append((lv.path, self.cur_scope))

    def _evidence(self, lv: _LRef) -> bool:
        if lv.binding == "param":
            return True
        if lv.binding == "global" and not lv.deref:
            return True
        chain = self.cur_scope
        for c in self._act().refs.get(lv.path, ()):
            if chain[: len(c)] == c:
                return True
        return False

    # -- calls and intrinsics ----------------------------------------------------------

    def _eval_call(self, e: Call) -> Value:
        name = e.callee
        if e.indirect:
            lv = self._var_lref(name)
            view = self.mem.read(lv.addr, 4)
            self._observe(e.nid, lv, "read", taint=view.taint, tcn=view.tcn, width=4)
            target_addr = int.from_bytes(view.data, "little")
            args = [self.eval(a) for a in e.args]
            target = self.addr_funcs.get(target_addr)
            if target is None:
                raise _Fault(FaultReport(
                    "pc-unmapped", target_addr, self.cur_nid, self._func_name()))
            return self.call_function(target, args, e.nid, indirect=True)
        if name in self.funcs:
            args = [self.eval(a) for a in e.args]
            return self.call_function(name, args, e.nid, indirect=False)
        return self._intrinsic(e)

    def _intrinsic(self, e: Call) -> Value:
        name = e.callee
        args = [self.eval(a) for a in e.args]
        if name == "malloc":
            try:
                ptr = self.heap.malloc(args[0].v)
            except heapmod.AllocatorAbort as a:
                raise _Fault(FaultReport(
                    "allocator-abort", 0, self.cur_nid, self._func_name(), a.message))
            self._emit(HeapAlloc(e.nid, args[0].v, ptr))
            return Value(ptr)
        if name == "free":
            try:
                self.heap.free(args[0].v)
            except heapmod.AllocatorAbort as a:
                raise _Fault(FaultReport(
                    "allocator-abort", 0, self.cur_nid, self._func_name(), a.message))
            self._emit(HeapFree(e.nid, args[0].v))
            return Value(0)
        if name == "strlen":
            return self._strlen(args[0])
        if name == "memcpy":
            dst, src, n = args[0].v, args[1].v, args[2].v
            for i in range(n):
                self._tick()
                view = self.mem.read((src + i) & MASK32, 1)
                self.mem.write((dst + i) & MASK32, view.data,
                               list(view.taint), list(view.tcn))
            return Value(0)
        if name == "read_input":
            return self._read_input(e, args[0].v, args[1].v)
        if name == "write_output":
            ptr, n = args[0].v, args[1].v
            view = self.mem.read(ptr, n)
            self.output.extend(view.data)
            self.output_taint.extend(view.taint)
            return Value(0)
        if name == "print_int":
            v = args[0]
            text = str(_s32(v.v)).encode() + b"\n"
            union = frozenset().union(*v.taint)
            self.output.extend(text)
            self.output_taint.extend([union] * len(text))
            return Value(0)
        raise ExecError(f"unknown intrinsic {name}")

    def _strlen(self, p: Value) -> Value:
        addr = p.v
        union: frozenset = frozenset()
        depth = 0
        n = 0
        while True:
            self._tick()
            view = self.mem.read((addr + n) & MASK32, 1)
            if view.taint[0]:
                union = union | view.taint[0]
                depth = max(depth, view.tcn[0])
            if view.data[0] == 0:
                break
            n += 1
        if not union:
            return Value(n)
        return Value(n, (union,) * 4, (1 + depth,) * 4)

    def _read_input(self, e: Call, buf: int, count: int) -> Value:
        start = self.input_pos
        n = min(count, len(self.input) - start)
        if n < 0:
            n = 0
        for i in range(n):
            self._tick()
            b = self.input[start + i]
            self.mem.write((buf + i) & MASK32, bytes([b]),
                           [frozenset({start + i})], [0])
        self.input_pos = start + n
        self._emit(InputRead(start, n, buf))
        return Value(n)

    # -- audit regions ---------------------------------------------------------

    def _check_region(self, bug: str, spec: tuple, addr: int, width: int) -> None:
        ranges = self._resolve_region(spec)
        if ranges is None:
            self.audit_violations.append(
                f"{bug}: region {spec[0]} unresolvable at write 0x{addr:08x}")
            return
        if not any(lo <= addr and addr + width <= hi for lo, hi in ranges):
            self.audit_violations.append(
                f"{bug}: write 0x{addr:08x}+{width} outside {spec[0]} region")

    def _resolve_region(self, spec: tuple) -> list[tuple[int, int]] | None:
        kind = spec[0]
        if kind == "stack_range":
            _, fname, which = spec
            for act in reversed(self.frames):
                if act.func == fname:
                    b = act.base
                    return [(b, b + 4)] if which == "saved_fp" else [(b + 4, b + 8)]
            return None
        if kind == "locals":
            _, fname, names = spec
            for act in reversed(self.frames):
                if act.func == fname:
                    out = []
                    for n in names:
                        if n not in act.layout.offsets:
                            return None
                        lo = (act.base - act.layout.offsets[n]) & MASK32
                        out.append((lo, lo + act.layout.sizes[n]))
                    return out
            return None
        if kind == "heap_offsets":
            _, gname, spans = spec
            if gname not in self.globals_map:
                return None
            base = self.mem.raw_u32(self.globals_map[gname][0])
            return [(base + off, base + off + ln) for off, ln in spans]
        if kind == "global":
            _, names = spec
            out = []
            for n in names:
                if n not in self.globals_map:
                    return None
                a, ty = self.globals_map[n]
                out.append((a, a + type_size(ty)))
            return out
        return None


# ---------------------------------------------------------------------------
# Arithmetic core
# ---------------------------------------------------------------------------


def _decayed(ty):
    return PtrT(ty.elem) if isinstance(ty, ArrT) else ty


def _arith(op: str, a: int, b: int, unsigned: bool, m: Machine) -> int:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op in ("/", "%"):
        if b == 0:
            raise _Fault(FaultReport("div-zero", 0, m.cur_nid, m._func_name()))
        if unsigned:
            return a // b if op == "/" else a % b
        sa, sb = _s32(a), _s32(b)
        q = abs(sa) // abs(sb)
        if (sa < 0) != (sb < 0):
            q = -q
        return q if op == "/" else sa - q * sb
    if op == "&":
        return a & b
    if op == "|":
        return a | b
    if op == "^":
        return a ^ b
    if op == "<<":
        return a << (b & 31)
    if op == ">>":
        if unsigned:
            return a >> (b & 31)
        return _s32(a) >> (b & 31)
    if op in ("==", "!=", "<", ">", "<=", ">="):
        if not unsigned:
            a, b = _s32(a), _s32(b)
        if op == "==":
            return 1 if a == b else 0
        if op == "!=":
            return 1 if a != b else 0
        if op == "<":
            return 1 if a < b else 0
        if op == ">":
            return 1 if a > b else 0
        if op == "<=":
            return 1 if a <= b else 0
        return 1 if a >= b else 0
    raise ExecError(f"unknown operator {op}")


def run_program(
    program: Program,
    input_bytes: bytes,
    *,
    trace: bool = True,
    audit: AuditConfig | None = None,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> ExecResult:
    return Machine(program, input_bytes, trace=trace, audit=audit,
                   max_steps=max_steps).run()
