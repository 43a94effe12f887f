"""AST for the mini-C subset.

Every node carries a NodeId assigned by the parser in pre-order and a
SourceSpan pointing back at the text it came from.  NodeIds are the anchor
currency for the whole toolchain: traces reference them, edit scripts attach
to them, and bug records are replayable only because untouched nodes keep
their ids across edits.

Invariants:
  - NodeIds are unique within a Program and never reused; `Program.next_id`
    is strictly greater than every id in the tree.
  - SourceSpan.lo <= SourceSpan.hi.
  - Declarations appear only in function bodies (Block.decls is empty for
    nested blocks); this keeps frame layout a pure function of the
    function-level declaration list.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Union


# ---------------------------------------------------------------------------
# Source positions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SourceSpan:
    """Half-open byte range [lo, hi) in `file`, with 1-based line/col of lo."""

    file: str
    lo: int
    hi: int
    line: int
    col: int

    def __post_init__(self) -> None:
        if self.lo > self.hi:
            raise ValueError(f"span lo {self.lo} > hi {self.hi}")


SYNTHETIC = SourceSpan("<synthetic>", 0, 0, 0, 0)


# ---------------------------------------------------------------------------
# Types (static).  These are annotations, not AST nodes: they carry no ids.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Type:
    pass


@dataclass(frozen=True)
class IntT(Type):
    def __str__(self) -> str:
        return "int"


@dataclass(frozen=True)
class CharT(Type):
    def __str__(self) -> str:
        return "char"


@dataclass(frozen=True)
class UnsignedT(Type):
    def __str__(self) -> str:
        return "unsigned"


@dataclass(frozen=True)
class VoidT(Type):
    def __str__(self) -> str:
        return "void"


@dataclass(frozen=True)
class PtrT(Type):
    """Pointer type.  Nesting depth is capped at two levels by the resolver."""

    base: Type

    def __str__(self) -> str:
        return f"{self.base} *"


@dataclass(frozen=True)
class ArrT(Type):
    elem: Type
    length: int

    def __str__(self) -> str:
        return f"{self.elem} [{self.length}]"


@dataclass(frozen=True)
class StructT(Type):
    name: str

    def __str__(self) -> str:
        return f"struct {self.name}"


@dataclass(frozen=True)
class FnPtrT(Type):
    """Function-pointer variable type.  Calls through these are indirect."""

    ret: Type
    params: tuple[Type, ...]

    @property
    def arity(self) -> int:
        return len(self.params)

    def __str__(self) -> str:
        args = ", ".join(str(p) for p in self.params)
        return f"{self.ret} (*)({args})"


@dataclass(frozen=True)
class FuncT(Type):
    """Type of a function name used as a value (assignment to a FnPtrT)."""

    ret: Type
    arity: int

    def __str__(self) -> str:
        return f"{self.ret} ()({self.arity} args)"


@dataclass(frozen=True)
class AnyPtrT(Type):
    """Allocator results: assignable to any pointer type."""

    def __str__(self) -> str:
        return "void *"


INT = IntT()
CHAR = CharT()
UNSIGNED = UnsignedT()
VOID = VoidT()
ANYPTR = AnyPtrT()


def is_scalar(ty: Type) -> bool:
    return isinstance(ty, (IntT, CharT, UnsignedT))


def is_pointer(ty: Type) -> bool:
    return isinstance(ty, (PtrT, AnyPtrT))


def scalar_width(ty: Type) -> int:
    """Storage width in bytes; everything is 32-bit except char."""
    if isinstance(ty, CharT):
        return 1
    if isinstance(ty, (IntT, UnsignedT, PtrT, AnyPtrT, FnPtrT)):
        return 4
    raise ValueError(f"no scalar width for {ty}")


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------


@dataclass
class Expr:
    nid: int
    span: SourceSpan
    ty: Optional[Type] = field(default=None, compare=False, repr=False)


@dataclass
class IntLit(Expr):
    value: int = 0
    hex: bool = False  # print in hex (preserved for masks and magic values)


@dataclass
class CharLit(Expr):
    value: int = 0  # byte value


@dataclass
class StrLit(Expr):
    value: bytes = b""


@dataclass
class Ident(Expr):
    name: str = ""
    # Resolution results: "local" | "param" | "global" | "function" | "intrinsic"
    binding: Optional[str] = field(default=None, compare=False, repr=False)


@dataclass
class Unary(Expr):
    op: str = ""  # - ! ~ * &
    operand: Expr = None  # type: ignore[assignment]


@dataclass
class Binary(Expr):
    op: str = ""
    left: Expr = None  # type: ignore[assignment]
    right: Expr = None  # type: ignore[assignment]


@dataclass
class Assign(Expr):
    op: str = "="  # = += -=
    target: Expr = None  # type: ignore[assignment]
    value: Expr = None  # type: ignore[assignment]


@dataclass
class Call(Expr):
    callee: str = ""
    args: list[Expr] = field(default_factory=list)
    # Filled by the resolver: True when the callee is a function-pointer
    # variable rather than a function or intrinsic name.
    indirect: bool = field(default=False, compare=False)


@dataclass
class Index(Expr):
    base: Expr = None  # type: ignore[assignment]
    index: Expr = None  # type: ignore[assignment]


@dataclass
class Member(Expr):
    base: Expr = None  # type: ignore[assignment]
    name: str = ""
    arrow: bool = False
    offset: int = field(default=-1, compare=False)  # resolver fills byte offset


# ---------------------------------------------------------------------------
# Statements
# ---------------------------------------------------------------------------


@dataclass
class Stmt:
    nid: int
    span: SourceSpan
    # Conditional-nesting chain from the function body down to this statement,
    # as ((ctrl_node_id, arm), ...).  Filled by the resolver; two statements
    # share a prefix exactly when one's guard set contains the other's.
    scope_key: tuple = field(default=(), compare=False, repr=False)
    func: str = field(default="", compare=False, repr=False)


@dataclass
class ExprStmt(Stmt):
    expr: Expr = None  # type: ignore[assignment]


@dataclass
class If(Stmt):
    cond: Expr = None  # type: ignore[assignment]
    then: Stmt = None  # type: ignore[assignment]
    els: Optional[Stmt] = None


@dataclass
class While(Stmt):
    cond: Expr = None  # type: ignore[assignment]
    body: Stmt = None  # type: ignore[assignment]


@dataclass
class For(Stmt):
    init: Optional[Expr] = None
    cond: Optional[Expr] = None
    step: Optional[Expr] = None
    body: Stmt = None  # type: ignore[assignment]


@dataclass
class Return(Stmt):
    value: Optional[Expr] = None


@dataclass
class Empty(Stmt):
    pass


@dataclass
class VarDecl:
    """One declaration: scalar, array, pointer, struct, or function pointer."""

    nid: int
    span: SourceSpan
    ty: Type = VOID
    name: str = ""
    init: Optional[Expr] = None

    @property
    def size(self) -> int:
        return type_size(self.ty)


@dataclass
class Block(Stmt):
    decls: list[VarDecl] = field(default_factory=list)
    stmts: list[Stmt] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Top-level items
# ---------------------------------------------------------------------------


@dataclass
class Param:
    nid: int
    span: SourceSpan
    ty: Type = VOID
    name: str = ""


@dataclass
class StructDecl:
    nid: int
    span: SourceSpan
    name: str = ""
    members: list[VarDecl] = field(default_factory=list)


@dataclass
class GlobalDecl:
    nid: int
    span: SourceSpan
    decl: VarDecl = None  # type: ignore[assignment]


@dataclass
class FuncDef:
    nid: int
    span: SourceSpan
    ret: Type = VOID
    name: str = ""
    params: list[Param] = field(default_factory=list)
    body: Block = None  # type: ignore[assignment]


TopItem = Union[StructDecl, GlobalDecl, FuncDef]


@dataclass
class Program:
    items: list[TopItem] = field(default_factory=list)
    next_id: int = 0
    file: str = "<unknown>"
    # Resolver outputs.  struct_layouts: name -> (size, {member: (offset, ty)}).
    struct_layouts: dict = field(default_factory=dict, compare=False, repr=False)
    address_taken: set = field(default_factory=set, compare=False, repr=False)

    def functions(self) -> list[FuncDef]:
        return [it for it in self.items if isinstance(it, FuncDef)]

    def function(self, name: str) -> FuncDef:
        for it in self.items:
            if isinstance(it, FuncDef) and it.name == name:
                return it
        raise KeyError(name)

    def globals(self) -> list[GlobalDecl]:
        return [it for it in self.items if isinstance(it, GlobalDecl)]

    def structs(self) -> list[StructDecl]:
        return [it for it in self.items if isinstance(it, StructDecl)]


# ---------------------------------------------------------------------------
# Sizing.  Scalars/pointers are natural-width; structs use natural alignment
# so a native 32-bit compile of the same source agrees with the model.
# ---------------------------------------------------------------------------

_STRUCT_TABLE: dict[str, tuple[int, dict[str, tuple[int, Type]]]] = {}


def set_struct_table(table: dict[str, tuple[int, dict[str, tuple[int, Type]]]]) -> None:
    """Install the resolver's struct layout table for type_size lookups."""
    global _STRUCT_TABLE
    _STRUCT_TABLE = table


def type_align(ty: Type) -> int:
    if isinstance(ty, CharT):
        return 1
    if isinstance(ty, ArrT):
        return type_align(ty.elem)
    if isinstance(ty, StructT):
        size, members = _STRUCT_TABLE[ty.name]
        return max((type_align(t) for _, t in members.values()), default=1)
    return 4


def type_size(ty: Type) -> int:
    if isinstance(ty, ArrT):
        return ty.length * type_size(ty.elem)
    if isinstance(ty, StructT):
        return _STRUCT_TABLE[ty.name][0]
    return scalar_width(ty)


# ---------------------------------------------------------------------------
# Traversal helpers
# ---------------------------------------------------------------------------


def iter_exprs(e: Expr) -> Iterator[Expr]:
    yield e
    if isinstance(e, Unary):
        yield from iter_exprs(e.operand)
    elif isinstance(e, Binary):
        yield from iter_exprs(e.left)
        yield from iter_exprs(e.right)
    elif isinstance(e, Assign):
        yield from iter_exprs(e.target)
        yield from iter_exprs(e.value)
    elif isinstance(e, Call):
        for a in e.args:
            yield from iter_exprs(a)
    elif isinstance(e, Index):
        yield from iter_exprs(e.base)
        yield from iter_exprs(e.index)
    elif isinstance(e, Member):
        yield from iter_exprs(e.base)


def iter_stmts(s: Stmt) -> Iterator[Stmt]:
    yield s
    if isinstance(s, Block):
        for sub in s.stmts:
            yield from iter_stmts(sub)
    elif isinstance(s, If):
        yield from iter_stmts(s.then)
        if s.els is not None:
            yield from iter_stmts(s.els)
    elif isinstance(s, (While, For)):
        yield from iter_stmts(s.body)


def stmt_exprs(s: Stmt) -> Iterator[Expr]:
    if isinstance(s, ExprStmt):
        yield from iter_exprs(s.expr)
    elif isinstance(s, If):
        yield from iter_exprs(s.cond)
    elif isinstance(s, While):
        yield from iter_exprs(s.cond)
    elif isinstance(s, For):
        for part in (s.init, s.cond, s.step):
            if part is not None:
                yield from iter_exprs(part)
    elif isinstance(s, Return) and s.value is not None:
        yield from iter_exprs(s.value)


def program_stmts(program: Program) -> Iterator[Stmt]:
    """Every statement in every function, in source order."""
    for f in program.functions():
        yield from iter_stmts(f.body)


def expr_anchors(program: Program) -> dict[int, int]:
    """Map each expression node id to its directly enclosing statement id."""
    out: dict[int, int] = {}
    for s in program_stmts(program):
        for e in stmt_exprs(s):
            out[e.nid] = s.nid
    return out


def iter_nodes(program: Program) -> Iterator[object]:
    """Yield every id-bearing node in the program."""
    for item in program.items:
        yield item
        if isinstance(item, StructDecl):
            yield from item.members
        elif isinstance(item, GlobalDecl):
            yield item.decl
            if item.decl.init is not None:
                yield from iter_exprs(item.decl.init)
        elif isinstance(item, FuncDef):
            yield from item.params
            for st in iter_stmts(item.body):
                yield st
                if isinstance(st, Block):
                    for d in st.decls:
                        yield d
                        if d.init is not None:
                            yield from iter_exprs(d.init)
                for e in stmt_exprs(st):
                    yield e


def max_node_id(program: Program) -> int:
    return max((n.nid for n in iter_nodes(program)), default=-1)
