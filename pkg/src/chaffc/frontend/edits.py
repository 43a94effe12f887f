"""Program edits keyed by node id.

Injection never rebuilds a program from text.  It records a list of edit
operations against node ids in the current AST, then applies them all at
once.  Anchored nodes keep their ids; inserted nodes get fresh ids above
``program.next_id``, so ids remain stable across repeated edit rounds and
earlier trace data stays meaningful.

Operations:

* ``add_global(decl_source)``: append a global declaration.
* ``insert_before(anchor_nid, stmt_source)`` / ``insert_after``: splice
  statements next to an existing statement.  Multiple inserts at one
  anchor land in script order.
* ``add_local(func, decl_source)``: append a declaration to a function
  body.  Appending keeps offsets of existing locals unchanged.
* ``add_param(func, param_source)``: append a parameter.
* ``append_call_arg(call_nid, arg_source)``: append an argument to a
  call expression.

Sources are parsed as fragments with a throwaway parser, then renumbered
into the target program's id space.  ``apply_edits`` returns a fresh
re-resolved Program; the input program is not mutated.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .diagnostics import AnchorNotFound, ConflictingEdits, EditError
from .nodes import (
    Assign, Binary, Block, Call, Expr, ExprStmt, For, FuncDef, GlobalDecl,
    If, Index, Member, Param, Program, Return, Stmt, Unary, VarDecl, While,
    iter_nodes,
)


@dataclass
class EditScript:
    add_globals: list[str] = field(default_factory=list)
    before: dict[int, list[str]] = field(default_factory=dict)
    after: dict[int, list[str]] = field(default_factory=dict)
    add_locals: dict[str, list[str]] = field(default_factory=dict)
    add_params: dict[str, list[str]] = field(default_factory=dict)
    call_args: dict[int, list[str]] = field(default_factory=dict)

    def add_global(self, source: str) -> None:
        self.add_globals.append(source)

    def insert_before(self, anchor_nid: int, source: str) -> None:
        self.before.setdefault(anchor_nid, []).append(source)

    def insert_after(self, anchor_nid: int, source: str) -> None:
        self.after.setdefault(anchor_nid, []).append(source)

    def add_local(self, func: str, source: str) -> None:
        self.add_locals.setdefault(func, []).append(source)

    def add_param(self, func: str, source: str) -> None:
        self.add_params.setdefault(func, []).append(source)

    def append_call_arg(self, call_nid: int, source: str) -> None:
        self.call_args.setdefault(call_nid, []).append(source)

    def empty(self) -> bool:
        return not (self.add_globals or self.before or self.after
                    or self.add_locals or self.add_params or self.call_args)


class _Renumber:
    """Rewrites fragment node ids into the target program's id space."""

    def __init__(self, start: int) -> None:
        self.next = start

    def take(self) -> int:
        nid = self.next
        self.next += 1
        return nid

    def expr(self, e: Expr) -> Expr:
        reps: dict[str, object] = {"nid": self.take()}
        for f in dataclasses.fields(e):
            v = getattr(e, f.name)
            if isinstance(v, Expr):
                reps[f.name] = self.expr(v)
            elif isinstance(v, tuple) and v and isinstance(v[0], Expr):
                reps[f.name] = tuple(self.expr(a) for a in v)
            elif isinstance(v, list) and v and isinstance(v[0], Expr):
                reps[f.name] = [self.expr(a) for a in v]
        return dataclasses.replace(e, **reps)

    def stmt(self, s: Stmt) -> Stmt:
        if isinstance(s, ExprStmt):
            return dataclasses.replace(s, nid=self.take(), expr=self.expr(s.expr))
        if isinstance(s, If):
            return dataclasses.replace(
                s, nid=self.take(), cond=self.expr(s.cond),
                then=self.stmt(s.then),
                els=self.stmt(s.els) if s.els is not None else None)
        if isinstance(s, While):
            return dataclasses.replace(
                s, nid=self.take(), cond=self.expr(s.cond), body=self.stmt(s.body))
        if isinstance(s, For):
            return dataclasses.replace(
                s, nid=self.take(),
                init=self.expr(s.init) if s.init is not None else None,
                cond=self.expr(s.cond) if s.cond is not None else None,
                step=self.expr(s.step) if s.step is not None else None,
                body=self.stmt(s.body))
        if isinstance(s, Return):
            return dataclasses.replace(
                s, nid=self.take(),
                value=self.expr(s.value) if s.value is not None else None)
        if isinstance(s, Block):
            return dataclasses.replace(
                s, nid=self.take(),
                decls=[self.decl(d) for d in s.decls],
                stmts=[self.stmt(t) for t in s.stmts])
        return dataclasses.replace(s, nid=self.take())

    def decl(self, d: VarDecl) -> VarDecl:
        return dataclasses.replace(
            d, nid=self.take(),
            init=self.expr(d.init) if d.init is not None else None)


def _parse_fragment_decl(source: str) -> VarDecl:
    from .parser import _Parser
    from .lexer import tokenize
    p = _Parser(tokenize(source, "<edit>"), "<edit>")
    d = p.parse_var_decl(allow_init=True)
    if p.peek().kind != "eof":
        raise EditError(f"trailing tokens in declaration fragment: {source!r}")
    return d


def _parse_fragment_stmts(source: str) -> list[Stmt]:
    from .parser import _Parser
    from .lexer import tokenize
    p = _Parser(tokenize(source, "<edit>"), "<edit>")
    stmts: list[Stmt] = []
    while p.peek().kind != "eof":
        stmts.append(p.parse_stmt())
    return stmts


def _parse_fragment_expr(source: str) -> Expr:
    from .parser import _Parser
    from .lexer import tokenize
    p = _Parser(tokenize(source, "<edit>"), "<edit>")
    e = p.parse_assignment()
    if p.peek().kind != "eof":
        raise EditError(f"trailing tokens in expression fragment: {source!r}")
    return e


def _parse_fragment_param(source: str) -> Param:
    from .parser import _Parser
    from .lexer import tokenize
    p = _Parser(tokenize(source + ")", "<edit>"), "<edit>")
    base = p.parse_base_type()
    ty = p.parse_stars(base)
    name = p.expect_ident()
    if p.peek().text != ")":
        raise EditError(f"trailing tokens in parameter fragment: {source!r}")
    return Param(0, name=name.text, ty=ty, span=p._tok_span(name))


def _splice(stmts: list[Stmt], script: EditScript, ren: _Renumber,
            hit: set[int]) -> list[Stmt]:
    out: list[Stmt] = []
    for s in stmts:
        if s.nid in script.before:
            hit.add(s.nid)
            for src in script.before[s.nid]:
                out.extend(ren.stmt(t) for t in _parse_fragment_stmts(src))
        out.append(_rebuild_stmt(s, script, ren, hit))
        if s.nid in script.after:
            hit.add(s.nid)
            for src in script.after[s.nid]:
                out.extend(ren.stmt(t) for t in _parse_fragment_stmts(src))
    return out


def _rebuild_stmt(s: Stmt, script: EditScript, ren: _Renumber,
                  hit: set[int]) -> Stmt:
    if isinstance(s, Block):
        return dataclasses.replace(s, stmts=_splice(s.stmts, script, ren, hit))
    if isinstance(s, If):
        then = _rebuild_stmt(s.then, script, ren, hit)
        els = _rebuild_stmt(s.els, script, ren, hit) if s.els is not None else None
        return dataclasses.replace(
            s, cond=_rebuild_expr(s.cond, script, ren, hit), then=then, els=els)
    if isinstance(s, While):
        return dataclasses.replace(
            s, cond=_rebuild_expr(s.cond, script, ren, hit),
            body=_rebuild_stmt(s.body, script, ren, hit))
    if isinstance(s, For):
        return dataclasses.replace(
            s,
            init=_rebuild_expr(s.init, script, ren, hit) if s.init is not None else None,
            cond=_rebuild_expr(s.cond, script, ren, hit) if s.cond is not None else None,
            step=_rebuild_expr(s.step, script, ren, hit) if s.step is not None else None,
            body=_rebuild_stmt(s.body, script, ren, hit))
    if isinstance(s, ExprStmt):
        return dataclasses.replace(s, expr=_rebuild_expr(s.expr, script, ren, hit))
    if isinstance(s, Return) and s.value is not None:
        return dataclasses.replace(s, value=_rebuild_expr(s.value, script, ren, hit))
    return s


def _rebuild_expr(e: Expr, script: EditScript, ren: _Renumber,
                  hit: set[int]) -> Expr:
    if isinstance(e, Call):
        args = [_rebuild_expr(a, script, ren, hit) for a in e.args]
        if e.nid in script.call_args:
            hit.add(e.nid)
            for src in script.call_args[e.nid]:
                args.append(ren.expr(_parse_fragment_expr(src)))
        return dataclasses.replace(e, args=args)
    if isinstance(e, Unary):
        return dataclasses.replace(e, operand=_rebuild_expr(e.operand, script, ren, hit))
    if isinstance(e, Binary):
        return dataclasses.replace(
            e, left=_rebuild_expr(e.left, script, ren, hit),
            right=_rebuild_expr(e.right, script, ren, hit))
    if isinstance(e, Assign):
        return dataclasses.replace(
            e, target=_rebuild_expr(e.target, script, ren, hit),
            value=_rebuild_expr(e.value, script, ren, hit))
    if isinstance(e, Index):
        return dataclasses.replace(
            e, base=_rebuild_expr(e.base, script, ren, hit),
            index=_rebuild_expr(e.index, script, ren, hit))
    if isinstance(e, Member):
        return dataclasses.replace(e, base=_rebuild_expr(e.base, script, ren, hit))
    return e


def apply_edits(program: Program, script: EditScript) -> Program:
    """Apply a script and return a new resolved Program.

    Raises AnchorNotFound when a statement or call anchor id does not
    exist in the program, and ConflictingEdits when two script entries
    cannot both hold (duplicate added names, unknown functions).
    """
    from .resolve import resolve

    ren = _Renumber(program.next_id)
    hit: set[int] = set()
    known = {f.name for f in program.functions()}
    for func in list(script.add_locals) + list(script.add_params):
        if func not in known:
            raise ConflictingEdits(f"no function named {func!r}")

    new_globals = []
    for src in script.add_globals:
        d = ren.decl(_parse_fragment_decl(src))
        new_globals.append(GlobalDecl(ren.take(), d.span, d))

    items = []
    placed = False
    for item in program.items:
        if isinstance(item, FuncDef):
            if not placed:
                # Globals go ahead of every function so any function may
                # reference them in compiled output.
                items.extend(new_globals)
                placed = True
            body = item.body
            decls = list(body.decls)
            for src in script.add_locals.get(item.name, ()):
                decls.append(ren.decl(_parse_fragment_decl(src)))
            stmts = _splice(body.stmts, script, ren, hit)
            params = list(item.params)
            for src in script.add_params.get(item.name, ()):
                p = _parse_fragment_param(src)
                params.append(dataclasses.replace(p, nid=ren.take()))
            items.append(dataclasses.replace(
                item, params=params,
                body=dataclasses.replace(body, decls=decls, stmts=stmts)))
        else:
            items.append(item)
    if not placed:
        items.extend(new_globals)

    wanted = set(script.before) | set(script.after) | set(script.call_args)
    missing = wanted - hit
    if missing:
        raise AnchorNotFound(min(missing))

    out = Program(items=items, next_id=ren.next, file=program.file,
                  struct_layouts={}, address_taken=set())
    return resolve(out)
