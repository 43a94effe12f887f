"""Canonical pretty-printer.

Output is deterministic, compilable mini-C with minimal parentheses: a
subexpression is parenthesized only when its precedence demands it, so
printing is a fixpoint (print(parse(print(p))) == print(p)).  Integer
literals print in hex when they were written in hex or exceed the signed
range; both forms re-parse to the same value.
"""

from __future__ import annotations

from .diagnostics import SyntaxDiagnostic
from .nodes import (
    ArrT, Assign, Binary, Block, Call, CharLit, Empty, Expr, ExprStmt, FnPtrT,
    For, FuncDef, GlobalDecl, Ident, If, Index, IntLit, Member, Program,
    PtrT, Return, Stmt, StrLit, StructDecl, StructT, Type, Unary, VarDecl,
    While,
)

INDENT = "    "

# Binding strength, mirroring the parser's ladder.  Higher binds tighter.
_BIN_PREC = {
    "||": 1, "&&": 2, "|": 3, "^": 4, "&": 5,
    "==": 6, "!=": 6, "<": 7, ">": 7, "<=": 7, ">=": 7,
    "<<": 8, ">>": 8, "+": 9, "-": 9, "*": 10, "/": 10, "%": 10,
}
_PREC_ASSIGN = 0
_PREC_UNARY = 11
_PREC_POSTFIX = 12

_CHAR_ESCAPES = {10: "\\n", 9: "\\t", 13: "\\r", 0: "\\0", 92: "\\\\", 39: "\\'"}
_STR_ESCAPES = {10: "\\n", 9: "\\t", 13: "\\r", 0: "\\0", 92: "\\\\", 34: '\\"'}


def _type_prefix(ty: Type) -> str:
    """Leading type text (base plus stars); arrays contribute a suffix."""
    if isinstance(ty, PtrT):
        return _type_prefix(ty.base) + " *" if not isinstance(ty.base, PtrT) \
            else _type_prefix(ty.base) + "*"
    if isinstance(ty, ArrT):
        return _type_prefix(ty.elem)
    if isinstance(ty, StructT):
        return f"struct {ty.name}"
    return str(ty)


def _decl_text(ty: Type, name: str) -> str:
    if isinstance(ty, ArrT):
        return f"{_type_prefix(ty)} {name}[{ty.length}]"
    if isinstance(ty, FnPtrT):
        args = ", ".join(_type_prefix(p) for p in ty.params) or "void"
        return f"{_fmt_ret(ty.ret)} (*{name})({args})"
    if isinstance(ty, PtrT):
        return f"{_type_prefix(ty)}{name}"
    return f"{_type_prefix(ty)} {name}"


def _fmt_ret(ty: Type) -> str:
    if isinstance(ty, PtrT):
        return _type_prefix(ty).rstrip()
    return str(ty)


def print_expr(e: Expr, parent_prec: int = -1) -> str:
    text, prec = _expr(e)
    if prec < parent_prec:
        return f"({text})"
    return text


def _expr(e: Expr) -> tuple[str, int]:
    if isinstance(e, IntLit):
        if e.hex or e.value > 0x7FFFFFFF:
            return f"0x{e.value:x}", _PREC_POSTFIX
        return str(e.value), _PREC_POSTFIX
    if isinstance(e, CharLit):
        ch = _CHAR_ESCAPES.get(e.value)
        if ch is None:
            ch = chr(e.value) if 32 <= e.value < 127 else f"\\x{e.value:02x}"
        return f"'{ch}'", _PREC_POSTFIX
    if isinstance(e, StrLit):
        parts = []
        for b in e.value:
            s = _STR_ESCAPES.get(b)
            if s is None:
                s = chr(b) if 32 <= b < 127 else f"\\x{b:02x}"
            parts.append(s)
        return '"' + "".join(parts) + '"', _PREC_POSTFIX
    if isinstance(e, Ident):
        return e.name, _PREC_POSTFIX
    if isinstance(e, Unary):
        inner = print_expr(e.operand, _PREC_UNARY)
        # Avoid gluing `- -x` into `--x`.
        if e.op == "-" and inner.startswith("-"):
            inner = f"({inner})"
        return f"{e.op}{inner}", _PREC_UNARY
    if isinstance(e, Binary):
        prec = _BIN_PREC[e.op]
        left = print_expr(e.left, prec)
        right = print_expr(e.right, prec + 1)
        return f"{left} {e.op} {right}", prec
    if isinstance(e, Assign):
        target = print_expr(e.target, _PREC_UNARY)
        value = print_expr(e.value, _PREC_ASSIGN)
        return f"{target} {e.op} {value}", _PREC_ASSIGN
    if isinstance(e, Call):
        args = ", ".join(print_expr(a, _PREC_ASSIGN) for a in e.args)
        return f"{e.callee}({args})", _PREC_POSTFIX
    if isinstance(e, Index):
        base = print_expr(e.base, _PREC_POSTFIX)
        return f"{base}[{print_expr(e.index, _PREC_ASSIGN)}]", _PREC_POSTFIX
    if isinstance(e, Member):
        base = print_expr(e.base, _PREC_POSTFIX)
        sep = "->" if e.arrow else "."
        return f"{base}{sep}{e.name}", _PREC_POSTFIX
    raise SyntaxDiagnostic("unprintable expression", e.span)


def _decl_line(d: VarDecl, indent: str) -> str:
    text = _decl_text(d.ty, d.name)
    if d.init is not None:
        text += f" = {print_expr(d.init)}"
    return f"{indent}{text};"


def print_stmt(s: Stmt, depth: int) -> list[str]:
    ind = INDENT * depth
    if isinstance(s, ExprStmt):
        return [f"{ind}{print_expr(s.expr)};"]
    if isinstance(s, Empty):
        return [f"{ind};"]
    if isinstance(s, Return):
        if s.value is None:
            return [f"{ind}return;"]
        return [f"{ind}return {print_expr(s.value)};"]
    if isinstance(s, If):
        lines = [f"{ind}if ({print_expr(s.cond)}) {{"]
        lines += _body_lines(s.then, depth + 1)
        if s.els is not None:
            lines.append(f"{ind}}} else {{")
            lines += _body_lines(s.els, depth + 1)
        lines.append(f"{ind}}}")
        return lines
    if isinstance(s, While):
        lines = [f"{ind}while ({print_expr(s.cond)}) {{"]
        lines += _body_lines(s.body, depth + 1)
        lines.append(f"{ind}}}")
        return lines
    if isinstance(s, For):
        init = print_expr(s.init) if s.init is not None else ""
        cond = print_expr(s.cond) if s.cond is not None else ""
        step = print_expr(s.step) if s.step is not None else ""
        lines = [f"{ind}for ({init}; {cond}; {step}) {{"]
        lines += _body_lines(s.body, depth + 1)
        lines.append(f"{ind}}}")
        return lines
    if isinstance(s, Block):
        lines = [f"{ind}{{"]
        for sub in s.stmts:
            lines += print_stmt(sub, depth + 1)
        lines.append(f"{ind}}}")
        return lines
    raise SyntaxDiagnostic("unprintable statement", s.span)


def _body_lines(s: Stmt, depth: int) -> list[str]:
    """Braces are always emitted by the parent, so unwrap one block level."""
    if isinstance(s, Block):
        lines: list[str] = []
        for sub in s.stmts:
            lines += print_stmt(sub, depth)
        return lines
    return print_stmt(s, depth)


def print_program(program: Program) -> str:
    chunks: list[str] = []
    for item in program.items:
        if isinstance(item, StructDecl):
            lines = [f"struct {item.name} {{"]
            for m in item.members:
                lines.append(_decl_line(m, INDENT))
            lines.append("};")
            chunks.append("\n".join(lines))
        elif isinstance(item, GlobalDecl):
            chunks.append(_decl_line(item.decl, ""))
        elif isinstance(item, FuncDef):
            params = ", ".join(_decl_text(p.ty, p.name) for p in item.params) or "void"
            lines = [f"{_decl_text(item.ret, item.name)}({params}) {{"]
            for d in item.body.decls:
                lines.append(_decl_line(d, INDENT))
            for s in item.body.stmts:
                lines += print_stmt(s, 1)
            lines.append("}")
            chunks.append("\n".join(lines))
    return "\n\n".join(chunks) + ("\n" if chunks else "")
