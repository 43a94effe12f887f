"""Recursive-descent parser and resolver for the mini-C subset.

The subset: int/char/unsigned scalars, pointers up to two levels, fixed-size
arrays, structs with . and ->, if/while/for/return, direct calls, function
pointers declared as `ret (*name)(...)` and called indirectly, the intrinsic
set (malloc free strlen memcpy read_input write_output print_int), string and
integer literals.  goto, switch, and friends are rejected up front with a
named diagnostic.

parse() returns a resolved Program: every expression is typed, statements
carry conditional-scope keys, struct layouts are computed with natural
alignment, and functions whose names are taken as values are collected in
Program.address_taken (those are the ones reachable through indirect calls).
"""

from __future__ import annotations

from .diagnostics import SyntaxDiagnostic, UnsupportedConstruct
from .lexer import Token, tokenize
from .nodes import (
    ANYPTR, CHAR, INT, UNSIGNED, VOID,
    ArrT, Assign, Binary, Block, Call, CharLit, Empty, Expr, ExprStmt, FnPtrT,
    For, FuncDef, FuncT, GlobalDecl, Ident, If, Index, IntLit, Member, Param,
    Program, PtrT, Return, SourceSpan, Stmt, StrLit, StructDecl, StructT,
    Type, Unary, VarDecl, While, is_pointer, is_scalar, scalar_width,
    type_align, type_size, set_struct_table,
)

# name -> (return type, arity).  Pointer parameters are loose (any pointer).
INTRINSICS: dict[str, tuple[Type, int]] = {
    "malloc": (ANYPTR, 1),
    "free": (VOID, 1),
    "strlen": (INT, 1),
    "memcpy": (VOID, 3),
    "read_input": (INT, 2),
    "write_output": (VOID, 2),
    "print_int": (VOID, 1),
}


class _Parser:
    def __init__(self, tokens: list[Token], file: str):
        self.toks = tokens
        self.i = 0
        self.file = file
        self.next_id = 0

    # -- token plumbing ----------------------------------------------------

    def peek(self, k: int = 0) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text: str) -> bool:
        t = self.peek()
        return t.kind in ("punct", "keyword") and t.text == text

    def accept(self, text: str) -> Token | None:
        if self.at(text):
            t = self.peek()
            self.i += 1
            return t
        return None

    def expect(self, text: str) -> Token:
        t = self.accept(text)
        if t is None:
            got = self.peek()
            raise SyntaxDiagnostic(
                f"expected {text!r}, found {got.text or got.kind!r}", self._tok_span(got))
        return t

    def expect_ident(self) -> Token:
        t = self.peek()
        if t.kind != "ident":
            raise SyntaxDiagnostic(f"expected identifier, found {t.text or t.kind!r}",
                                   self._tok_span(t))
        self.i += 1
        return t

    def _tok_span(self, t: Token) -> SourceSpan:
        return SourceSpan(self.file, t.lo, t.hi, t.line, t.col)

    def _span(self, lo_tok: Token, hi_tok: Token | None = None) -> SourceSpan:
        hi = (hi_tok or self.toks[max(self.i - 1, 0)]).hi
        return SourceSpan(self.file, lo_tok.lo, max(hi, lo_tok.lo), lo_tok.line, lo_tok.col)

    def nid(self) -> int:
        n = self.next_id
        self.next_id += 1
        return n

    # -- types -------------------------------------------------------------

    def at_type(self) -> bool:
        t = self.peek()
        return t.kind == "keyword" and t.text in ("int", "char", "unsigned", "void", "struct")

    def parse_base_type(self) -> Type:
        t = self.peek()
        if t.text == "int":
            self.i += 1
            return INT
        if t.text == "char":
            self.i += 1
            return CHAR
        if t.text == "unsigned":
            self.i += 1
            return UNSIGNED
        if t.text == "void":
            self.i += 1
            return VOID
        if t.text == "struct":
            self.i += 1
            name = self.expect_ident()
            return StructT(name.text)
        raise SyntaxDiagnostic(f"expected type, found {t.text!r}", self._tok_span(t))

    def parse_stars(self, base: Type) -> Type:
        levels = 0
        while self.accept("*"):
            levels += 1
        if levels > 2:
            raise UnsupportedConstruct("pointer nesting deeper than two levels",
                                       self._tok_span(self.peek()))
        ty = base
        for _ in range(levels):
            ty = PtrT(ty)
        return ty

    # -- declarations ------------------------------------------------------

    def parse_var_decl(self, allow_init: bool) -> VarDecl:
        lo = self.peek()
        base = self.parse_base_type()
        if self.at("("):
            return self._parse_fnptr_decl(lo, base)
        ty = self.parse_stars(base)
        name = self.expect_ident()
        if self.accept("["):
            length_tok = self.peek()
            if length_tok.kind != "int":
                raise SyntaxDiagnostic("array length must be an integer literal",
                                       self._tok_span(length_tok))
            self.i += 1
            self.expect("]")
            if is_pointer(ty):
                raise UnsupportedConstruct("array of pointers", self._tok_span(name))
            length = length_tok.value[0]
            if length <= 0:
                raise SyntaxDiagnostic("array length must be positive", self._tok_span(length_tok))
            ty = ArrT(ty, length)
        init = None
        if self.at("="):
            if not allow_init:
                raise SyntaxDiagnostic("initializer not allowed here", self._tok_span(self.peek()))
            self.expect("=")
            init = self.parse_assignment()
        self.expect(";")
        return VarDecl(self.nid(), self._span(lo), ty, name.text, init)

    def _parse_fnptr_decl(self, lo: Token, ret: Type) -> VarDecl:
        # ret ( * name ) ( type-list )
        self.expect("(")
        self.expect("*")
        name = self.expect_ident()
        self.expect(")")
        self.expect("(")
        params: list[Type] = []
        if not self.at(")"):
            if self.at("void") and self.peek(1).text == ")":
                self.i += 1
            else:
                while True:
                    base = self.parse_base_type()
                    pty = self.parse_stars(base)
                    if self.peek().kind == "ident":
                        self.i += 1
                    params.append(pty)
                    if not self.accept(","):
                        break
        self.expect(")")
        self.expect(";")
        return VarDecl(self.nid(), self._span(lo), FnPtrT(ret, tuple(params)), name.text, None)

    # -- expressions -------------------------------------------------------

    # Binary precedence, low to high.
    _LEVELS = [
        ["||"], ["&&"], ["|"], ["^"], ["&"],
        ["==", "!="], ["<", ">", "<=", ">="],
        ["<<", ">>"], ["+", "-"], ["*", "/", "%"],
    ]

    def parse_expr(self) -> Expr:
        return self.parse_assignment()

    def parse_assignment(self) -> Expr:
        left = self.parse_binary(0)
        for op in ("=", "+=", "-="):
            if self.at(op):
                lo = self.peek()
                self.i += 1
                value = self.parse_assignment()
                span = SourceSpan(self.file, left.span.lo, value.span.hi,
                                  left.span.line, left.span.col)
                return Assign(self.nid(), span, None, op, left, value)
        return left

    def parse_binary(self, level: int) -> Expr:
        if level >= len(self._LEVELS):
            return self.parse_unary()
        left = self.parse_binary(level + 1)
        while True:
            matched = None
            for op in self._LEVELS[level]:
                if self.at(op):
                    matched = op
                    break
            if matched is None:
                return left
            self.i += 1
            right = self.parse_binary(level + 1)
            span = SourceSpan(self.file, left.span.lo, right.span.hi,
                              left.span.line, left.span.col)
            left = Binary(self.nid(), span, None, matched, left, right)

    def parse_unary(self) -> Expr:
        t = self.peek()
        for op in ("-", "!", "~", "*", "&"):
            if self.at(op):
                self.i += 1
                operand = self.parse_unary()
                span = SourceSpan(self.file, t.lo, operand.span.hi, t.line, t.col)
                return Unary(self.nid(), span, None, op, operand)
        return self.parse_postfix()

    def parse_postfix(self) -> Expr:
        e = self.parse_primary()
        while True:
            if self.at("["):
                self.expect("[")
                idx = self.parse_expr()
                close = self.expect("]")
                span = SourceSpan(self.file, e.span.lo, close.hi, e.span.line, e.span.col)
                e = Index(self.nid(), span, None, e, idx)
            elif self.at("."):
                self.expect(".")
                name = self.expect_ident()
                span = SourceSpan(self.file, e.span.lo, name.hi, e.span.line, e.span.col)
                e = Member(self.nid(), span, None, e, name.text, False)
            elif self.at("->"):
                self.expect("->")
                name = self.expect_ident()
                span = SourceSpan(self.file, e.span.lo, name.hi, e.span.line, e.span.col)
                e = Member(self.nid(), span, None, e, name.text, True)
            elif self.at("("):
                if not isinstance(e, Ident):
                    raise UnsupportedConstruct("call of a non-identifier expression", e.span)
                self.expect("(")
                args: list[Expr] = []
                if not self.at(")"):
                    while True:
                        args.append(self.parse_assignment())
                        if not self.accept(","):
                            break
                close = self.expect(")")
                span = SourceSpan(self.file, e.span.lo, close.hi, e.span.line, e.span.col)
                e = Call(self.nid(), span, None, e.name, args)
            else:
                return e

    def parse_primary(self) -> Expr:
        t = self.peek()
        if t.kind == "int":
            self.i += 1
            value, is_hex = t.value
            return IntLit(self.nid(), self._tok_span(t), None, value, is_hex)
        if t.kind == "char":
            self.i += 1
            return CharLit(self.nid(), self._tok_span(t), None, t.value)
        if t.kind == "string":
            self.i += 1
            return StrLit(self.nid(), self._tok_span(t), None, t.value)
        if t.kind == "ident":
            self.i += 1
            return Ident(self.nid(), self._tok_span(t), None, t.text)
        if self.at("("):
            self.expect("(")
            e = self.parse_expr()
            self.expect(")")
            return e
        raise SyntaxDiagnostic(f"expected expression, found {t.text or t.kind!r}",
                               self._tok_span(t))

    # -- statements ----------------------------------------------------------

    def parse_stmt(self) -> Stmt:
        t = self.peek()
        if self.at("{"):
            return self.parse_block(allow_decls=False)
        if self.at(";"):
            self.i += 1
            return Empty(self.nid(), self._tok_span(t))
        if self.at("if"):
            self.i += 1
            self.expect("(")
            cond = self.parse_expr()
            self.expect(")")
            then = self._as_block(self.parse_stmt())
            els = None
            if self.accept("else"):
                els = self._as_block(self.parse_stmt())
            return If(self.nid(), self._span(t), (), "", cond, then, els)
        if self.at("while"):
            self.i += 1
            self.expect("(")
            cond = self.parse_expr()
            self.expect(")")
            body = self._as_block(self.parse_stmt())
            return While(self.nid(), self._span(t), (), "", cond, body)
        if self.at("for"):
            self.i += 1
            self.expect("(")
            init = None if self.at(";") else self.parse_expr()
            self.expect(";")
            cond = None if self.at(";") else self.parse_expr()
            self.expect(";")
            step = None if self.at(")") else self.parse_expr()
            self.expect(")")
            body = self._as_block(self.parse_stmt())
            return For(self.nid(), self._span(t), (), "", init, cond, step, body)
        if self.at("return"):
            self.i += 1
            value = None if self.at(";") else self.parse_expr()
            self.expect(";")
            return Return(self.nid(), self._span(t), (), "", value)
        if self.at_type():
            raise SyntaxDiagnostic(
                "declarations must precede statements in the function body",
                self._tok_span(t))
        expr = self.parse_expr()
        self.expect(";")
        return ExprStmt(self.nid(), self._span(t), (), "", expr)

    def _as_block(self, s: Stmt) -> Block:
        # Bodies are kept as blocks so statements can be spliced next to
        # any anchor without re-bracing.
        if isinstance(s, Block):
            return s
        return Block(self.nid(), s.span, (), "", [], [s])

    def parse_block(self, allow_decls: bool) -> Block:
        lo = self.expect("{")
        decls: list[VarDecl] = []
        if allow_decls:
            while self.at_type() and not self._looks_like_struct_def():
                decls.append(self.parse_var_decl(allow_init=True))
        stmts: list[Stmt] = []
        while not self.at("}"):
            if self.peek().kind == "eof":
                raise SyntaxDiagnostic("unexpected end of input in block", self._tok_span(self.peek()))
            stmts.append(self.parse_stmt())
        self.expect("}")
        return Block(self.nid(), self._span(lo), (), "", decls, stmts)

    def _looks_like_struct_def(self) -> bool:
        return self.at("struct") and self.peek(2).text == "{"

    # -- top level -----------------------------------------------------------

    def parse_program(self) -> Program:
        items = []
        while self.peek().kind != "eof":
            t = self.peek()
            if self.at("struct") and self.peek(2).text == "{":
                items.append(self.parse_struct_decl())
                continue
            if not self.at_type():
                raise SyntaxDiagnostic(
                    f"expected declaration, found {t.text or t.kind!r}", self._tok_span(t))
            # Distinguish function definitions from globals: scan past stars
            # and the name for a '('.  `ret (*name)(...)` globals start with
            # '(' right after the type, which a function cannot.
            save = self.i
            self.parse_base_type()
            if self.at("("):
                self.i = save
                lo = self.peek()
                base = self.parse_base_type()
                decl = self._parse_fnptr_decl(lo, base)
                items.append(GlobalDecl(self.nid(), decl.span, decl))
                continue
            while self.at("*"):
                self.i += 1
            self.expect_ident()
            is_func = self.at("(")
            self.i = save
            if is_func:
                items.append(self.parse_func_def())
            else:
                decl = self.parse_var_decl(allow_init=True)
                items.append(GlobalDecl(self.nid(), decl.span, decl))
        program = Program(items, self.next_id, self.file)
        return program

    def parse_struct_decl(self) -> StructDecl:
        lo = self.expect("struct")
        name = self.expect_ident()
        self.expect("{")
        members: list[VarDecl] = []
        while not self.at("}"):
            members.append(self.parse_var_decl(allow_init=False))
        self.expect("}")
        self.expect(";")
        return StructDecl(self.nid(), self._span(lo), name.text, members)

    def parse_func_def(self) -> FuncDef:
        lo = self.peek()
        base = self.parse_base_type()
        ret = self.parse_stars(base)
        name = self.expect_ident()
        self.expect("(")
        params: list[Param] = []
        if not self.at(")"):
            if self.at("void") and self.peek(1).text == ")":
                self.i += 1
            else:
                while True:
                    p_lo = self.peek()
                    p_base = self.parse_base_type()
                    p_ty = self.parse_stars(p_base)
                    p_name = self.expect_ident()
                    if self.at("["):
                        raise UnsupportedConstruct("array parameter", self._tok_span(p_name))
                    params.append(Param(self.nid(), self._span(p_lo), p_ty, p_name.text))
                    if not self.accept(","):
                        break
        self.expect(")")
        if self.at(";"):
            raise UnsupportedConstruct("function declaration without body", self._tok_span(self.peek()))
        body = self.parse_block(allow_decls=True)
        return FuncDef(self.nid(), self._span(lo), ret, name.text, params, body)


def parse(source: str, file: str = "<input>") -> Program:
    """Parse and resolve a full translation unit."""
    from .resolve import resolve
    program = _Parser(tokenize(source, file), file).parse_program()
    resolve(program)
    return program
