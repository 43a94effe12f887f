"""Name/type resolution for parsed programs.

Annotates every expression with a static type, assigns member offsets, gives
each statement a conditional-scope key and owning function, and records which
functions have their names taken as values (the set indirect calls can
reach).  The checks are deliberately scoped to what downstream stages rely
on: widths, signedness, pointer shapes, and intrinsic arities.  Anything the
subset cannot express safely is rejected with UnsupportedConstruct.
"""

from __future__ import annotations

from .diagnostics import SyntaxDiagnostic, UnsupportedConstruct
from .nodes import (
    ANYPTR, CHAR, INT, UNSIGNED, VOID,
    AnyPtrT, ArrT, Assign, Binary, Block, Call, CharLit, Empty, Expr,
    ExprStmt, FnPtrT, For, FuncDef, FuncT, GlobalDecl, Ident, If, Index,
    IntLit, Member, Program, PtrT, Return, Stmt, StrLit, StructDecl, StructT,
    Type, Unary, UnsignedT, VarDecl, While, is_pointer, is_scalar,
    type_align, type_size, set_struct_table,
)
from .parser import INTRINSICS


def _ptr_depth(ty: Type) -> int:
    depth = 0
    while isinstance(ty, PtrT):
        depth += 1
        ty = ty.base
    return depth


class _Resolver:
    def __init__(self, program: Program):
        self.program = program
        self.structs: dict[str, tuple[int, dict[str, tuple[int, Type]]]] = {}
        self.globals: dict[str, Type] = {}
        self.functions: dict[str, FuncDef] = {}
        self.address_taken: set[str] = set()
        self.locals: dict[str, Type] = {}
        self.current: FuncDef | None = None

    # -- struct layout (natural alignment, so native builds agree) ---------

    def layout_structs(self) -> None:
        for s in self.program.structs():
            if s.name in self.structs:
                raise SyntaxDiagnostic(f"duplicate struct {s.name}", s.span)
            members: dict[str, tuple[int, Type]] = {}
            offset = 0
            max_align = 1
            for m in s.members:
                if isinstance(m.ty, StructT):
                    raise UnsupportedConstruct("struct member of struct type", m.span)
                if isinstance(m.ty, FnPtrT):
                    raise UnsupportedConstruct("function-pointer struct member", m.span)
                if m.name in members:
                    raise SyntaxDiagnostic(f"duplicate member {m.name}", m.span)
                # Members may refer to pointers of any struct (incl. self).
                set_struct_table(self.structs)
                align = type_align(m.ty)
                size = type_size(m.ty)
                offset = (offset + align - 1) // align * align
                members[m.name] = (offset, m.ty)
                offset += size
                max_align = max(max_align, align)
            total = (offset + max_align - 1) // max_align * max_align
            self.structs[s.name] = (max(total, 1), members)
        set_struct_table(self.structs)

    # -- symbol tables -------------------------------------------------------

    def collect_top(self) -> None:
        for item in self.program.items:
            if isinstance(item, GlobalDecl):
                d = item.decl
                if d.name in self.globals or d.name in self.functions:
                    raise SyntaxDiagnostic(f"duplicate global {d.name}", d.span)
                if d.name in INTRINSICS:
                    raise UnsupportedConstruct(f"redefinition of intrinsic {d.name}", d.span)
                if isinstance(d.ty, StructT) and d.ty.name not in self.structs:
                    raise SyntaxDiagnostic(f"unknown struct {d.ty.name}", d.span)
                if d.init is not None and not isinstance(d.init, (IntLit, CharLit)):
                    raise UnsupportedConstruct("non-constant global initializer", d.span)
                self.globals[d.name] = d.ty
            elif isinstance(item, FuncDef):
                if item.name in self.functions or item.name in self.globals:
                    raise SyntaxDiagnostic(f"duplicate definition of {item.name}", item.span)
                if item.name in INTRINSICS:
                    raise UnsupportedConstruct(f"redefinition of intrinsic {item.name}", item.span)
                self.functions[item.name] = item

    # -- expressions ---------------------------------------------------------

    def lookup(self, name: str, e: Ident) -> Type:
        if name in self.locals:
            e.binding = "local"
            return self.locals[name]
        if name in self.globals:
            e.binding = "global"
            return self.globals[name]
        if name in self.functions:
            e.binding = "function"
            f = self.functions[name]
            return FuncT(f.ret, len(f.params))
        if name in INTRINSICS:
            e.binding = "intrinsic"
            ret, arity = INTRINSICS[name]
            return FuncT(ret, arity)
        raise SyntaxDiagnostic(f"undeclared identifier {name}", e.span)

    def expr(self, e: Expr) -> Type:
        ty = self._expr(e)
        e.ty = ty
        return ty

    def _decay(self, ty: Type) -> Type:
        return PtrT(ty.elem) if isinstance(ty, ArrT) else ty

    def _expr(self, e: Expr) -> Type:
        if isinstance(e, IntLit):
            return UNSIGNED if e.value > 0x7FFFFFFF else INT
        if isinstance(e, CharLit):
            return INT
        if isinstance(e, StrLit):
            return PtrT(CHAR)
        if isinstance(e, Ident):
            return self.lookup(e.name, e)
        if isinstance(e, Unary):
            return self._unary(e)
        if isinstance(e, Binary):
            return self._binary(e)
        if isinstance(e, Assign):
            return self._assign(e)
        if isinstance(e, Call):
            return self._call(e)
        if isinstance(e, Index):
            base = self._decay(self.expr(e.base))
            idx = self.expr(e.index)
            if not is_pointer(base):
                raise SyntaxDiagnostic("indexing a non-pointer", e.span)
            if not is_scalar(idx):
                raise SyntaxDiagnostic("index must be a scalar", e.span)
            if isinstance(base, AnyPtrT):
                raise SyntaxDiagnostic("indexing an untyped pointer", e.span)
            return base.base
        if isinstance(e, Member):
            return self._member(e)
        raise SyntaxDiagnostic("unresolvable expression", e.span)

    def _unary(self, e: Unary) -> Type:
        if e.op == "&":
            inner = e.operand
            if isinstance(inner, Ident):
                ty = self.expr(inner)
                if isinstance(ty, (FuncT, FnPtrT)):
                    raise UnsupportedConstruct("address of a function", e.span)
                if isinstance(ty, ArrT):
                    raise UnsupportedConstruct("address of a whole array", e.span)
            elif isinstance(inner, (Index, Member, Unary)) and not (
                    isinstance(inner, Unary) and inner.op != "*"):
                ty = self.expr(inner)
            else:
                raise SyntaxDiagnostic("cannot take the address of this expression", e.span)
            if _ptr_depth(PtrT(ty)) > 2:
                raise UnsupportedConstruct("pointer nesting deeper than two levels", e.span)
            return PtrT(ty)
        ty = self._decay(self.expr(e.operand))
        if e.op == "*":
            if not isinstance(ty, PtrT):
                raise SyntaxDiagnostic("dereference of a non-pointer", e.span)
            return ty.base
        if e.op in ("-", "~"):
            if not is_scalar(ty):
                raise SyntaxDiagnostic(f"unary {e.op} needs a scalar", e.span)
            return UNSIGNED if isinstance(ty, UnsignedT) else INT
        if e.op == "!":
            if not (is_scalar(ty) or is_pointer(ty)):
                raise SyntaxDiagnostic("! needs a scalar or pointer", e.span)
            return INT
        raise SyntaxDiagnostic(f"unknown unary {e.op}", e.span)

    def _binary(self, e: Binary) -> Type:
        lt = self._decay(self.expr(e.left))
        rt = self._decay(self.expr(e.right))
        op = e.op
        if op in ("&&", "||"):
            for t in (lt, rt):
                if not (is_scalar(t) or is_pointer(t)):
                    raise SyntaxDiagnostic(f"{op} needs scalar or pointer operands", e.span)
            return INT
        if op in ("==", "!=", "<", ">", "<=", ">="):
            if is_pointer(lt) or is_pointer(rt):
                ok = (is_pointer(lt) and is_pointer(rt)) or \
                     (is_pointer(lt) and isinstance(e.right, IntLit) and e.right.value == 0) or \
                     (is_pointer(rt) and isinstance(e.left, IntLit) and e.left.value == 0)
                if not ok:
                    raise SyntaxDiagnostic("pointer compared against non-pointer", e.span)
                return INT
            if not (is_scalar(lt) and is_scalar(rt)):
                raise SyntaxDiagnostic(f"{op} needs scalar operands", e.span)
            return INT
        if op in ("+", "-") and (is_pointer(lt) or is_pointer(rt)):
            if isinstance(lt, PtrT) and is_scalar(rt):
                return lt
            if op == "+" and is_scalar(lt) and isinstance(rt, PtrT):
                return rt
            raise SyntaxDiagnostic("unsupported pointer arithmetic", e.span)
        if not (is_scalar(lt) and is_scalar(rt)):
            raise SyntaxDiagnostic(f"{op} needs scalar operands", e.span)
        unsigned = isinstance(lt, UnsignedT) or isinstance(rt, UnsignedT)
        return UNSIGNED if unsigned else INT

    def _assign(self, e: Assign) -> Type:
        tt = self.expr(e.target)
        vt = self._decay(self.expr(e.value))
        if not self._is_lvalue(e.target):
            raise SyntaxDiagnostic("assignment target is not an lvalue", e.span)
        if isinstance(tt, FnPtrT):
            if e.op != "=" or not isinstance(vt, FuncT):
                raise SyntaxDiagnostic("function pointers only accept function names", e.span)
            if vt.arity != tt.arity:
                raise SyntaxDiagnostic("function pointer arity mismatch", e.span)
            assert isinstance(e.value, Ident)
            self.address_taken.add(e.value.name)
            return tt
        if isinstance(tt, ArrT):
            raise SyntaxDiagnostic("cannot assign to an array", e.span)
        if isinstance(tt, StructT):
            raise UnsupportedConstruct("whole-struct assignment", e.span)
        if e.op in ("+=", "-="):
            if isinstance(tt, PtrT) and is_scalar(vt):
                return tt
            if not (is_scalar(tt) and is_scalar(vt)):
                raise SyntaxDiagnostic(f"{e.op} needs scalar operands", e.span)
            return tt
        if is_pointer(tt):
            if isinstance(vt, AnyPtrT) or (isinstance(e.value, IntLit) and e.value.value == 0):
                return tt
            if is_pointer(vt):
                if vt != tt:
                    # char* <-> struct*/int* conversions stay out of the subset.
                    raise SyntaxDiagnostic("incompatible pointer assignment", e.span)
                return tt
            raise SyntaxDiagnostic("pointer assigned a non-pointer", e.span)
        if not is_scalar(tt) or not is_scalar(vt):
            if not (is_scalar(tt) and is_pointer(vt)):
                raise SyntaxDiagnostic("incompatible assignment", e.span)
            raise SyntaxDiagnostic("scalar assigned a pointer", e.span)
        return tt

    def _call(self, e: Call) -> Type:
        name = e.callee
        for a in e.args:
            self.expr(a)
        if name in self.locals or name in self.globals:
            ty = self.locals.get(name, self.globals.get(name))
            if not isinstance(ty, FnPtrT):
                raise SyntaxDiagnostic(f"call of non-function {name}", e.span)
            e.indirect = True
            if len(e.args) != ty.arity:
                raise SyntaxDiagnostic(
                    f"indirect call expects {ty.arity} args, got {len(e.args)}", e.span)
            return ty.ret
        if name in INTRINSICS:
            ret, arity = INTRINSICS[name]
            if len(e.args) != arity:
                raise SyntaxDiagnostic(f"{name} expects {arity} args, got {len(e.args)}", e.span)
            return ret
        if name in self.functions:
            f = self.functions[name]
            if len(e.args) != len(f.params):
                raise SyntaxDiagnostic(
                    f"{name} expects {len(f.params)} args, got {len(e.args)}", e.span)
            return f.ret
        raise SyntaxDiagnostic(f"call of undeclared function {name}", e.span)

    def _member(self, e: Member) -> Type:
        base = self.expr(e.base)
        if e.arrow:
            if not isinstance(base, PtrT) or not isinstance(base.base, StructT):
                raise SyntaxDiagnostic("-> needs a struct pointer", e.span)
            sname = base.base.name
        else:
            if not isinstance(base, StructT):
                raise SyntaxDiagnostic(". needs a struct value", e.span)
            sname = base.name
        if sname not in self.structs:
            raise SyntaxDiagnostic(f"unknown struct {sname}", e.span)
        _, members = self.structs[sname]
        if e.name not in members:
            raise SyntaxDiagnostic(f"struct {sname} has no member {e.name}", e.span)
        offset, ty = members[e.name]
        e.offset = offset
        return ty

    def _is_lvalue(self, e: Expr) -> bool:
        if isinstance(e, Ident):
            return e.binding in ("local", "param", "global")
        if isinstance(e, (Index, Member)):
            return True
        if isinstance(e, Unary) and e.op == "*":
            return True
        return False

    # -- statements ----------------------------------------------------------

    def stmt(self, s: Stmt, key: tuple) -> None:
        s.scope_key = key
        s.func = self.current.name if self.current else ""
        if isinstance(s, ExprStmt):
            self.expr(s.expr)
        elif isinstance(s, If):
            self.expr(s.cond)
            self.stmt(s.then, key + ((s.nid, "then"),))
            if s.els is not None:
                self.stmt(s.els, key + ((s.nid, "else"),))
        elif isinstance(s, While):
            self.expr(s.cond)
            self.stmt(s.body, key + ((s.nid, "body"),))
        elif isinstance(s, For):
            for part in (s.init, s.cond, s.step):
                if part is not None:
                    self.expr(part)
            self.stmt(s.body, key + ((s.nid, "body"),))
        elif isinstance(s, Return):
            if s.value is not None:
                self.expr(s.value)
            if self.current is not None:
                want_void = isinstance(self.current.ret, type(VOID))
                if want_void and s.value is not None:
                    raise SyntaxDiagnostic("void function returns a value", s.span)
                if not want_void and s.value is None:
                    raise SyntaxDiagnostic("non-void function returns nothing", s.span)
        elif isinstance(s, Block):
            if s.decls and key != ():
                raise SyntaxDiagnostic("declarations allowed only at function scope", s.span)
            for sub in s.stmts:
                self.stmt(sub, key)
        elif isinstance(s, Empty):
            pass
        else:
            raise SyntaxDiagnostic("unresolvable statement", s.span)

    def func(self, f: FuncDef) -> None:
        self.current = f
        self.locals = {}
        if isinstance(f.ret, (StructT, ArrT)):
            raise UnsupportedConstruct("function returning an aggregate", f.span)
        for p in f.params:
            if isinstance(p.ty, (StructT, ArrT)):
                raise UnsupportedConstruct("aggregate parameter", p.span)
            if p.name in self.locals:
                raise SyntaxDiagnostic(f"duplicate parameter {p.name}", p.span)
            self.locals[p.name] = p.ty
        for d in f.body.decls:
            if d.name in self.locals:
                raise SyntaxDiagnostic(f"duplicate local {d.name}", d.span)
            if isinstance(d.ty, StructT) and d.ty.name not in self.structs:
                raise SyntaxDiagnostic(f"unknown struct {d.ty.name}", d.span)
            if d.init is not None:
                if isinstance(d.ty, (ArrT, StructT)):
                    raise UnsupportedConstruct("aggregate initializer", d.span)
                self.expr(d.init)
            self.locals[d.name] = d.ty
        self.stmt(f.body, ())
        self.current = None

    def run(self) -> None:
        self.layout_structs()
        self.collect_top()
        for item in self.program.items:
            if isinstance(item, GlobalDecl) and item.decl.init is not None:
                self.expr(item.decl.init)
        for f in self.program.functions():
            self.func(f)
        if "main" in self.functions and self.functions["main"].params:
            raise UnsupportedConstruct("main with parameters", self.functions["main"].span)
        self.program.struct_layouts = self.structs
        self.program.address_taken = self.address_taken


def resolve(program: Program) -> Program:
    _Resolver(program).run()
    set_struct_table(program.struct_layouts)
    return program
