"""Parser, resolver, printer, and edit-script behavior."""

import pytest

from chaffc.frontend import (
    AnchorNotFound, ConflictingEdits, EditScript, SyntaxDiagnostic,
    UnsupportedConstruct, apply_edits, parse, print_program,
)
from chaffc.frontend.nodes import (
    Assign, Block, Call, ExprStmt, FuncDef, Ident, If, IntLit, Member,
    Return, iter_nodes, program_stmts, type_size,
)

RICH = """
struct hdr {
    char tag;
    int len;
    char name[5];
};

int counter = 0;
unsigned high = 0x80000000;

int (*hook)(int);

int bump(int d) {
    counter = counter + d;
    return counter;
}

int main(void) {
    struct hdr h;
    char buf[16];
    int n;
    char *p;
    n = read_input(buf, 16);
    h.tag = buf[0];
    h.len = n;
    p = buf + 1;
    hook = bump;
    while (n > 0 && *p) {
        n = n - 1;
        p = p + 1;
    }
    if (h.tag == 'x') {
        n = hook(2);
    } else {
        n = bump(1);
    }
    for (n = 0; n < 3; n = n + 1) {
        print_int(n);
    }
    return 0;
}
"""


def test_print_parse_fixpoint():
    p = parse(RICH, "rich.c")
    once = print_program(p)
    twice = print_program(parse(once, "rich.c"))
    assert once == twice


def test_node_ids_unique_and_bounded():
    p = parse(RICH, "rich.c")
    ids = [n.nid for n in iter_nodes(p)]
    assert len(ids) == len(set(ids))
    assert max(ids) < p.next_id


@pytest.mark.parametrize("expr,printed", [
    ("x = (a + b) + c;", "x = a + b + c;"),
    ("x = a - (b - c);", "x = a - (b - c);"),
    ("x = (a * b) + c;", "x = a * b + c;"),
    ("x = a * (b + c);", "x = a * (b + c);"),
    ("x = -(-a);", "x = -(-a);"),
    # Bitwise & binds looser than ==, so these parens are redundant.
    ("x = (a == b) & 1;", "x = a == b & 1;"),
    ("x = (a & b) == 1;", "x = (a & b) == 1;"),
    ("x = a << (b + 1);", "x = a << b + 1;"),
])
def test_minimal_parens(expr, printed):
    src = "int main(void) { int x; int a; int b; int c; %s return 0; }" % expr
    out = print_program(parse(src, "p.c"))
    assert printed in out


def test_hex_and_unsigned_literals():
    src = "int main(void) { unsigned u; u = 0xFF; u = 4294901760; return 0; }"
    out = print_program(parse(src, "p.c"))
    assert "u = 0xff;" in out
    assert "u = 0xffff0000;" in out


def test_char_and_string_escapes():
    src = r"""
int main(void) {
    char c;
    char *s;
    c = '\n';
    c = '\x7f';
    s = "a\tb\0";
    return 0;
}
"""
    p = parse(src, "p.c")
    out = print_program(p)
    assert r"'\n'" in out and r"'\x7f'" in out and r'"a\tb\0"' in out
    assert print_program(parse(out, "p.c")) == out


def test_hash_lines_skipped():
    src = "#include <stdio.h>\n#define X 1\nint main(void) { return 0; }\n"
    p = parse(src, "p.c")
    assert p.function("main") is not None


@pytest.mark.parametrize("bad", [
    "int main(void) { goto l; }",
    "int main(void) { switch (1) { } }",
    "int main(void) { break; }",
    "int main(void) { continue; }",
    "int main(void) { do { } while (1); }",
    "long x;",
    "static int x;",
    "int x = sizeof(int);",
])
def test_rejected_keywords(bad):
    with pytest.raises(UnsupportedConstruct):
        parse(bad, "bad.c")


@pytest.mark.parametrize("bad", [
    "int x[3][4];",
    "int *x[3];",
    "int main(void) { int x; x = 1; int y; return 0; }",
    "int f(int a, int a) { return 0; }",
    "int main(void) { int x; int x; return 0; }",
    "int main(int argc) { return 0; }",
    "struct s { int a; }; struct s f(void) { }",
    "int f(void); int main(void) { return 0; }",
])
def test_rejected_shapes(bad):
    with pytest.raises((SyntaxDiagnostic, UnsupportedConstruct)):
        parse(bad, "bad.c")


def test_pointer_depth_limit():
    parse("int main(void) { int **pp; return 0; }", "ok.c")
    with pytest.raises(UnsupportedConstruct):
        parse("int main(void) { int ***ppp; return 0; }", "bad.c")


def test_struct_layout_natural_alignment():
    # char at 0, int padded to 4, char[5] at 8, total padded to 16.
    p = parse(RICH, "rich.c")
    size, members = p.struct_layouts["hdr"]
    assert members["tag"][0] == 0
    assert members["len"][0] == 4
    assert members["name"][0] == 8
    assert size == 16


def test_struct_size_helper():
    src = "struct a { char c; }; struct b { char c; int y; }; int main(void) { return 0; }"
    p = parse(src, "s.c")
    assert p.struct_layouts["a"][0] == 1
    assert p.struct_layouts["b"][0] == 8
    from chaffc.frontend.nodes import StructT
    assert type_size(StructT("b")) == 8


def test_nested_struct_members_rejected():
    src = "struct a { int x; }; struct b { struct a inner; }; int main(void) { return 0; }"
    with pytest.raises((SyntaxDiagnostic, UnsupportedConstruct)):
        parse(src, "s.c")


def test_member_offsets_filled():
    p = parse(RICH, "rich.c")
    members = [e for f in p.functions() for s in program_stmts(p)
               for e in _exprs(s) if isinstance(e, Member)]
    assert members
    assert all(m.offset >= 0 for m in members)


def _exprs(s):
    from chaffc.frontend.nodes import stmt_exprs
    return list(stmt_exprs(s))


def test_address_taken_and_indirect_calls():
    p = parse(RICH, "rich.c")
    assert p.address_taken == {"bump"}
    calls = [e for s in program_stmts(p) for e in _exprs(s) if isinstance(e, Call)]
    by_name = {}
    for c in calls:
        by_name.setdefault(c.callee, []).append(c)
    assert all(c.indirect for c in by_name["hook"])
    assert all(not c.indirect for c in by_name["bump"])


def test_scope_keys_nest():
    p = parse(RICH, "rich.c")
    main = p.function("main")
    top_keys = {s.scope_key for s in main.body.stmts}
    assert top_keys == {()}
    ifs = [s for s in program_stmts(p) if isinstance(s, If)]
    target = [s for s in ifs if s.func == "main"][0]
    then_stmt = target.then.stmts[0]
    els_stmt = target.els.stmts[0]
    assert then_stmt.scope_key == ((target.nid, "then"),)
    assert els_stmt.scope_key == ((target.nid, "else"),)


def test_stmt_func_tags():
    p = parse(RICH, "rich.c")
    funcs = {s.func for s in program_stmts(p)}
    assert funcs == {"bump", "main"}


def test_fnptr_declaration_roundtrip():
    src = "int (*cb)(char *, int);\n\nint main(void) {\n    return 0;\n}\n"
    out = print_program(parse(src, "f.c"))
    assert "int (*cb)(char *, int);" in out


def test_fnptr_arity_mismatch_rejected():
    src = """
int one(int a) { return a; }
int (*cb)(int, int);
int main(void) { cb = one; return 0; }
"""
    with pytest.raises(SyntaxDiagnostic):
        parse(src, "f.c")


class TestEdits:
    def _program(self):
        return parse(RICH, "rich.c")

    def test_anchor_ids_stable(self):
        p = self._program()
        main = p.function("main")
        anchor = main.body.stmts[0]
        s = EditScript()
        s.insert_after(anchor.nid, "counter = 9;")
        p2 = apply_edits(p, s)
        kept = [st for st in program_stmts(p2) if st.nid == anchor.nid]
        assert len(kept) == 1
        assert isinstance(kept[0], ExprStmt)

    def test_new_ids_above_old(self):
        p = self._program()
        anchor = p.function("main").body.stmts[0]
        s = EditScript()
        s.insert_before(anchor.nid, "counter = 1; counter = 2;")
        p2 = apply_edits(p, s)
        old_ids = {n.nid for n in iter_nodes(p)}
        new_ids = {n.nid for n in iter_nodes(p2)} - old_ids
        assert new_ids and min(new_ids) >= p.next_id
        assert max(new_ids) < p2.next_id

    def test_insert_order_at_one_anchor(self):
        p = self._program()
        anchor = p.function("main").body.stmts[0]
        s = EditScript()
        s.insert_after(anchor.nid, "counter = 1;")
        s.insert_after(anchor.nid, "counter = 2;")
        p2 = apply_edits(p, s)
        out = print_program(p2)
        assert out.index("counter = 1;") < out.index("counter = 2;")

    def test_globals_precede_functions(self):
        p = self._program()
        s = EditScript()
        s.add_global("unsigned added_g = 0;")
        out = print_program(apply_edits(p, s))
        assert out.index("unsigned added_g = 0;") < out.index("int bump(")

    def test_param_and_call_arg(self):
        # A function whose address is taken cannot gain a parameter
        # without breaking its function-pointer assignments, so this
        # uses a plain direct-call helper.
        src = """
int twice(int v) { return v + v; }
int main(void) {
    int r;
    r = twice(4);
    print_int(r);
    return 0;
}
"""
        p = parse(src, "e.c")
        calls = [e for s in program_stmts(p) for e in _exprs(s)
                 if isinstance(e, Call) and e.callee == "twice"]
        s = EditScript()
        s.add_global("unsigned sink = 0;")
        s.add_param("twice", "unsigned *extra")
        for c in calls:
            s.append_call_arg(c.nid, "&sink")
        p2 = apply_edits(p, s)
        out = print_program(p2)
        assert "int twice(int v, unsigned *extra)" in out
        assert "twice(4, &sink)" in out

    def test_param_append_breaks_taken_address(self):
        p = self._program()
        s = EditScript()
        s.add_param("bump", "unsigned *extra")
        with pytest.raises(SyntaxDiagnostic):
            apply_edits(p, s)

    def test_missing_anchor(self):
        p = self._program()
        s = EditScript()
        s.insert_after(10_000_000, "counter = 1;")
        with pytest.raises(AnchorNotFound):
            apply_edits(p, s)

    def test_unknown_function(self):
        p = self._program()
        s = EditScript()
        s.add_local("nosuch", "int x;")
        with pytest.raises(ConflictingEdits):
            apply_edits(p, s)

    def test_inserted_nodes_resolved(self):
        p = self._program()
        anchor = p.function("main").body.stmts[0]
        s = EditScript()
        s.insert_after(anchor.nid, "if (counter > 1) { counter = 0; }")
        p2 = apply_edits(p, s)
        new_ifs = [st for st in program_stmts(p2)
                   if isinstance(st, If) and st.nid >= p.next_id]
        assert len(new_ifs) == 1
        inner = new_ifs[0].then.stmts[0]
        assert inner.func == "main"
        assert inner.scope_key == ((new_ifs[0].nid, "then"),)

    def test_edit_output_reparses_to_fixpoint(self):
        p = self._program()
        anchor = p.function("main").body.stmts[0]
        s = EditScript()
        s.add_global("char *added_p;")
        s.insert_before(anchor.nid, "added_p = 0;")
        out = print_program(apply_edits(p, s))
        assert print_program(parse(out, "rich.c")) == out
