import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vulngnn.frontend import (LexError, NodeType, ParseError, TokenKind, parse, parse_functions,
                              parse_source, tokenize)

from programs import random_program

SNIPPET = """int f(int n) {
    int x = read_int();
    if (x < n) {
        g(x);
    }
    return x;
}
"""


def test_tokenize_declaration():
    toks = tokenize("int a = 0;")
    assert [(t.kind, t.text) for t in toks] == [
        (TokenKind.KEYWORD, "int"),
        (TokenKind.IDENTIFIER, "a"),
        (TokenKind.OPERATOR, "="),
        (TokenKind.INT, "0"),
        (TokenKind.PUNCT, ";"),
    ]


def test_tokenize_empty():
    assert tokenize("") == []


def test_lex_error_position():
    with pytest.raises(LexError) as info:
        tokenize("int a @ 0;")
    assert info.value.line == 1
    assert info.value.col == 7


def test_positions_and_comments():
    toks = tokenize("int a; // note\n/* block\n comment */ a = 1;")
    assert [t.text for t in toks] == ["int", "a", ";", "a", "=", "1", ";"]
    assert (toks[3].line, toks[3].col) == (3, 13)


def test_spans_reproduce_source():
    src = "int  f ( int a ){\n  return a+1 ;}\n"
    for t in tokenize(src):
        assert src[t.offset:t.offset + len(t.text)] == t.text


def test_minimal_function():
    root = parse_source("void f() {}")
    assert root.node_type is NodeType.FunctionDef
    kinds = [c.node_type for c in root.children]
    assert kinds == [NodeType.TypeName, NodeType.Identifier, NodeType.ParamList, NodeType.Block]
    assert root.children[2].children == [] and root.children[3].children == []
    assert root.name == "f"


def test_missing_semicolon():
    with pytest.raises(ParseError) as info:
        parse_source("void f() { return }")
    assert info.value.token.text == "}"
    assert info.value.line == 1


def test_snippet_shape():
    root = parse_source(SNIPPET)
    body = root.children[3]
    stmts = [c.node_type for c in body.children]
    assert stmts == [NodeType.DeclStatement, NodeType.IfStatement, NodeType.ReturnStatement]
    if_stmt = body.children[1]
    assert if_stmt.children[0].node_type is NodeType.Condition
    cond = if_stmt.children[0].children[0]
    assert cond.node_type is NodeType.BinaryOp and [t.text for t in cond.tokens] == ["<"]


def test_precedence():
    root = parse_source("int f() { return a || b && c == d + e * -f; }")
    expr = root.children[3].children[0].children[0]
    ops = []
    node = expr
    while node.node_type in (NodeType.BinaryOp, NodeType.UnaryOp):
        ops.append(node.tokens[0].text)
        node = node.children[-1]
    assert ops == ["||", "&&", "==", "+", "*", "-"]


def test_left_associative():
    root = parse_source("int f() { return a - b - c; }")
    expr = root.children[3].children[0].children[0]
    assert expr.children[0].node_type is NodeType.BinaryOp
    assert expr.children[1].node_type is NodeType.Identifier


def test_array_and_string_declarations():
    root = parse_source('void f() { int buf[16]; char* s = "hi"; buf[2] = 3; }')
    decl, sdecl, assign = root.children[3].children
    assert [c.node_type for c in decl.children] == [NodeType.TypeName, NodeType.Identifier, NodeType.IntLiteral]
    assert sdecl.children[2].node_type is NodeType.StringLiteral
    assert assign.children[0].node_type is NodeType.IndexExpression


def test_if_else_and_while():
    root = parse_source("void f(int a) { while (a > 0) { a = a - 1; } if (a) { g(); } else { h(); } }")
    loop, branch = root.children[3].children
    assert [c.node_type for c in loop.children] == [NodeType.Condition, NodeType.Block]
    assert [c.node_type for c in branch.children] == [NodeType.Condition, NodeType.Block, NodeType.Block]


def test_several_functions():
    roots = parse_functions(tokenize("void f() {} int g(int x) { return x; }"))
    assert [r.name for r in roots] == ["f", "g"]
    with pytest.raises(ParseError):
        parse(tokenize("void f() {} void g() {}"))


def test_preorder_ids():
    root = parse_source(SNIPPET)
    ids = [n.id for n in root.walk()]
    assert ids == list(range(len(ids)))


def _owned_in_order(root):
    owned = [t for n in root.walk() for t in n.tokens]
    return sorted(owned, key=lambda t: t.offset)


def _check_tree(src):
    toks = tokenize(src)
    root = parse(toks)
    owned = _owned_in_order(root)
    # every token is owned by exactly one node, and ownership reproduces the stream
    assert [t.offset for t in owned] == [t.offset for t in toks]
    assert [t.text for t in owned] == [t.text for t in toks]
    for n in root.walk():
        if n.is_leaf:
            assert n.tokens
    assert len({n.id for n in root.walk()}) == len(list(root.walk()))
    # determinism
    again = parse(tokenize(src))
    assert [(n.id, n.node_type, [t.text for t in n.tokens]) for n in again.walk()] == \
        [(n.id, n.node_type, [t.text for t in n.tokens]) for n in root.walk()]


def test_round_trip_snippet():
    _check_tree(SNIPPET)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_random_programs(seed):
    _check_tree(random_program(np.random.default_rng(seed)))


@settings(max_examples=100, deadline=None)
@given(st.text(alphabet="ab1 ;=(){}+", max_size=30))
def test_garbage_fails_cleanly(text):
    try:
        parse_source("void f() {" + text + "}")
    except (ParseError, LexError):
        pass
