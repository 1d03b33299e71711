import json
import random
from pathlib import Path

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vulngnn.corpus import ConfigError, generate_synthetic_corpus
from vulngnn.frontend import NodeType
from vulngnn.graph_io import (FormatError, IoError, Sample, TokenDictionary, build_dictionary, decode_graph,
                              encode_graph, load_dataset, read_jsonl, symbolic_normalize, write_jsonl)
from vulngnn.graphs import CFG_EDGES, EdgeType, graph_from_source

from programs import random_program
from test_graphs import SNIPPET

DATA = Path(__file__).parent / "data"


def test_encode_empty_function():
    g = graph_from_source("void f() {}")
    obj = json.loads(encode_graph(g))
    types = [n["type"] for n in obj["nodes"]]
    assert types == ["FunctionDef", "TypeName", "Identifier", "ParamList", "Block", "Block", "Block"]
    assert [n["synthetic"] for n in obj["nodes"]][-2:] == [True, True]
    assert {e["type"] for e in obj["edges"]} == {"AST_CHILD", "NCS", "CFG_ENTRY", "CFG_NEXT"}
    assert (obj["entry"], obj["exit"]) == (5, 6)


def test_snippet_golden_json():
    g = graph_from_source(SNIPPET)
    golden = json.loads((DATA / "snippet_graph.json").read_text())
    assert json.loads(encode_graph(g)) == golden
    assert decode_graph(golden).structurally_equal(g)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_json_round_trip(seed):
    g = graph_from_source(random_program(np.random.default_rng(seed)))
    back = decode_graph(encode_graph(g))
    assert back.structurally_equal(g)
    assert back == g


def test_dictionary_counts():
    d = build_dictionary([Sample("s", "int a;", (0,))])
    assert d.size == 5
    assert d.encode(["int", "zzz"])[1] == 0  # unseen -> UNK
    assert min(d.index.values()) == 2


def test_dictionary_order_independent():
    samples = generate_synthetic_corpus(30, 0.5, 1)
    shuffled = samples[:]
    random.Random(0).shuffle(shuffled)
    assert build_dictionary(samples).index == build_dictionary(shuffled).index
    d = build_dictionary(samples)
    assert TokenDictionary.from_json(d.to_json()) == d


def test_dictionary_min_count():
    d = build_dictionary([Sample("a", "int a; int b;", (0,))], min_count=2)
    assert set(d.index) == {"int", ";"}


def test_normalize_examples():
    assert symbolic_normalize("int alpha = beta;") == "int VAR_0 = VAR_1;"
    a = symbolic_normalize("int f(int n) { return g(n); }")
    b = symbolic_normalize("int h(int m) { return k(m); }")
    assert a == b == "int FUNC_0(int VAR_0) { return FUNC_1(VAR_0); }"
    s = symbolic_normalize(Sample("x", "int q = 1;", (1,), "test"))
    assert s == Sample("x", "int VAR_0 = 1;", (1,), "test")


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_normalize_idempotent_and_isomorphic(seed):
    src = random_program(np.random.default_rng(seed))
    once = symbolic_normalize(src)
    assert symbolic_normalize(once) == once
    g1, g2 = graph_from_source(src), graph_from_source(once)
    assert [n.node_type for n in g1.nodes] == [n.node_type for n in g2.nodes]
    assert g1.edges == g2.edges


def test_jsonl_round_trip(tmp_path):
    samples = generate_synthetic_corpus(12, 0.5, 4)
    path = tmp_path / "c.jsonl"
    write_jsonl(path, samples)
    assert read_jsonl(path) == samples


def test_format_error_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = Sample("a", "void f() {}", (0,), "train").to_json()
    path.write_text(good + "\n" + good + "\n{not json\n")
    with pytest.raises(FormatError) as info:
        read_jsonl(path)
    assert info.value.line == 3
    path.write_text(good + "\n" + json.dumps({"id": "b", "code": "", "labels": [0, 1], "split": "train"}) + "\n")
    with pytest.raises(FormatError) as info:
        read_jsonl(path)
    assert info.value.line == 2


def test_missing_file():
    with pytest.raises(IoError):
        read_jsonl("/nonexistent/corpus.jsonl")


def test_load_dataset_drops(tmp_path):
    big = "void f() {" + " a = 1;" * 200 + " }"
    rows = [
        Sample("ok", "int f(int a) { return a; }", (1,), "train"),
        Sample("big", big, (0,), "train"),
        Sample("broken", "int f( {", (0,), "valid"),
        Sample("ok2", "void g() {}", (0,), "test"),
    ]
    path = tmp_path / "d.jsonl"
    write_jsonl(path, rows)
    ds = load_dataset(path)
    assert ds.dropped_oversized == 1
    assert ds.dropped_unparseable == 1
    assert [s.id for s, _ in ds.train] == ["ok"]
    assert ds.valid == [] and [s.id for s, _ in ds.test] == ["ok2"]


def test_load_empty_file(tmp_path):
    path = tmp_path / "e.jsonl"
    path.write_text("")
    ds = load_dataset(path)
    assert ds.train == [] and ds.valid == [] and ds.test == []


# -- synthetic corpus ----------------------------------------------------------

def test_corpus_deterministic(tmp_path):
    a = generate_synthetic_corpus(10, 0.5, 7)
    b = generate_synthetic_corpus(10, 0.5, 7)
    write_jsonl(tmp_path / "a.jsonl", a)
    write_jsonl(tmp_path / "b.jsonl", b)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert generate_synthetic_corpus(10, 0.5, 8) != a


def test_corpus_counts():
    c = generate_synthetic_corpus(1000, 0.5, 0)
    assert sum(s.labels[0] for s in c) == 500
    c = generate_synthetic_corpus(100, 0.3, 2)
    assert sum(s.labels[0] for s in c) == 30
    splits = [s.split for s in c]
    assert (splits.count("train"), splits.count("valid"), splits.count("test")) == (80, 10, 10)


def test_corpus_config_errors():
    for ratio in (0.0, 1.0, -0.5, 2.0):
        with pytest.raises(ConfigError):
            generate_synthetic_corpus(10, ratio, 0)
    with pytest.raises(ConfigError):
        generate_synthetic_corpus(10, 0.5, 0, mode="ternary")


def test_multi_label_one_hot():
    c = generate_synthetic_corpus(200, 0.5, 5, mode="multi_label")
    assert all(len(s.labels) == 5 for s in c)
    assert all(sum(s.labels) == (1 if any(s.labels) else 0) for s in c)
    assert sum(any(s.labels) for s in c) == 100
    assert len({s.labels for s in c if any(s.labels)}) == 5
    for s in c:
        graph_from_source(s.code)


def _planted_write(g):
    """(write statement id, index variable) of the array write into the declared buffer."""
    kids = g.children()
    arrays = set()
    for n in g.nodes:
        if n.node_type is NodeType.DeclStatement and len(kids[n.id]) >= 3 \
                and g.nodes[kids[n.id][2]].node_type is NodeType.IntLiteral:
            arrays.add(g.nodes[kids[n.id][1]].tokens[0])
    for n in g.nodes:
        if n.node_type is NodeType.AssignStatement:
            target = kids[n.id][0]
            if g.nodes[target].node_type is NodeType.IndexExpression:
                base, index = kids[target]
                if g.nodes[base].tokens[0] in arrays:
                    return n.id, g.nodes[index].tokens[0]
    raise AssertionError("no planted write")


def _dominating_conditions(g, node):
    cfg = nx.DiGraph()
    cfg.add_edges_from((s, d) for s, d, t in g.edges if t in CFG_EDGES and t is not EdgeType.CFG_ENTRY)
    idom = nx.immediate_dominators(cfg, g.entry)
    out = []
    cur = node
    while cur != g.entry:
        cur = idom[cur]
        if g.nodes[cur].node_type is NodeType.Condition:
            out.append(cur)
    return out


def test_planted_write_dominance():
    for s in generate_synthetic_corpus(120, 0.5, 11):
        g = graph_from_source(s.code)
        write, idx = _planted_write(g)
        doms = _dominating_conditions(g, write)
        if s.labels[0]:
            assert doms == [], s.code
        else:
            assert any(idx in g.nodes[c].tokens for c in doms), s.code


def test_multi_label_overflow_dominance():
    for s in generate_synthetic_corpus(120, 0.5, 12, mode="multi_label"):
        g = graph_from_source(s.code)
        try:
            write, idx = _planted_write(g)
        except AssertionError:
            continue  # no overflow template in this sample
        doms = _dominating_conditions(g, write)
        assert (doms == []) == bool(s.labels[0]), s.code
