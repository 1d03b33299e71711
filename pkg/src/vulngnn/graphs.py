"""Program graphs: AST, NCS, CFG and DFG edges over one shared node set."""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, replace

from .frontend import AstNode, NodeType, parse_source

__all__ = [
    "EdgeType",
    "ViewKind",
    "GraphNode",
    "ProgramGraph",
    "GraphView",
    "GraphTooLarge",
    "EmptyView",
    "DEFAULT_MAX_NODES",
    "build_ast_edges",
    "add_ncs_edges",
    "build_cfg",
    "build_dfg",
    "add_call_edges",
    "build_program_graph",
    "graph_from_source",
    "extract_view",
    "definitions_and_uses",
]

DEFAULT_MAX_NODES = 500


class EdgeType(enum.IntEnum):
    AST_CHILD = 0
    NCS = 1
    CFG_NEXT = 2
    CFG_TRUE = 3
    CFG_FALSE = 4
    CFG_ENTRY = 5
    CFG_EXIT = 6
    DFG_USE_DEF = 7
    DFG_DEF = 8
    DFG_USE = 9
    CALL_ARG = 10
    RETURN_FLOW = 11
    RESERVED = 12


N_EDGE_TYPES = len(EdgeType)

AST_EDGES = frozenset({EdgeType.AST_CHILD, EdgeType.NCS})
CFG_EDGES = frozenset({EdgeType.CFG_NEXT, EdgeType.CFG_TRUE, EdgeType.CFG_FALSE,
                       EdgeType.CFG_ENTRY, EdgeType.CFG_EXIT})
DFG_EDGES = frozenset({EdgeType.DFG_USE_DEF, EdgeType.DFG_DEF, EdgeType.DFG_USE})

# statements that occupy one CFG node
SIMPLE_STATEMENTS = frozenset({NodeType.DeclStatement, NodeType.AssignStatement,
                               NodeType.ExprStatement, NodeType.ReturnStatement})


class ViewKind(enum.Enum):
    AST = "AST"
    CFG = "CFG"
    DFG = "DFG"


VIEW_EDGES = {ViewKind.AST: AST_EDGES, ViewKind.CFG: CFG_EDGES, ViewKind.DFG: DFG_EDGES}


class GraphTooLarge(ValueError):
    pass


class EmptyView(ValueError):
    pass


@dataclass(frozen=True)
class GraphNode:
    id: int
    node_type: NodeType
    tokens: tuple[str, ...]
    line: int
    col: int = 0
    synthetic: bool = False


Edge = tuple[int, int, EdgeType]


@dataclass(frozen=True)
class ProgramGraph:
    nodes: tuple[GraphNode, ...]
    edges: tuple[Edge, ...]
    name: str = ""
    entry: int | None = None
    exit: int | None = None

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    def edges_of(self, *types: EdgeType) -> list[Edge]:
        wanted = set(types)
        return [e for e in self.edges if e[2] in wanted]

    def children(self) -> dict[int, list[int]]:
        """AST child lists in source order."""
        kids: dict[int, list[int]] = defaultdict(list)
        for s, d, t in self.edges:
            if t is EdgeType.AST_CHILD:
                kids[s].append(d)
        return kids

    def structurally_equal(self, other: ProgramGraph) -> bool:
        return (self.nodes == other.nodes and sorted(self.edges) == sorted(other.edges)
                and self.name == other.name)


@dataclass(frozen=True)
class GraphView:
    kind: ViewKind
    node_ids: tuple[int, ...]
    edges: tuple[Edge, ...]


def _code_tokens(node: AstNode) -> tuple[str, ...]:
    # compound constructs are summarised by their header, like a statement label
    nt = node.node_type
    if nt is NodeType.FunctionDef:
        toks = [t for c in node.children[:3] for t in c.span_tokens()]
    elif nt is NodeType.Block:
        toks = list(node.tokens)
    elif nt in (NodeType.IfStatement, NodeType.WhileStatement):
        toks = [node.tokens[0], *node.children[0].span_tokens()]
    else:
        toks = node.span_tokens()
    toks.sort(key=lambda t: t.offset)
    return tuple(t.text for t in toks)


def _with_edges(g: ProgramGraph, new: list[Edge], **changes) -> ProgramGraph:
    seen = set(g.edges)
    edges = list(g.edges)
    for e in new:
        if e not in seen:
            seen.add(e)
            edges.append(e)
    return replace(g, edges=tuple(edges), **changes)


def build_ast_edges(root: AstNode, max_nodes: int = DEFAULT_MAX_NODES) -> ProgramGraph:
    """Nodes of the AST plus one parent->child edge per containment pair."""
    ast_nodes = sorted(root.walk(), key=lambda n: n.id)
    if len(ast_nodes) > max_nodes:
        raise GraphTooLarge(f"{len(ast_nodes)} nodes exceeds cap of {max_nodes}")
    nodes = []
    for n in ast_nodes:
        first = n.span_tokens()[0]
        nodes.append(GraphNode(n.id, n.node_type, _code_tokens(n), first.line, first.col))
    edges = tuple((n.id, c.id, EdgeType.AST_CHILD) for n in ast_nodes for c in n.children)
    return ProgramGraph(tuple(nodes), edges, name=root.name or "")


def add_ncs_edges(g: ProgramGraph) -> ProgramGraph:
    """Chain AST leaves in source order with NCS edges."""
    has_child = {s for s, _, t in g.edges if t is EdgeType.AST_CHILD}
    leaves = [n for n in g.nodes if not n.synthetic and n.id not in has_child]
    leaves.sort(key=lambda n: (n.line, n.col))
    return _with_edges(g, [(a.id, b.id, EdgeType.NCS) for a, b in zip(leaves, leaves[1:])])


def build_cfg(g: ProgramGraph, max_nodes: int = DEFAULT_MAX_NODES) -> ProgramGraph:
    """Add synthetic ENTRY/EXIT nodes and statement-level control-flow edges.

    Fall-through edges are CFG_NEXT (including ENTRY->first and last->EXIT),
    branch edges leave a Condition as CFG_TRUE/CFG_FALSE, a return jumps to
    EXIT with CFG_EXIT, and the function root links to ENTRY with CFG_ENTRY.
    """
    if g.node_count + 2 > max_nodes:
        raise GraphTooLarge(f"{g.node_count + 2} nodes exceeds cap of {max_nodes}")
    kids = g.children()
    types = {n.id: n.node_type for n in g.nodes}
    entry, exit_ = g.node_count, g.node_count + 1
    edges: list[Edge] = []

    def connect(preds, target):
        for p, t in preds:
            edges.append((p, target, t))

    def lower(sid, preds):
        nt = types[sid]
        if nt is NodeType.Block:
            for child in kids[sid]:
                preds = lower(child, preds)
            return preds
        if nt is NodeType.IfStatement:
            cond, then, *rest = kids[sid]
            connect(preds, cond)
            out = lower(then, [(cond, EdgeType.CFG_TRUE)])
            if rest:
                out = out + lower(rest[0], [(cond, EdgeType.CFG_FALSE)])
            else:
                out = out + [(cond, EdgeType.CFG_FALSE)]
            return out
        if nt is NodeType.WhileStatement:
            cond, body = kids[sid]
            connect(preds, cond)
            connect(lower(body, [(cond, EdgeType.CFG_TRUE)]), cond)
            return [(cond, EdgeType.CFG_FALSE)]
        if nt is NodeType.ReturnStatement:
            connect(preds, sid)
            edges.append((sid, exit_, EdgeType.CFG_EXIT))
            return []
        connect(preds, sid)
        return [(sid, EdgeType.CFG_NEXT)]

    root = g.nodes[0].id
    body = kids[root][3]
    edges.append((root, entry, EdgeType.CFG_ENTRY))
    connect(lower(body, [(entry, EdgeType.CFG_NEXT)]), exit_)

    synth = (GraphNode(entry, NodeType.Block, (), 0, 0, True),
             GraphNode(exit_, NodeType.Block, (), 0, 0, True))
    return _with_edges(replace(g, nodes=g.nodes + synth), edges, entry=entry, exit=exit_)


def definitions_and_uses(g: ProgramGraph):
    """Per CFG node: the variable it defines (with the defining node and the
    Identifier naming it) and the Identifier nodes it reads.

    Returns ``(defs, uses)`` where ``defs[cfg_node]`` is a list of
    ``(def_node, var, ident_node)`` and ``uses[cfg_node]`` a list of
    ``(ident_node, var)``.  Parameters are defined at ENTRY.
    """
    kids = g.children()
    types = {n.id: n.node_type for n in g.nodes}

    def name_of(nid):
        # grouping parens are owned by the Identifier; the name is the middle token
        toks = [t for t in g.nodes[nid].tokens if t not in "()"]
        return toks[0]

    def reads(nid, out):
        nt = types[nid]
        if nt is NodeType.Identifier:
            out.append((nid, name_of(nid)))
        elif nt is NodeType.CallExpression:
            reads(kids[nid][1], out)  # skip the callee name
        else:
            for c in kids[nid]:
                reads(c, out)
        return out

    defs: dict[int, list] = defaultdict(list)
    uses: dict[int, list] = defaultdict(list)
    root = g.nodes[0].id
    for p in kids[kids[root][2]]:
        ident = kids[p][1]
        defs[g.entry].append((p, name_of(ident), ident))

    cfg_nodes = {s for s, _, t in g.edges if t in CFG_EDGES} | {d for _, d, t in g.edges if t in CFG_EDGES}
    for nid in cfg_nodes:
        nt = types[nid]
        ch = kids[nid]
        if nt is NodeType.DeclStatement:
            ident = ch[1]
            for c in ch[2:]:
                reads(c, uses[nid])
            defs[nid].append((nid, name_of(ident), ident))
        elif nt is NodeType.AssignStatement:
            target, value = ch
            reads(value, uses[nid])
            if types[target] is NodeType.IndexExpression:
                base, index = kids[target]
                reads(index, uses[nid])
                # an element write defines the array only when the base is a plain name
                if types[base] is NodeType.Identifier:
                    defs[nid].append((nid, name_of(base), base))
                else:
                    reads(base, uses[nid])
            else:
                defs[nid].append((nid, name_of(target), target))
        elif nt in (NodeType.ExprStatement, NodeType.ReturnStatement, NodeType.Condition):
            for c in ch:
                reads(c, uses[nid])
    return defs, uses


def reaching_definitions(g: ProgramGraph) -> dict[int, set[tuple[int, str]]]:
    """IN sets of (def node, var) at every CFG node, by forward fixpoint."""
    defs, _ = definitions_and_uses(g)
    succ: dict[int, list[int]] = defaultdict(list)
    pred: dict[int, list[int]] = defaultdict(list)
    nodes: set[int] = set()
    for s, d, t in g.edges:
        if t in CFG_EDGES and t is not EdgeType.CFG_ENTRY:
            succ[s].append(d)
            pred[d].append(s)
            nodes.update((s, d))
    by_var: dict[str, set] = defaultdict(set)
    for lst in defs.values():
        for d, v, _ in lst:
            by_var[v].add((d, v))
    gen: dict[int, set] = {}
    kill: dict[int, set] = {}
    for n in nodes:
        gen[n] = {(d, v) for d, v, _ in defs.get(n, [])}
        kill[n] = set()
        for _, v, _ in defs.get(n, []):
            kill[n] |= by_var[v]
        kill[n] -= gen[n]
    IN = {n: set() for n in nodes}
    OUT = {n: set(gen[n]) for n in nodes}
    work = sorted(nodes)
    while work:
        n = work.pop(0)
        new_in = set().union(*(OUT[p] for p in pred[n])) if pred[n] else set()
        IN[n] = new_in
        new_out = gen[n] | (new_in - kill[n])
        if new_out != OUT[n]:
            OUT[n] = new_out
            for s in succ[n]:
                if s not in work:
                    work.append(s)
    return IN


def build_dfg(g: ProgramGraph) -> ProgramGraph:
    """Use-def edges from reaching definitions over the CFG.

    DFG_USE_DEF: defining node -> using CFG node; DFG_DEF: defining node ->
    defined Identifier; DFG_USE: read Identifier -> using CFG node.  DEF and
    USE edges are emitted only for definitions and reads that are linked by
    at least one use-def pair.
    """
    if g.entry is None:
        raise ValueError("build_cfg must run before build_dfg")
    defs, uses = definitions_and_uses(g)
    ident_of = {d: ident for lst in defs.values() for d, _, ident in lst}
    IN = reaching_definitions(g)
    edges: list[Edge] = []
    for u in sorted(uses):
        reaching = IN.get(u, set())
        for ident, var in uses[u]:
            hits = sorted(d for d, v in reaching if v == var)
            for d in hits:
                edges.append((d, u, EdgeType.DFG_USE_DEF))
                edges.append((d, ident_of[d], EdgeType.DFG_DEF))
            if hits:
                edges.append((ident, u, EdgeType.DFG_USE))
    return _with_edges(g, edges)


def add_call_edges(g: ProgramGraph) -> ProgramGraph:
    """CALL_ARG: call -> each argument; RETURN_FLOW: returned value -> function root."""
    kids = g.children()
    edges: list[Edge] = []
    for n in g.nodes:
        if n.node_type is NodeType.CallExpression:
            for arg in kids[kids[n.id][1]]:
                edges.append((n.id, arg, EdgeType.CALL_ARG))
        elif n.node_type is NodeType.ReturnStatement and kids[n.id]:
            edges.append((kids[n.id][0], g.nodes[0].id, EdgeType.RETURN_FLOW))
    return _with_edges(g, edges)


def build_program_graph(root: AstNode, max_nodes: int = DEFAULT_MAX_NODES) -> ProgramGraph:
    g = build_ast_edges(root, max_nodes)
    g = add_ncs_edges(g)
    g = build_cfg(g, max_nodes)
    g = build_dfg(g)
    return add_call_edges(g)


def graph_from_source(source: str, max_nodes: int = DEFAULT_MAX_NODES) -> ProgramGraph:
    return build_program_graph(parse_source(source), max_nodes)


def extract_view(g: ProgramGraph, kind: ViewKind | str) -> GraphView:
    """Sub-graph induced by one edge family; node order follows node ids."""
    kind = ViewKind(kind)
    allowed = VIEW_EDGES[kind]
    edges = tuple(e for e in g.edges if e[2] in allowed)
    if kind is ViewKind.AST:
        ids = tuple(n.id for n in g.nodes)
    else:
        incident = {s for s, _, _ in edges} | {d for _, d, _ in edges}
        ids = tuple(sorted(incident))
    if not ids:
        raise EmptyView(f"{kind.value} view of {g.name or 'graph'} is empty")
    return GraphView(kind, ids, edges)
