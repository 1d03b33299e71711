"""Tri-pipeline graph network over the AST, CFG and DFG views of a function.

Each view runs the same hierarchical stack with the same weights:

    CGCN update -> SAG scores -> top-k pooling with tanh gating -> soft-attention read-out

The per-layer read-outs of a view are summed, the three view vectors are
concatenated (AST, DFG, CFG) and a one-hidden-layer MLP with a sigmoid
output gives per-class probabilities.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .encoder import encode_sequences
from .frontend import NodeType
from .graphs import EdgeType, EmptyView, ProgramGraph, ViewKind, extract_view

log = logging.getLogger(__name__)

__all__ = [
    "ModelConfig",
    "ShapeMismatch",
    "GraphExample",
    "ViewBatch",
    "Batch",
    "init_params",
    "featurize",
    "collate",
    "cgcn_layer",
    "sag_scores",
    "sag_pool",
    "soft_attention_readout",
    "hierarchical_forward",
    "fuse_and_classify",
    "forward",
    "predict_proba",
    "save_checkpoint",
    "load_checkpoint",
    "VIEW_ORDER",
    "FUSION_ORDER",
]

N_TYPES = len(NodeType)
N_EDGE_TYPES = len(EdgeType)
# views are evaluated in this order; fusion concatenates in FUSION_ORDER
VIEW_ORDER = (ViewKind.AST, ViewKind.CFG, ViewKind.DFG)
FUSION_ORDER = (ViewKind.AST, ViewKind.DFG, ViewKind.CFG)


class ShapeMismatch(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int = 2
    n_classes: int = 1
    n_types: int = N_TYPES
    n_edge_types: int = N_EDGE_TYPES
    d_tok: int = 32
    attn_heads: int = 2
    ff_hidden: int = 64
    max_len: int = 32
    readout_heads: int = 1
    d_head: int = 16
    layer_norm: bool = True
    width: int = 128
    layers: int = 3
    pool_ratio: float = 0.5
    readout_hidden: int = 128
    fusion_hidden: int = 128
    dtype: str = "float64"
    seed: int = 0

    @property
    def d_enc(self) -> int:
        return self.readout_heads * self.d_head

    @property
    def node_width(self) -> int:
        return self.n_types + self.d_enc

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, int]]:
    d, w = cfg.d_tok, cfg.width
    shapes: dict[str, tuple[int, int]] = {"enc.embed": (cfg.vocab_size, d)}
    for name in ("q", "k", "v", "o"):
        shapes[f"enc.{name}.W"] = (d, d)
        shapes[f"enc.{name}.b"] = (1, d)
    shapes["enc.ff1.W"], shapes["enc.ff1.b"] = (d, cfg.ff_hidden), (1, cfg.ff_hidden)
    shapes["enc.ff2.W"], shapes["enc.ff2.b"] = (cfg.ff_hidden, d), (1, d)
    if cfg.layer_norm:
        for ln in ("ln1", "ln2"):
            shapes[f"enc.{ln}.g"] = (1, d)
            shapes[f"enc.{ln}.b"] = (1, d)
    for h in range(cfg.readout_heads):
        pre = f"enc.read{h}"
        shapes[pre + ".score1.W"], shapes[pre + ".score1.b"] = (d, d), (1, d)
        shapes[pre + ".score2.W"], shapes[pre + ".score2.b"] = (d, 1), (1, 1)
        shapes[pre + ".value1.W"], shapes[pre + ".value1.b"] = (d, d), (1, d)
        shapes[pre + ".value2.W"], shapes[pre + ".value2.b"] = (d, cfg.d_head), (1, cfg.d_head)
    shapes["lift.W"], shapes["lift.b"] = (cfg.node_width, w), (1, w)
    msg_in = 2 * w + cfg.n_edge_types
    for layer in range(cfg.layers):
        pre = f"L{layer}"
        shapes[pre + ".cgcn.W1"], shapes[pre + ".cgcn.b1"] = (msg_in, w), (1, w)
        shapes[pre + ".cgcn.W2"], shapes[pre + ".cgcn.b2"] = (msg_in, w), (1, w)
        shapes[pre + ".sag.theta1"] = (w, 1)
        shapes[pre + ".sag.theta2"] = (w, 1)
        for mlp in ("mlp1", "mlp2"):
            shapes[f"{pre}.{mlp}.h.W"], shapes[f"{pre}.{mlp}.h.b"] = (w, cfg.readout_hidden), (1, cfg.readout_hidden)
            shapes[f"{pre}.{mlp}.o.W"], shapes[f"{pre}.{mlp}.o.b"] = (cfg.readout_hidden, w), (1, w)
    shapes["fuse.h.W"], shapes["fuse.h.b"] = (3 * w, cfg.fusion_hidden), (1, cfg.fusion_hidden)
    shapes["fuse.o.W"], shapes["fuse.o.b"] = (cfg.fusion_hidden, cfg.n_classes), (1, cfg.n_classes)
    return shapes


def init_params(cfg: ModelConfig) -> dict[str, ad.Tensor]:
    """Glorot-uniform matrices, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in _param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name.endswith(".g"):
            value = np.ones(shape)
        elif leaf.startswith("b"):
            value = np.zeros(shape)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            value = rng.uniform(-limit, limit, size=shape)
        params[name] = ad.tensor(value.astype(cfg.dtype), name=name)
    return params


def parameter_count(params: Mapping[str, ad.Tensor]) -> int:
    return sum(p.data.size for p in params.values())


# -- featurization ---------------------------------------------------------

@dataclass
class GraphExample:
    """Index arrays for one graph; independent of model parameters."""

    types: np.ndarray                 # (n,) node type index
    codes: list[tuple[int, ...]]      # token ids per node (empty for synthetic nodes)
    views: dict[ViewKind, tuple[np.ndarray, np.ndarray]]  # node ids, local edges (e, 3)
    label: np.ndarray | None = None
    name: str = ""

    @property
    def n_nodes(self) -> int:
        return len(self.types)


def featurize(g: ProgramGraph, dictionary, max_len: int = 32, label=None) -> GraphExample:
    codes = []
    truncated = 0
    for n in g.nodes:
        ids = tuple(dictionary.encode(n.tokens)) if n.tokens else ()
        if len(ids) > max_len:
            truncated += 1
            ids = ids[:max_len]
        codes.append(ids)
    if truncated:
        log.warning("%s: truncated code of %d node(s) to %d tokens", g.name or "graph", truncated, max_len)
    views = {}
    for kind in VIEW_ORDER:
        try:
            view = extract_view(g, kind)
        except EmptyView:
            views[kind] = (np.zeros(0, dtype=np.int64), np.zeros((0, 3), dtype=np.int64))
            continue
        ids = np.asarray(view.node_ids, dtype=np.int64)
        local = {nid: i for i, nid in enumerate(view.node_ids)}
        edges = np.asarray([(local[s], local[d], int(t)) for s, d, t in view.edges],
                           dtype=np.int64).reshape(-1, 3)
        views[kind] = (ids, edges)
    types = np.asarray([int(n.node_type) for n in g.nodes], dtype=np.int64)
    lab = None if label is None else np.asarray(label, dtype=float)
    return GraphExample(types, codes, views, lab, g.name)


@dataclass
class ViewBatch:
    """One view of a disjoint-union batch (row-stacked, segment ids per node)."""

    rows: np.ndarray       # index into the batch node table
    segment: np.ndarray    # graph index per view node
    edges: np.ndarray      # (e, 3) in view-local positions: src, dst, type
    n_graphs: int

    @property
    def n_nodes(self) -> int:
        return len(self.rows)

    def messages(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(target, source, type) for both directions of every edge."""
        s, d, t = self.edges[:, 0], self.edges[:, 1], self.edges[:, 2]
        return np.concatenate([d, s]), np.concatenate([s, d]), np.concatenate([t, t])


@dataclass
class Batch:
    types: np.ndarray
    node_code: np.ndarray          # (N,) index into unique_codes
    unique_codes: list[tuple[int, ...]]
    views: dict[ViewKind, ViewBatch]
    labels: np.ndarray | None
    n_graphs: int


def collate(examples: Sequence[GraphExample]) -> Batch:
    types, node_code, labels = [], [], []
    uniq: dict[tuple[int, ...], int] = {}
    rows: dict[ViewKind, list] = {k: [] for k in VIEW_ORDER}
    segs: dict[ViewKind, list] = {k: [] for k in VIEW_ORDER}
    edges: dict[ViewKind, list] = {k: [] for k in VIEW_ORDER}
    view_offset = {k: 0 for k in VIEW_ORDER}
    node_offset = 0
    for gi, ex in enumerate(examples):
        types.append(ex.types)
        for code in ex.codes:
            node_code.append(uniq.setdefault(code, len(uniq)))
        for kind in VIEW_ORDER:
            ids, e = ex.views[kind]
            rows[kind].append(ids + node_offset)
            segs[kind].append(np.full(len(ids), gi, dtype=np.int64))
            if len(e):
                shifted = e.copy()
                shifted[:, :2] += view_offset[kind]
                edges[kind].append(shifted)
            view_offset[kind] += len(ids)
        node_offset += ex.n_nodes
        if ex.label is not None:
            labels.append(ex.label)
    views = {}
    for kind in VIEW_ORDER:
        e = np.concatenate(edges[kind]) if edges[kind] else np.zeros((0, 3), dtype=np.int64)
        views[kind] = ViewBatch(np.concatenate(rows[kind]).astype(np.int64),
                                np.concatenate(segs[kind]).astype(np.int64), e, len(examples))
    lab = np.stack(labels) if len(labels) == len(examples) and labels else None
    codes = [None] * len(uniq)
    for code, i in uniq.items():
        codes[i] = code
    return Batch(np.concatenate(types), np.asarray(node_code, dtype=np.int64), codes, views, lab, len(examples))


# -- layers ----------------------------------------------------------------

def _linear(x, p, name):
    return ad.add(ad.matmul(x, p[name + ".W"]), p[name + ".b"])


def _mlp(x, p, name):
    return _linear(ad.relu(_linear(x, p, name + ".h")), p, name + ".o")


def cgcn_layer(x: ad.Tensor, view: ViewBatch, p, layer: int, n_edge_types: int = N_EDGE_TYPES) -> ad.Tensor:
    """x'_i = x_i + sum_j sigmoid([x_i, x_j, e_ij] W1 + b1) * softplus([x_i, x_j, e_ij] W2 + b2).

    Messages run along both directions of every edge, carrying the edge's
    one-hot type.  The product with the concatenation is evaluated blockwise,
    ``x_i W[:w] + x_j W[w:2w] + W[2w:][type]``, so node rows are projected
    once instead of once per message.
    """
    if view.n_nodes == 0 or len(view.edges) == 0:
        return x
    target, source, etype = view.messages()
    w = x.shape[1]
    pre = f"L{layer}.cgcn"
    W = ad.concat_cols([p[pre + ".W1"], p[pre + ".W2"]])
    b = ad.concat_cols([p[pre + ".b1"], p[pre + ".b2"]])
    z = ad.gather_sum([
        (ad.matmul(x, ad.slice_rows(W, 0, w)), target),
        (ad.matmul(x, ad.slice_rows(W, w, 2 * w)), source),
        (ad.slice_rows(W, 2 * w, 2 * w + n_edge_types), etype),
        (b, None),
    ])
    msg = ad.gated_softplus(ad.slice_cols(z, 0, w), ad.slice_cols(z, w, 2 * w))
    return ad.add(x, ad.segment_sum(msg, target, view.n_nodes))


def sag_scores(x: ad.Tensor, view: ViewBatch, p, layer: int) -> ad.Tensor:
    """alpha_i = x_i theta1 + sum_{j in N(i)} x_j theta2, one score per node (n x 1)."""
    pre = f"L{layer}.sag"
    own = ad.matmul(x, p[pre + ".theta1"])
    if len(view.edges) == 0:
        return own
    target, source, _ = view.messages()
    neigh = ad.row_select(ad.matmul(x, p[pre + ".theta2"]), source)
    return ad.add(own, ad.segment_sum(neigh, target, view.n_nodes))


def top_k_per_segment(scores: np.ndarray, segment: np.ndarray, ratio: float) -> np.ndarray:
    """Sorted row indices kept: ceil(ratio * N) per segment, ties to the smaller index."""
    keep = []
    for s in np.unique(segment):
        members = np.flatnonzero(segment == s)
        k = max(1, math.ceil(ratio * len(members)))
        order = np.lexsort((members, -scores[members]))
        keep.append(members[order[:k]])
    return np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.int64)


def sag_pool(x: ad.Tensor, alpha: ad.Tensor, view: ViewBatch, ratio: float) -> tuple[ad.Tensor, ViewBatch]:
    """Keep the top-scoring nodes of each graph, gate them by tanh(alpha), drop other edges."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"pool ratio must lie in (0, 1], got {ratio}")
    if view.n_nodes == 0:
        return x, view
    keep = top_k_per_segment(alpha.data[:, 0], view.segment, ratio)
    remap = np.full(view.n_nodes, -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    e = view.edges
    alive = (remap[e[:, 0]] >= 0) & (remap[e[:, 1]] >= 0) if len(e) else np.zeros(0, dtype=bool)
    new_edges = e[alive].copy()
    new_edges[:, 0] = remap[new_edges[:, 0]]
    new_edges[:, 1] = remap[new_edges[:, 1]]
    ones = ad.constant(np.ones((1, x.shape[1]), dtype=x.data.dtype))
    gate = ad.matmul(ad.tanh(ad.row_select(alpha, keep)), ones)
    pooled = ad.mul(ad.row_select(x, keep), gate)
    return pooled, ViewBatch(view.rows[keep], view.segment[keep], new_edges, view.n_graphs)


def soft_attention_readout(x: ad.Tensor, view: ViewBatch, p, layer: int) -> ad.Tensor:
    """O = sum_i softmax_over_nodes(MLP1(x_i)) * MLP2(x_i), per graph (n_graphs x width).

    The softmax runs across the nodes of one graph separately for every
    channel.  Graphs without nodes in this view read out as zeros.
    """
    if view.n_nodes == 0:
        return ad.constant(np.zeros((view.n_graphs, x.shape[1]), dtype=x.data.dtype))
    pre = f"L{layer}"
    weights = ad.segment_softmax(_mlp(x, p, pre + ".mlp1"), view.segment, view.n_graphs)
    return ad.segment_sum(ad.mul(weights, _mlp(x, p, pre + ".mlp2")), view.segment, view.n_graphs)


def hierarchical_forward(x: ad.Tensor, view: ViewBatch, p, cfg: ModelConfig,
                         trace: list | None = None) -> ad.Tensor:
    """Sum of per-layer read-outs for one view; ``x`` holds the view's node rows.

    ``trace`` (if given) receives one dict per layer: the pre-pool scores
    ``alpha`` with their ``segment`` ids, and the kept node ``counts`` per graph.
    """
    total = None
    for layer in range(cfg.layers):
        x = cgcn_layer(x, view, p, layer, cfg.n_edge_types)
        alpha = sag_scores(x, view, p, layer)
        segment = view.segment
        x, view = sag_pool(x, alpha, view, cfg.pool_ratio)
        if trace is not None:
            trace.append({"alpha": alpha.data[:, 0].copy(), "segment": segment,
                          "counts": np.bincount(view.segment, minlength=view.n_graphs)})
        out = soft_attention_readout(x, view, p, layer)
        total = out if total is None else ad.add(total, out)
    return total


def fuse_and_classify(g_ast: ad.Tensor, g_dfg: ad.Tensor, g_cfg: ad.Tensor, p) -> ad.Tensor:
    """sigmoid(MLP([g_AST, g_DFG, g_CFG])) -> n_graphs x M probabilities."""
    w = p["fuse.h.W"].shape[0] // 3
    for g in (g_ast, g_dfg, g_cfg):
        if g.shape[1] != w:
            raise ad.ShapeError(f"graph vectors must be {w} wide, got {g.shape}")
    h = ad.concat_cols([g_ast, g_dfg, g_cfg])
    return ad.sigmoid(_mlp(h, p, "fuse"))


def node_features(batch: Batch, p, cfg: ModelConfig) -> ad.Tensor:
    """[one-hot(type), code encoding] per node, lifted to the working width."""
    dtype = p["lift.W"].data.dtype
    enc = encode_sequences(batch.unique_codes, p, cfg)
    onehot = np.zeros((len(batch.types), cfg.n_types), dtype=dtype)
    onehot[np.arange(len(batch.types)), batch.types] = 1.0
    feats = ad.concat_cols([ad.constant(onehot), ad.row_select(enc, batch.node_code)])
    return _linear(feats, p, "lift")


def forward(batch: Batch, p, cfg: ModelConfig, active: Sequence[ViewKind] | None = None,
            return_views: bool = False, dropout: float = 0.0, rng: np.random.Generator | None = None):
    """Probabilities for every graph of the batch.

    ``active`` restricts the pipelines that run; the others contribute zero
    vectors (single-view ablation).  ``dropout`` > 0 applies inverted dropout
    to the lifted node features and needs ``rng``.
    """
    x = node_features(batch, p, cfg)
    if dropout > 0.0:
        keep = (rng.random(x.shape) >= dropout).astype(x.data.dtype) / (1.0 - dropout)
        x = ad.mul(x, ad.constant(keep))
    zero = ad.constant(np.zeros((batch.n_graphs, cfg.width), dtype=x.data.dtype))
    vectors = {}
    for kind in VIEW_ORDER:
        view = batch.views[kind]
        if (active is not None and kind not in active) or view.n_nodes == 0:
            vectors[kind] = zero
            continue
        vectors[kind] = hierarchical_forward(ad.row_select(x, view.rows), view, p, cfg)
    y = fuse_and_classify(*(vectors[k] for k in FUSION_ORDER), p)
    return (y, vectors) if return_views else y


def predict_proba(examples: Sequence[GraphExample], p, cfg: ModelConfig, batch_size: int = 64,
                  active: Sequence[ViewKind] | None = None) -> np.ndarray:
    out = []
    frozen = _frozen(p)
    for i in range(0, len(examples), batch_size):
        batch = collate(examples[i:i + batch_size])
        out.append(forward(batch, frozen, cfg, active).data)
    if not out:
        return np.zeros((0, cfg.n_classes))
    return np.concatenate(out)


def _frozen(p):
    # constants record no backward closures, so inference builds no graph
    return {k: ad.Tensor(v.data) for k, v in p.items()}


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(path, params: Mapping[str, ad.Tensor], cfg: ModelConfig, extra: dict | None = None) -> None:
    """npz container: one array per tensor plus a JSON header describing them."""
    header = {
        "format": "vulngnn-checkpoint/1",
        "config": asdict(cfg),
        "config_hash": cfg.digest(),
        "tensors": [{"name": k, "shape": list(v.shape), "dtype": str(v.data.dtype)} for k, v in params.items()],
        "extra": extra or {},
    }
    arrays = {f"t/{k}": v.data for k, v in params.items()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path, expect: ModelConfig | None = None):
    """Return (params, config, extra); refuses tensors whose shape disagrees with the config."""
    with np.load(path) as z:
        header = json.loads(bytes(z["__header__"]).decode())
        cfg = ModelConfig(**header["config"])
        if expect is not None and expect.digest() != cfg.digest():
            raise ShapeMismatch(f"checkpoint config {cfg.digest()} != expected {expect.digest()}")
        shapes = _param_shapes(cfg)
        params = {}
        for meta in header["tensors"]:
            name = meta["name"]
            arr = z[f"t/{name}"]
            if name not in shapes or tuple(arr.shape) != shapes[name]:
                raise ShapeMismatch(f"tensor {name} has shape {arr.shape}, config expects {shapes.get(name)}")
            params[name] = ad.tensor(arr.astype(cfg.dtype), name=name)
        missing = set(shapes) - set(params)
        if missing:
            raise ShapeMismatch(f"checkpoint lacks tensors: {sorted(missing)}")
    return params, cfg, header.get("extra", {})
