"""Straight-line reference implementations used as test oracles.

Everything here is written as explicit per-node / per-element loops over
plain numpy arrays and shares no code with the package.  Slow on purpose.
"""

from __future__ import annotations

import math

import numpy as np

N_EDGE_TYPES = 13


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def softplus(z):
    return np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0)


def relu(z):
    return np.maximum(z, 0.0)


# -- graph layers ------------------------------------------------------------

def neighbours(n, edges):
    """For every node: list of (j, edge type) over both directions of each edge."""
    nb = [[] for _ in range(n)]
    for s, d, t in edges:
        nb[d].append((s, t))
        nb[s].append((d, t))
    return nb


def cgcn(x, edges, W1, b1, W2, b2, n_edge_types=N_EDGE_TYPES):
    out = x.copy()
    for i, nb in enumerate(neighbours(len(x), edges)):
        for j, t in nb:
            e = np.zeros(n_edge_types)
            e[t] = 1.0
            z = np.concatenate([x[i], x[j], e])
            out[i] = out[i] + sigmoid(z @ W1 + b1.ravel()) * softplus(z @ W2 + b2.ravel())
    return out


def sag_scores(x, edges, theta1, theta2):
    alpha = np.zeros(len(x))
    for i, nb in enumerate(neighbours(len(x), edges)):
        alpha[i] = x[i] @ theta1.ravel()
        for j, _ in nb:
            alpha[i] += x[j] @ theta2.ravel()
    return alpha


def top_k(alpha, segment, ratio):
    keep = []
    for s in sorted(set(segment.tolist())):
        members = [i for i in range(len(alpha)) if segment[i] == s]
        k = max(1, math.ceil(ratio * len(members)))
        ranked = sorted(members, key=lambda i: (-alpha[i], i))
        keep.extend(ranked[:k])
    return sorted(keep)


def sag_pool(x, alpha, edges, segment, ratio):
    keep = top_k(alpha, segment, ratio)
    pos = {old: new for new, old in enumerate(keep)}
    xp = np.array([x[i] * np.tanh(alpha[i]) for i in keep]).reshape(len(keep), x.shape[1])
    new_edges = [(pos[s], pos[d], t) for s, d, t in edges if s in pos and d in pos]
    return xp, new_edges, segment[keep], keep


def mlp(x, Wh, bh, Wo, bo):
    return relu(x @ Wh + bh.ravel()) @ Wo + bo.ravel()


def readout(x, segment, n_graphs, mlp1, mlp2):
    width = mlp2[2].shape[1]
    out = np.zeros((n_graphs, width))
    for g in range(n_graphs):
        rows = [i for i in range(len(x)) if segment[i] == g]
        if not rows:
            continue
        a = np.array([mlp(x[i], *mlp1) for i in rows])
        v = np.array([mlp(x[i], *mlp2) for i in rows])
        for c in range(width):
            m = a[:, c].max()
            w = np.exp(a[:, c] - m)
            w = w / w.sum()
            out[g, c] = (w * v[:, c]).sum()
    return out


def layer_params(p, layer):
    pre = f"L{layer}"
    get = lambda k: p[k].data if hasattr(p[k], "data") else p[k]
    return {
        "W1": get(pre + ".cgcn.W1"), "b1": get(pre + ".cgcn.b1"),
        "W2": get(pre + ".cgcn.W2"), "b2": get(pre + ".cgcn.b2"),
        "theta1": get(pre + ".sag.theta1"), "theta2": get(pre + ".sag.theta2"),
        "mlp1": tuple(get(f"{pre}.mlp1.{a}.{b}") for a, b in (("h", "W"), ("h", "b"), ("o", "W"), ("o", "b"))),
        "mlp2": tuple(get(f"{pre}.mlp2.{a}.{b}") for a, b in (("h", "W"), ("h", "b"), ("o", "W"), ("o", "b"))),
    }


def hierarchical(x, edges, segment, n_graphs, p, layers, ratio=0.5):
    total = np.zeros((n_graphs, x.shape[1]))
    for layer in range(layers):
        lp = layer_params(p, layer)
        x = cgcn(x, edges, lp["W1"], lp["b1"], lp["W2"], lp["b2"])
        alpha = sag_scores(x, edges, lp["theta1"], lp["theta2"])
        x, edges, segment, _ = sag_pool(x, alpha, edges, segment, ratio)
        total = total + readout(x, segment, n_graphs, lp["mlp1"], lp["mlp2"])
    return total


def fuse(g_ast, g_dfg, g_cfg, Wh, bh, Wo, bo):
    h = np.concatenate([g_ast, g_dfg, g_cfg], axis=1)
    return sigmoid(mlp(h, Wh, bh, Wo, bo))


# -- transformer -------------------------------------------------------------

def positional(max_len, dim):
    pe = np.zeros((max_len, dim))
    for pos in range(max_len):
        for i in range(0, dim, 2):
            angle = pos / (10000.0 ** (i / dim))
            pe[pos, i] = math.sin(angle)
            if i + 1 < dim:
                pe[pos, i + 1] = math.cos(angle)
    return pe


def layer_norm(h, g, b, eps=1e-5):
    mu = h.mean(axis=-1, keepdims=True)
    var = ((h - mu) ** 2).mean(axis=-1, keepdims=True)
    return (h - mu) / np.sqrt(var + eps) * g.ravel() + b.ravel()


def transformer(ids, p, heads, max_len, layer_norm_on=True):
    """One post-norm encoder layer on a single sequence with dense matrices."""
    get = lambda k: p[k].data if hasattr(p[k], "data") else p[k]
    d = get("enc.embed").shape[1]
    x = get("enc.embed")[list(ids)] + positional(max_len, d)[: len(ids)]
    lin = lambda h, name: h @ get(name + ".W") + get(name + ".b").ravel()
    q, k, v = lin(x, "enc.q"), lin(x, "enc.k"), lin(x, "enc.v")
    dh = d // heads
    ctx = np.zeros_like(x)
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        s = q[:, sl] @ k[:, sl].T / math.sqrt(dh)
        s = np.exp(s - s.max(axis=1, keepdims=True))
        s = s / s.sum(axis=1, keepdims=True)
        ctx[:, sl] = s @ v[:, sl]
    h1 = x + lin(ctx, "enc.o")
    if layer_norm_on:
        h1 = layer_norm(h1, get("enc.ln1.g"), get("enc.ln1.b"))
    out = h1 + lin(relu(lin(h1, "enc.ff1")), "enc.ff2")
    if layer_norm_on:
        out = layer_norm(out, get("enc.ln2.g"), get("enc.ln2.b"))
    return out


def attention_pool(tokens, p, heads):
    get = lambda k: p[k].data if hasattr(p[k], "data") else p[k]
    outs = []
    for h in range(heads):
        pre = f"enc.read{h}"
        lin = lambda z, name: z @ get(name + ".W") + get(name + ".b").ravel()
        score = lin(relu(lin(tokens, pre + ".score1")), pre + ".score2")[:, 0]
        value = lin(relu(lin(tokens, pre + ".value1")), pre + ".value2")
        w = np.exp(score - score.max())
        w = w / w.sum()
        outs.append((w[:, None] * value).sum(axis=0))
    return np.concatenate(outs)


# -- losses and metrics ------------------------------------------------------

def _clamp(p, eps):
    return min(max(p, eps), 1.0 - eps)


def bce_scalar(y, p, eps=1e-7, w_pos=1.0, w_neg=1.0):
    p = _clamp(p, eps)
    return -(w_pos * y * math.log(p) + w_neg * (1.0 - y) * math.log(1.0 - p))


def mbce(Y, P, weights=None, eps=1e-7):
    n, m = len(Y), len(Y[0])
    total = 0.0
    for i in range(n):
        for c in range(m):
            w = 1.0 if weights is None else weights[c]
            total += bce_scalar(Y[i][c], P[i][c], eps, w, w)
    return total / (n * m)


def confident_index(y, p):
    if any(v > 0 for v in y):
        scores = [p[c] * y[c] for c in range(len(p))]
    else:
        scores = list(p)
    best = 0
    for c in range(1, len(scores)):
        if scores[c] > scores[best]:
            best = c
    return best


def binary(Y, P, eps=1e-7):
    total = 0.0
    for y, p in zip(Y, P):
        c = confident_index(y, p)
        total += bce_scalar(y[c], p[c], eps)
    return total / len(Y)


def combined(Y, P, w1=1.0, w2=1.0, weights=None, eps=1e-7):
    return w1 * mbce(Y, P, weights, eps) + w2 * binary(Y, P, eps)


def weighted(Y, P, w_neg, w_pos, eps=1e-7):
    return sum(bce_scalar(y[0], p[0], eps, w_pos, w_neg) for y, p in zip(Y, P)) / len(Y)


def counts(truth, pred):
    tp = fp = tn = fn = 0
    for t, q in zip(truth, pred):
        if t and q:
            tp += 1
        elif q:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn


def f1(tp, fp, tn, fn):
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def mcc(tp, fp, tn, fn):
    den = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    return 0.0 if den == 0 else (tp * tn - fp * fn) / den


# -- reaching definitions ----------------------------------------------------

def reaching_by_paths(succ, defs_at, var_defs, node, var):
    """Definitions of ``var`` that reach ``node`` along some definition-free path.

    ``succ`` maps CFG node -> successors, ``defs_at`` node -> set of variables
    it defines, ``var_defs`` var -> (definition id, CFG node where it takes
    effect) pairs.  Paths are enumerated explicitly (depth-first over simple
    paths, plus the one-lap cycle back to ``node`` itself).
    """
    found = set()
    for d, at in var_defs.get(var, ()):
        stack = [(s, (s,)) for s in succ.get(at, ())]
        while stack:
            cur, path = stack.pop()
            if cur == node:
                found.add(d)
                break
            if var in defs_at.get(cur, ()):
                continue  # redefined on the way
            for nxt in succ.get(cur, ()):
                if nxt not in path:
                    stack.append((nxt, path + (nxt,)))
    return found
