"""Node vectors: one-hot node type concatenated with an encoding of the node code.

Token sequences of many nodes are encoded together.  All tokens are stacked
row-wise; self-attention runs over explicit (query, key) pairs restricted
to the same sequence, and per-sequence softmaxes are segment softmaxes, so
the whole encoder stays within 2-D tensor ops.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad

log = logging.getLogger(__name__)

__all__ = [
    "LengthError",
    "SequenceBatch",
    "one_hot_type",
    "positional_encoding",
    "pack_sequences",
    "transformer_encode",
    "attention_readout",
    "encode_sequences",
    "encode_node",
]


class LengthError(ValueError):
    pass


def one_hot_type(t: int, n_types: int) -> np.ndarray:
    if not 0 <= t < n_types:
        raise IndexError(f"node type {t} outside vocabulary of size {n_types}")
    v = np.zeros(n_types)
    v[t] = 1.0
    return v


def positional_encoding(max_len: int, dim: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    i = np.arange(0, dim, 2)[None, :]
    angle = pos / np.power(10000.0, i / dim)
    pe = np.zeros((max_len, dim))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : dim // 2])
    return pe


@dataclass
class SequenceBatch:
    """Row-stacked token sequences with the index arrays attention needs."""

    token_ids: np.ndarray   # (n_tok,)
    positions: np.ndarray   # (n_tok,)
    seq_of_token: np.ndarray  # (n_tok,)
    pair_query: np.ndarray  # (n_pairs,) token row of the query
    pair_key: np.ndarray    # (n_pairs,) token row of the key
    n_seq: int

    @property
    def n_tokens(self) -> int:
        return len(self.token_ids)


def pack_sequences(seqs: Sequence[Sequence[int]], max_len: int) -> SequenceBatch:
    """Stack sequences; empty sequences contribute no rows (their read-out is 0)."""
    ids, pos, owner, pq, pk = [], [], [], [], []
    offset = 0
    for s, seq in enumerate(seqs):
        n = len(seq)
        if n > max_len:
            raise LengthError(f"sequence of {n} tokens exceeds max_len={max_len}")
        ids.extend(seq)
        pos.extend(range(n))
        owner.extend([s] * n)
        r = np.arange(offset, offset + n)
        pq.append(np.repeat(r, n))
        pk.append(np.tile(r, n))
        offset += n
    cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    return SequenceBatch(np.asarray(ids, dtype=np.int64), np.asarray(pos, dtype=np.int64),
                         np.asarray(owner, dtype=np.int64), cat(pq).astype(np.int64),
                         cat(pk).astype(np.int64), len(seqs))


def _linear(x: ad.Tensor, p: Mapping[str, ad.Tensor], name: str) -> ad.Tensor:
    return ad.add(ad.matmul(x, p[name + ".W"]), p[name + ".b"])


def _head_blocks(dim: int, heads: int, dtype) -> np.ndarray:
    """dim x heads indicator of which columns belong to which head."""
    blocks = np.zeros((dim, heads), dtype=dtype)
    width = dim // heads
    for h in range(heads):
        blocks[h * width:(h + 1) * width, h] = 1.0
    return blocks


def transformer_encode(batch: SequenceBatch, p: Mapping[str, ad.Tensor], cfg) -> ad.Tensor:
    """One post-norm encoder layer over every token row: (n_tok x d_tok)."""
    dtype = p["enc.embed"].data.dtype
    pe = positional_encoding(cfg.max_len, cfg.d_tok).astype(dtype)
    x = ad.add(ad.row_select(p["enc.embed"], batch.token_ids), ad.constant(pe[batch.positions]))
    if batch.n_tokens == 0:
        return x

    heads = cfg.attn_heads
    blocks = _head_blocks(cfg.d_tok, heads, dtype)
    q = _linear(x, p, "enc.q")
    k = _linear(x, p, "enc.k")
    v = _linear(x, p, "enc.v")
    qk = ad.mul(ad.row_select(q, batch.pair_query), ad.row_select(k, batch.pair_key))
    scores = ad.matmul(qk, ad.constant(blocks / math.sqrt(cfg.d_tok // heads)))
    attn = ad.segment_softmax(scores, batch.pair_query, batch.n_tokens)
    spread = ad.matmul(attn, ad.constant(blocks.T))
    ctx = ad.segment_sum(ad.mul(spread, ad.row_select(v, batch.pair_key)), batch.pair_query, batch.n_tokens)
    h = ad.add(x, _linear(ctx, p, "enc.o"))
    if cfg.layer_norm:
        h = ad.layer_norm(h, p["enc.ln1.g"], p["enc.ln1.b"])
    ff = _linear(ad.relu(_linear(h, p, "enc.ff1")), p, "enc.ff2")
    out = ad.add(h, ff)
    if cfg.layer_norm:
        out = ad.layer_norm(out, p["enc.ln2.g"], p["enc.ln2.b"])
    return out


def attention_readout(tokens: ad.Tensor, seq_of_token: np.ndarray, n_seq: int,
                      p: Mapping[str, ad.Tensor], cfg) -> ad.Tensor:
    """Per head: softmax over positions of a score MLP, weighting a value MLP.

    Returns ``n_seq x (heads * d_head)``; sequences without tokens give zeros.
    """
    dtype = tokens.data.dtype
    ones = ad.constant(np.ones((1, cfg.d_head), dtype=dtype))
    pooled = []
    for h in range(cfg.readout_heads):
        pre = f"enc.read{h}"
        score = _linear(ad.relu(_linear(tokens, p, pre + ".score1")), p, pre + ".score2")
        value = _linear(ad.relu(_linear(tokens, p, pre + ".value1")), p, pre + ".value2")
        w = ad.segment_softmax(score, seq_of_token, n_seq)
        pooled.append(ad.segment_sum(ad.mul(ad.matmul(w, ones), value), seq_of_token, n_seq))
    return pooled[0] if len(pooled) == 1 else ad.concat_cols(pooled)


def encode_sequences(seqs: Sequence[Sequence[int]], p: Mapping[str, ad.Tensor], cfg) -> ad.Tensor:
    """Code vectors for a list of token-id sequences: n_seq x d_enc."""
    batch = pack_sequences(seqs, cfg.max_len)
    if batch.n_tokens == 0:
        dtype = p["enc.embed"].data.dtype
        return ad.constant(np.zeros((batch.n_seq, cfg.d_enc), dtype=dtype))
    tokens = transformer_encode(batch, p, cfg)
    return attention_readout(tokens, batch.seq_of_token, batch.n_seq, p, cfg)


def truncate(seq: Sequence[int], max_len: int, warn_context: str = "") -> tuple[int, ...]:
    if len(seq) > max_len:
        log.debug("truncating node code of %d tokens to %d %s", len(seq), max_len, warn_context)
        return tuple(seq[:max_len])
    return tuple(seq)


def encode_node(node, dictionary, p: Mapping[str, ad.Tensor], cfg) -> np.ndarray:
    """Feature vector [one-hot(type), code encoding] for a single graph node."""
    onehot = one_hot_type(int(node.node_type), cfg.n_types)
    if not node.tokens:
        return np.concatenate([onehot, np.zeros(cfg.d_enc)])
    ids = truncate(dictionary.encode(node.tokens), cfg.max_len)
    enc = encode_sequences([ids], p, cfg).data[0]
    return np.concatenate([onehot, enc])
