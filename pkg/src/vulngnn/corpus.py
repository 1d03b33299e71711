"""Deterministic synthetic corpus of MiniC functions with planted flaws.

Binary mode plants one pattern: an array write indexed by an externally
controlled value.  Vulnerable functions perform the write unguarded;
healthy ones wrap the same write in a bounds check on the index.  All
conditional control flow in the distractor code is placed after the write,
so in a vulnerable function no branch dominates it.

Multi-label mode (M=5) mixes five templates, each with a flawed and a
fixed variant: overflow, leak-like, use-after-free-like, null-deref-like
and other (division by an unchecked divisor).  A vulnerable function uses
the flawed variant of exactly one of its templates, so its label is one-hot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph_io import Sample

__all__ = ["ConfigError", "CLASS_NAMES", "generate_synthetic_corpus", "sample_rng"]

CLASS_NAMES = ("overflow", "leak", "use_after_free", "null_deref", "other")

_VAR_STEMS = ("len", "count", "pos", "off", "n", "size", "total", "acc", "tmp", "val", "k",
              "limit", "cur", "res", "step", "idx", "num", "sum", "flag", "depth")
_BUF_STEMS = ("buf", "table", "arr", "slots", "data", "cache", "vals", "items")
_PTR_STEMS = ("p", "ptr", "mem", "blk", "node", "entry", "rec")
_FN_STEMS = ("handle", "process", "update", "parse", "fill", "store", "compute", "apply", "load")
_CALLS = ("log_value", "emit", "trace", "notify")
_SOURCES = ("read_int()", "recv_len({s})", "atoi({s})", "{a}", "{a} + {c}", "get_index({s})")


class ConfigError(ValueError):
    pass


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent PCG64 stream for sample ``index`` of corpus ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index])))


class _Names:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.used: set[str] = set()

    def fresh(self, stems) -> str:
        while True:
            name = f"{stems[self.rng.integers(len(stems))]}{self.rng.integers(100)}"
            if name not in self.used:
                self.used.add(name)
                return name


@dataclass
class _Ctx:
    rng: np.random.Generator
    names: _Names
    param_int: str
    param_str: str
    scalars: list[str]

    def const(self, lo=1, hi=64) -> int:
        return int(self.rng.integers(lo, hi))

    def pick(self, seq):
        return seq[self.rng.integers(len(seq))]


def _straight(ctx: _Ctx) -> list[str]:
    """One branch-free distractor statement."""
    kind = ctx.rng.integers(5)
    if kind == 0 or not ctx.scalars:
        v = ctx.names.fresh(_VAR_STEMS)
        init = ctx.pick([str(ctx.const()), f"{ctx.param_int} * {ctx.const(2, 9)}", f"{ctx.param_int} - {ctx.const()}"])
        ctx.scalars.append(v)
        return [f"int {v} = {init};"]
    v = ctx.pick(ctx.scalars)
    if kind == 1:
        return [f"{v} = {v} + {ctx.const()};"]
    if kind == 2:
        return [f"{ctx.pick(_CALLS)}({v});"]
    if kind == 3:
        s = ctx.names.fresh(_PTR_STEMS)
        return [f'char* {s} = "{ctx.pick(["ok", "done", "fail", "retry"])}";']
    w = ctx.pick(ctx.scalars)
    return [f"{v} = {w} * {ctx.const(2, 5)};"]


def _branchy(ctx: _Ctx) -> list[str]:
    """Distractor that may contain branches or loops."""
    if not ctx.scalars:
        return _straight(ctx)
    v = ctx.pick(ctx.scalars)
    kind = ctx.rng.integers(4)
    if kind == 0:
        return [f"if ({v} > {ctx.const()}) {{", f"    {v} = {v} - {ctx.const()};", "}"]
    if kind == 1:
        return [f"if ({v} == {ctx.const()}) {{", f"    {ctx.pick(_CALLS)}({v});", "} else {",
                f"    {v} = 0;", "}"]
    if kind == 2:
        return [f"while ({v} < {ctx.const(64, 128)}) {{", f"    {v} = {v} + {ctx.const(1, 8)};", "}"]
    return _straight(ctx)


def _tainted_source(ctx: _Ctx) -> str:
    return ctx.pick(_SOURCES).format(s=ctx.param_str, a=ctx.param_int, c=ctx.const(1, 8))


def _guard(ctx: _Ctx, idx: str, size: int) -> str:
    return ctx.pick([f"{idx} < {size}", f"{idx} >= 0 && {idx} < {size}", f"{size} > {idx}",
                     f"{idx} <= {size - 1}"])


def _indent(lines: list[str], n: int = 1) -> list[str]:
    return ["    " * n + ln for ln in lines]


def _overflow(ctx: _Ctx, vulnerable: bool) -> tuple[list[str], list[str]]:
    """(lines before the write region, the write region)."""
    buf = ctx.names.fresh(_BUF_STEMS)
    idx = ctx.names.fresh(_VAR_STEMS)
    size = ctx.const(8, 65)
    setup = [f"int {buf}[{size}];", f"int {idx} = {_tainted_source(ctx)};"]
    value = ctx.pick([str(ctx.const()), ctx.param_int] + ctx.scalars[:2])
    write = f"{buf}[{idx}] = {value};"
    if vulnerable:
        return setup, [write]
    return setup, [f"if ({_guard(ctx, idx, size)}) {{", f"    {write}", "}"]


def _leak(ctx: _Ctx, vulnerable: bool):
    p = ctx.names.fresh(_PTR_STEMS)
    setup = [f"char* {p} = malloc({ctx.param_int});"]
    body = [f"fill({p}, {ctx.const()});", f"consume({p});"]
    return setup, body if vulnerable else body + [f"free({p});"]


def _use_after_free(ctx: _Ctx, vulnerable: bool):
    p = ctx.names.fresh(_PTR_STEMS)
    setup = [f"char* {p} = malloc({ctx.const(8, 64)});"]
    if vulnerable:
        return setup, [f"free({p});", f"consume({p});"]
    return setup, [f"consume({p});", f"free({p});"]


def _null_deref(ctx: _Ctx, vulnerable: bool):
    p = ctx.names.fresh(_PTR_STEMS)
    setup = [f"char* {p} = lookup({ctx.param_str});"]
    write = f"{p}[0] = {ctx.const()};"
    if vulnerable:
        return setup, [write]
    return setup, [f"if ({p} != 0) {{", f"    {write}", "}"]


def _divide(ctx: _Ctx, vulnerable: bool):
    d = ctx.names.fresh(_VAR_STEMS)
    r = ctx.names.fresh(_VAR_STEMS)
    setup = [f"int {d} = {_tainted_source(ctx)};", f"int {r} = {ctx.const()};"]
    op = f"{r} = {ctx.param_int} / {d};"
    if vulnerable:
        return setup, [op]
    return setup, [f"if ({d} != 0) {{", f"    {op}", "}"]


_TEMPLATES = (_overflow, _leak, _use_after_free, _null_deref, _divide)


def _render(ctx: _Ctx, planted: list[tuple[int, bool]]) -> str:
    fname = ctx.names.fresh(_FN_STEMS)
    body: list[str] = []
    for _ in range(ctx.rng.integers(1, 4)):
        body += _straight(ctx)
    for template, vulnerable in planted:
        setup, region = _TEMPLATES[template](ctx, vulnerable)
        body += setup
        for _ in range(ctx.rng.integers(0, 3)):
            body += _straight(ctx)
        body += region
    for _ in range(ctx.rng.integers(1, 4)):
        body += _branchy(ctx)
    ret = ctx.pick(ctx.scalars) if ctx.scalars else "0"
    body.append(f"return {ret};")
    header = f"int {fname}(int {ctx.param_int}, char* {ctx.param_str}) {{"
    return "\n".join([header, *_indent(body), "}"]) + "\n"


def _one_sample(seed: int, index: int, vulnerable: bool, multi_label: bool) -> tuple[str, tuple[int, ...]]:
    rng = sample_rng(seed, index)
    names = _Names(rng)
    ctx = _Ctx(rng, names, names.fresh(("n", "len", "size", "count")), names.fresh(("src", "input", "msg", "s")), [])
    if not multi_label:
        return _render(ctx, [(0, vulnerable)]), (int(vulnerable),)
    n_templates = int(rng.integers(1, 3))
    chosen = sorted(rng.choice(len(_TEMPLATES), size=n_templates, replace=False).tolist())
    # a vulnerable sample carries exactly one flawed template (one-hot label)
    bad = {int(rng.choice(chosen))} if vulnerable else set()
    # overflow goes first so no other template's branch can dominate its write
    rest = [t for t in chosen if t != 0]
    order = ([0] if 0 in chosen else []) + rng.permutation(rest).tolist()
    code = _render(ctx, [(t, t in bad) for t in order])
    return code, tuple(int(c in bad) for c in range(len(_TEMPLATES)))


def generate_synthetic_corpus(n: int, vuln_ratio: float, seed: int, mode: str = "binary",
                              split_fractions=(0.8, 0.1, 0.1)) -> list[Sample]:
    """``n`` labelled functions, ``round(n * vuln_ratio)`` of them vulnerable.

    Pure in (n, vuln_ratio, seed, mode): which samples are vulnerable and the
    split assignment come from one seeded stream, each function body from its
    own per-index stream.
    """
    if n < 2:
        raise ConfigError("need at least 2 samples")
    if not 0.0 < vuln_ratio < 1.0:
        raise ConfigError(f"vuln_ratio must lie strictly between 0 and 1, got {vuln_ratio}")
    if mode not in ("binary", "multi_label"):
        raise ConfigError(f"unknown corpus mode {mode!r}")
    if len(split_fractions) != 3 or abs(sum(split_fractions) - 1.0) > 1e-9:
        raise ConfigError("split fractions must be three numbers summing to 1")
    top = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed])))
    n_vuln = round(n * vuln_ratio)
    vulnerable = np.zeros(n, dtype=bool)
    vulnerable[top.permutation(n)[:n_vuln]] = True
    n_train = round(n * split_fractions[0])
    n_valid = round(n * split_fractions[1])
    split_of = np.empty(n, dtype=object)
    order = top.permutation(n)
    split_of[order[:n_train]] = "train"
    split_of[order[n_train:n_train + n_valid]] = "valid"
    split_of[order[n_train + n_valid:]] = "test"
    out = []
    for i in range(n):
        code, labels = _one_sample(seed, i, bool(vulnerable[i]), mode == "multi_label")
        out.append(Sample(f"syn-{seed}-{i:05d}", code, labels, str(split_of[i])))
    return out
