"""Graph JSON, JSONL datasets, the token dictionary and identifier normalisation."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .frontend import LexError, NodeType, ParseError, TokenKind, parse_source, tokenize
from .graphs import (DEFAULT_MAX_NODES, EdgeType, GraphNode, GraphTooLarge, ProgramGraph,
                     build_program_graph)

log = logging.getLogger(__name__)

__all__ = [
    "Sample",
    "TokenDictionary",
    "Dataset",
    "DatasetError",
    "FormatError",
    "IoError",
    "SPLITS",
    "encode_graph",
    "decode_graph",
    "build_dictionary",
    "symbolic_normalize",
    "read_jsonl",
    "write_jsonl",
    "load_dataset",
]

SPLITS = ("train", "valid", "test")
UNK, PAD = 0, 1


class DatasetError(Exception):
    pass


class FormatError(DatasetError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class IoError(DatasetError):
    pass


@dataclass(frozen=True)
class Sample:
    id: str
    code: str
    labels: tuple[int, ...]
    split: str = "train"

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "code": self.code, "labels": list(self.labels),
                           "split": self.split})


# -- graph JSON ------------------------------------------------------------

def _graph_dict(g: ProgramGraph) -> dict:
    return {
        "name": g.name,
        "entry": g.entry,
        "exit": g.exit,
        "nodes": [{"id": n.id, "type": n.node_type.name, "tokens": list(n.tokens), "line": n.line,
                   "col": n.col, "synthetic": n.synthetic} for n in g.nodes],
        "edges": [{"src": s, "dst": d, "type": t.name} for s, d, t in g.edges],
    }


def encode_graph(g: ProgramGraph, indent: int | None = None) -> str:
    return json.dumps(_graph_dict(g), indent=indent)


def decode_graph(text: str | dict) -> ProgramGraph:
    obj = json.loads(text) if isinstance(text, str) else text
    nodes = tuple(GraphNode(n["id"], NodeType[n["type"]], tuple(n["tokens"]), n["line"],
                            n.get("col", 0), n["synthetic"]) for n in obj["nodes"])
    edges = tuple((e["src"], e["dst"], EdgeType[e["type"]]) for e in obj["edges"])
    return ProgramGraph(nodes, edges, obj.get("name", ""), obj.get("entry"), obj.get("exit"))


# -- dictionary ------------------------------------------------------------

@dataclass(frozen=True)
class TokenDictionary:
    """Token text -> index, with UNK=0 and PAD=1 reserved."""

    index: dict[str, int] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.index) + 2

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, UNK) for t in tokens]

    def to_json(self) -> str:
        return json.dumps(sorted(self.index, key=self.index.get))

    @classmethod
    def from_json(cls, text: str) -> TokenDictionary:
        return cls({t: i + 2 for i, t in enumerate(json.loads(text))})


def build_dictionary(samples: Iterable[Sample], min_count: int = 1) -> TokenDictionary:
    """Index every token seen at least ``min_count`` times; order is sorted, not by arrival."""
    counts: Counter[str] = Counter()
    for s in samples:
        counts.update(t.text for t in tokenize(s.code))
    kept = sorted(t for t, c in counts.items() if c >= min_count)
    return TokenDictionary({t: i + 2 for i, t in enumerate(kept)})


# -- normalisation ---------------------------------------------------------

def symbolic_normalize(sample: Sample | str, keep: frozenset[str] = frozenset()) -> Sample | str:
    """Rename identifiers by order of first appearance: VAR_0, VAR_1, ... and FUNC_0, ...

    A name directly followed by ``(`` is a function name.  Whitespace and
    comments outside identifiers are preserved.
    """
    code = sample.code if isinstance(sample, Sample) else sample
    toks = tokenize(code)
    names: dict[str, str] = {}
    n_var = n_func = 0
    pieces: list[str] = []
    last = 0
    for i, tok in enumerate(toks):
        if tok.kind is not TokenKind.IDENTIFIER or tok.text in keep:
            continue
        if tok.text not in names:
            is_func = i + 1 < len(toks) and toks[i + 1].text == "("
            if is_func:
                names[tok.text] = f"FUNC_{n_func}"
                n_func += 1
            else:
                names[tok.text] = f"VAR_{n_var}"
                n_var += 1
        pieces.append(code[last:tok.offset])
        pieces.append(names[tok.text])
        last = tok.offset + len(tok.text)
    pieces.append(code[last:])
    out = "".join(pieces)
    return replace(sample, code=out) if isinstance(sample, Sample) else out


# -- JSONL datasets --------------------------------------------------------

def write_jsonl(path, samples: Sequence[Sample]) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for s in samples:
                fh.write(s.to_json() + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def _parse_line(raw: str, lineno: int) -> Sample:
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON ({exc.msg})", lineno) from exc
    if not isinstance(obj, dict):
        raise FormatError("expected a JSON object", lineno)
    for key in ("id", "code", "labels", "split"):
        if key not in obj:
            raise FormatError(f"missing field {key!r}", lineno)
    labels = obj["labels"]
    if not isinstance(labels, list) or not labels or any(v not in (0, 1) for v in labels):
        raise FormatError("labels must be a non-empty list of 0/1", lineno)
    if obj["split"] not in SPLITS:
        raise FormatError(f"unknown split {obj['split']!r}", lineno)
    if not isinstance(obj["code"], str):
        raise FormatError("code must be a string", lineno)
    return Sample(str(obj["id"]), obj["code"], tuple(int(v) for v in labels), obj["split"])


def read_jsonl(path) -> list[Sample]:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    samples = []
    width = None
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        s = _parse_line(raw, lineno)
        if width is None:
            width = len(s.labels)
        elif len(s.labels) != width:
            raise FormatError(f"expected {width} labels, got {len(s.labels)}", lineno)
        samples.append(s)
    return samples


@dataclass
class Dataset:
    splits: dict[str, list[tuple[Sample, ProgramGraph]]]
    dropped_unparseable: int = 0
    dropped_oversized: int = 0

    @property
    def train(self):
        return self.splits["train"]

    @property
    def valid(self):
        return self.splits["valid"]

    @property
    def test(self):
        return self.splits["test"]


def load_dataset(path, max_nodes: int = DEFAULT_MAX_NODES, normalize: bool = False) -> Dataset:
    """Read a JSONL corpus and build every graph, dropping samples that fail to
    parse or exceed ``max_nodes``."""
    samples = read_jsonl(path)
    splits: dict[str, list] = {s: [] for s in SPLITS}
    bad = big = 0
    for s in samples:
        if normalize:
            try:
                s = symbolic_normalize(s)
            except LexError:
                bad += 1
                continue
        try:
            g = build_program_graph(parse_source(s.code), max_nodes)
        except (LexError, ParseError):
            bad += 1
            continue
        except GraphTooLarge:
            big += 1
            continue
        splits[s.split].append((s, g))
    if bad or big:
        log.info("%s: dropped %d unparseable and %d oversized samples", path, bad, big)
    return Dataset(splits, bad, big)

