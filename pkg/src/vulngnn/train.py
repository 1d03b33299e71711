"""Configuration, training loop, evaluation and prediction."""

from __future__ import annotations

import json
import logging
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import autodiff as ad
from .corpus import generate_synthetic_corpus
from .frontend import parse_functions, tokenize
from .graph_io import (Dataset, DatasetError, TokenDictionary, build_dictionary, load_dataset,
                       symbolic_normalize, write_jsonl)
from .graphs import GraphTooLarge, ViewKind, build_program_graph
from .model import (ModelConfig, collate, featurize, forward, init_params, load_checkpoint,
                    predict_proba, save_checkpoint)
from .objectives import EmptyInput, LossConfig, evaluate, inverse_class_weights, training_loss

log = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "NonFiniteLoss",
    "DataConfig",
    "TrainConfig",
    "EpochRecord",
    "TrainLog",
    "Adam",
    "prepare_data",
    "train",
    "evaluate_checkpoint",
    "predict_source",
]


class ConfigError(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    def __init__(self, epoch: int, batch: int, detail: str = ""):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}" + (f": {detail}" if detail else ""))
        self.epoch = epoch
        self.batch = batch


# -- configuration ---------------------------------------------------------

@dataclass
class DataConfig:
    """Where samples come from: a JSONL file, or a synthetic corpus when ``path`` is unset."""

    path: str | None = None
    n: int = 2000
    vuln_ratio: float = 0.5
    seed: int | None = None       # defaults to the run seed
    max_nodes: int = 500
    normalize: bool = False


@dataclass
class TrainConfig:
    data: DataConfig = field(default_factory=DataConfig)
    mode: str = "binary"
    n_classes: int = 1
    max_len: int = 32
    d_tok: int = 32
    d_head: int = 16
    readout_heads: int | None = None   # 1 in binary mode, 3 in multi-label mode
    attn_heads: int = 2
    width: int = 128
    layers: int = 3
    pool_ratio: float = 0.5
    layer_norm: bool = True
    lr: float = 1e-4
    epochs: int = 50
    patience: int = 10
    batch_size: int = 16
    seed: int = 0
    w1: float = 1.0
    w2: float = 1.0
    class_weights: str | list = "inverse"   # "inverse", "none" or explicit numbers
    weight_placement: str = "mbce"
    dtype: str = "float64"
    dropout: float = 0.0
    checkpoint: str = "runs/model.npz"
    log_path: str | None = None

    def __post_init__(self):
        if isinstance(self.data, dict):
            self.data = _build(DataConfig, self.data, "data")
        if self.readout_heads is None:
            self.readout_heads = 3 if self.mode == "multi_label" else 1
        self.validate()

    def validate(self) -> None:
        if self.mode not in ("binary", "multi_label"):
            raise ConfigError(f"mode must be 'binary' or 'multi_label', got {self.mode!r}")
        if self.mode == "binary" and self.n_classes != 1:
            raise ConfigError("binary mode has exactly one output (n_classes=1)")
        for name in ("n_classes", "max_len", "d_tok", "d_head", "readout_heads", "attn_heads", "width",
                     "layers", "epochs", "patience", "batch_size"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.d_tok % self.attn_heads:
            raise ConfigError("d_tok must be divisible by attn_heads")
        if not 0.0 < self.pool_ratio <= 1.0:
            raise ConfigError(f"pool_ratio must lie in (0, 1], got {self.pool_ratio}")
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if isinstance(self.class_weights, str) and self.class_weights not in ("inverse", "none"):
            raise ConfigError(f"class_weights must be 'inverse', 'none' or a list, got {self.class_weights!r}")
        if self.data.n < 2 or self.data.max_nodes <= 0 or not 0.0 < self.data.vuln_ratio < 1.0:
            raise ConfigError("data.n >= 2, data.max_nodes > 0 and 0 < data.vuln_ratio < 1 are required")
        try:
            LossConfig(mode=self.mode, w1=self.w1, w2=self.w2, weight_placement=self.weight_placement)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def data_seed(self) -> int:
        return self.seed if self.data.seed is None else self.data.seed

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, n_classes=self.n_classes, d_tok=self.d_tok,
                           attn_heads=self.attn_heads, max_len=self.max_len, readout_heads=self.readout_heads,
                           d_head=self.d_head, layer_norm=self.layer_norm, width=self.width,
                           layers=self.layers, pool_ratio=self.pool_ratio, dtype=self.dtype, seed=self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> TrainConfig:
        return _build(cls, d or {}, "")

    @classmethod
    def from_file(cls, path, overrides: Sequence[str] = ()) -> TrainConfig:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a mapping")
        return cls.from_dict(apply_overrides(raw, overrides))


def _build(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"section {where or 'root'} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in sorted(unknown))}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def apply_overrides(raw: dict, overrides: Sequence[str]) -> dict:
    """Apply ``key=value`` strings (dotted keys reach nested sections); values are YAML scalars."""
    out = json.loads(json.dumps(raw))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        parts = key.split(".")
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{key}: {part} is not a section")
        node[parts[-1]] = yaml.safe_load(value)
    return out


# -- logs ------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_loss: float
    valid_f1: float
    valid_mcc: float
    wall_time: float
    best: bool = False


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def append(self, rec: EpochRecord) -> None:
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError("epochs must be strictly increasing")
        self.records.append(rec)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in self.records)

    def write(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


# -- optimiser -------------------------------------------------------------

class Adam:
    """Adaptive moment estimation with bias-corrected moments."""

    def __init__(self, params: dict[str, ad.Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.eps = lr, eps
        self.b1, self.b2 = betas
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * p.grad
            v *= self.b2
            v += (1.0 - self.b2) * p.grad * p.grad
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


# -- data ------------------------------------------------------------------

@dataclass
class PreparedData:
    dictionary: TokenDictionary
    examples: dict[str, list]
    dataset: Dataset


def load_corpus(cfg: TrainConfig) -> Dataset:
    if cfg.data.path is not None:
        return load_dataset(cfg.data.path, cfg.data.max_nodes, cfg.data.normalize)
    samples = generate_synthetic_corpus(cfg.data.n, cfg.data.vuln_ratio, cfg.data_seed, mode=cfg.mode)
    if cfg.mode == "multi_label" and cfg.n_classes != len(samples[0].labels):
        raise ConfigError(f"synthetic multi-label corpus has {len(samples[0].labels)} classes, "
                          f"config says n_classes={cfg.n_classes}")
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "corpus.jsonl"
        write_jsonl(path, samples)
        return load_dataset(path, cfg.data.max_nodes, cfg.data.normalize)


def featurize_split(pairs, dictionary: TokenDictionary, max_len: int) -> list:
    return [featurize(g, dictionary, max_len, label=s.labels) for s, g in pairs]


def prepare_data(cfg: TrainConfig, dictionary: TokenDictionary | None = None) -> PreparedData:
    ds = load_corpus(cfg)
    if not ds.train:
        raise DatasetError("training split is empty")
    width = len(ds.train[0][0].labels)
    if width != cfg.n_classes:
        raise DatasetError(f"dataset has {width} label column(s), config expects n_classes={cfg.n_classes}")
    if dictionary is None:
        dictionary = build_dictionary(s for s, _ in ds.train)
    examples = {split: featurize_split(pairs, dictionary, cfg.max_len) for split, pairs in ds.splits.items()}
    return PreparedData(dictionary, examples, ds)


def _class_weights(cfg: TrainConfig, train_labels: np.ndarray):
    if cfg.class_weights == "none":
        return None
    if cfg.class_weights == "inverse":
        return inverse_class_weights(train_labels, cfg.mode)
    return [float(w) for w in cfg.class_weights]


# -- training --------------------------------------------------------------

def _mean_loss(examples, p, model_cfg, loss_cfg, batch_size: int) -> float:
    if not examples:
        return float("nan")
    probs = predict_proba(examples, p, model_cfg, batch_size=max(batch_size, 64))
    labels = np.stack([e.label for e in examples])
    return float(training_loss(labels, probs, loss_cfg))


def train(cfg: TrainConfig, data: PreparedData | None = None) -> tuple[Path, TrainLog]:
    """Fit a model; the checkpoint on disk holds the epoch with the best validation F1."""
    data = data or prepare_data(cfg)
    train_ex, valid_ex = data.examples["train"], data.examples["valid"]
    if not valid_ex:
        raise DatasetError("validation split is empty")
    model_cfg = cfg.model_config(data.dictionary.size)
    params = init_params(model_cfg)
    train_labels = np.stack([e.label for e in train_ex])
    loss_cfg = LossConfig(mode=cfg.mode, w1=cfg.w1, w2=cfg.w2, class_weights=_class_weights(cfg, train_labels),
                          weight_placement=cfg.weight_placement)
    log.info("training on %d graphs, validating on %d; class weights %s", len(train_ex), len(valid_ex),
             loss_cfg.class_weights)
    opt = Adam(params, lr=cfg.lr)
    ckpt = Path(cfg.checkpoint)
    history = TrainLog()
    best_f1 = -np.inf
    stale = 0
    valid_labels = np.stack([e.label for e in valid_ex])
    extra = {"dictionary": json.loads(data.dictionary.to_json()), "mode": cfg.mode,
             "normalize": cfg.data.normalize, "max_nodes": cfg.data.max_nodes}
    start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch])).permutation(len(train_ex))
        drop_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, 1]))
        total, seen = 0.0, 0
        for bi, lo in enumerate(range(0, len(order), cfg.batch_size)):
            chunk = [train_ex[i] for i in order[lo:lo + cfg.batch_size]]
            batch = collate(chunk)
            opt.zero_grad()
            try:
                y_hat = forward(batch, params, model_cfg, dropout=cfg.dropout, rng=drop_rng)
                loss = training_loss(batch.labels, y_hat, loss_cfg)
                if not np.isfinite(loss.data).all():
                    raise NonFiniteLoss(epoch, bi)
                ad.backward(loss)
            except ad.NonFiniteError as exc:
                raise NonFiniteLoss(epoch, bi, str(exc)) from exc
            opt.step()
            log.debug("epoch %d batch %d loss %.5f", epoch, bi, loss.item())
            total += loss.item() * len(chunk)
            seen += len(chunk)
        probs = predict_proba(valid_ex, params, model_cfg)
        metrics = evaluate(valid_labels, probs)
        valid_loss = float(training_loss(valid_labels, probs, loss_cfg))
        improved = metrics.f1 > best_f1
        rec = EpochRecord(epoch, total / seen, valid_loss, metrics.f1, metrics.mcc,
                          round(time.perf_counter() - start, 3), improved)
        history.append(rec)
        log.info("epoch %d: train %.4f valid %.4f F1 %.4f MCC %.4f (%.0fs)", epoch, rec.train_loss,
                 rec.valid_loss, rec.valid_f1, rec.valid_mcc, rec.wall_time)
        if improved:
            best_f1, stale = metrics.f1, 0
            history.best_epoch = epoch
            save_checkpoint(ckpt, params, model_cfg, dict(extra, epoch=epoch, valid_f1=metrics.f1))
        else:
            stale += 1
            if stale >= cfg.patience:
                history.stopped_early = epoch < cfg.epochs
                break
    if cfg.log_path:
        history.write(cfg.log_path)
    return ckpt, history


# -- evaluation and prediction ---------------------------------------------

ABLATIONS = {
    "full": None,
    "ast_only": (ViewKind.AST,),
    "cfg_only": (ViewKind.CFG,),
    "dfg_only": (ViewKind.DFG,),
}


def evaluate_examples(examples, params, model_cfg, ablate: bool = False) -> dict:
    if not examples:
        raise EmptyInput("nothing to evaluate: the split is empty")
    labels = np.stack([e.label for e in examples])
    blocks = ABLATIONS if ablate else {"full": None}
    return {name: evaluate(labels, predict_proba(examples, params, model_cfg, active=active)).to_dict()
            for name, active in blocks.items()}


def _checkpoint_dictionary(extra: dict) -> TokenDictionary:
    return TokenDictionary({t: i + 2 for i, t in enumerate(extra.get("dictionary", []))})


def evaluate_checkpoint(checkpoint, cfg: TrainConfig, split: str = "test", ablate: bool = False) -> dict:
    """Metrics JSON-ready dict: {"split", "n", "full": {...}, and ablation blocks when asked}."""
    params, model_cfg, extra = load_checkpoint(checkpoint)
    expected = cfg.model_config(model_cfg.vocab_size)
    load_checkpoint(checkpoint, expect=expected)  # raises ShapeMismatch on disagreement
    data = prepare_data(cfg, _checkpoint_dictionary(extra))
    if split not in data.examples:
        raise DatasetError(f"unknown split {split!r}")
    examples = data.examples[split]
    out = {"split": split, "n": len(examples)}
    out.update(evaluate_examples(examples, params, model_cfg, ablate))
    return out


def predict_source(checkpoint, source: str, threshold: float = 0.5) -> list[dict]:
    """One record per function in ``source``; oversized functions are skipped with a notice."""
    params, model_cfg, extra = load_checkpoint(checkpoint)
    dictionary = _checkpoint_dictionary(extra)
    if extra.get("normalize"):
        source = symbolic_normalize(source)
    max_nodes = extra.get("max_nodes", 500)
    out = []
    for fn in parse_functions(tokenize(source)):
        try:
            g = build_program_graph(fn, max_nodes)
        except GraphTooLarge as exc:
            log.warning("skipping %s: %s", fn.name, exc)
            continue
        ex = featurize(g, dictionary, model_cfg.max_len)
        probs = predict_proba([ex], params, model_cfg)[0]
        out.append({
            "name": fn.name,
            "probabilities": [float(v) for v in probs],
            "verdict": "vulnerable" if probs.max() >= threshold else "healthy",
            "node_count": g.node_count,
        })
    return out
