"""Training losses and evaluation metrics.

The losses accept either plain arrays (returning a float) or autodiff
tensors of shape ``(batch, M)`` (returning a 1x1 tensor averaged over the
batch), so the same code serves evaluation and training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad

__all__ = [
    "LossConfig",
    "ConfusionCounts",
    "Metrics",
    "LengthMismatch",
    "ModeError",
    "EmptyInput",
    "mbce_loss",
    "binary_loss",
    "combined_loss",
    "weighted_bce",
    "training_loss",
    "inverse_class_weights",
    "confusion",
    "scores_from_counts",
    "evaluate",
]


class LengthMismatch(ValueError):
    pass


class ModeError(ValueError):
    pass


class EmptyInput(ValueError):
    pass


@dataclass
class LossConfig:
    mode: str = "multi_label"  # or "binary"
    w1: float = 1.0
    w2: float = 1.0
    class_weights: Sequence[float] | None = None
    clamp_eps: float = 1e-7
    # where class weights apply in multi-label mode: "mbce", "binary" or "both"
    weight_placement: str = "mbce"

    def __post_init__(self):
        if self.mode not in ("multi_label", "binary"):
            raise ModeError(f"unknown loss mode {self.mode!r}")
        if self.w1 < 0 or self.w2 < 0 or self.w1 + self.w2 <= 0:
            raise ValueError("need w1, w2 >= 0 with w1 + w2 > 0")
        if self.class_weights is not None:
            cw = np.asarray(self.class_weights, dtype=float)
            if not (np.isfinite(cw).all() and (cw > 0).all()):
                raise ValueError("class weights must be finite and positive")


def _prepare(y, y_hat):
    """Return (y as 2-D array, y_hat tensor, was_plain)."""
    plain = not isinstance(y_hat, ad.Tensor)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    y_hat = ad.constant(np.atleast_2d(np.asarray(y_hat, dtype=float)) if plain else y_hat)
    if y.shape != y_hat.shape:
        raise LengthMismatch(f"labels {y.shape} vs predictions {y_hat.shape}")
    return y, y_hat, plain


def _finish(loss: ad.Tensor, plain: bool):
    return loss.item() if plain else loss


def _bce_terms(y: np.ndarray, y_hat: ad.Tensor, eps: float, w_pos=None, w_neg=None) -> ad.Tensor:
    """Elementwise -(w_pos*y*log p + w_neg*(1-y)*log(1-p)) with p clamped."""
    p = ad.clamp(y_hat, eps, 1.0 - eps)
    one = np.ones_like(y)
    pos = y if w_pos is None else y * w_pos
    neg = (one - y) if w_neg is None else (one - y) * w_neg
    log_p = ad.log(p)
    log_q = ad.log(ad.sub(ad.constant(one), p))
    return ad.scale(ad.add(ad.mul(ad.constant(pos), log_p), ad.mul(ad.constant(neg), log_q)), -1.0)


def mbce_loss(y, y_hat, cfg: LossConfig | None = None):
    """Mean over classes of (optionally class-weighted) binary cross-entropy."""
    cfg = cfg or LossConfig()
    y, y_hat, plain = _prepare(y, y_hat)
    n, m = y.shape
    w = None
    if cfg.class_weights is not None and cfg.weight_placement in ("mbce", "both"):
        if len(cfg.class_weights) != m:
            raise LengthMismatch(f"{len(cfg.class_weights)} class weights for M={m}")
        w = np.broadcast_to(np.asarray(cfg.class_weights, dtype=float), (n, m))
    terms = _bce_terms(y, y_hat, cfg.clamp_eps, w, w)
    return _finish(ad.scale(ad.sum_all(terms), 1.0 / (n * m)), plain)


def most_confident_index(y: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    """Per row: argmax of y_hat, or of y_hat*y when a true class exists.

    ``np.argmax`` returns the first maximum, so ties go to the smallest index.
    """
    y = np.atleast_2d(y)
    y_hat = np.atleast_2d(y_hat)
    masked = np.where(y.max(axis=1, keepdims=True) > 0, y_hat * y, y_hat)
    return masked.argmax(axis=1)


def binary_loss(y, y_hat, cfg: LossConfig | None = None):
    """BCE at the single most confident class index."""
    cfg = cfg or LossConfig()
    y, y_hat, plain = _prepare(y, y_hat)
    n, m = y.shape
    idx = most_confident_index(y, y_hat.data)
    pick = np.zeros((n, m))
    pick[np.arange(n), idx] = 1.0
    p_sel = ad.sum_cols(ad.mul(ad.constant(pick), y_hat))
    y_sel = y[np.arange(n), idx][:, None]
    w = None
    if cfg.class_weights is not None and cfg.weight_placement in ("binary", "both"):
        w = np.asarray(cfg.class_weights, dtype=float)[idx][:, None]
    terms = _bce_terms(y_sel, p_sel, cfg.clamp_eps, w, w)
    return _finish(ad.scale(ad.sum_all(terms), 1.0 / n), plain)


def combined_loss(y, y_hat, cfg: LossConfig | None = None):
    """w1 * MBCE + w2 * BinaryLoss (multi-label mode only)."""
    cfg = cfg or LossConfig()
    if cfg.mode != "multi_label":
        raise ModeError("combined_loss is defined for multi_label mode")
    plain = not isinstance(y_hat, ad.Tensor)
    a = mbce_loss(y, y_hat, cfg)
    b = binary_loss(y, y_hat, cfg)
    if plain:
        return cfg.w1 * a + cfg.w2 * b
    return ad.add(ad.scale(a, cfg.w1), ad.scale(b, cfg.w2))


def weighted_bce(y, y_hat, cfg: LossConfig | None = None):
    """-(w_pos*y*log p + w_neg*(1-y)*log(1-p)), class_weights = [w_neg, w_pos]."""
    cfg = cfg or LossConfig(mode="binary")
    if cfg.mode != "binary":
        raise ModeError("weighted_bce is defined for binary mode")
    y, y_hat, plain = _prepare(y, y_hat)
    if y.shape[1] != 1:
        raise LengthMismatch(f"binary mode expects one output column, got {y.shape[1]}")
    w_neg, w_pos = (1.0, 1.0) if cfg.class_weights is None else cfg.class_weights
    terms = _bce_terms(y, y_hat, cfg.clamp_eps, w_pos, w_neg)
    return _finish(ad.scale(ad.sum_all(terms), 1.0 / y.shape[0]), plain)


def training_loss(y, y_hat, cfg: LossConfig):
    if cfg.mode == "binary":
        return weighted_bce(y, y_hat, cfg)
    return combined_loss(y, y_hat, cfg)


def inverse_class_weights(labels: np.ndarray, mode: str) -> list[float]:
    """Weights proportional to total / count, scaled so the smallest is 1.

    Binary mode returns ``[w_neg, w_pos]``; multi-label mode one weight per
    class from its positive count.  Unseen classes get the largest weight.
    """
    labels = np.atleast_2d(np.asarray(labels))
    total = labels.shape[0]
    if mode == "binary":
        pos = labels[:, 0].sum()
        counts = np.array([total - pos, pos], dtype=float)
    else:
        counts = labels.sum(axis=0).astype(float)
    seen = counts > 0
    if not seen.any():
        return [1.0] * len(counts)
    raw = np.where(seen, total / np.where(seen, counts, 1.0), 0.0)
    raw[~seen] = raw[seen].max()
    return (raw / raw.min()).tolist()


# -- metrics ---------------------------------------------------------------

@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: ConfusionCounts) -> ConfusionCounts:
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    mcc: float
    counts: ConfusionCounts = field(default_factory=ConfusionCounts)
    per_class: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "mcc": self.mcc,
            "counts": vars(self.counts).copy(),
            "per_class": self.per_class,
        }


def confusion(truth: np.ndarray, pred: np.ndarray) -> ConfusionCounts:
    truth = np.asarray(truth, dtype=bool)
    pred = np.asarray(pred, dtype=bool)
    return ConfusionCounts(
        tp=int((truth & pred).sum()),
        fp=int((~truth & pred).sum()),
        tn=int((~truth & ~pred).sum()),
        fn=int((truth & ~pred).sum()),
    )


def scores_from_counts(c: ConfusionCounts) -> dict[str, float]:
    """Accuracy, precision, recall, F1 and MCC; zero denominators give 0."""
    acc = (c.tp + c.tn) / c.total if c.total else 0.0
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    denom = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    mcc = (c.tp * c.tn - c.fp * c.fn) / math.sqrt(denom) if denom else 0.0
    return {"accuracy": acc, "precision": precision, "recall": recall, "f1": f1, "mcc": mcc}


def evaluate(y_true, y_prob, threshold: float = 0.5) -> Metrics:
    """Headline metrics on the any-vulnerability decision plus per-class counts.

    With M > 1 the sample-level truth is ``max(y)`` and the prediction is
    ``max(y_hat) >= threshold``.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    y_true = np.asarray(y_true, dtype=float)
    y_prob = np.asarray(y_prob, dtype=float)
    if y_true.size == 0:
        raise EmptyInput("no samples to evaluate")
    y_true = y_true.reshape(len(y_true), -1)
    y_prob = y_prob.reshape(len(y_prob), -1)
    if y_true.shape != y_prob.shape:
        raise LengthMismatch(f"labels {y_true.shape} vs predictions {y_prob.shape}")
    decided = y_prob >= threshold
    counts = confusion(y_true.max(axis=1) > 0, decided.any(axis=1))
    per_class = []
    if y_true.shape[1] > 1:
        for k in range(y_true.shape[1]):
            ck = confusion(y_true[:, k] > 0, decided[:, k])
            per_class.append({"class": k, **vars(ck), **scores_from_counts(ck)})
    return Metrics(**scores_from_counts(counts), counts=counts, per_class=per_class)
