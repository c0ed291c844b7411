"""Gaussian clouded logits: per-class cloud sizes, the noise magnitude draw,
the clouded cosine logit loss and the plain cross-entropy baseline."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .numerics import DTYPE, DomainError, RngStream, as_tensor, gaussian_draw, log_softmax

STRATEGIES = ("log-diff", "pow-diff", "cosine", "zero")


@dataclass(frozen=True)
class GclConfig:
    scale: float = 30.0
    noise_mean: float = 0.0
    noise_std: float = 1.0 / 3.0
    clamp_lo: float = -1.0
    clamp_hi: float = 1.0
    strategy: str = "log-diff"
    pow_exponent: float = 0.25

    def __post_init__(self):
        if not self.scale > 0:
            raise DomainError("scale must be positive")
        if not self.clamp_lo < self.clamp_hi:
            raise DomainError("clamp_lo must be below clamp_hi")
        if self.noise_std < 0:
            raise DomainError("noise_std must be nonnegative")
        if self.strategy not in STRATEGIES:
            raise DomainError(f"unknown cloud size strategy {self.strategy!r}")


@dataclass(frozen=True)
class CloudSizeTable:
    counts: np.ndarray
    raw: np.ndarray
    normalized: np.ndarray
    strategy: str

    @property
    def num_classes(self) -> int:
        return len(self.raw)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class_index", "count", "raw_delta", "normalized_delta"])
        for j, (n, r, d) in enumerate(zip(self.counts, self.raw, self.normalized)):
            w.writerow([j, int(n), repr(float(r)), repr(float(d))])
        return buf.getvalue()


def compute_cloud_sizes(counts, strategy: str = "log-diff", exponent: float = 0.25) -> CloudSizeTable:
    """Per-class cloud sizes; rarer classes get larger clouds, the head gets none.

    ``normalized`` divides by the largest size so it lies in [0, 1].
    """
    n = np.asarray(counts, dtype=DTYPE)
    if n.ndim != 1 or len(n) < 2:
        raise DomainError("need counts for at least two classes")
    if np.any(n < 1):
        raise DomainError("every class needs at least one sample")
    n_max = n.max()
    if strategy == "log-diff":
        raw = np.log(n_max) - np.log(n)
    elif strategy == "pow-diff":
        raw = n_max ** exponent - n ** exponent
    elif strategy == "cosine":
        raw = np.cos(n / n_max * (math.pi / 2))
    elif strategy == "zero":
        raw = np.zeros_like(n)
    else:
        raise DomainError(f"unknown cloud size strategy {strategy!r}")
    # cos(pi/2) and vectorized pow leave ~1e-16 residue at the head; it must be exactly cloud-free
    raw[n == n_max] = 0.0
    raw = np.maximum(raw, 0.0)
    top = raw.max()
    normalized = raw / top if top > 0 else np.zeros_like(raw)
    return CloudSizeTable(n.astype(np.int64), raw, normalized, strategy)


def table_for(counts, cfg: GclConfig) -> CloudSizeTable:
    return compute_cloud_sizes(counts, cfg.strategy, cfg.pow_exponent)


def sample_epsilon(rng: RngStream, cfg: GclConfig, size=None):
    """Noise magnitude: Gaussian draw, clamped, then absolute value."""
    g = gaussian_draw(rng, cfg.noise_mean, cfg.noise_std, size)
    return np.abs(np.clip(g, cfg.clamp_lo, cfg.clamp_hi))


def clouded_logits(cos_logits, table: CloudSizeTable, eps, cfg: GclConfig) -> np.ndarray:
    z = as_tensor(cos_logits)
    eps = np.broadcast_to(as_tensor(eps), (z.shape[0],))
    if np.any(eps < 0):
        raise DomainError("noise magnitudes must be nonnegative")
    if table.num_classes != z.shape[1]:
        raise DomainError(f"table has {table.num_classes} classes, logits have {z.shape[1]}")
    return cfg.scale * (z - table.normalized[None, :] * eps[:, None])


def eval_logits(cos_logits, table: CloudSizeTable | None, cfg: GclConfig) -> np.ndarray:
    """Inference logits: no noise, no margins, just the scaled cosines."""
    return cfg.scale * as_tensor(cos_logits)


@dataclass
class LossOutput:
    loss: float
    grad: np.ndarray  # d loss / d input logits (cosines for GCL)
    probs: np.ndarray


def _targets(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if labels.shape[1] != num_classes:
            raise DomainError("soft label width does not match class count")
        return labels.astype(DTYPE)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DomainError(f"labels must lie in [0, {num_classes})")
    out = np.zeros((labels.shape[0], num_classes), dtype=DTYPE)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def softmax_xent(logits, labels, scale: float = 1.0) -> LossOutput:
    """Mean cross-entropy of ``logits`` against hard or soft labels.

    ``scale`` is the factor between the caller's input and ``logits``, applied
    to the returned gradient through the chain rule.
    """
    logits = as_tensor(logits)
    y = _targets(labels, logits.shape[1])
    logp = log_softmax(logits, axis=1)
    b = logits.shape[0]
    loss = float(-np.sum(y * logp) / b)
    p = np.exp(logp)
    return LossOutput(loss, (scale / b) * (p - y), p)


def gcl_loss(cos_logits, labels, table: CloudSizeTable, eps, cfg: GclConfig) -> LossOutput:
    """Cross-entropy over clouded logits; noise and cloud sizes are constants
    for the backward pass."""
    return softmax_xent(clouded_logits(cos_logits, table, eps, cfg), labels, cfg.scale)


def ce_loss(logits, labels) -> LossOutput:
    return softmax_xent(logits, labels, 1.0)


def mixup_batch(rng: RngStream, x, onehot, alpha: float = 1.0, lam: float | None = None):
    """Convex combination of the batch with a shuffled copy of itself.

    Returns ``(mixed_x, mixed_labels, lam, permutation)``.
    """
    if not alpha > 0:
        raise DomainError("mixup alpha must be positive")
    x = as_tensor(x)
    onehot = as_tensor(onehot)
    if lam is None:
        lam = rng.beta(alpha, alpha)
    perm = rng.permutation(x.shape[0])
    return (lam * x + (1.0 - lam) * x[perm],
            lam * onehot + (1.0 - lam) * onehot[perm], lam, perm)
