"""Dense float64 helpers, seeded random streams, SGD with momentum and a
central finite-difference gradient oracle.

Tensors are plain ``numpy.ndarray`` objects with ``dtype=float64``; there is
no wrapper type.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{what} contains non-finite entries")
    return x


def matmul(a, b) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax(z, axis: int = -1) -> np.ndarray:
    """Row-wise softmax with max subtraction. Works on 1-d or 2-d input."""
    z = check_finite(as_tensor(z), "logits")
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis: int = -1) -> np.ndarray:
    z = check_finite(as_tensor(z), "logits")
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


class RngStream:
    """Reproducible random stream built on the counter-based Philox generator.

    Child streams are derived from ``(seed, label path)`` so adding draws to
    one stream never shifts another.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.path = tuple(path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self.gen = np.random.Generator(np.random.Philox(ss))

    def child(self, label: str) -> "RngStream":
        return RngStream(self.seed, self.path + (zlib.crc32(label.encode("utf-8")),))

    def uniform(self, size=None):
        return self.gen.random(size)

    def normal(self, mean: float = 0.0, std: float = 1.0, size=None):
        # std == 0 must return the mean exactly
        return mean + std * self.gen.standard_normal(size)

    def integers(self, high: int, size=None):
        return self.gen.integers(0, high, size=size)

    def beta(self, a: float, b: float) -> float:
        return float(self.gen.beta(a, b))

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)


def gaussian_draw(rng: RngStream, mean: float, std: float, size=None):
    if std < 0:
        raise DomainError("std must be nonnegative")
    return rng.normal(mean, std, size)


@dataclass
class SgdState:
    lr: float
    momentum: float = 0.0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise DomainError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise DomainError("momentum must lie in [0, 1)")


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
             state: SgdState) -> None:
    """Classic momentum update, in place: ``v = m*v + g; p -= lr*v``.

    Only the keys present in ``grads`` are touched, which is how frozen
    parameters are left alone.
    """
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
        elif v.shape != p.shape:
            raise ShapeError(f"velocity for {name} has shape {v.shape}, parameter {p.shape}")
        v = state.momentum * v + g
        state.velocity[name] = v
        p -= state.lr * v


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar function, one coordinate at a time."""
    if not h > 0:
        raise DomainError("step h must be positive")
    x = np.array(x, dtype=DTYPE)
    flat = x.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise DomainError(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def relative_error(analytic, numeric, floor: float = 1e-12) -> float:
    """Max abs difference scaled by the larger of the two tensors' max magnitudes."""
    a = as_tensor(analytic)
    n = as_tensor(numeric)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0), floor)
    return float(np.max(np.abs(a - n), initial=0.0) / scale)
