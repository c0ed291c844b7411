"""Class-selection probabilities for classifier re-training batches and the
batch drawer that consumes them."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .gcl import CloudSizeTable
from .numerics import DTYPE, DomainError, RngStream

SAMPLERS = ("IB", "CB", "EN", "CBEN")


class EmptyPoolError(ValueError):
    pass


@dataclass(frozen=True)
class SamplerSpec:
    strategy: str = "CBEN"
    a: float = 0.999
    b: float = 0.0009
    en_beta: float = 0.999

    def __post_init__(self):
        if self.strategy not in SAMPLERS:
            raise DomainError(f"unknown sampler {self.strategy!r}; pick one of {SAMPLERS}")
        if not 0 < self.a < self.a + self.b < 1:
            raise DomainError("need 0 < a < a + b < 1")
        if not 0 < self.en_beta < 1:
            raise DomainError("en_beta must lie in (0, 1)")


@dataclass(frozen=True)
class ClassProbTable:
    """``sample_weight[j]`` is the probability attached to one sample of class j
    (normalized over classes); ``rho[j]`` is the resulting probability that a
    batch slot goes to class j, i.e. ``n_j * sample_weight[j]`` renormalized."""

    beta: np.ndarray
    rho: np.ndarray
    sample_weight: np.ndarray


def compute_beta(table: CloudSizeTable, spec: SamplerSpec) -> np.ndarray:
    """Map cloud sizes linearly onto [a, a + b]; the largest cloud gets a + b."""
    d = table.normalized
    lo, hi = d.min(), d.max()
    if hi == lo:
        return np.full(len(d), spec.a, dtype=DTYPE)
    return spec.b * (d - lo) / (hi - lo) + spec.a


def compute_rho(counts, beta) -> ClassProbTable:
    """Per-sample probability = reciprocal effective number of the sample's class.

    A class's share of the batch is that probability times its count, so the
    rarest class ends up between instance-balanced and class-balanced sampling.
    """
    n = np.asarray(counts, dtype=DTYPE)
    beta = np.asarray(beta, dtype=DTYPE)
    if np.any(n < 1):
        raise DomainError("every class needs at least one sample")
    if np.any(beta <= 0) or np.any(beta >= 1):
        raise DomainError("beta must lie strictly inside (0, 1)")
    # expm1 keeps 1 - beta**n accurate when beta is close to 1
    raw = (1.0 - beta) / -np.expm1(n * np.log(beta))
    mass = n * raw
    return ClassProbTable(beta, mass / mass.sum(), raw / raw.sum())


def class_probs(strategy: str, counts, table: CloudSizeTable | None = None,
                spec: SamplerSpec | None = None) -> ClassProbTable:
    spec = spec or SamplerSpec(strategy=strategy)
    n = np.asarray(counts, dtype=DTYPE)
    C = len(n)
    if strategy == "IB":
        return ClassProbTable(np.full(C, np.nan), n / n.sum(), np.full(C, 1.0 / C))
    if strategy == "CB":
        w = 1.0 / n
        return ClassProbTable(np.full(C, np.nan), np.full(C, 1.0 / C), w / w.sum())
    if strategy == "EN":
        return compute_rho(n, np.full(C, spec.en_beta))
    if strategy == "CBEN":
        if table is None:
            raise DomainError("CBEN needs a cloud size table")
        return compute_rho(n, compute_beta(table, spec))
    raise DomainError(f"unknown sampler {strategy!r}")


def class_pools(labels, num_classes: int) -> list[np.ndarray]:
    labels = np.asarray(labels)
    return [np.flatnonzero(labels == j) for j in range(num_classes)]


def draw_batch(rng: RngStream, probs: ClassProbTable, pools, batch_size: int) -> np.ndarray:
    """I.i.d. slots: class by ``rho``, then an instance uniformly within it."""
    rho = probs.rho
    for j, pool in enumerate(pools):
        if rho[j] > 0 and len(pool) == 0:
            raise EmptyPoolError(f"class {j} has probability {rho[j]} but no samples")
    classes = rng.gen.choice(len(rho), size=batch_size, p=rho)
    u = rng.uniform(batch_size)
    out = np.empty(batch_size, dtype=np.int64)
    for j in np.unique(classes):
        slots = classes == j
        pool = pools[j]
        out[slots] = pool[(u[slots] * len(pool)).astype(np.int64)]
    return out


def draw_classes(rng: RngStream, probs: ClassProbTable, n_draws: int) -> np.ndarray:
    return rng.gen.choice(len(probs.rho), size=n_draws, p=probs.rho)


def empirical_frequencies(rng: RngStream, probs: ClassProbTable, n_draws: int) -> np.ndarray:
    drawn = draw_classes(rng, probs, n_draws)
    return np.bincount(drawn, minlength=len(probs.rho)) / n_draws


def diagnostics_csv(counts, probs: ClassProbTable, freq=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "count", "beta", "sample_weight", "rho", "empirical_frequency"])
    for j, n in enumerate(counts):
        f = "" if freq is None else repr(float(freq[j]))
        w.writerow([j, int(n), repr(float(probs.beta[j])), repr(float(probs.sample_weight[j])),
                    repr(float(probs.rho[j])), f])
    return buf.getvalue()
