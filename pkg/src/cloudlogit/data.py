"""Long-tailed dataset construction: exponential class profile, synthetic
Gaussian blobs, CSV ingestion and imbalance statistics."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass

import numpy as np

from .numerics import DTYPE, DomainError, RngStream


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (N, dim)
    labels: np.ndarray  # (N,) int64
    num_classes: int
    name: str = ""

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise DataError("features must be (N, dim) with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def summary(self) -> str:
        counts = self.counts
        lines = [f"dataset {self.name or '(unnamed)'}: N={len(self)} C={self.num_classes} dim={self.dim}"]
        if counts.min() > 0:
            lines.append(f"imbalance ratio {imbalance_ratio(self):g}")
        lines.append("class,count")
        lines += [f"{j},{int(n)}" for j, n in enumerate(counts)]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class LongTailSpec:
    n0: int
    num_classes: int
    gamma: float


def _round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def longtail_counts(spec: LongTailSpec) -> np.ndarray:
    """Exponentially decaying counts from ``n0`` at class 0 down to ``n0/gamma``."""
    n0, C, gamma = spec.n0, spec.num_classes, float(spec.gamma)
    if C < 2:
        raise DomainError("need at least two classes")
    if gamma < 1:
        raise DomainError("gamma must be at least 1")
    if n0 < 1:
        raise DomainError("head count must be positive")
    counts = [n0] + [_round_half_away(n0 * gamma ** (-i / (C - 1))) for i in range(1, C)]
    if counts[-1] < 1:
        raise DomainError(f"tail count rounds to {counts[-1]}; raise n0 or lower gamma")
    return np.array(counts, dtype=np.int64)


def imbalance_ratio(ds_or_counts) -> float:
    counts = ds_or_counts.counts if isinstance(ds_or_counts, Dataset) else np.asarray(ds_or_counts)
    if counts.min() < 1:
        raise DomainError("a class has no samples")
    return float(counts.max() / counts.min())


@dataclass(frozen=True)
class BlobGenerator:
    """Class centers plus the noise level; everything needed to sample more data."""

    centers: np.ndarray  # (C, dim)
    noise_std: float

    @classmethod
    def create(cls, rng: RngStream, num_classes: int, dim: int, center_scale: float,
               noise_std: float) -> "BlobGenerator":
        if dim < 2:
            raise DomainError("dim must be at least 2")
        return cls(rng.normal(0.0, center_scale, (num_classes, dim)), noise_std)

    @property
    def num_classes(self) -> int:
        return self.centers.shape[0]

    def sample(self, rng: RngStream, counts, name: str = "") -> Dataset:
        counts = np.asarray(counts, dtype=np.int64)
        if len(counts) != self.num_classes:
            raise DomainError("need one count per class")
        labels = np.repeat(np.arange(self.num_classes), counts)
        noise = rng.normal(0.0, 1.0, (len(labels), self.centers.shape[1]))
        feats = self.centers[labels] + self.noise_std * noise
        return Dataset(feats, labels, self.num_classes, name)


def synth_blobs(rng: RngStream, num_classes: int, dim: int, counts, center_scale: float = 5.0,
                noise_std: float = 1.0) -> Dataset:
    gen = BlobGenerator.create(rng.child("centers"), num_classes, dim, center_scale, noise_std)
    return gen.sample(rng.child("samples"), counts, "blobs")


def balanced_test_split(rng: RngStream, gen: BlobGenerator, per_class: int) -> Dataset:
    return gen.sample(rng, np.full(gen.num_classes, per_class), "blobs-test")


def nearest_center_accuracy(gen: BlobGenerator, ds: Dataset) -> float:
    d = ((ds.features[:, None, :] - gen.centers[None, :, :]) ** 2).sum(axis=2)
    return float(np.mean(d.argmin(axis=1) == ds.labels))


# --- CSV ----------------------------------------------------------------------

def to_csv_text(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"f{k}" for k in range(ds.dim)] + ["label"])
    for row, y in zip(ds.features, ds.labels):
        w.writerow([repr(float(v)) for v in row] + [int(y)])
    return buf.getvalue()


def save_csv(ds: Dataset, path) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(to_csv_text(ds))
    os.replace(tmp, path)


def parse_csv(text: str, num_classes: int | None = None, name: str = "") -> Dataset:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DataError("line 1: empty file")
    header = rows[0]
    if not header or header[-1].strip() != "label":
        raise DataError("line 1: header must end with a 'label' column")
    dim = len(header) - 1
    if dim < 1:
        raise DataError("line 1: no feature columns")
    feats, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != dim + 1:
            raise DataError(f"line {lineno}: expected {dim + 1} fields, got {len(row)}")
        try:
            vals = [float(c) for c in row[:-1]]
        except ValueError:
            raise DataError(f"line {lineno}: non-numeric feature value") from None
        if not all(math.isfinite(v) for v in vals):
            raise DataError(f"line {lineno}: non-finite feature value")
        try:
            y = int(row[-1])
        except ValueError:
            raise DataError(f"line {lineno}: label {row[-1]!r} is not an integer") from None
        if y < 0 or (num_classes is not None and y >= num_classes):
            raise DataError(f"line {lineno}: label {y} out of range")
        feats.append(vals)
        labels.append(y)
    if not labels:
        raise DataError("line 2: no data rows")
    labels = np.array(labels, dtype=np.int64)
    C = num_classes if num_classes is not None else int(labels.max()) + 1
    return Dataset(np.array(feats, dtype=DTYPE), labels, C, name)


def load_csv(path, num_classes: int | None = None) -> Dataset:
    with open(path, newline="") as fh:
        text = fh.read()
    try:
        return parse_csv(text, num_classes, os.path.basename(os.fspath(path)))
    except DataError as e:
        raise DataError(f"{os.fspath(path)}: {e}") from None
