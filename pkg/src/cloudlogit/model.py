"""MLP feature extractor with hand-written backward passes, cosine and
linear classifier heads, and the binary checkpoint format."""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .numerics import DTYPE, DomainError, RngStream, ShapeError, as_tensor

NORM_FLOOR = 1e-12


class StaleTapeError(RuntimeError):
    """Backward called with a tape recorded before the latest parameter update."""


class DegenerateInputError(DomainError):
    pass


def relu(x):
    return np.maximum(x, 0.0)


@dataclass
class MlpBackbone:
    """Stack of affine layers with a ReLU between consecutive layers.

    The final layer is left linear so the embedding can point anywhere.
    Weights are stored as (fan_in, fan_out) so a batch maps as ``x @ W + b``.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight and at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {k}: weight {w.shape} and bias {b.shape} disagree")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {k} input {w.shape[0]} does not chain")

    @classmethod
    def init(cls, dims, rng: RngStream) -> "MlpBackbone":
        dims = list(dims)
        if len(dims) < 2:
            raise ShapeError("dims must list at least input and output size")
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out)))
            biases.append(np.zeros(fan_out, dtype=DTYPE))
        return cls(weights, biases)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def embedding_dim(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"backbone.{k}.weight"] = w
            out[f"backbone.{k}.bias"] = b
        return out


@dataclass
class CosineClassifier:
    """Bias-free head scoring each feature by its cosine with every class anchor."""

    weight: np.ndarray  # (D, C)

    def __post_init__(self):
        if self.weight.ndim != 2 or self.weight.shape[1] < 2:
            raise ShapeError("classifier weight must be (D, C) with C >= 2")

    @classmethod
    def init(cls, dim: int, num_classes: int, rng: RngStream) -> "CosineClassifier":
        return cls(rng.normal(0.0, 1.0 / np.sqrt(dim), (dim, num_classes)))

    @property
    def num_classes(self) -> int:
        return self.weight.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"classifier.weight": self.weight}

    def forward(self, f: np.ndarray):
        fn = np.sqrt(np.sum(f * f, axis=1))
        if np.any(fn < NORM_FLOOR):
            bad = int(np.argmax(fn < NORM_FLOOR))
            raise DegenerateInputError(f"feature row {bad} has norm below {NORM_FLOOR}")
        wn = np.sqrt(np.sum(self.weight * self.weight, axis=0))
        if np.any(wn < NORM_FLOOR):
            raise DegenerateInputError("a class anchor has (near) zero norm")
        u = f / fn[:, None]
        v = self.weight / wn[None, :]
        return u @ v, (u, fn, v, wn)

    def backward(self, cache, dz: np.ndarray):
        u, fn, v, wn = cache
        du = dz @ v.T
        dv = u.T @ dz
        df = (du - u * np.sum(u * du, axis=1, keepdims=True)) / fn[:, None]
        dw = (dv - v * np.sum(v * dv, axis=0, keepdims=True)) / wn[None, :]
        return {"classifier.weight": dw}, df


@dataclass
class LinearClassifier:
    """Plain affine head ``f @ W + b``; used by the cross-entropy baseline."""

    weight: np.ndarray  # (D, C)
    bias: np.ndarray  # (C,)

    @classmethod
    def init(cls, dim: int, num_classes: int, rng: RngStream) -> "LinearClassifier":
        return cls(rng.normal(0.0, 1.0 / np.sqrt(dim), (dim, num_classes)),
                   np.zeros(num_classes, dtype=DTYPE))

    @property
    def num_classes(self) -> int:
        return self.weight.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"classifier.weight": self.weight, "classifier.bias": self.bias}

    def forward(self, f: np.ndarray):
        return f @ self.weight + self.bias, f

    def backward(self, cache, dz: np.ndarray):
        f = cache
        return ({"classifier.weight": f.T @ dz, "classifier.bias": dz.sum(axis=0)},
                dz @ self.weight.T)


@dataclass
class ForwardTape:
    version: int
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activations
    features: np.ndarray
    head_cache: object


@dataclass
class Model:
    backbone: MlpBackbone
    classifier: CosineClassifier | LinearClassifier
    version: int = field(default=0, compare=False)

    @property
    def kind(self) -> str:
        return "cosine" if isinstance(self.classifier, CosineClassifier) else "linear"

    def params(self) -> dict[str, np.ndarray]:
        p = self.backbone.params()
        p.update(self.classifier.params())
        return p

    def backbone_names(self) -> list[str]:
        return list(self.backbone.params())

    def classifier_names(self) -> list[str]:
        return list(self.classifier.params())

    def touch(self) -> None:
        """Mark parameters as changed; tapes recorded earlier become stale."""
        self.version += 1

    def copy(self) -> "Model":
        bb = MlpBackbone([w.copy() for w in self.backbone.weights],
                         [b.copy() for b in self.backbone.biases])
        if isinstance(self.classifier, CosineClassifier):
            clf = CosineClassifier(self.classifier.weight.copy())
        else:
            clf = LinearClassifier(self.classifier.weight.copy(), self.classifier.bias.copy())
        return Model(bb, clf)

    def forward_features(self, x) -> tuple[np.ndarray, ForwardTape]:
        return forward_features(self.backbone, x, self.version)

    def forward(self, x) -> tuple[np.ndarray, ForwardTape]:
        """Logits (cosines for the cosine head) and the tape for backward."""
        f, tape = self.forward_features(x)
        logits, tape.head_cache = self.classifier.forward(f)
        return logits, tape

    def backward(self, tape: ForwardTape, dlogits, backbone: bool = True):
        """Gradients of every parameter (classifier only if ``backbone`` is False)
        plus ``"input"``, the gradient w.r.t. the batch fed to forward."""
        if tape.version != self.version:
            raise StaleTapeError(
                f"tape recorded at version {tape.version}, model is at {self.version}")
        dlogits = as_tensor(dlogits)
        grads, df = self.classifier.backward(tape.head_cache, dlogits)
        if backbone:
            bgrads, dx = backward_features(self.backbone, tape, df)
            grads.update(bgrads)
            grads["input"] = dx
        return grads


def build_model(dims, num_classes: int, rng: RngStream, kind: str = "cosine") -> Model:
    bb = MlpBackbone.init(dims, rng.child("backbone"))
    head_rng = rng.child("classifier")
    if kind == "cosine":
        clf = CosineClassifier.init(bb.embedding_dim, num_classes, head_rng)
    elif kind == "linear":
        clf = LinearClassifier.init(bb.embedding_dim, num_classes, head_rng)
    else:
        raise ValueError(f"unknown classifier kind {kind!r}")
    return Model(bb, clf)


def forward_features(backbone: MlpBackbone, x, version: int = 0):
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != backbone.input_dim:
        raise ShapeError(f"expected batch with {backbone.input_dim} columns, got {x.shape}")
    inputs, pre = [], []
    h = x
    last = len(backbone.weights) - 1
    for k, (w, b) in enumerate(zip(backbone.weights, backbone.biases)):
        inputs.append(h)
        a = h @ w + b
        pre.append(a)
        h = a if k == last else relu(a)
    return h, ForwardTape(version, inputs, pre, h, None)


def backward_features(backbone: MlpBackbone, tape: ForwardTape, df):
    grads = {}
    g = as_tensor(df)
    last = len(backbone.weights) - 1
    for k in range(last, -1, -1):
        if k != last:
            g = g * (tape.pre[k] > 0)
        grads[f"backbone.{k}.weight"] = tape.inputs[k].T @ g
        grads[f"backbone.{k}.bias"] = g.sum(axis=0)
        g = g @ backbone.weights[k].T
    return grads, g


# --- checkpoint file ----------------------------------------------------------
#
# Little-endian throughout:
#   8s   magic b"GCLCKPT\0"
#   u32  format version (1)
#   u64  iteration counter
#   32s  sha256 of the run configuration text
#   u32  tensor count, then per tensor:
#        u16 name length, utf-8 name, u32 ndim, u64 * ndim dims,
#        float64 * prod(dims) row-major data
# Parameter tensors are named as in Model.params(); optimizer velocity
# buffers carry an "opt." prefix.

MAGIC = b"GCLCKPT\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: Model
    velocity: dict[str, np.ndarray]
    iteration: int
    config_hash: bytes

    def to_bytes(self) -> bytes:
        tensors = dict(self.model.params())
        tensors.update({f"opt.{k}": v for k, v in sorted(self.velocity.items())})
        if len(self.config_hash) != 32:
            raise CheckpointError("config hash must be 32 bytes")
        out = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, self.iteration),
               self.config_hash, struct.pack("<I", len(tensors))]
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f8")
            out.append(struct.pack("<H", len(raw)))
            out.append(raw)
            out.append(struct.pack("<I", arr.ndim))
            out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            out.append(arr.tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:8] != MAGIC:
            raise CheckpointError("bad magic; not a checkpoint file")
        pos = 8
        version, iteration = struct.unpack_from("<IQ", blob, pos)
        pos += 12
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        config_hash = blob[pos:pos + 32]
        pos += 32
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
            pos += 8 * ndim
            n = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(shape)
            pos += 8 * n
            tensors[name] = arr.astype(DTYPE)
        if pos != len(blob):
            raise CheckpointError("trailing bytes after last tensor")
        return cls(_model_from_tensors(tensors),
                   {k[4:]: v for k, v in tensors.items() if k.startswith("opt.")},
                   iteration, config_hash)

    def save(self, path) -> None:
        path = os.fspath(path)
        tmp = path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(self.to_bytes())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def config_digest(text: str) -> bytes:
    return hashlib.sha256(text.encode("utf-8")).digest()


def _model_from_tensors(tensors: dict[str, np.ndarray]) -> Model:
    weights, biases = [], []
    k = 0
    while f"backbone.{k}.weight" in tensors:
        weights.append(tensors[f"backbone.{k}.weight"])
        biases.append(tensors[f"backbone.{k}.bias"])
        k += 1
    if not weights or "classifier.weight" not in tensors:
        raise CheckpointError("checkpoint lacks backbone or classifier tensors")
    if "classifier.bias" in tensors:
        clf = LinearClassifier(tensors["classifier.weight"], tensors["classifier.bias"])
    else:
        clf = CosineClassifier(tensors["classifier.weight"])
    return Model(MlpBackbone(weights, biases), clf)
