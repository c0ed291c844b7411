"""Finite-difference checks of every hand-written backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gcl import GclConfig, ce_loss, compute_cloud_sizes, gcl_loss
from .model import build_model
from .numerics import RngStream, finite_diff_grad, relative_error

COMPONENTS = ("ce loss", "gcl loss", "cosine head", "linear head", "mlp layers", "input")


@dataclass
class CheckRow:
    component: str
    max_rel_error: float
    passed: bool


def _random_problem(rng: RngStream):
    C = int(rng.integers(4)) + 2
    B = int(rng.integers(4)) + 2
    dims = [int(rng.integers(4)) + 2 for _ in range(int(rng.integers(2)) + 2)]
    counts = rng.integers(200, C) + 1
    x = rng.normal(0.0, 1.0, (B, dims[0]))
    y = rng.integers(C, B)
    return C, B, dims, counts, x, y


def check_trial(seed: int, h: float = 1e-6, flip_sign: bool = False) -> dict[str, float]:
    """Max relative error per component for one random instance."""
    rng = RngStream(seed).child("grad-check")
    C, B, dims, counts, x, y = _random_problem(rng)
    cfg = GclConfig(scale=float(rng.uniform() * 20 + 1))
    table = compute_cloud_sizes(counts, "log-diff")
    eps = np.abs(rng.normal(0.0, 1 / 3, B))
    sign = -1.0 if flip_sign else 1.0
    errs: dict[str, float] = {}

    z = rng.normal(0.0, 2.0, (B, C))
    out = ce_loss(z, y)
    errs["ce loss"] = relative_error(out.grad, finite_diff_grad(lambda t: ce_loss(t, y).loss, z, h))

    zc = np.tanh(z)
    out = gcl_loss(zc, y, table, eps, cfg)
    num = finite_diff_grad(lambda t: gcl_loss(t, y, table, eps, cfg).loss, zc, h)
    errs["gcl loss"] = relative_error(sign * out.grad, num)

    for kind in ("cosine", "linear"):
        model = build_model(dims, C, rng.child(kind), kind)
        params = model.params()
        # random biases keep tiny ReLU layers from dying and zeroing the feature
        for name, p in params.items():
            if name.endswith("bias"):
                p[...] = rng.normal(0.0, 0.5, p.shape)

        def loss_of(m=model):
            logits, _ = m.forward(x)
            if kind == "cosine":
                return gcl_loss(logits, y, table, eps, cfg)
            return ce_loss(logits, y)

        logits, tape = model.forward(x)
        lo = loss_of()
        grads = model.backward(tape, lo.grad)
        if kind == "cosine":
            grads = {k: sign * v for k, v in grads.items()}
        worst_layer = 0.0
        for name, p in params.items():
            def f(t, name=name):
                saved = params[name].copy()
                params[name][...] = t
                try:
                    return loss_of().loss
                finally:
                    params[name][...] = saved
            err = relative_error(grads[name], finite_diff_grad(f, p, h))
            if name.startswith("classifier"):
                key = f"{kind} head"
                errs[key] = max(errs.get(key, 0.0), err)
            else:
                worst_layer = max(worst_layer, err)
        errs["mlp layers"] = max(errs.get("mlp layers", 0.0), worst_layer)

        def fx(t):
            logits, _ = model.forward(t)
            return (gcl_loss(logits, y, table, eps, cfg) if kind == "cosine" else ce_loss(logits, y)).loss
        errs["input"] = max(errs.get("input", 0.0),
                            relative_error(grads["input"], finite_diff_grad(fx, x, h)))
    return errs


def run_grad_check(trials: int = 20, seed: int = 0, tol: float = 1e-5, h: float = 1e-6,
                   flip_sign: bool = False) -> list[CheckRow]:
    worst = {c: 0.0 for c in COMPONENTS}
    for t in range(trials):
        for c, e in check_trial(seed * 100003 + t, h, flip_sign).items():
            worst[c] = max(worst[c], e)
    return [CheckRow(c, worst[c], worst[c] <= tol) for c in COMPONENTS]


def format_rows(rows: list[CheckRow]) -> str:
    lines = [f"{'component':<14} {'max rel err':>12}  status"]
    for r in rows:
        lines.append(f"{r.component:<14} {r.max_rel_error:12.3e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"
