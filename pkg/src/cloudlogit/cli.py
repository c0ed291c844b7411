"""Command line entry point.

Exit codes: 0 success, 1 internal failure, 2 user or configuration error.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys
from dataclasses import replace

import numpy as np

from . import data as data_mod
from .config import ConfigError, RunConfig, parse_config
from .gcl import compute_cloud_sizes, table_for
from .gradcheck import format_rows, run_grad_check
from .model import Checkpoint, CheckpointError, config_digest
from .numerics import DomainError, RngStream
from .sampler import SAMPLERS, SamplerSpec, class_probs, diagnostics_csv, empirical_frequencies
from .trainer import (BlobSpec, Streams, TrainingDiverged, embeddings_csv, evaluate, init_model,
                      make_blob_corpus, stage2_probs, trace_csv, train_stage1, train_stage2_crt)


class UserError(Exception):
    pass


def _prepare_outdir(path: str, force: bool) -> None:
    if os.path.exists(path) and os.listdir(path):
        if not force:
            raise UserError(f"{path} exists and is not empty; pass --force to overwrite")
        shutil.rmtree(path)
    os.makedirs(path, exist_ok=True)


def _write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _read_config(path: str) -> RunConfig:
    if not os.path.isfile(path):
        raise UserError(f"config file not found: {path}")
    with open(path) as fh:
        return parse_config(fh.read())


def _load(path: str, num_classes=None) -> data_mod.Dataset:
    if not os.path.isfile(path):
        raise UserError(f"dataset file not found: {path}")
    return data_mod.load_csv(path, num_classes)


def _load_pair(rc: RunConfig):
    train = _load(rc.data.train, rc.data.num_classes)
    test = _load(rc.data.test, train.num_classes)
    if train.dim != test.dim:
        raise UserError(f"{rc.data.test}: {test.dim} feature columns, training file has {train.dim}")
    return train, test


# --- commands -------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    spec = BlobSpec(num_classes=args.classes, dim=args.dim, n0=args.head, gamma=args.gamma,
                    test_per_class=args.test_per_class, center_scale=args.center_scale,
                    noise_std=args.noise_std, seed=args.seed)
    train, test, _ = make_blob_corpus(spec)
    _prepare_outdir(args.out, args.force)
    data_mod.save_csv(train, os.path.join(args.out, "train.csv"))
    data_mod.save_csv(test, os.path.join(args.out, "test.csv"))
    summary = train.summary()
    _write(os.path.join(args.out, "summary.txt"), summary)
    sys.stdout.write(summary)
    return 0


def cmd_train(args) -> int:
    rc = _read_config(args.config)
    cfg = rc.train if args.seed is None else replace(rc.train, seed=args.seed)
    train, test = _load_pair(rc)
    _prepare_outdir(args.out, args.force)
    _write(os.path.join(args.out, "config.ini"), rc.text)
    digest = config_digest(rc.text + f"\n# seed={cfg.seed}\n")
    many, few = rc.eval.many_threshold, rc.eval.few_threshold

    streams = Streams.from_seed(cfg.seed)
    model = init_model(cfg, train.dim, train.num_classes, streams.init)
    table = table_for(train.counts, cfg.gcl)
    trace = train_stage1(train, model, cfg, streams, table)
    Checkpoint(model, {}, cfg.stage1_iters, digest).save(os.path.join(args.out, "stage1.ckpt"))
    stage1 = evaluate(model, test, train.counts, cfg.gcl, many, few)
    trace += train_stage2_crt(train, model, cfg, streams, table)
    Checkpoint(model, {}, cfg.stage1_iters + cfg.stage2_iters, digest).save(
        os.path.join(args.out, "final.ckpt"))
    report = evaluate(model, test, train.counts, cfg.gcl, many, few)

    probs = stage2_probs(train, cfg, table)
    files = {
        "trace.csv": trace_csv(trace),
        "stage1_report.csv": stage1.to_csv(),
        "report.csv": report.to_csv(),
        "report.txt": report.table(),
        "cloud_sizes.csv": table.to_csv(),
        "sampler.csv": diagnostics_csv(train.counts, probs),
        "test_embeddings.csv": embeddings_csv(model, test),
    }
    for name, text in files.items():
        _write(os.path.join(args.out, name), text)
    sys.stdout.write(report.table())
    return 0


def cmd_eval(args) -> int:
    rc = _read_config(args.config)
    train, test = _load_pair(rc)
    if not os.path.isfile(args.checkpoint):
        raise UserError(f"checkpoint not found: {args.checkpoint}")
    model = Checkpoint.load(args.checkpoint).model
    report = evaluate(model, test, train.counts, rc.train.gcl,
                      rc.eval.many_threshold, rc.eval.few_threshold)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write(os.path.join(args.out, "eval_report.csv"), report.to_csv())
    sys.stdout.write(report.table())
    return 0


def cmd_grad_check(args) -> int:
    rows = run_grad_check(trials=args.trials, seed=args.seed, tol=args.tol,
                          flip_sign=args.inject_sign_flip)
    sys.stdout.write(format_rows(rows))
    return 0 if all(r.passed for r in rows) else 1


def _counts_from_args(args) -> np.ndarray:
    if args.counts:
        try:
            return np.array([int(v) for v in args.counts.split(",")], dtype=np.int64)
        except ValueError:
            raise UserError(f"--counts: expected comma-separated integers, got {args.counts!r}") from None
    return data_mod.longtail_counts(data_mod.LongTailSpec(args.head, args.classes, args.gamma))


def cmd_sampler_check(args) -> int:
    counts = _counts_from_args(args)
    spec = SamplerSpec(strategy=args.strategy)
    table = compute_cloud_sizes(counts, args.cloud_strategy)
    probs = class_probs(args.strategy, counts, table, spec)
    freq = empirical_frequencies(RngStream(args.seed).child("sampler-check"), probs, args.draws)
    dev = np.abs(freq - probs.rho)
    lines = [f"strategy {args.strategy}, {args.draws} draws",
             f"{'class':>5} {'count':>7} {'rho':>10} {'empirical':>10} {'abs dev':>9}"]
    for j, n in enumerate(counts):
        lines.append(f"{j:>5} {int(n):>7} {probs.rho[j]:10.6f} {freq[j]:10.6f} {dev[j]:9.6f}")
    tail = int(np.argmin(counts))
    cmp = {s: class_probs(s, counts, table, SamplerSpec(strategy=s)).rho[tail] for s in SAMPLERS}
    lines.append("rarest class probability: " + "  ".join(f"{s}={v:.6f}" for s, v in cmp.items()))
    ok = bool(np.all(dev <= args.tol))
    lines.append(f"max abs deviation {dev.max():.6f} (tolerance {args.tol}) {'PASS' if ok else 'FAIL'}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write(os.path.join(args.out, "sampler_check.csv"), diagnostics_csv(counts, probs, freq))
    sys.stdout.write("\n".join(lines) + "\n")
    return 0 if ok else 1


def cmd_report(args) -> int:
    if args.data:
        sys.stdout.write(_load(args.data).summary())
        return 0
    run = args.run
    if not os.path.isdir(run):
        raise UserError(f"run directory not found: {run}")
    for name in ("report.txt", "cloud_sizes.csv", "sampler.csv"):
        path = os.path.join(run, name)
        if not os.path.isfile(path):
            raise UserError(f"missing run artifact: {path}")
        with open(path) as fh:
            sys.stdout.write(f"== {name}\n{fh.read()}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cloudlogit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic long-tailed train/test pair")
    g.add_argument("--classes", type=int, default=10)
    g.add_argument("--head", type=int, default=500)
    g.add_argument("--gamma", type=float, default=100.0)
    g.add_argument("--dim", type=int, default=32)
    g.add_argument("--test-per-class", type=int, default=200)
    g.add_argument("--center-scale", type=float, default=BlobSpec.center_scale)
    g.add_argument("--noise-std", type=float, default=BlobSpec.noise_std)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="data")
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="two-stage training from a config file")
    t.add_argument("config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.add_argument("--force", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the configured test file")
    e.add_argument("config")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("grad-check", help="finite-difference check of all backward passes")
    c.add_argument("--trials", type=int, default=20)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tol", type=float, default=1e-5)
    c.add_argument("--inject-sign-flip", action="store_true", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_grad_check)

    s = sub.add_parser("sampler-check", help="Monte-Carlo check of class selection probabilities")
    s.add_argument("--strategy", choices=SAMPLERS, default="CBEN")
    s.add_argument("--counts", help="comma-separated per-class counts")
    s.add_argument("--classes", type=int, default=10)
    s.add_argument("--head", type=int, default=500)
    s.add_argument("--gamma", type=float, default=100.0)
    s.add_argument("--cloud-strategy", default="log-diff")
    s.add_argument("--draws", type=int, default=1_000_000)
    s.add_argument("--tol", type=float, default=0.005)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sampler_check)

    r = sub.add_parser("report", help="summarize a dataset file or a run directory")
    grp = r.add_mutually_exclusive_group(required=True)
    grp.add_argument("--data")
    grp.add_argument("--run")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (UserError, ConfigError, data_mod.DataError, DomainError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except TrainingDiverged as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
