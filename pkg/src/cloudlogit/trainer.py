"""Two-stage training: representation learning on the raw long-tailed stream,
then classifier re-training on re-balanced batches with the backbone frozen.
Also evaluation and the paired CE-vs-GCL experiment harness."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .data import BlobGenerator, Dataset, LongTailSpec, balanced_test_split, longtail_counts
from .gcl import CloudSizeTable, GclConfig, eval_logits, gcl_loss, mixup_batch, sample_epsilon, \
    softmax_xent, table_for
from .model import Model, build_model
from .numerics import DomainError, RngStream, SgdState, sgd_step
from .sampler import ClassProbTable, SamplerSpec, class_pools, class_probs, diagnostics_csv, draw_batch


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    stage1_iters: int = 3000
    stage2_iters: int = 500
    lr: float = 0.1
    momentum: float = 0.9
    milestones: tuple[float, ...] = (0.6, 0.8)
    lr_decay: float = 0.1
    batch_size: int = 64
    seed: int = 0
    loss: str = "gcl"  # "gcl" or "ce"
    classifier: str = "cosine"  # "cosine" or "linear"
    hidden: tuple[int, ...] = (64, 64)
    embedding_dim: int = 16
    mixup_stage1: bool = False
    mixup_stage2: bool = False
    mixup_alpha: float = 1.0
    reinit_classifier: bool = False
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    gcl: GclConfig = field(default_factory=GclConfig)

    def __post_init__(self):
        if self.stage1_iters < 0 or self.stage2_iters < 0:
            raise DomainError("iteration counts must be nonnegative")
        if self.batch_size < 1:
            raise DomainError("batch size must be at least 1")
        if self.loss not in ("gcl", "ce"):
            raise DomainError(f"unknown loss {self.loss!r}")
        if self.classifier not in ("cosine", "linear"):
            raise DomainError(f"unknown classifier {self.classifier!r}")
        if self.loss == "gcl" and self.classifier != "cosine":
            raise DomainError("the clouded logit loss needs the cosine classifier")
        if not self.lr > 0 or not 0 <= self.momentum < 1:
            raise DomainError("need lr > 0 and momentum in [0, 1)")


def lr_at(cfg: TrainConfig, it: int, total: int) -> float:
    """Multi-step schedule; milestones are fractions of the stage length."""
    drops = sum(1 for m in cfg.milestones if it >= int(m * total))
    return cfg.lr * cfg.lr_decay ** drops


@dataclass
class TraceRow:
    iteration: int
    lr: float
    loss: float


def trace_csv(trace: list[TraceRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "lr", "loss"])
    for r in trace:
        w.writerow([r.iteration, repr(r.lr), repr(r.loss)])
    return buf.getvalue()


@dataclass
class Streams:
    """Labelled child streams of one root seed, so e.g. switching the sampler
    leaves weight initialization untouched."""

    init: RngStream
    batching: RngStream
    noise: RngStream
    mixup: RngStream
    batching2: RngStream
    noise2: RngStream
    mixup2: RngStream
    reinit: RngStream

    @classmethod
    def from_seed(cls, seed: int) -> "Streams":
        root = RngStream(seed)
        return cls(*(root.child(k) for k in
                     ("init", "batching", "noise", "mixup", "batching-stage2", "noise-stage2",
                      "mixup-stage2", "reinit-classifier")))


def init_model(cfg: TrainConfig, input_dim: int, num_classes: int, rng: RngStream) -> Model:
    dims = [input_dim, *cfg.hidden, cfg.embedding_dim]
    return build_model(dims, num_classes, rng, cfg.classifier)


def batch_loss(model: Model, x, labels, cfg: TrainConfig, table: CloudSizeTable,
               noise: RngStream, backbone: bool = True):
    """Forward, loss and backward for one batch. Returns ``(loss, grads)``."""
    logits, tape = model.forward(x)
    if cfg.loss == "gcl":
        eps = sample_epsilon(noise, cfg.gcl, size=logits.shape[0])
        out = gcl_loss(logits, labels, table, eps, cfg.gcl)
    elif model.kind == "cosine":
        out = softmax_xent(cfg.gcl.scale * logits, labels, cfg.gcl.scale)
    else:
        out = softmax_xent(logits, labels)
    grads = model.backward(tape, out.grad, backbone=backbone)
    grads.pop("input", None)
    return out.loss, grads


def _run_stage(model, ds, cfg, table, iters, pick, noise, mixup_rng, use_mixup, backbone, offset):
    state = SgdState(lr=cfg.lr, momentum=cfg.momentum)
    params = model.params()
    trace = []
    C = ds.num_classes
    for it in range(iters):
        idx = pick()
        x = ds.features[idx]
        y = ds.labels[idx]
        if use_mixup:
            onehot = np.eye(C)[y]
            x, y, _, _ = mixup_batch(mixup_rng, x, onehot, cfg.mixup_alpha)
        state.lr = lr_at(cfg, it, iters)
        try:
            loss, grads = batch_loss(model, x, y, cfg, table, noise, backbone)
        except DomainError as e:
            raise TrainingDiverged(f"iteration {offset + it + 1}: {e}") from None
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at iteration {offset + it + 1}")
        sgd_step(params, grads, state)
        model.touch()
        trace.append(TraceRow(offset + it + 1, state.lr, loss))
    return trace


def train_stage1(ds: Dataset, model: Model, cfg: TrainConfig, streams: Streams,
                 table: CloudSizeTable | None = None) -> list[TraceRow]:
    """Instance-balanced SGD on every parameter. Mutates ``model``; returns the loss trace."""
    table = table if table is not None else table_for(ds.counts, cfg.gcl)
    n = len(ds)
    pick = lambda: streams.batching.integers(n, cfg.batch_size)  # noqa: E731
    return _run_stage(model, ds, cfg, table, cfg.stage1_iters, pick, streams.noise,
                      streams.mixup, cfg.mixup_stage1, True, 0)


def stage2_probs(ds: Dataset, cfg: TrainConfig, table: CloudSizeTable) -> ClassProbTable:
    return class_probs(cfg.sampler.strategy, ds.counts, table, cfg.sampler)


def train_stage2_crt(ds: Dataset, model: Model, cfg: TrainConfig, streams: Streams,
                     table: CloudSizeTable | None = None) -> list[TraceRow]:
    """Classifier re-training on re-balanced batches; backbone parameters are not touched."""
    table = table if table is not None else table_for(ds.counts, cfg.gcl)
    if cfg.reinit_classifier and cfg.stage2_iters > 0:
        fresh = init_model(cfg, ds.dim, ds.num_classes, streams.reinit).classifier
        for name, arr in model.classifier.params().items():
            arr[...] = fresh.params()[name]
        model.touch()
    probs = stage2_probs(ds, cfg, table)
    pools = class_pools(ds.labels, ds.num_classes)
    pick = lambda: draw_batch(streams.batching2, probs, pools, cfg.batch_size)  # noqa: E731
    return _run_stage(model, ds, cfg, table, cfg.stage2_iters, pick, streams.noise2,
                      streams.mixup2, cfg.mixup_stage2, False, cfg.stage1_iters)


# --- evaluation -----------------------------------------------------------------

GROUPS = ("many", "medium", "few")


@dataclass
class EvalReport:
    top1: float
    per_class_acc: np.ndarray
    group_acc: dict[str, float]
    confusion: np.ndarray  # rows: true class, columns: predicted
    train_counts: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["key", "value"])
        w.writerow(["top1", repr(self.top1)])
        for g in GROUPS:
            w.writerow([f"{g}_acc", repr(self.group_acc[g])])
        for j, a in enumerate(self.per_class_acc):
            w.writerow([f"class_{j}_acc", repr(float(a))])
        for j, row in enumerate(self.confusion):
            w.writerow([f"confusion_{j}", " ".join(str(int(v)) for v in row)])
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"top-1 accuracy  {100 * self.top1:6.2f}%"]
        lines += [f"{g:<6} classes   {_pct(self.group_acc[g])}" for g in GROUPS]
        lines.append("class  train_n  accuracy")
        for j, (n, a) in enumerate(zip(self.train_counts, self.per_class_acc)):
            lines.append(f"{j:>5}  {int(n):>7}  {100 * a:7.2f}%")
        return "\n".join(lines) + "\n"


def _pct(v: float) -> str:
    return "   n/a" if np.isnan(v) else f"{100 * v:6.2f}%"


def group_of(count: int, many: int = 100, few: int = 20) -> str:
    if count > many:
        return "many"
    if count < few:
        return "few"
    return "medium"


def predict(model: Model, x, gcl: GclConfig, chunk: int = 1024) -> np.ndarray:
    preds = []
    for start in range(0, len(x), chunk):
        logits, _ = model.forward(x[start:start + chunk])
        if model.kind == "cosine":
            logits = eval_logits(logits, None, gcl)
        preds.append(np.argmax(logits, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def report_from_predictions(preds, labels, num_classes: int, train_counts,
                            many: int = 100, few: int = 20) -> EvalReport:
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    if len(labels) == 0:
        raise DomainError("empty test set")
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (labels, preds), 1)
    support = conf.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(support > 0, np.diag(conf) / np.maximum(support, 1), np.nan)
    train_counts = np.asarray(train_counts)
    groups = {}
    for g in GROUPS:
        members = [j for j in range(num_classes)
                   if group_of(train_counts[j], many, few) == g and support[j] > 0]
        groups[g] = float(np.mean(per_class[members])) if members else float("nan")
    top1 = float(np.trace(conf) / len(labels))
    return EvalReport(top1, per_class, groups, conf, train_counts)


def evaluate(model: Model, test: Dataset, train_counts, gcl: GclConfig | None = None,
             many: int = 100, few: int = 20) -> EvalReport:
    preds = predict(model, test.features, gcl or GclConfig())
    return report_from_predictions(preds, test.labels, test.num_classes, train_counts, many, few)


def embeddings_csv(model: Model, ds: Dataset) -> str:
    f, _ = model.forward_features(ds.features)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"e{k}" for k in range(f.shape[1])] + ["label"])
    for row, y in zip(f, ds.labels):
        w.writerow([repr(float(v)) for v in row] + [int(y)])
    return buf.getvalue()


# --- full runs ------------------------------------------------------------------

@dataclass
class RunResult:
    cfg: TrainConfig
    model: Model
    stage1_params: dict[str, np.ndarray]
    trace: list[TraceRow]
    stage1_report: EvalReport
    report: EvalReport


def train_and_evaluate(train: Dataset, test: Dataset, cfg: TrainConfig,
                       many: int = 100, few: int = 20) -> RunResult:
    streams = Streams.from_seed(cfg.seed)
    model = init_model(cfg, train.dim, train.num_classes, streams.init)
    table = table_for(train.counts, cfg.gcl)
    trace = train_stage1(train, model, cfg, streams, table)
    stage1_params = {k: v.copy() for k, v in model.params().items()}
    stage1_report = evaluate(model, test, train.counts, cfg.gcl, many, few)
    trace += train_stage2_crt(train, model, cfg, streams, table)
    report = evaluate(model, test, train.counts, cfg.gcl, many, few)
    return RunResult(cfg, model, stage1_params, trace, stage1_report, report)


@dataclass(frozen=True)
class BlobSpec:
    """Synthetic long-tailed corpus: blob geometry plus the count profile."""

    num_classes: int = 10
    dim: int = 32
    n0: int = 500
    gamma: float = 100.0
    test_per_class: int = 200
    center_scale: float = 0.55
    noise_std: float = 1.0
    seed: int = 0


def make_blob_corpus(spec: BlobSpec) -> tuple[Dataset, Dataset, BlobGenerator]:
    root = RngStream(spec.seed).child("data")
    gen = BlobGenerator.create(root.child("centers"), spec.num_classes, spec.dim,
                               spec.center_scale, spec.noise_std)
    counts = longtail_counts(LongTailSpec(spec.n0, spec.num_classes, spec.gamma))
    train = gen.sample(root.child("train"), counts, "blobs-train")
    test = balanced_test_split(root.child("test"), gen, spec.test_per_class)
    return train, test, gen


def baseline_config(**overrides) -> TrainConfig:
    """Plain cross-entropy on a linear head, no re-training stage."""
    base = TrainConfig(loss="ce", classifier="linear", stage2_iters=0)
    return replace(base, **overrides)


@dataclass
class ExperimentResult:
    data: BlobSpec
    train: Dataset
    test: Dataset
    table: CloudSizeTable
    probs: ClassProbTable
    baseline: RunResult
    gcl: RunResult

    def write(self, outdir) -> None:
        os.makedirs(outdir, exist_ok=True)
        files = {
            "cloud_sizes.csv": self.table.to_csv(),
            "sampler.csv": diagnostics_csv(self.train.counts, self.probs),
        }
        for name, run in (("baseline", self.baseline), ("gcl", self.gcl)):
            files[f"{name}_report.csv"] = run.report.to_csv()
            files[f"{name}_stage1_report.csv"] = run.stage1_report.to_csv()
            files[f"{name}_trace.csv"] = trace_csv(run.trace)
            files[f"{name}_test_embeddings.csv"] = embeddings_csv(run.model, self.test)
        for fname, text in files.items():
            _atomic_write(os.path.join(outdir, fname), text)


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def run_experiment(gcl_cfg: TrainConfig, baseline_cfg: TrainConfig, data: BlobSpec,
                   many: int = 100, few: int = 20) -> ExperimentResult:
    """Train both arms on the same corpus. Each arm draws its own training
    streams from its config seed, so identical configs give identical runs."""
    train, test, _ = make_blob_corpus(data)
    table = table_for(train.counts, gcl_cfg.gcl)
    probs = stage2_probs(train, gcl_cfg, table)
    base = train_and_evaluate(train, test, baseline_cfg, many, few)
    ours = train_and_evaluate(train, test, gcl_cfg, many, few)
    return ExperimentResult(data, train, test, table, probs, base, ours)
