import numpy as np
import pytest
from dataclasses import replace

from cloudlogit.data import BlobGenerator, Dataset, nearest_center_accuracy
from cloudlogit.gcl import GclConfig, compute_cloud_sizes
from cloudlogit.numerics import RngStream
from cloudlogit.trainer import (BlobSpec, EvalReport, Streams, TrainConfig, TrainingDiverged,
                                baseline_config, evaluate, init_model, lr_at, predict,
                                report_from_predictions, run_experiment, trace_csv, train_stage1,
                                train_stage2_crt)

from conftest import median


def _params_bytes(model, names=None):
    p = model.params()
    return {k: v.tobytes() for k, v in p.items() if names is None or k in names}


def _two_blobs(n=100, seed=0):
    # unit-variance blobs 5 sigma apart along the first axis
    gen = BlobGenerator(np.array([[2.5, 0, 0, 0], [-2.5, 0, 0, 0]], dtype=float), 1.0)
    return gen, gen.sample(RngStream(seed), [n, n])


def _small_cfg(**kw):
    base = TrainConfig(stage1_iters=20, stage2_iters=10, hidden=(8,), embedding_dim=4, batch_size=8)
    return replace(base, **kw)


def test_no_iterations_leaves_model_unchanged():
    _, ds = _two_blobs()
    cfg = _small_cfg(stage1_iters=0, stage2_iters=0)
    streams = Streams.from_seed(0)
    m = init_model(cfg, ds.dim, 2, streams.init)
    before = _params_bytes(m)
    assert train_stage1(ds, m, cfg, streams) == []
    assert train_stage2_crt(ds, m, cfg, streams) == []
    assert _params_bytes(m) == before


def test_separable_blobs_reach_full_train_accuracy():
    gen, ds = _two_blobs()
    assert nearest_center_accuracy(gen, ds) == 1.0
    cfg = TrainConfig(stage1_iters=500, stage2_iters=0, lr=0.1, batch_size=32, hidden=(16,),
                      embedding_dim=8, seed=1)
    streams = Streams.from_seed(cfg.seed)
    m = init_model(cfg, ds.dim, 2, streams.init)
    trace = train_stage1(ds, m, cfg, streams)
    assert np.mean(predict(m, ds.features, cfg.gcl) == ds.labels) == 1.0
    losses = [r.loss for r in trace]
    assert np.mean(losses[:10]) > np.mean(losses[-10:])
    assert all(np.isfinite(losses))


def test_same_seed_is_bit_identical():
    _, ds = _two_blobs()
    cfg = _small_cfg()
    runs = []
    for _ in range(2):
        streams = Streams.from_seed(3)
        m = init_model(cfg, ds.dim, 2, streams.init)
        trace = train_stage1(ds, m, cfg, streams) + train_stage2_crt(ds, m, cfg, streams)
        runs.append((_params_bytes(m), trace_csv(trace)))
    assert runs[0] == runs[1]


@pytest.mark.parametrize("sampler", ["IB", "CB", "EN", "CBEN"])
@pytest.mark.parametrize("reinit", [False, True])
def test_stage2_freezes_backbone(sampler, reinit):
    gen = BlobGenerator.create(RngStream(1), 3, 4, 2.0, 1.0)
    ds = gen.sample(RngStream(2), [40, 12, 4])
    cfg = _small_cfg(reinit_classifier=reinit)
    cfg = replace(cfg, sampler=replace(cfg.sampler, strategy=sampler))
    streams = Streams.from_seed(0)
    m = init_model(cfg, ds.dim, 3, streams.init)
    train_stage1(ds, m, cfg, streams)
    bb = _params_bytes(m, m.backbone_names())
    clf = _params_bytes(m, m.classifier_names())
    train_stage2_crt(ds, m, cfg, streams)
    assert _params_bytes(m, m.backbone_names()) == bb
    assert _params_bytes(m, m.classifier_names()) != clf


def test_stage2_zero_iterations_keeps_classifier():
    _, ds = _two_blobs()
    cfg = _small_cfg(stage2_iters=0, reinit_classifier=True)
    streams = Streams.from_seed(0)
    m = init_model(cfg, ds.dim, 2, streams.init)
    train_stage1(ds, m, cfg, streams)
    before = _params_bytes(m)
    train_stage2_crt(ds, m, cfg, streams)
    assert _params_bytes(m) == before


def test_mixup_and_ce_variants_run():
    gen = BlobGenerator.create(RngStream(1), 3, 4, 2.0, 1.0)
    ds = gen.sample(RngStream(2), [30, 10, 5])
    for cfg in (_small_cfg(mixup_stage1=True, mixup_stage2=True),
                _small_cfg(loss="ce"),
                _small_cfg(loss="ce", classifier="linear")):
        streams = Streams.from_seed(0)
        m = init_model(cfg, ds.dim, 3, streams.init)
        trace = train_stage1(ds, m, cfg, streams) + train_stage2_crt(ds, m, cfg, streams)
        assert len(trace) == 30 and all(np.isfinite(r.loss) for r in trace)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_names_iteration():
    gen = BlobGenerator.create(RngStream(1), 2, 4, 1e3, 1e2)
    ds = gen.sample(RngStream(2), [20, 20])
    cfg = _small_cfg(loss="ce", classifier="linear", lr=1e150, momentum=0.0, stage1_iters=50)
    streams = Streams.from_seed(0)
    m = init_model(cfg, ds.dim, 2, streams.init)
    with pytest.raises(TrainingDiverged, match="iteration"):
        train_stage1(ds, m, cfg, streams)


def test_lr_schedule():
    cfg = TrainConfig(lr=0.1, milestones=(0.6, 0.8), lr_decay=0.1)
    assert lr_at(cfg, 0, 100) == 0.1
    assert lr_at(cfg, 59, 100) == 0.1
    assert lr_at(cfg, 60, 100) == pytest.approx(0.01)
    assert lr_at(cfg, 80, 100) == pytest.approx(0.001)


def test_eval_perfect_and_constant_predictors():
    labels = np.repeat(np.arange(4), 5)
    counts = np.array([200, 50, 10, 5])
    r = report_from_predictions(labels, labels, 4, counts)
    assert r.top1 == 1.0
    r = report_from_predictions(np.zeros_like(labels), labels, 4, counts)
    assert r.top1 == 0.25


def test_eval_hand_built_confusion():
    # truth [0, 1, 1], predicted [0, 0, 1]; class 0 has 200 training shots, class 1 has 10
    r = report_from_predictions([0, 0, 1], [0, 1, 1], 2, [200, 10])
    assert np.array_equal(r.confusion, [[1, 0], [1, 1]])
    assert np.array_equal(r.per_class_acc, [1.0, 0.5])
    assert r.top1 == pytest.approx(2 / 3, abs=1e-15)
    assert r.group_acc["many"] == 1.0 and r.group_acc["few"] == 0.5
    assert np.isnan(r.group_acc["medium"])
    assert "top1" in r.to_csv() and "few" in r.table()


def test_eval_invariant_to_scale_and_consistent():
    spec = BlobSpec(num_classes=4, dim=6, n0=60, gamma=10, test_per_class=30)
    from cloudlogit.trainer import make_blob_corpus
    train, test, _ = make_blob_corpus(spec)
    cfg = _small_cfg(hidden=(8,))
    streams = Streams.from_seed(0)
    m = init_model(cfg, train.dim, 4, streams.init)
    train_stage1(train, m, cfg, streams)
    a = predict(m, test.features, GclConfig(scale=1.0))
    b = predict(m, test.features, GclConfig(scale=64.0))
    assert np.array_equal(a, b)
    r = evaluate(m, test, train.counts)
    assert abs(r.top1 - np.mean(r.per_class_acc)) <= 1e-12


def test_identical_ce_arms_give_identical_reports():
    data = BlobSpec(num_classes=4, dim=6, n0=80, gamma=10, test_per_class=20)
    cfg = baseline_config(stage1_iters=30, hidden=(8,), embedding_dim=4)
    res = run_experiment(cfg, cfg, data)
    assert res.baseline.report.to_csv() == res.gcl.report.to_csv()


def test_balanced_corpus_has_no_clouds(tmp_path):
    data = BlobSpec(num_classes=4, dim=6, n0=40, gamma=1.0, test_per_class=20)
    gcl = _small_cfg()
    res = run_experiment(gcl, baseline_config(stage1_iters=20, hidden=(8,), embedding_dim=4), data)
    assert np.all(res.table.raw == 0) and np.all(res.table.normalized == 0)
    res.write(tmp_path)
    for name in ("cloud_sizes.csv", "sampler.csv", "gcl_report.csv", "baseline_trace.csv",
                 "gcl_test_embeddings.csv"):
        assert (tmp_path / name).stat().st_size > 0
    emb = (tmp_path / "gcl_test_embeddings.csv").read_text().splitlines()
    assert emb[0].split(",")[-1] == "label" and len(emb) == 1 + 4 * 20


def test_crt_does_not_hurt_rarest_class(paired_runs):
    before, after = [], []
    for r in paired_runs:
        tail = int(np.argmin(r.train.counts))
        before.append(r.gcl.stage1_report.per_class_acc[tail])
        after.append(r.gcl.report.per_class_acc[tail])
    assert median(after) >= median(before)


def test_loss_decreases_over_training(paired_runs):
    for r in paired_runs:
        losses = [t.loss for t in r.gcl.trace[:r.gcl.cfg.stage1_iters]]
        assert np.mean(losses[:10]) > np.mean(losses[-10:])
