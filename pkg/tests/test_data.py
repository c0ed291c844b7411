import numpy as np
import pytest
from hypothesis import given, assume, strategies as st

from cloudlogit.data import (BlobGenerator, DataError, Dataset, LongTailSpec, balanced_test_split,
                             imbalance_ratio, load_csv, longtail_counts, nearest_center_accuracy,
                             parse_csv, save_csv, synth_blobs)
from cloudlogit.numerics import DomainError, RngStream


def test_longtail_examples():
    assert np.array_equal(longtail_counts(LongTailSpec(300, 6, 1.0)), [300] * 6)
    c = longtail_counts(LongTailSpec(5000, 10, 100))
    assert c[0] == 5000 and c[-1] == 50
    c = longtail_counts(LongTailSpec(500, 100, 100))
    assert c[0] == 500 and c[-1] == 5
    assert np.array_equal(longtail_counts(LongTailSpec(500, 10, 100)),
                          [500, 300, 180, 108, 65, 39, 23, 14, 8, 5])


def test_longtail_tail_rounds_to_zero():
    with pytest.raises(DomainError):
        longtail_counts(LongTailSpec(10, 5, 50))


@given(st.integers(1, 20_000), st.integers(2, 200), st.floats(1.0, 500.0))
def test_longtail_monotone_and_ratio(n0, C, gamma):
    assume(n0 / gamma >= 25)
    c = longtail_counts(LongTailSpec(n0, C, gamma))
    assert c[0] == n0 and len(c) == C
    assert np.all(np.diff(c) <= 0)
    realized = c.max() / c.min()
    assert abs(realized - gamma) / gamma <= 0.02


def test_longtail_ratio_needs_more_than_ten_tail_samples():
    # tail n0/gamma = 10.49 rounds to 10: realized ratio 100 against 95.3 requested
    c = longtail_counts(LongTailSpec(1000, 10, 1000 / 10.49))
    assert c[-1] == 10
    assert abs(c[0] / c[-1] - 1000 / 10.49) / (1000 / 10.49) > 0.02


def test_imbalance_ratio():
    assert imbalance_ratio(np.array([4, 4, 4])) == 1.0
    assert imbalance_ratio(np.array([5000, 50])) == 100.0
    assert imbalance_ratio(np.array([50, 5000, 700])) == imbalance_ratio(np.array([5000, 700, 50]))
    with pytest.raises(DomainError):
        imbalance_ratio(np.array([3, 0]))


def test_blobs_histogram_and_determinism():
    counts = [7, 3, 1]
    a = synth_blobs(RngStream(4), 3, 5, counts)
    b = synth_blobs(RngStream(4), 3, 5, counts)
    assert np.array_equal(a.counts, counts)
    assert a.features.tobytes() == b.features.tobytes()


def test_blobs_without_noise_sit_on_centers():
    gen = BlobGenerator.create(RngStream(0), 4, 3, 5.0, 0.0)
    ds = gen.sample(RngStream(1), [2, 2, 2, 2])
    assert np.array_equal(ds.features, gen.centers[ds.labels])


def test_separated_blobs_nearest_center():
    gen = BlobGenerator.create(RngStream(0).child("c"), 10, 32, 5.0, 1.0)
    test = balanced_test_split(RngStream(0).child("t"), gen, 100)
    assert nearest_center_accuracy(gen, test) >= 0.99


def test_balanced_split():
    gen = BlobGenerator.create(RngStream(2), 10, 8, 1.0, 1.0)
    test = balanced_test_split(RngStream(2).child("test"), gen, 100)
    assert len(test) == 1000 and np.all(test.counts == 100)
    train = gen.sample(RngStream(2).child("train"), longtail_counts(LongTailSpec(500, 10, 100)))
    rows = {r.tobytes() for r in train.features}
    assert not any(r.tobytes() in rows for r in test.features)


def test_csv_fixture(tmp_path):
    p = tmp_path / "tiny.csv"
    p.write_text("f0,f1,label\n1.5,-2,0\n0.25,3e-3,2\n-7,8,1\n")
    ds = load_csv(p)
    assert ds.num_classes == 3
    assert np.array_equal(ds.labels, [0, 2, 1])
    assert np.array_equal(ds.features, [[1.5, -2.0], [0.25, 0.003], [-7.0, 8.0]])


@pytest.mark.parametrize("text,needle", [
    ("", "line 1"),
    ("f0,label\n1,0\n2\n", "line 3"),
    ("f0,label\nabc,0\n", "line 2"),
    ("f0,label\n1,-1\n", "line 2"),
    ("f0,label\n1,x\n", "line 2"),
])
def test_csv_errors(text, needle):
    with pytest.raises(DataError, match=needle):
        parse_csv(text)


def test_csv_label_above_declared_classes():
    with pytest.raises(DataError, match="line 3"):
        parse_csv("f0,label\n1,0\n2,5\n", num_classes=3)


def test_csv_round_trip(tmp_path):
    ds = synth_blobs(RngStream(9), 4, 6, [5, 4, 3, 2])
    p = tmp_path / "d.csv"
    save_csv(ds, p)
    back = load_csv(p, 4)
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.labels, ds.labels)
    save_csv(back, tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_bytes() == p.read_bytes()


def test_dataset_rejects_bad_labels():
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 2)), np.array([0, 3]), 3)
