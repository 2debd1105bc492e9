import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minibit.errors import ConfigError
from minibit.metrics import (ConfusionCounts, EpochMetrics, UndefinedMetricError, accuracy,
                             binary_cross_entropy, binary_cross_entropy_with_logits,
                             confusion_from_predictions, confusion_update, metrics_to_csv, predict,
                             read_metrics_csv, sigmoid, softmax_cross_entropy, write_metrics_csv)
from minibit.tensor import Prng


@pytest.mark.parametrize("counts,expected", [((1, 1, 0, 0), 100.0), ((0, 0, 3, 2), 0.0),
                                             ((50, 40, 5, 5), 90.0)])
def test_accuracy_examples(counts, expected):
    assert accuracy(ConfusionCounts(*counts)) == expected


def test_accuracy_undefined():
    with pytest.raises(UndefinedMetricError):
        accuracy(ConfusionCounts())


def test_confusion_update_cells():
    c = confusion_update(ConfusionCounts(), 1, 1)
    assert c == ConfusionCounts(tp=1)
    assert confusion_update(c, 1, 0) == ConfusionCounts(tp=1, fp=1)
    assert confusion_update(ConfusionCounts(), 0, 1) == ConfusionCounts(fn=1)
    assert confusion_update(ConfusionCounts(), 0, 0) == ConfusionCounts(tn=1)
    with pytest.raises(ConfigError):
        confusion_update(ConfusionCounts(), 0, 0, num_classes=3)


def recount_fixtures(n_fixtures=1000, seed=0):
    """Random confusion fixtures; returns the number whose accuracy disagrees with a recount."""
    rng = Prng(seed)
    mismatches = 0
    for _ in range(n_fixtures):
        n = 1 + rng.bounded(60)
        actual = [rng.bounded(2) for _ in range(n)]
        predicted = [rng.bounded(2) for _ in range(n)]
        c = confusion_from_predictions(predicted, actual)
        correct = sum(p == a for p, a in zip(predicted, actual))
        if c.total != n or accuracy(c) != 100.0 * correct / n:
            mismatches += 1
    return mismatches


def test_confusion_recount_oracle():
    assert recount_fixtures() == 0


def test_bce_examples():
    assert binary_cross_entropy([1, 0], [1.0, 0.0]) < 1e-6
    assert abs(binary_cross_entropy([1, 0, 1], [0.5, 0.5, 0.5]) - 0.693147) <= 1e-6
    assert abs(binary_cross_entropy([1, 0], [0.9, 0.2]) - 0.164252) <= 1e-6
    assert abs(binary_cross_entropy([1, 0], [0.9, 0.2]) + (math.log(0.9) + math.log(0.8)) / 2) < 1e-12


def test_bce_clamp_finite():
    assert np.isfinite(binary_cross_entropy([1, 0], [0.0, 1.0]))


def test_softmax_examples():
    loss, _ = softmax_cross_entropy(np.array([0, 1]), np.zeros((2, 2)))
    assert abs(loss - math.log(2)) < 1e-12
    logits = np.zeros((3, 4))
    logits[np.arange(3), [1, 2, 3]] = 30.0
    loss, _ = softmax_cross_entropy(np.array([1, 2, 3]), logits)
    assert loss <= 1e-9


def _fd(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        g[i] = (f(xp) - f(xm)) / (2 * eps)
    return g


@pytest.mark.parametrize("seed", range(5))
def test_loss_gradients_match_fd(seed):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((4, 3)) * 2
    y = rng.integers(0, 3, 4)
    _, g = softmax_cross_entropy(y, logits)
    num = _fd(lambda z: softmax_cross_entropy(y, z)[0], logits)
    assert np.max(np.abs(g - num) / np.maximum(np.maximum(np.abs(g), np.abs(num)), 1e-6)) <= 1e-4
    soft = rng.dirichlet(np.ones(3), 4)
    _, g = softmax_cross_entropy(soft, logits)
    num = _fd(lambda z: softmax_cross_entropy(soft, z)[0], logits)
    assert np.max(np.abs(g - num)) <= 1e-8
    z = rng.standard_normal(6) * 2
    yb = rng.integers(0, 2, 6).astype(float)
    _, g = binary_cross_entropy_with_logits(yb, z)
    num = _fd(lambda v: binary_cross_entropy_with_logits(yb, v)[0], z)
    assert np.max(np.abs(g - num) / np.maximum(np.maximum(np.abs(g), np.abs(num)), 1e-6)) <= 1e-4


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.floats(-8, 8)), min_size=1, max_size=20))
def test_softmax_two_class_equals_bce(pairs):
    y = np.array([p[0] for p in pairs])
    z = np.array([p[1] for p in pairs])
    logits = np.stack([np.zeros_like(z), z], axis=1)
    loss, _ = softmax_cross_entropy(y, logits)
    assert abs(loss - binary_cross_entropy(y, sigmoid(z))) <= 1e-6


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.floats(0.01, 0.99)), min_size=2, max_size=20),
       st.randoms(use_true_random=False))
def test_bce_permutation_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a = binary_cross_entropy([p[0] for p in pairs], [p[1] for p in pairs])
    b = binary_cross_entropy([p[0] for p in shuffled], [p[1] for p in shuffled])
    assert abs(a - b) <= 1e-12


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_accuracy_range(tp, tn, fp, fn):
    c = ConfusionCounts(tp, tn, fp, fn)
    if c.total:
        acc = accuracy(c)
        assert 0.0 <= acc <= 100.0
        assert abs(acc + 100.0 * (fp + fn) / c.total - 100.0) < 1e-9


def test_predict_ties_lowest():
    assert predict(np.array([[0.0, 0.0], [1.0, 2.0], [3.0, 3.0]])).tolist() == [0, 1, 0]


def test_csv_round_trip(tmp_path):
    rows = [EpochMetrics(0, 0.69, 50.0, 0.7, 48.5, 0.03, 1.25),
            EpochMetrics(1, 0.4, 80.0, 0.45, 79.0, 1.875e-06, 2.5)]
    text = metrics_to_csv(rows)
    assert text.splitlines()[0] == "epoch,train_loss,train_acc,val_loss,val_acc,lr,wall_seconds"
    assert text.splitlines()[2] == "1,0.400000,80.000000,0.450000,79.000000,1.875e-06,2.500000"
    path = tmp_path / "m.csv"
    write_metrics_csv(path, rows)
    assert read_metrics_csv(path) == rows
