import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stavis import tensor as T
from stavis.errors import DegenerateError, ShapeError
from stavis.gradcheck import grad_check
from stavis.losses import (
    CE_EPS,
    LossWeights,
    loss_av,
    loss_cc,
    loss_ce,
    loss_combined,
    loss_nss,
    loss_visual_deep,
    saliency_loss,
)
from stavis.metrics import metric_cc, metric_nss
from stavis.tensor import Tensor

from oracles import nss as nss_oracle
from oracles import pearson


def rand_map(rng, shape=(8, 8)):
    return rng.uniform(0.05, 0.95, shape)


def fixations(rng, shape=(8, 8), n=5):
    fix = np.zeros(shape)
    fix.flat[rng.choice(fix.size, n, replace=False)] = 1
    return fix


# -- CE ------------------------------------------------------------------------


def test_ce_perfect_prediction():
    y = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert 0 <= loss_ce(y, y).data < 4 * 2e-7


def test_ce_half_everywhere():
    y = np.random.default_rng(0).uniform(size=(5, 6))
    assert loss_ce(np.full((5, 6), 0.5), y).data == pytest.approx(30 * math.log(2), abs=1e-12)


def test_ce_hand_example():
    p = np.array([[0.9, 0.1], [0.2, 0.8]])
    y = np.array([[1.0, 0.0], [0.0, 1.0]])
    expected = -2 * math.log(0.9) - 2 * math.log(0.8)
    assert loss_ce(p, y).data == pytest.approx(expected, abs=1e-12)


def test_ce_rejects_shape_mismatch():
    with pytest.raises(ShapeError):
        loss_ce(np.zeros((2, 2)), np.zeros((2, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ce_nonnegative(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0, 1, (4, 4))
    y = rng.integers(0, 2, (4, 4)).astype(float)
    assert loss_ce(p, y).data >= 0
    assert loss_ce(np.clip(y, CE_EPS, 1 - CE_EPS), y).data < loss_ce(p, y).data


# -- CC ------------------------------------------------------------------------


def test_cc_examples():
    y = rand_map(np.random.default_rng(1))
    assert loss_cc(y, y).data == pytest.approx(-1.0, abs=1e-12)
    assert loss_cc(-2.0 * y + 3.0, y).data == pytest.approx(1.0, abs=1e-12)
    p = np.array([[1.0, 2.0], [3.0, 4.0]])
    y = np.array([[1.0, 1.0], [2.0, 2.0]])
    assert loss_cc(p, y).data == pytest.approx(-2 / math.sqrt(5), abs=1e-12)


def test_cc_constant_map_is_degenerate():
    with pytest.raises(DegenerateError):
        loss_cc(np.full((3, 3), 0.4), rand_map(np.random.default_rng(2), (3, 3)))
    with pytest.raises(DegenerateError):
        loss_cc(rand_map(np.random.default_rng(2), (3, 3)), np.zeros((3, 3)))


def test_cc_matches_pearson_oracle():
    rng = np.random.default_rng(3)
    p, y = rand_map(rng), rand_map(rng)
    assert loss_cc(p, y).data == pytest.approx(-pearson(p, y), abs=1e-12)


# -- NSS -----------------------------------------------------------------------


def test_nss_examples():
    p = np.array([[1.0, 2.0], [3.0, 4.0]])
    fix = np.array([[0.0, 0.0], [0.0, 1.0]])
    assert loss_nss(p, fix).data == pytest.approx(-1.5 / math.sqrt(1.25), abs=1e-12)
    assert loss_nss(p, fix).data < 0
    assert loss_nss(p, np.ones((2, 2))).data == pytest.approx(0.0, abs=1e-15)


def test_nss_errors():
    with pytest.raises(DegenerateError):
        loss_nss(np.ones((3, 3)), np.eye(3))
    with pytest.raises(DegenerateError):
        loss_nss(np.eye(3), np.zeros((3, 3)))


def test_nss_matches_oracle():
    rng = np.random.default_rng(4)
    p, fix = rand_map(rng), fixations(rng)
    assert loss_nss(p, fix).data == pytest.approx(-nss_oracle(p, fix), abs=1e-12)


# -- invariances and duality ---------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-2, 1e2), st.floats(-10, 10))
def test_cc_nss_affine_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    p, y, fix = rand_map(rng), rand_map(rng), fixations(rng)
    assert loss_cc(a * p + b, y).data == pytest.approx(loss_cc(p, y).data, abs=1e-9)
    assert loss_nss(a * p + b, fix).data == pytest.approx(loss_nss(p, fix).data, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_metric_loss_duality(seed):
    rng = np.random.default_rng(seed)
    p, y, fix = rand_map(rng), rand_map(rng), fixations(rng)
    assert metric_cc(p, y) == -float(loss_cc(p, y).data)
    assert metric_nss(p, fix) == -float(loss_nss(p, fix).data)


def test_batched_losses_are_per_sample():
    rng = np.random.default_rng(5)
    p, y = rand_map(rng, (3, 6, 6)), rand_map(rng, (3, 6, 6))
    fix = np.stack([fixations(rng, (6, 6)) for _ in range(3)])
    for fn, gt in ((loss_ce, y), (loss_cc, y), (loss_nss, fix)):
        batched = fn(p, gt).data
        assert batched.shape == (3,)
        for i in range(3):
            assert batched[i] == pytest.approx(float(fn(p[i], gt[i]).data), abs=1e-12)


# -- combination ---------------------------------------------------------------


def test_combined_examples():
    assert loss_combined(10.0, -1.0, -2.0) == pytest.approx(-3.0, abs=1e-12)
    assert loss_combined(10.0, -1.0, -2.0, LossWeights(0, 0, 0)) == 0.0
    rng = np.random.default_rng(6)
    for _ in range(20):
        w, t = rng.uniform(0, 3, 3), rng.standard_normal(3)
        got = loss_combined(*t, LossWeights(*w))
        assert got == pytest.approx(float(np.dot(w, t)), abs=1e-12)


def test_weights_defaults_and_validation():
    w = LossWeights()
    assert (w.ce, w.cc, w.nss) == (0.1, 2.0, 1.0)
    with pytest.raises(ValueError):
        LossWeights(-0.1, 2.0, 1.0)


def test_visual_deep_identical_maps():
    rng = np.random.default_rng(7)
    s, y, fix = rng.standard_normal((8, 8)), rand_map(rng), fixations(rng)
    single = float(saliency_loss(T.sigmoid(s), fix, y).data)
    deep = float(loss_visual_deep(s, [s] * 4, fix, y).data)
    assert deep == pytest.approx(5 * single, abs=1e-9)
    assert float(loss_visual_deep(s, [s] * 4, fix, y, LossWeights(0, 0, 0)).data) == 0.0


def test_visual_deep_reaches_every_map():
    rng = np.random.default_rng(8)
    maps = [Tensor(rng.standard_normal((8, 8)), requires_grad=True) for _ in range(5)]
    T.backward(loss_visual_deep(maps[0], maps[1:], fixations(rng), rand_map(rng)))
    for m in maps:
        assert m.grad is not None and np.abs(m.grad).sum() > 0


def test_loss_av_definition():
    rng = np.random.default_rng(9)
    s, y, fix = rng.standard_normal((8, 8)), rand_map(rng), fixations(rng)
    p = T.sigmoid(s)
    expected = loss_combined(loss_ce(p, y), loss_cc(p, y), loss_nss(p, fix)).data
    assert float(loss_av(s, fix, y).data) == pytest.approx(float(expected), abs=1e-12)
    q = rand_map(rng)
    direct = loss_combined(loss_ce(q, y), loss_cc(q, y), loss_nss(q, fix)).data
    assert float(loss_av(q, fix, y, already_probability=True).data) == pytest.approx(float(direct), abs=1e-12)


def test_loss_av_cc_term_for_perfect_fused_map():
    rng = np.random.default_rng(10)
    y = rand_map(rng)
    assert float(loss_cc(y, y).data) == pytest.approx(-1.0, abs=1e-12)
    cc_only = loss_av(y, fixations(rng), y, LossWeights(0, 1, 0), already_probability=True)
    assert float(cc_only.data) == pytest.approx(-1.0, abs=1e-12)


@pytest.mark.parametrize("fn", ["ce", "cc", "nss"])
def test_loss_gradcheck(fn):
    rng = np.random.default_rng(11)
    p = Tensor(rand_map(rng, (5, 5)), requires_grad=True)
    y, fix = rand_map(rng, (5, 5)), fixations(rng, (5, 5), 3)
    f = {"ce": lambda p: loss_ce(p, y), "cc": lambda p: loss_cc(p, y), "nss": lambda p: loss_nss(p, fix)}[fn]
    report = grad_check(f, [p])
    assert report.passed, report
