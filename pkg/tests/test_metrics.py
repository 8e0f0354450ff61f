import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gse.metrics import (ImageMetrics, acp, aggregate_targeted, anc, asm, d20, image_metrics,
                         is_score, percentile_nearest_rank, summarize)
from gse.models import ToyModel
from oracles import flood_fill_components, patch_count, random_model


def test_acp_examples():
    assert acp([np.zeros((4, 4))] * 3) == (0.0, 0.0)
    assert acp([np.ones((4, 4))]) == (16.0, 1.0)
    with pytest.raises(ValueError):
        acp([])


def test_acp_reported_cifar_sparsity():
    # 42.5 changed pixels on a 32x32 image is the reported 4.1% sparsity
    count = 42.5
    masks = [np.zeros((32, 32)), np.zeros((32, 32))]
    masks[0].flat[:42] = 1
    masks[1].flat[:43] = 1
    got_count, frac = acp(masks)
    assert got_count == count
    assert frac == pytest.approx(0.0415, abs=1e-4)


def test_anc_examples():
    assert anc(np.zeros((5, 5))) == 0
    m = np.zeros((5, 5))
    m[1, 1] = m[2, 2] = 1
    assert anc(m, 4) == 2
    assert anc(m, 8) == 1
    with pytest.raises(ValueError):
        anc(m, 6)


@pytest.mark.parametrize("connectivity", [4, 8])
def test_anc_matches_flood_fill(connectivity):
    rng = np.random.default_rng(connectivity)
    for _ in range(30):
        m = rng.random((32, 32)) < rng.uniform(0.05, 0.6)
        assert anc(m, connectivity) == flood_fill_components(m, connectivity)


@given(st.integers(0, 2**32 - 1))
def test_anc_bounds(seed):
    m = np.random.default_rng(seed).random((10, 10)) < 0.3
    count = anc(m)
    assert (count == 0) == (not m.any())
    assert count <= m.sum()


def test_d20_examples():
    w = np.zeros((8, 8, 3))
    assert d20(w, 2) == 0
    w[4, 4, 1] = 0.5
    assert d20(w, 2) == 4
    with pytest.raises(ValueError):
        d20(w, 8)


def test_d20_matches_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(20):
        w = rng.normal(size=(12, 10, 3)) * (rng.random((12, 10, 1)) < 0.08)
        for patch in (2, 3, 4):
            assert d20(w, patch) == patch_count(w, patch)


@given(st.integers(0, 2**32 - 1), st.integers(0, 63))
def test_d20_monotone(seed, pos):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(8, 8, 2)) * (rng.random((8, 8, 1)) < 0.1)
    before = d20(w, 3)
    w[pos // 8, pos % 8, 0] = 1.0
    assert d20(w, 3) >= before


def test_asm_zero_model():
    model = ToyModel.initialize("linear", (2, 2, 1), 3)
    model.params["W"][:] = 0
    assert not asm(model, np.zeros((2, 2, 1)), 0, 1).any()
    with pytest.raises(ValueError):
        asm(model, np.zeros((2, 2, 1)), 1, 1)


def test_asm_two_pixel_linear_by_hand():
    # columns: class 0 (true), class 1 (target)
    W = np.array([[-1.0, 2.0],    # pixel 0: target up, true down  -> 2 * 1 = 2
                  [3.0, 0.5],     # pixel 1: true logit increases  -> 0
                  [-0.5, -1.0],   # pixel 2: target logit decreases -> 0
                  [0.0, 4.0]])    # pixel 3: true flat, target up   -> 0
    model = ToyModel("linear", (1, 4, 1), 2, {"W": W, "b": np.zeros(2)})
    out = asm(model, np.zeros((1, 4, 1)), 0, 1).ravel()
    np.testing.assert_allclose(out, [2.0, 0.0, 0.0, 0.0])


def test_asm_nonnegative_random_models():
    rng = np.random.default_rng(1)
    for seed in range(10):
        model = random_model("mlp", classes=4, seed=seed)
        x = rng.random(model.input_shape)
        assert asm(model, x, 0, 3).min() >= 0


def test_percentile_and_is():
    vals = np.arange(1, 11, dtype=float)
    assert percentile_nearest_rank(vals, 50) == 5.0
    assert percentile_nearest_rank(vals, 0) == -np.inf
    w = np.random.default_rng(2).normal(size=(3, 3, 1))
    sal = np.random.default_rng(3).random((3, 3, 1))
    assert is_score(w, sal, 0) == pytest.approx(1.0)
    assert is_score(w, np.zeros_like(sal), 50) == 0.0
    keep = sal > percentile_nearest_rank(sal, 50)
    ref = np.linalg.norm(w[keep]) / np.linalg.norm(w)
    assert is_score(w, sal, 50) == pytest.approx(ref)
    with pytest.raises(ValueError):
        is_score(np.zeros_like(w), sal, 50)
    with pytest.raises(ValueError):
        is_score(w, sal, 100)


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1), st.floats(0, 99.9), st.floats(1e-3, 1e3))
def test_is_bounded_and_scale_invariant(seed, nu, scale):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(4, 4, 2))
    sal = rng.random((4, 4, 2))
    s = is_score(w, sal, nu)
    assert 0 <= s <= 1
    assert is_score(scale * w, sal, nu) == pytest.approx(s, rel=1e-12, abs=1e-15)


def _m(success, acp_count=None, anc_=None, d=None, l2=None):
    return ImageMetrics(success, acp_count, anc_, d, l2)


def test_aggregate_single_target():
    per = [[_m(True, 4, 1, 9, 0.5)], [_m(True, 6, 2, 12, 0.7)]]
    best, avg, worst = aggregate_targeted(per, 16)
    assert best == avg == worst


def test_aggregate_all_fail():
    per = [[_m(False), _m(False)], [_m(False), _m(False)]]
    best, avg, worst = aggregate_targeted(per, 16)
    assert worst.asr == 0.0 and worst.acp_count is None and worst.anc is None


def test_aggregate_hand_worked():
    per = [
        [_m(True, 4, 1, 10, 1.0), _m(True, 8, 3, 20, 2.0)],
        [_m(True, 6, 2, 12, 0.5), _m(False)],
    ]
    best, avg, worst = aggregate_targeted(per, 16)
    assert best.asr == 1.0
    assert best.acp_count == (4 + 6) / 2 and best.anc == (1 + 2) / 2
    assert best.l2 == (1.0 + 0.5) / 2
    assert avg.asr == 0.75
    assert avg.acp_count == (4 + 8 + 6) / 3 and avg.d20 == (10 + 20 + 12) / 3
    assert worst.asr == 0.5
    assert worst.acp_count == 8 and worst.anc == 3 and worst.d20 == 20
    assert worst.acp_fraction == 0.5


@given(st.integers(0, 2**32 - 1))
def test_acp_count_fraction_consistency(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(rng.integers(2, 20, size=2))
    masks = [rng.random(shape) < 0.3 for _ in range(3)]
    count, frac = acp(masks)
    assert 0 <= frac <= 1
    assert count == pytest.approx(frac * shape[0] * shape[1], rel=1e-15)


def test_image_metrics_and_summary():
    w = np.zeros((6, 6, 3))
    w[1, 1, 0] = w[1, 2, 2] = w[4, 4, 1] = 0.3
    m = image_metrics(w, True, patch=2)
    assert (m.acp_count, m.anc) == (3, 2)
    assert m.l2 == pytest.approx(np.sqrt(3) * 0.3)
    rep = summarize([m, image_metrics(w, False)], 36)
    assert rep.asr == 0.5 and rep.acp_count == 3 and rep.acp_fraction == 3 / 36
