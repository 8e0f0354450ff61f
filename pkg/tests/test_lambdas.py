import numpy as np
import pytest

from gse.lambdas import adjust_lambda, perturbation_mask
from gse.tensor import EPS_ZERO, conv2d_same, gaussian_kernel


def test_mask_examples():
    w = np.zeros((5, 6, 3))
    assert not perturbation_mask(w).any()
    w[2, 3, 1] = -0.4
    mask = perturbation_mask(w)
    assert mask.sum() == 1 and mask[2, 3] == 1


def test_mask_matches_loop():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(8, 8, 3)) * (rng.random((8, 8, 3)) < 0.1)
    ref = np.zeros((8, 8))
    for i in range(8):
        for j in range(8):
            ref[i, j] = any(abs(w[i, j, c]) > EPS_ZERO for c in range(3))
    np.testing.assert_array_equal(perturbation_mask(w), ref)


def test_no_perturbation():
    lam = np.full((6, 6, 3), 0.3)
    k = gaussian_kernel(3)
    np.testing.assert_array_equal(adjust_lambda(lam, np.zeros_like(lam), k, 1.0), lam)
    np.testing.assert_allclose(adjust_lambda(lam, np.zeros_like(lam), k, 0.5), 2 * lam)


def test_single_pixel_uniform_kernel_matches_loop():
    lam = np.random.default_rng(1).uniform(0.5, 1.5, size=(7, 7, 1)).repeat(3, axis=2)
    w = np.zeros((7, 7, 3))
    w[3, 2, 0] = 1.0
    k = gaussian_kernel(3, np.inf)
    q = 0.25
    ref = lam.copy()
    for i in range(7):
        for j in range(7):
            near = abs(i - 3) <= 1 and abs(j - 2) <= 1
            ref[i, j, :] = lam[i, j, :] / (1 + 1 / 9) if near else lam[i, j, :] / q
    np.testing.assert_allclose(adjust_lambda(lam, w, k, q), ref, rtol=1e-14)


def test_positivity_channel_equality_and_direction():
    rng = np.random.default_rng(2)
    lam = np.full((10, 10, 3), 0.2)
    k = gaussian_kernel(5, 1.5)
    for _ in range(20):
        w = rng.normal(size=lam.shape) * (rng.random((10, 10, 1)) < 0.05)
        new = adjust_lambda(lam, w, k, 0.5)
        blurred = conv2d_same(perturbation_mask(w), k)
        near = blurred > EPS_ZERO
        assert np.all(new > 0)
        assert np.all(new == new[:, :, :1])
        assert np.all(new[near] < lam[near])
        assert np.all(new[~near] > lam[~near])
        lam = new


def test_region_growing_with_neutral_q():
    rng = np.random.default_rng(3)
    lam0 = np.full((12, 12, 3), 1.0)
    lam = lam0
    k = gaussian_kernel(3, 1.0)
    touched = np.zeros((12, 12), bool)
    for _ in range(6):
        w = rng.normal(size=lam.shape) * (rng.random((12, 12, 1)) < 0.03)
        touched |= conv2d_same(perturbation_mask(w), k) > EPS_ZERO
        lam = adjust_lambda(lam, w, k, 1.0)
    np.testing.assert_array_equal((lam < lam0)[:, :, 0], touched)


def test_cap_and_bad_q():
    lam0 = np.full((5, 5, 1), 1.0)
    lam = lam0
    for _ in range(40):
        lam = adjust_lambda(lam, np.zeros_like(lam), gaussian_kernel(3), 0.25, lam0=lam0)
    assert lam.max() == pytest.approx(1e6)
    for q in (0.0, 1.5, -1):
        with pytest.raises(ValueError):
            adjust_lambda(lam0, lam0, gaussian_kernel(3), q)
