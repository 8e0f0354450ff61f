"""Proximal operator of the 1/2-quasinorm (half thresholding)."""

import math

import numpy as np

_CBRT54_4 = 54.0 ** (1.0 / 3.0) / 4.0


def half_threshold(lam):
    """
    Magnitude at or below which the prox of lam*|y|^(1/2) returns zero.

    This is g(2 lam) = (54^(1/3) / 4) * (2 lam)^(2/3).
    """
    return _CBRT54_4 * np.power(2.0 * np.asarray(lam, dtype=float), 2.0 / 3.0)


def prox_half_scalar(w, lam):
    """
    argmin_y (y - w)^2 / (2 lam) + |y|^(1/2) for scalar `w` and `lam` >= 0.
    """
    if not math.isfinite(w):
        raise ValueError(f"prox input must be finite, got {w}")
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    if lam == 0:
        return float(w)
    if abs(w) <= float(half_threshold(lam)):
        return 0.0
    arg = min(1.0, max(-1.0, (lam / 4.0) * (abs(w) / 3.0) ** -1.5))
    phi = math.acos(arg)
    return (2.0 / 3.0) * w * (1.0 + math.cos(2.0 * math.pi / 3.0 - 2.0 * phi / 3.0))


def prox_half(w, lam):
    """
    Element-wise half thresholding with a per-entry (or scalar) `lam`.

    Parameters
    ----------
    w : ndarray
        Point to evaluate the prox at.
    lam : float or ndarray
        Nonnegative weights, broadcastable to ``w.shape``. The caller folds
        in any step size, e.g. ``prox_half(v, sigma * lam)``.

    Returns
    -------
    ndarray
        Same shape as `w`. Entries with ``|w| <= g(2 lam)`` are exactly 0.
    """
    w = np.asarray(w, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if lam.shape != () and lam.shape != w.shape:
        raise ValueError(f"lam shape {lam.shape} does not match w shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("prox input must be finite")
    if np.any(lam < 0):
        raise ValueError("lam must be nonnegative")
    lam = np.broadcast_to(lam, w.shape)
    absw = np.abs(w)
    keep = absw > half_threshold(lam)
    out = np.zeros_like(w)
    if not keep.any():
        return out
    a, l = w[keep], lam[keep]
    with np.errstate(divide="ignore"):
        arg = np.clip((l / 4.0) * (np.abs(a) / 3.0) ** -1.5, -1.0, 1.0)
    phi = np.arccos(arg)
    out[keep] = (2.0 / 3.0) * a * (1.0 + np.cos(2.0 * np.pi / 3.0 - 2.0 * phi / 3.0))
    free = lam == 0
    out[free] = w[free]
    return out
