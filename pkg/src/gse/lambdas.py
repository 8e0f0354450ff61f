"""Per-pixel tradeoff parameter updates used in the selection phase of GSE."""

import numpy as np

from .tensor import EPS_ZERO, channel_abs_sum, conv2d_same

LAMBDA_CAP = 1e6


def perturbation_mask(w, eps=EPS_ZERO):
    """(M, N) mask with 1 where any channel of `w` is (numerically) nonzero."""
    return (channel_abs_sum(w) > eps).astype(float)


def adjust_lambda(lam, w, kernel, q, lam0=None):
    """
    Shrink `lam` around perturbed pixels and grow it elsewhere.

    The perturbation mask of `w` is blurred with `kernel`; pixels where the
    blur is nonzero have their weights divided by ``1 + blur``, all others
    by `q`. When `lam0` is given, weights are capped at ``lam0 * 1e6``.
    """
    if not 0 < q <= 1:
        raise ValueError(f"q must lie in (0, 1], got {q}")
    blurred = conv2d_same(perturbation_mask(w), kernel)
    divisor = np.where(blurred > EPS_ZERO, blurred + 1.0, q)
    out = lam / divisor[:, :, None]
    if lam0 is not None:
        out = np.minimum(out, np.asarray(lam0) * LAMBDA_CAP)
    return out
