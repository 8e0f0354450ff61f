"""
Attack objectives on top of a gradient oracle.

A gradient oracle is any object with

- ``num_classes`` and ``input_shape`` attributes,
- ``logits(x)`` returning a vector of length ``num_classes``,
- ``loss_grad(x, label)`` returning the cross-entropy and its input gradient,
- ``logit_grad(x, k)`` returning the input gradient of logit ``k``.

:class:`gse.models.ToyModel` and :class:`gse.plugin.ProcessOracle` both
qualify.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import EPS_ZERO, clip_to_domain


class DivergenceError(FloatingPointError):
    """Raised when the attack objective becomes non-finite."""


@dataclass(frozen=True)
class Objective:
    """
    Attack objective for one image.

    targeted:   f(w) =  CE(x + w, label) + mu * ||w||_2
    untargeted: f(w) = -CE(x + w, label) + mu * ||w||_2

    `label` is the target class when targeted and the true class otherwise.
    """

    x: np.ndarray
    label: int
    targeted: bool = False
    mu: float = 0.0

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError(f"mu must be nonnegative, got {self.mu}")


def loss_and_grad(oracle, obj, w):
    """Value and gradient of `obj` at perturbation `w` (no clipping applied)."""
    if not 0 <= obj.label < oracle.num_classes:
        raise ValueError(f"label {obj.label} out of range")
    loss, grad = oracle.loss_grad(obj.x + w, obj.label)
    if not obj.targeted:
        loss, grad = -loss, -grad
    if obj.mu > 0:
        norm = float(np.sqrt(np.sum(w * w)))
        loss += obj.mu * norm
        if norm >= EPS_ZERO:
            grad = grad + obj.mu * w / norm
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise DivergenceError("objective became non-finite")
    return loss, grad


def is_adversarial(oracle, x, w, label, targeted, lo=0.0, hi=1.0):
    """Success predicate on the clipped example clip(x + w)."""
    pred = int(np.argmax(oracle.logits(clip_to_domain(x + w, lo, hi))))
    return pred == label if targeted else pred != label


def finite_difference(fn, x, h=1e-4):
    """Central-difference gradient of scalar `fn` at `x`, one entry at a time."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        e = e.reshape(x.shape)
        flat[i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return grad
