"""
Attack engines.

:func:`fbs_attack` is plain forward-backward splitting with the
1/2-quasinorm prox and a constant step. :func:`gse_attack` is the two-phase
group-wise sparse attack: accelerated proximal steps with per-pixel weights
that adapt around perturbed pixels, then projected Nesterov descent on the
selected coordinates. :func:`section_search` picks the sparsity weight per
image.

Two different step sequences appear here and must not be confused: FBS uses
a constant step ``sigma``; GSE uses ``sigma`` as step and the Nesterov
extrapolation weights from :func:`nesterov_alpha`.
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, replace
from functools import lru_cache

import numpy as np

from .lambdas import adjust_lambda
from .oracle import DivergenceError, Objective, is_adversarial, loss_and_grad
from .prox import prox_half
from .tensor import clip_to_domain, gaussian_kernel

log = logging.getLogger(__name__)

PRESETS = {
    "toy": dict(q=0.25, sigma=1.0, mu=0.01, khat=30),
    "cifar": dict(q=0.25, sigma=0.005, mu=1.0, khat=30),
    "imagenet": dict(q=0.9, sigma=0.05, mu=0.1, khat=50),
}


class EmptySupportError(RuntimeError):
    """Phase 1 selected no coordinates."""


@dataclass(frozen=True)
class AttackConfig:
    """
    Hyperparameters of one attack run.

    ``lam`` is a positive float or the string ``"auto"`` (section search).
    Defaults are the CIFAR-10 values; see :data:`PRESETS`.
    """

    lam: object = "auto"
    mu: float = 1.0
    sigma: float = 0.005
    q: float = 0.25
    khat: int = 30
    iters: int = 200
    kernel_size: int = 3
    kernel_sigma: float = 1.0
    targeted: bool = False
    lo: float = 0.0
    hi: float = 1.0
    lam_seed: float = 1e-4
    max_doublings: int = 40
    bisection_steps: int = 10

    def __post_init__(self):
        if self.lam != "auto" and not (isinstance(self.lam, (int, float)) and self.lam >= 0):
            raise ValueError(f"lam must be 'auto' or a nonnegative number, got {self.lam!r}")
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0 < self.q <= 1:
            raise ValueError("q must lie in (0, 1]")
        if self.iters < 1:
            raise ValueError("iters must be positive")

    @classmethod
    def preset(cls, name, **overrides):
        return cls(**{**PRESETS[name], **overrides})

    def to_dict(self):
        return asdict(self)


@dataclass
class AttackResult:
    perturbation: np.ndarray
    adversarial: np.ndarray
    success: bool
    lam: float
    support_size: int
    iterations: int
    wall_time: float
    label: int = -1
    targeted: bool = False
    support: np.ndarray = None


@lru_cache(maxsize=None)
def _beta(k):
    b = 0.0
    for _ in range(k):
        b = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * b * b))
    return b


def nesterov_alpha(k):
    """alpha_k = (1 - beta_k) / beta_{k+1} with beta_0 = 0."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    return (1.0 - _beta(k)) / _beta(k + 1)


def support_set(lam_init, lam_final):
    """Boolean mask of coordinates whose weight ended strictly below its start."""
    lam_init = np.asarray(lam_init)
    lam_final = np.asarray(lam_final)
    if lam_init.shape != lam_final.shape:
        raise ValueError("lambda fields differ in shape")
    return lam_final < lam_init


def project_support(w, support):
    """Zero every entry of `w` outside the boolean mask `support`."""
    return np.where(support, w, 0.0)


def projected_nag(grad_fn, w, w_tilde, support, sigma, k_start, steps, trace=None):
    """
    Run `steps` projected Nesterov iterations starting at iteration `k_start`.

    `w_tilde` is the previous gradient-step point carried as momentum. Returns
    the final ``(w, w_tilde)``; each iterate is appended to `trace` if given.
    """
    for k in range(k_start, k_start + steps):
        step = w - sigma * grad_fn(w)
        alpha = nesterov_alpha(k)
        w = project_support((1.0 - alpha) * step + alpha * w_tilde, support)
        w_tilde = step
        if trace is not None:
            trace.append(w)
    return w, w_tilde


def _objective(x, label, config, mu):
    return Objective(x=np.asarray(x, dtype=float), label=int(label),
                     targeted=config.targeted, mu=mu)


def _finish(oracle, x, label, config, w, lam, support_size, iters, start):
    adv = clip_to_domain(x + w, config.lo, config.hi)
    success = is_adversarial(oracle, x, w, label, config.targeted, config.lo, config.hi)
    return AttackResult(perturbation=w, adversarial=adv, success=success, lam=float(lam),
                        support_size=int(support_size), iterations=iters,
                        wall_time=time.perf_counter() - start, label=int(label),
                        targeted=config.targeted)


def fbs_attack(x, label, config, oracle, lam=None):
    """
    Forward-backward splitting with the 1/2-quasinorm prox.

    w <- prox_{sigma lam}(w - sigma grad L(x + w)); the loss carries no l2
    term (mu is ignored). Untargeted runs ascend the loss of the true label.
    """
    lam = config.lam if lam is None else lam
    if lam == "auto":
        raise ValueError("fbs_attack needs a numeric lam; use section_search for 'auto'")
    start = time.perf_counter()
    obj = _objective(x, label, config, 0.0)
    w = np.zeros_like(obj.x)
    for _ in range(config.iters):
        _, g = loss_and_grad(oracle, obj, w)
        w = prox_half(w - config.sigma * g, config.sigma * lam)
    support = int(np.count_nonzero(w))
    return _finish(oracle, obj.x, label, config, w, lam, support, config.iters, start)


def gse_attack(x, label, config, oracle, lam=None, trace=None):
    """
    Two-phase group-wise sparse attack.

    Phase 1 (``khat`` iterations) takes accelerated proximal steps with a
    per-entry weight field that shrinks around perturbed pixels. Coordinates
    whose weight ended below the initial value form the support. Phase 2
    runs projected Nesterov descent on that support until ``iters`` total
    iterations. Raises :class:`EmptySupportError` when phase 1 selected
    nothing.
    """
    lam = config.lam if lam is None else lam
    if lam == "auto":
        raise ValueError("gse_attack needs a numeric lam; use section_search for 'auto'")
    if not 0 < config.khat < config.iters:
        raise ValueError(f"need 0 < khat < iters, got khat={config.khat}, iters={config.iters}")
    start = time.perf_counter()
    obj = _objective(x, label, config, config.mu)
    kernel = gaussian_kernel(config.kernel_size, config.kernel_sigma)

    def grad(w):
        return loss_and_grad(oracle, obj, w)[1]

    w = np.zeros_like(obj.x)
    w_tilde = w
    lam0 = np.full(w.shape, float(lam))
    lam_field = lam0
    for k in range(config.khat):
        step = prox_half(w - config.sigma * grad(w), config.sigma * lam_field)
        alpha = nesterov_alpha(k)
        w = (1.0 - alpha) * step + alpha * w_tilde
        w_tilde = step
        lam_field = adjust_lambda(lam_field, w, kernel, config.q, lam0=lam0)
        if trace is not None:
            trace.append(w)

    support = support_set(lam0, lam_field)
    if not support.any():
        raise EmptySupportError("no pixels selected; lambda too large")
    w, _ = projected_nag(grad, w, w_tilde, support, config.sigma, config.khat,
                         config.iters - config.khat, trace)
    res = _finish(oracle, obj.x, label, config, w, lam, support.sum(), config.iters, start)
    res.support = support
    return res


ATTACKS = {"fbs": fbs_attack, "gse": gse_attack}


def first_step_is_zero(x, label, config, oracle, lam):
    """True when the first proximal step from w = 0 already returns zero."""
    obj = _objective(x, label, config, config.mu)
    _, g = loss_and_grad(oracle, obj, np.zeros_like(obj.x))
    return not np.any(prox_half(-config.sigma * g, config.sigma * lam))


def _probe(attack, x, label, config, oracle, lam):
    try:
        return attack(x, label, config, oracle, lam=lam)
    except (EmptySupportError, DivergenceError) as exc:
        log.debug("probe at lam=%g failed: %s", lam, exc)
        return None


def section_search(x, label, config, oracle, attack=gse_attack):
    """
    Pick the largest sparsity weight for which `attack` succeeds.

    Stage A doubles lam from ``config.lam_seed`` until the first prox step
    from zero vanishes, giving lam_max. Stage B bisects (0, lam_max] for
    ``config.bisection_steps`` steps, keeping the largest successful lam;
    if none succeeded, lam_max * 2**-steps is tried last.

    Returns ``(lam, result)``; lam is None when no probe succeeded, in which
    case result is the last completed probe (or a zero-perturbation failure).
    """
    start = time.perf_counter()
    x = np.asarray(x, dtype=float)
    zero = np.zeros_like(x)
    if is_adversarial(oracle, x, zero, label, config.targeted, config.lo, config.hi):
        res = _finish(oracle, x, label, config, zero, 0.0, 0, 0, start)
        return 0.0, res

    lam_max = config.lam_seed
    for _ in range(config.max_doublings):
        if first_step_is_zero(x, label, config, oracle, lam_max):
            break
        lam_max *= 2.0

    lo, hi = 0.0, lam_max
    best = None
    last = None
    for _ in range(config.bisection_steps):
        mid = 0.5 * (lo + hi)
        res = _probe(attack, x, label, config, oracle, mid)
        if res is not None:
            last = res
        if res is not None and res.success:
            best = res
            lo = mid
        else:
            hi = mid
    if best is None:
        floor = lam_max * 2.0 ** -config.bisection_steps
        res = _probe(attack, x, label, config, oracle, floor)
        if res is not None:
            last = res
            if res.success:
                best = res
    if best is None:
        if last is None:
            last = _finish(oracle, x, label, config, zero, lam_max, 0, 0, start)
        last = replace(last, success=False, wall_time=time.perf_counter() - start)
        return None, last
    return best.lam, replace(best, wall_time=time.perf_counter() - start)


def run_attack(name, x, label, config, oracle):
    """Dispatch to fbs/gse with fixed lam or section search when lam is 'auto'."""
    attack = ATTACKS[name]
    if config.lam == "auto":
        return section_search(x, label, config, oracle, attack)[1]
    try:
        return attack(x, label, config, oracle)
    except (EmptySupportError, DivergenceError):
        start = time.perf_counter()
        zero = np.zeros_like(np.asarray(x, dtype=float))
        res = _finish(oracle, np.asarray(x, dtype=float), label, config, zero,
                      config.lam, 0, 0, start)
        return replace(res, success=False)
