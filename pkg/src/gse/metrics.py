"""
Evaluation metrics for sparse perturbations.

ASR, ACP (changed-pixel count and fraction), ANC (connected clusters of
changed pixels), d_{2,0} (overlapping patches touched), l2, the adversarial
saliency map and the interpretability score, plus best/average/worst
aggregation over target labels.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .lambdas import perturbation_mask
from .tensor import EPS_ZERO

_NEIGHBOURS = {
    4: ((-1, 0), (1, 0), (0, -1), (0, 1)),
    8: ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)),
}


@dataclass
class MetricReport:
    """Aggregated metrics. Metric fields are None when nothing succeeded."""

    asr: float
    acp_count: float = None
    acp_fraction: float = None
    anc: float = None
    d20: float = None
    l2: float = None
    is_curve: list = field(default_factory=list)
    n: int = 0
    time: float = None


@dataclass
class ImageMetrics:
    """Metrics of a single attack; fields other than `success` are None on failure."""

    success: bool
    acp_count: float = None
    anc: float = None
    d20: float = None
    l2: float = None
    time: float = None
    is_curve: list = field(default_factory=list)


def acp(masks):
    """Mean changed-pixel count over `masks` and the same value as a fraction of M*N."""
    masks = list(masks)
    if not masks:
        raise ValueError("ACP is undefined for an empty list of masks")
    shape = np.shape(masks[0])
    count = float(np.mean([np.count_nonzero(m) for m in masks]))
    return count, count / (shape[0] * shape[1])


def anc(mask, connectivity=4):
    """Number of connected components of the 1-entries of `mask` (iterative DFS)."""
    if connectivity not in _NEIGHBOURS:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    mask = np.asarray(mask) != 0
    rows, cols = mask.shape
    seen = np.zeros_like(mask)
    steps = _NEIGHBOURS[connectivity]
    count = 0
    for i, j in zip(*np.nonzero(mask)):
        if seen[i, j]:
            continue
        count += 1
        seen[i, j] = True
        stack = [(i, j)]
        while stack:
            a, b = stack.pop()
            for da, db in steps:
                u, v = a + da, b + db
                if 0 <= u < rows and 0 <= v < cols and mask[u, v] and not seen[u, v]:
                    seen[u, v] = True
                    stack.append((u, v))
    return count


def d20(w, patch=4, eps=EPS_ZERO):
    """Count of overlapping patch x patch windows (all channels) with l2 norm > eps."""
    w = np.asarray(w, dtype=float)
    if not 0 < patch < min(w.shape[0], w.shape[1]):
        raise ValueError(f"patch size {patch} invalid for image {w.shape[:2]}")
    energy = (w * w).sum(axis=-1)
    windows = np.lib.stride_tricks.sliding_window_view(energy, (patch, patch))
    return int(np.count_nonzero(np.sqrt(windows.sum(axis=(-2, -1))) > eps))


def asm(oracle, x, l, t):
    """
    Adversarial saliency map of image `x` with true label `l`, target `t`.

    Entry i is dZ_t/dx_i * |dZ_l/dx_i| where the target logit does not
    decrease and the true logit does not increase along x_i
    (dZ_t/dx_i >= 0 and dZ_l/dx_i <= 0), and 0 elsewhere, so the map is
    nonnegative.
    """
    if l == t:
        raise ValueError("ASM needs distinct true and target labels")
    gt = oracle.logit_grad(x, t)
    gl = oracle.logit_grad(x, l)
    keep = (gt >= 0) & (gl <= 0)
    return np.where(keep, gt * np.abs(gl), 0.0)


def percentile_nearest_rank(values, nu):
    """Nearest-rank percentile; nu = 0 gives -inf so every entry lies above it."""
    if not 0 <= nu < 100:
        raise ValueError(f"percentile must lie in [0, 100), got {nu}")
    ordered = np.sort(np.asarray(values, dtype=float).reshape(-1))
    rank = math.ceil(nu / 100.0 * ordered.size)
    return -math.inf if rank == 0 else float(ordered[rank - 1])


def is_score(w, asm_map, nu):
    """||B * w||_2 / ||w||_2 with B = 1 where `asm_map` exceeds its nu-th percentile."""
    w = np.asarray(w, dtype=float)
    norm = float(np.sqrt(np.sum(w * w)))
    if norm == 0:
        raise ValueError("interpretability score undefined for a zero perturbation")
    keep = np.asarray(asm_map) > percentile_nearest_rank(asm_map, nu)
    return float(np.sqrt(np.sum(np.where(keep, w, 0.0) ** 2)) / norm)


def image_metrics(w, success, connectivity=4, patch=4, time=None, is_curve=()):
    """Per-attack metrics of the effective perturbation `w`."""
    if not success:
        return ImageMetrics(success=False, time=time)
    mask = perturbation_mask(w)
    return ImageMetrics(
        success=True,
        acp_count=float(np.count_nonzero(mask)),
        anc=float(anc(mask, connectivity)),
        d20=float(d20(w, patch)),
        l2=float(np.sqrt(np.sum(np.asarray(w) ** 2))),
        time=time,
        is_curve=list(is_curve),
    )


_FIELDS = ("acp_count", "anc", "d20", "l2")


def _mean_curve(curves):
    curves = [c for c in curves if c]
    if not curves:
        return []
    nus = [nu for nu, _ in curves[0]]
    return [(nu, float(np.mean([c[i][1] for c in curves]))) for i, nu in enumerate(nus)]


def summarize(items, pixels):
    """Average a list of :class:`ImageMetrics` into a :class:`MetricReport`."""
    items = list(items)
    if not items:
        return MetricReport(asr=0.0, n=0)
    ok = [m for m in items if m.success]
    report = MetricReport(asr=len(ok) / len(items), n=len(items))
    times = [m.time for m in items if m.time is not None]
    if times:
        report.time = float(np.mean(times))
    if ok:
        for name in _FIELDS:
            setattr(report, name, float(np.mean([getattr(m, name) for m in ok])))
        report.acp_fraction = report.acp_count / pixels
        report.is_curve = _mean_curve([m.is_curve for m in ok])
    return report


def aggregate_targeted(per_image, pixels):
    """
    Best, average and worst case over target labels.

    `per_image` is a list (one entry per image) of lists of
    :class:`ImageMetrics`, one per target. Best case counts an image as
    successful if any target succeeded and takes, per metric, the minimum
    over its successful targets. Worst case requires every target to succeed
    and takes the per-metric maximum. Average case pools all (image, target)
    attempts and averages metrics over the successful ones.
    """
    if any(len(targets) == 0 for targets in per_image):
        raise ValueError("every image needs at least one target")
    best, worst = [], []
    for targets in per_image:
        ok = [m for m in targets if m.success]
        best.append(_pick(ok, min) if ok else ImageMetrics(success=False))
        all_ok = len(ok) == len(targets)
        worst.append(_pick(ok, max) if all_ok else ImageMetrics(success=False))
    average = summarize([m for targets in per_image for m in targets], pixels)
    return summarize(best, pixels), average, summarize(worst, pixels)


def _pick(ok, choose):
    out = ImageMetrics(success=True)
    for name in _FIELDS:
        setattr(out, name, choose(getattr(m, name) for m in ok))
    curves = [m.is_curve for m in ok if m.is_curve]
    if curves:
        nus = [nu for nu, _ in curves[0]]
        # a higher interpretability score is the favorable direction
        flip = max if choose is min else min
        out.is_curve = [(nu, flip(c[i][1] for c in curves)) for i, nu in enumerate(nus)]
    return out
