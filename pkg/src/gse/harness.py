"""
Batch evaluation: run attacks over a dataset, aggregate metrics, write CSV
rows and a run manifest.
"""

import csv
import io
import json
import logging
import shlex
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .data import TargetPlan, make_targets
from .metrics import aggregate_targeted, asm, image_metrics, is_score, summarize
from .models import ToyModel
from .plugin import ProcessOracle
from .solver import run_attack

log = logging.getLogger(__name__)

CSV_COLUMNS = ("attack", "mode", "case", "asr", "acp_count", "acp_fraction", "anc", "d20",
               "l2", "time_per_image_s")


def load_oracle(spec):
    """A saved :class:`ToyModel` path, or ``exec:COMMAND`` for an external oracle."""
    if spec.startswith("exec:"):
        return ProcessOracle(shlex.split(spec[len("exec:"):]))
    return ToyModel.load(spec)


def oracle_digest(spec):
    if spec.startswith("exec:"):
        return "exec"
    return ToyModel.load(spec).digest()


@dataclass
class Job:
    index: int
    x: np.ndarray
    label: int
    target: int = None


@dataclass(frozen=True)
class EvalSettings:
    attack: str
    config: object
    connectivity: int = 4
    patch: int = 4
    is_percentiles: tuple = ()
    timing: bool = True


def run_job(oracle, job, settings):
    """One attack on one (image, target) pair; returns :class:`ImageMetrics`."""
    config = settings.config
    if job.target is None:
        config = replace(config, targeted=False)
        label = job.label
    else:
        config = replace(config, targeted=True)
        label = job.target
    res = run_attack(settings.attack, job.x, label, config, oracle)
    w = res.adversarial - job.x
    curve = []
    if res.success and settings.is_percentiles and np.any(w):
        t = job.target
        if t is None:
            t = int(np.argmax(oracle.logits(res.adversarial)))
        if t != job.label:
            saliency = asm(oracle, job.x, job.label, t)
            curve = [(float(nu), is_score(w, saliency, nu)) for nu in settings.is_percentiles]
    return image_metrics(w, res.success, settings.connectivity, settings.patch,
                         time=res.wall_time if settings.timing else None, is_curve=curve)


_worker_oracle = None


def _init_worker(spec):
    global _worker_oracle
    _worker_oracle = load_oracle(spec)


def _run_in_worker(args):
    job, settings = args
    return run_job(_worker_oracle, job, settings)


def run_jobs(jobs, settings, oracle=None, model_spec=None, workers=1):
    """Run `jobs` in order; with ``workers > 1`` a process pool loads `model_spec`."""
    if workers <= 1 or len(jobs) <= 1:
        if oracle is None:
            oracle = load_oracle(model_spec)
        return [run_job(oracle, job, settings) for job in jobs]
    with ProcessPoolExecutor(workers, initializer=_init_worker,
                             initargs=(model_spec,)) as pool:
        return list(pool.map(_run_in_worker, [(j, settings) for j in jobs]))


def select_images(oracle, dataset, count, include_misclassified=False):
    """Indices of the first `count` images (correctly classified unless told otherwise)."""
    chosen = []
    for k in range(len(dataset)):
        if len(chosen) >= count:
            break
        if include_misclassified or int(np.argmax(oracle.logits(dataset.images[k]))) == dataset.labels[k]:
            chosen.append(k)
    return chosen


def build_jobs(dataset, indices, targets=None, seed=0):
    """Untargeted jobs, or one job per target label when `targets` is given."""
    if not targets:
        return [Job(k, dataset.images[k], int(dataset.labels[k])) for k in indices]
    if targets >= dataset.num_classes:
        raise ValueError(f"{targets} targets need more than {dataset.num_classes} classes")
    if targets == dataset.num_classes - 1:
        plan = TargetPlan.all_wrong(dataset.num_classes)
    else:
        plan = TargetPlan.random(targets, dataset.num_classes, seed)
    jobs = []
    for k in indices:
        label = int(dataset.labels[k])
        for t in make_targets(label, plan, dataset.num_classes):
            jobs.append(Job(k, dataset.images[k], label, int(t)))
    return jobs


def fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    return f"{float(value):.6g}"


def report_row(attack, mode, case, report, pixels):
    acp_fraction = None if report.acp_count is None else report.acp_count / pixels
    return [attack, mode, case, fmt(report.asr), fmt(report.acp_count), fmt(acp_fraction),
            fmt(report.anc), fmt(report.d20), fmt(report.l2), fmt(report.time)]


def image_row(attack, mode, case, m, pixels):
    acp_fraction = None if m.acp_count is None else m.acp_count / pixels
    return [attack, mode, case, fmt(1.0 if m.success else 0.0), fmt(m.acp_count),
            fmt(acp_fraction), fmt(m.anc), fmt(m.d20), fmt(m.l2), fmt(m.time)]


def evaluate(jobs, results, settings, pixels, targeted):
    """
    Per-image rows, summary rows and summary reports for finished jobs.

    Returns ``(rows, summaries, row_index)`` where `summaries` maps a case
    name to its :class:`MetricReport` and `row_index` maps image index to
    the CSV row numbers (0-based, header excluded) of that image.
    """
    mode = "targeted" if targeted else "untargeted"
    rows, row_index = [], {}
    for job, m in zip(jobs, results):
        case = f"image={job.index}" if job.target is None else f"image={job.index}/target={job.target}"
        row_index.setdefault(job.index, []).append(len(rows))
        rows.append(image_row(settings.attack, mode, case, m, pixels))
    if not jobs:
        return rows, {}, row_index
    if not targeted:
        summaries = {"all": summarize(results, pixels)}
    else:
        grouped = {}
        for job, m in zip(jobs, results):
            grouped.setdefault(job.index, []).append(m)
        best, average, worst = aggregate_targeted(list(grouped.values()), pixels)
        best.time = worst.time = average.time
        summaries = {"best": best, "average": average, "worst": worst}
    for case, report in summaries.items():
        rows.append(report_row(settings.attack, mode, case, report, pixels))
    return rows, summaries, row_index


def csv_text(rows, columns=CSV_COLUMNS):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buf.getvalue()


def write_csv(path, rows, columns=CSV_COLUMNS):
    text = csv_text(rows, columns)
    if path in (None, "-"):
        print(text, end="")
    else:
        with open(path, "w", newline="") as f:
            f.write(text)
    return text


def write_manifest(path, command, flags, config, dataset_name, model_hash, extra=None):
    manifest = {
        "command": command,
        "flags": flags,
        "config": config.to_dict() if config is not None else None,
        "seed": flags.get("seed"),
        "dataset": dataset_name,
        "model_hash": model_hash,
        "code_version": __version__,
    }
    manifest.update(extra or {})
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


def report_json(report):
    return {
        "asr": report.asr, "acp_count": report.acp_count, "acp_fraction": report.acp_fraction,
        "anc": report.anc, "d20": report.d20, "l2": report.l2,
        "is_curve": [list(p) for p in report.is_curve], "n": report.n,
    }


def select_best_cell(cells):
    """
    Winner of a hyperparameter grid: among cells with ASR == 1 the smallest
    ``acp_count + anc``; the first such cell wins ties. Returns None when no
    cell reaches full success. `cells` is a list of ``(params, MetricReport)``.
    """
    if not cells:
        raise ValueError("empty hyperparameter grid")
    best = None
    for params, report in cells:
        if report.asr < 1.0 or report.acp_count is None:
            continue
        score = report.acp_count + report.anc
        if best is None or score < best[0]:
            best = (score, params, report)
    return None if best is None else (best[1], best[2])

