"""Command-line interface: ``gse attack | gridsearch | ablate-khat | train | synth | serve | replay``."""

import argparse
import itertools
import json
import logging
import os
import sys

from . import __version__
from .data import load_dataset, save_tensor_dir, synth_dataset
from .harness import (CSV_COLUMNS, EvalSettings, build_jobs, evaluate, fmt, load_oracle,
                      oracle_digest, report_json, report_row, run_jobs, select_best_cell,
                      select_images, write_csv, write_manifest)
from .models import ARCHITECTURES, train_toy
from .solver import PRESETS, AttackConfig

log = logging.getLogger("gse")


def _floats(text):
    return [float(v) for v in text.split(",") if v]


def _ints(text):
    return [int(v) for v in text.split(",") if v]


def _lam(text):
    return "auto" if text == "auto" else float(text)


def _seed(args):
    if args.seed is not None:
        return args.seed
    return int(os.environ.get("GSE_SEED", 0))


def _add_attack_flags(p):
    p.add_argument("--attack", choices=("fbs", "gse"), default="gse")
    p.add_argument("--mode", choices=("targeted", "untargeted"), default="untargeted")
    p.add_argument("--model", required=True,
                   help="model file, or exec:COMMAND for an external oracle process")
    p.add_argument("--data", required=True,
                   help="tensor directory, CIFAR-10 .bin file, or synth:key=value,...")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--targets", type=int, default=None,
                   help="target labels per image in targeted mode (default: all wrong labels)")
    p.add_argument("--preset", choices=sorted(PRESETS), default="cifar")
    p.add_argument("--lambda", dest="lam", type=_lam, default="auto")
    p.add_argument("--mu", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--khat", type=int)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--kernel-size", type=int, default=3)
    p.add_argument("--kernel-sigma", type=float, default=1.0)
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=4)
    p.add_argument("--patch-np", type=int, default=4)
    p.add_argument("--is-percentiles", type=_floats, default=[50.0, 80.0, 90.0])
    p.add_argument("--seed", type=int, default=None, help="falls back to $GSE_SEED, then 0")
    p.add_argument("--out", default="-", help="CSV path ('-' for stdout)")
    p.add_argument("--manifest", default=None, help="default: OUT.manifest.json")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-timing", action="store_true",
                   help="leave time columns empty so reruns are byte-identical")
    p.add_argument("--include-misclassified", action="store_true")


def _config(args, **overrides):
    base = dict(PRESETS[args.preset])
    for key in ("mu", "sigma", "q", "khat"):
        if getattr(args, key) is not None:
            base[key] = getattr(args, key)
    base.update(lam=args.lam, iters=args.iters, kernel_size=args.kernel_size,
                kernel_sigma=args.kernel_sigma, targeted=args.mode == "targeted")
    base.update(overrides)
    return AttackConfig(**base)


def _flags(args):
    return {k: v for k, v in vars(args).items() if k != "func"}


def _manifest_path(args):
    if args.manifest:
        return args.manifest
    if args.out in (None, "-"):
        return None
    return args.out + ".manifest.json"


def _setup(args):
    oracle = load_oracle(args.model)
    dataset = load_dataset(args.data)
    if tuple(dataset.shape) != tuple(oracle.input_shape):
        raise ValueError(f"dataset images {dataset.shape} do not fit model input "
                         f"{oracle.input_shape}")
    indices = select_images(oracle, dataset, args.count, args.include_misclassified)
    if len(indices) < args.count:
        log.warning("only %d usable images (asked for %d)", len(indices), args.count)
    return oracle, dataset, indices


def _evaluate(args, oracle, dataset, indices, config):
    targeted = args.mode == "targeted"
    targets = None
    if targeted:
        targets = args.targets if args.targets else dataset.num_classes - 1
    jobs = build_jobs(dataset, indices, targets, seed=_seed(args))
    settings = EvalSettings(args.attack, config, args.connectivity, args.patch_np,
                            tuple(args.is_percentiles), timing=not args.no_timing)
    results = run_jobs(jobs, settings, oracle=oracle, model_spec=args.model,
                       workers=args.workers)
    pixels = dataset.shape[0] * dataset.shape[1]
    return evaluate(jobs, results, settings, pixels, targeted)


def cmd_attack(args):
    config = _config(args)
    oracle, dataset, indices = _setup(args)
    rows, summaries, row_index = _evaluate(args, oracle, dataset, indices, config)
    write_csv(args.out, rows)
    path = _manifest_path(args)
    if path:
        write_manifest(path, "attack", _flags(args), config, dataset.name,
                       oracle_digest(args.model), {
                           "images": indices,
                           "rows": {str(k): v for k, v in row_index.items()},
                           "summary": {k: report_json(r) for k, r in summaries.items()},
                       })
    for case, report in summaries.items():
        log.info("%s %s: ASR %.3f", args.attack, case, report.asr)
    return 0


GRID_COLUMNS = ("q", "sigma", "mu", "khat") + CSV_COLUMNS + ("objective",)


def cmd_gridsearch(args):
    grid = list(itertools.product(args.grid_q, args.grid_sigma, args.grid_mu, args.grid_khat))
    if not grid:
        raise ValueError("empty hyperparameter grid")
    oracle, dataset, indices = _setup(args)
    cells, rows = [], []
    for q, sigma, mu, khat in grid:
        config = _config(args, q=q, sigma=sigma, mu=mu, khat=khat)
        _, summaries, _ = _evaluate(args, oracle, dataset, indices, config)
        # targeted grids are judged on the average case
        report = summaries.get("all") or summaries.get("average")
        params = {"q": q, "sigma": sigma, "mu": mu, "khat": khat}
        cells.append((params, report))
        objective = None if report.acp_count is None else report.acp_count + report.anc
        pixels = dataset.shape[0] * dataset.shape[1]
        rows.append([fmt(q), fmt(sigma), fmt(mu), str(khat)]
                    + report_row(args.attack, args.mode, "grid", report, pixels)
                    + [fmt(objective)])
    write_csv(args.out, rows, GRID_COLUMNS)
    winner = select_best_cell(cells)
    path = _manifest_path(args)
    if path:
        write_manifest(path, "gridsearch", _flags(args), None, dataset.name,
                       oracle_digest(args.model),
                       {"images": indices, "winner": winner and winner[0]})
    if winner is None:
        print("gridsearch: no cell reached ASR = 1.0", file=sys.stderr)
        return 3
    print(json.dumps(winner[0]), file=sys.stderr)
    return 0


def cmd_ablate_khat(args):
    if any(k < 1 or k >= args.iters for k in args.khat_grid):
        raise ValueError(f"every khat must lie in [1, {args.iters - 1}]")
    oracle, dataset, indices = _setup(args)
    rows = []
    pixels = dataset.shape[0] * dataset.shape[1]
    for khat in args.khat_grid:
        config = _config(args, khat=khat)
        _, summaries, _ = _evaluate(args, oracle, dataset, indices, config)
        for case, report in summaries.items():
            label = f"khat={khat}" if case == "all" else f"khat={khat}/{case}"
            rows.append(report_row(args.attack, args.mode, label, report, pixels))
    write_csv(args.out, rows)
    path = _manifest_path(args)
    if path:
        write_manifest(path, "ablate-khat", _flags(args), _config(args), dataset.name,
                       oracle_digest(args.model), {"images": indices})
    return 0


def cmd_train(args):
    dataset = load_dataset(args.data)
    sizes = {"linear": {}, "mlp": {"hidden": args.hidden},
             "conv": {"filters": args.filters, "pool": args.pool}}[args.arch]
    model, acc = train_toy(dataset.images, dataset.labels, args.arch, epochs=args.epochs,
                           lr=args.lr, seed=_seed(args), batch_size=args.batch_size,
                           num_classes=dataset.num_classes, **sizes)
    model.save(args.out)
    print(f"train accuracy {acc:.4f}")
    return 0


def cmd_synth(args):
    M, N, C = args.shape
    dataset = synth_dataset(args.classes, args.per_class, M, N, C, seed=_seed(args))
    save_tensor_dir(dataset, args.out)
    print(f"wrote {len(dataset)} images to {args.out}")
    return 0


def cmd_serve(args):
    from .plugin import serve
    serve(load_oracle(args.model), sys.stdin.buffer, sys.stdout.buffer)
    return 0


def cmd_replay(args):
    with open(args.manifest_file) as f:
        manifest = json.load(f)
    flags = dict(manifest["flags"])
    flags["out"] = args.out
    flags["manifest"] = args.out + ".manifest.json" if args.out != "-" else None
    ns = argparse.Namespace(**flags)
    return COMMANDS[manifest["command"]](ns)


COMMANDS = {"attack": cmd_attack, "gridsearch": cmd_gridsearch, "ablate-khat": cmd_ablate_khat}


def build_parser():
    parser = argparse.ArgumentParser(prog="gse", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attack", help="attack a batch of images")
    _add_attack_flags(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("gridsearch", help="grid search q, sigma, mu, khat")
    _add_attack_flags(p)
    p.add_argument("--grid-q", type=_floats, default=[0.25, 0.5, 0.9])
    p.add_argument("--grid-sigma", type=_floats, default=[0.5, 1.0, 2.0])
    p.add_argument("--grid-mu", type=_floats, default=[0.01])
    p.add_argument("--grid-khat", type=_ints, default=[30])
    p.set_defaults(func=cmd_gridsearch, count=50)

    p = sub.add_parser("ablate-khat", help="sweep the length of the selection phase")
    _add_attack_flags(p)
    p.add_argument("--khat-grid", type=_ints, default=[5, 10, 20, 40])
    p.set_defaults(func=cmd_ablate_khat)

    p = sub.add_parser("train", help="train a built-in toy model")
    p.add_argument("--data", required=True)
    p.add_argument("--arch", choices=ARCHITECTURES, default="conv")
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--filters", type=int, default=8)
    p.add_argument("--pool", type=int, default=4)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="write a synthetic dataset as a tensor directory")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--shape", type=_ints, default=[16, 16, 3])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("serve", help="serve a model over stdin/stdout frames")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="rerun a command from its manifest")
    p.add_argument("manifest_file")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"gse: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
