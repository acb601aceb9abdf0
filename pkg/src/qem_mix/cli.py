"""qem-mix command line: generate | filter | mitigate | evaluate | sweep.

Exit codes: 0 success, 1 usage error, 2 data/parse error, 3 numerical or
degenerate-model error. Diagnostics go to stderr; data goes to files or
stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .depfilter import FilterConfig, filter_dataset
from .emcore import EmConfig, load_model, save_model
from .errors import (
    AllFilteredError,
    DegenerateModelError,
    DimensionError,
    EmptyDatasetError,
    InfeasibleError,
    InvalidModelError,
    NormalizationError,
    ParseError,
)
from .harness import load_sweep_config, run_pipeline, run_sweep
from .metrics import ber, hellinger_fidelity, model_to_distribution
from .shotdata import ShotDataset, load_counts, load_shots_text, save_counts
from .synth import (
    NoiseSpec,
    generate_shots,
    load_ground_truth,
    sample_flip_probabilities,
    sample_ground_truth,
    save_ground_truth,
)

log = logging.getLogger("qem_mix")

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="qem-mix",
        description="Recover likely noiseless circuit outputs from noisy shots.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"qem-mix {__version__}")
    parser.add_argument(
        "--log-level", choices=sorted(_LOG_LEVELS), dest="log_level",
        default=os.environ.get("QEM_LOG_LEVEL", "info"),
        help="diagnostic verbosity (env: QEM_LOG_LEVEL)",
    )
    parser.add_argument("--quiet", action="store_true", help="suppress non-error output")
    parser.add_argument(
        "--seed", type=int, default=None, dest="master_seed",
        help="master seed; drawn from OS entropy and printed when unset",
    )
    sub = parser.add_subparsers(dest="command", metavar="<command>")

    p = sub.add_parser(
        "generate", help="sample a synthetic noisy dataset plus ground-truth sidecar",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("--n", type=int, required=True, help="qubit count")
    p.add_argument("--k", type=int, required=True, help="number of true solutions")
    p.add_argument("--s", type=int, required=True, help="shot count")
    p.add_argument("--p", type=float, default=0.9, help="depolarized fraction")
    p.add_argument("--eps-low", type=float, default=0.05, help="flip probability lower bound")
    p.add_argument("--eps-high", type=float, default=0.15, help="flip probability upper bound")
    p.add_argument("--seed", type=int, default=None, help="seed for this run")
    p.add_argument("--depth-label", default=None, help="free-form metadata, no model effect")
    p.add_argument("--out", required=True, help="output counts JSON path")
    p.add_argument("--truth-out", default=None,
                   help="ground-truth sidecar path (default: <out>.truth.json)")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser(
        "filter", help="remove shots consistent with uniform depolarizing noise",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("input", help="dataset path (counts JSON or shots text)")
    p.add_argument("--out", default=None, help="write kept shots as counts JSON")
    p.add_argument("--eta", type=float, default=1.5, help="threshold multiplier")
    p.add_argument("--t-floor", type=int, default=2, help="minimum absolute threshold")
    p.add_argument("--threshold", type=float, default=None,
                   help="absolute threshold override (skips the eta formula)")
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser(
        "mitigate", help="filter then run the EM sweep; writes a model file",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("input", help="dataset path (counts JSON or shots text)")
    p.add_argument("--model-out", default=None,
                   help="model JSON path (default: <input>.model.json)")
    p.add_argument("--eta", type=float, default=1.5, help="filter threshold multiplier")
    p.add_argument("--t-floor", type=int, default=2, help="filter minimum threshold")
    p.add_argument("--threshold", type=float, default=None, help="absolute filter threshold")
    p.add_argument("--skip-filter", action="store_true", help="run EM on the raw dataset")
    p.add_argument("--k-min", type=int, default=1, help="smallest component count to try")
    p.add_argument("--k-max", type=int, default=16, help="starting component count")
    p.add_argument("--delta", type=float, default=1e-5, help="relative convergence threshold")
    p.add_argument("--max-iters", type=int, default=500, help="iteration cap per K level")
    p.add_argument("--eps-init", type=float, default=0.25, help="initial flip probability")
    p.add_argument("--no-mml", action="store_true",
                   help="plain EM mode: no coding penalty, no annihilation")
    p.add_argument("--seed", type=int, default=None, help="seed for this run")
    p.set_defaults(func=_cmd_mitigate)

    p = sub.add_parser(
        "evaluate", help="score a model file against a ground-truth sidecar",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("--model", required=True, help="model JSON from mitigate")
    p.add_argument("--truth", required=True, help="ground-truth sidecar from generate")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser(
        "sweep", help="run a parameter-grid experiment from a JSON config",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("--config", required=True, help="sweep config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=_cmd_sweep)

    return parser


def _effective_seed(args, sub_seed) -> int:
    if sub_seed is not None:
        return sub_seed
    if args.master_seed is not None:
        return args.master_seed
    seed = int.from_bytes(os.urandom(4), "little")
    log.info("no seed given; using OS entropy seed %d", seed)
    return seed


def _load_dataset(path) -> ShotDataset:
    """Counts JSON if the file starts with '{', shots text otherwise."""
    with open(path, "r", encoding="utf-8") as fh:
        head = fh.read(1)
    if head == "{":
        return load_counts(path)
    return load_shots_text(path)


def _cmd_generate(args) -> int:
    seed = _effective_seed(args, args.seed)
    log.info("generate: n=%d k=%d s=%d p=%g eps=[%g,%g] seed=%d",
             args.n, args.k, args.s, args.p, args.eps_low, args.eps_high, seed)
    truth_seed, eps_seed, shots_seed = (
        int(v) for v in np.random.SeedSequence(seed).generate_state(3)
    )
    truth = sample_ground_truth(args.n, args.k, truth_seed)
    eps = sample_flip_probabilities(args.n, eps_seed, args.eps_low, args.eps_high)
    noise = NoiseSpec(p=args.p, eps=eps, depth_label=args.depth_label)
    dataset = generate_shots(truth, noise, args.s, shots_seed)
    save_counts(dataset, args.out)
    truth_out = args.truth_out or f"{args.out}.truth.json"
    save_ground_truth(truth, noise, truth_out, seed=seed)
    log.info("wrote %s (%d shots, %d distinct) and %s",
             args.out, dataset.s, len(dataset.counts), truth_out)
    return 0


def _cmd_filter(args) -> int:
    dataset = _load_dataset(args.input)
    config = FilterConfig(eta=args.eta, t_floor=args.t_floor)
    report = filter_dataset(dataset, config, threshold=args.threshold)
    if args.out:
        save_counts(report.kept, args.out)
        log.info("wrote %s", args.out)
    print(
        f"filter: S_in={dataset.s} S_out={report.kept.s} "
        f"T={report.threshold_used:g} lambda={report.lam:g} "
        f"removed={report.removed_count}"
    )
    print(json.dumps({
        "s_in": dataset.s,
        "s_out": report.kept.s,
        "threshold": report.threshold_used,
        "lambda": report.lam,
        "removed": report.removed_count,
    }, sort_keys=True))
    return 0


def _cmd_mitigate(args) -> int:
    seed = _effective_seed(args, args.seed)
    dataset = _load_dataset(args.input)
    log.info("mitigate: %s (S=%d, n=%d), seed=%d",
             args.input, dataset.s, dataset.n, seed)
    filter_config = FilterConfig(eta=args.eta, t_floor=args.t_floor)
    em_config = EmConfig(
        k_min=args.k_min, k_max=args.k_max, delta=args.delta,
        max_iters=args.max_iters, seed=seed, eps_init=args.eps_init,
        mml_enabled=not args.no_mml,
    )
    result = run_pipeline(
        dataset, filter_config, em_config,
        skip_filter=args.skip_filter, threshold=args.threshold,
    )
    em_report, filter_report, fallback = (
        result.report, result.filter_report, result.filter_fallback
    )

    model_out = args.model_out or f"{args.input}.model.json"
    meta = {
        "input": str(args.input),
        "seed": seed,
        "skip_filter": bool(args.skip_filter),
        "filter_fallback": fallback,
        "filter_kept": filter_report.kept.s if filter_report else None,
        "filter_threshold": filter_report.threshold_used if filter_report else None,
        "mml_enabled": not args.no_mml,
        "k_min": args.k_min,
        "k_max": args.k_max,
        "delta": args.delta,
        "max_iters": args.max_iters,
        "eps_init": args.eps_init,
    }
    save_model(em_report, model_out, meta=meta)
    log.info(
        "k_hat=%d objective=%.6f iterations=%d -> %s",
        em_report.k_hat, em_report.best_objective,
        em_report.iterations_total, model_out,
    )
    for x, a in zip(em_report.best.x, em_report.best.alpha):
        log.info("  %s  alpha=%.4f", x.text, a)
    return 0


def _cmd_evaluate(args) -> int:
    model, _doc = load_model(args.model)
    truth, _noise = load_ground_truth(args.truth)
    live = [x for x, a in zip(model.x, model.alpha) if a > 0]
    result = ber(list(truth.solutions), live, truth.n)
    hf = hellinger_fidelity(
        model_to_distribution(model),
        {s.text: float(w) for s, w in zip(truth.solutions, truth.weights) if w > 0},
    )
    log.info(
        "BER=%.6f k_true=%d k_hat=%d k_correct=%s hellinger=%.6f",
        result.ber, result.k_true, result.k_hat, result.k_correct, hf,
    )
    print(json.dumps({
        "ber": result.ber,
        "k_true": result.k_true,
        "k_hat": result.k_hat,
        "k_correct": result.k_correct,
        "matching": [list(m) for m in result.matching],
        "hellinger": hf,
    }, sort_keys=True))
    return 0


def _cmd_sweep(args) -> int:
    config = load_sweep_config(args.config)
    if args.master_seed is not None:
        from dataclasses import replace
        config = replace(config, master_seed=args.master_seed)
    log.info("sweep: config=%s out=%s jobs=%d master_seed=%d",
             args.config, args.out, args.jobs, config.master_seed)
    rows = run_sweep(config, jobs=max(1, args.jobs), out_dir=args.out)
    failed = sum(1 for r in rows if r.status != "ok")
    log.info("sweep complete: %d rows (%d failed) -> %s", len(rows), failed, args.out)
    return 0


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)

    if args.command is None:
        parser.print_help(sys.stderr)
        return 1

    level = logging.ERROR if args.quiet else _LOG_LEVELS.get(args.log_level, logging.INFO)
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )
    log.setLevel(level)

    try:
        return int(args.func(args) or 0)
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, EmptyDatasetError, DimensionError, NormalizationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (AllFilteredError, DegenerateModelError, InvalidModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
