"""Experiment sweep driver: grids over (n, K, S, noise), repeated seeds,
shot-subsampling curves, and aggregate tables.

Determinism contract: every (cell, repeat) derives its RNG seeds from
``SeedSequence([master_seed, noise_index, n, K, S, repeat])``, so adding
grid points never perturbs existing cells and re-running a sweep with the
same config reproduces the row files byte for byte. Wall-clock timings are
therefore kept out of rows.csv and summary.json and written to a separate
timings.csv.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .depfilter import FilterConfig, FilterReport, filter_dataset
from .emcore import EmConfig, EmReport, run_em
from .errors import AllFilteredError, ParseError
from .metrics import ber, hellinger_fidelity, model_to_distribution
from .shotdata import ShotDataset
from .synth import (
    GroundTruth,
    NoiseSpec,
    generate_shots,
    sample_flip_probabilities,
    sample_ground_truth,
)

__all__ = [
    "NoiseGrid",
    "SweepConfig",
    "SweepRow",
    "PipelineResult",
    "run_pipeline",
    "run_sweep",
    "aggregate",
    "load_sweep_config",
    "write_rows_csv",
    "write_summary_json",
]

log = logging.getLogger("qem_mix.harness")

ROW_FIELDS = [
    "n", "k_true", "s_full", "s_used", "p", "eps_low", "eps_high", "repeat",
    "k_hat", "ber", "k_error_flag", "hellinger", "filter_kept_fraction",
    "filter_fallback", "iterations", "status",
]
TIMING_FIELDS = ["n", "k_true", "s_full", "s_used", "p", "repeat", "runtime_ms"]


@dataclass(frozen=True)
class NoiseGrid:
    """One synthetic noise setting: depolarized fraction p and the interval
    the per-bit flip probabilities are drawn from."""

    p: float
    eps_low: float = 0.05
    eps_high: float = 0.15


@dataclass(frozen=True)
class SweepConfig:
    n_values: tuple
    k_values: tuple
    s_values: tuple
    noise: tuple
    repeats: int = 20
    subsample_points: Optional[tuple] = None
    master_seed: int = 0
    filter: FilterConfig = field(default_factory=FilterConfig)
    em: EmConfig = field(default_factory=EmConfig)

    def __post_init__(self):
        object.__setattr__(self, "n_values", tuple(self.n_values))
        object.__setattr__(self, "k_values", tuple(self.k_values))
        object.__setattr__(self, "s_values", tuple(self.s_values))
        object.__setattr__(self, "noise", tuple(self.noise))
        if self.subsample_points is not None:
            object.__setattr__(
                self, "subsample_points", tuple(sorted(self.subsample_points))
            )
        if not (self.n_values and self.k_values and self.s_values and self.noise):
            raise ValueError("grid axes must all be non-empty")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.subsample_points:
            if min(self.subsample_points) < 1:
                raise ValueError("subsample points must be >= 1")
            if max(self.subsample_points) > max(self.s_values):
                raise ValueError("subsample points must not exceed the largest S")


@dataclass(frozen=True)
class SweepRow:
    """One pipeline run: a (cell, repeat, subsample point) combination."""

    n: int
    k_true: int
    s_full: int
    s_used: int
    p: float
    eps_low: float
    eps_high: float
    repeat: int
    k_hat: Optional[int]
    ber: Optional[float]
    k_error_flag: Optional[bool]
    hellinger: Optional[float]
    filter_kept_fraction: Optional[float]
    filter_fallback: bool
    iterations: Optional[int]
    runtime_ms: float
    status: str


@dataclass(frozen=True)
class PipelineResult:
    report: EmReport
    filter_report: Optional[FilterReport]
    filter_fallback: bool


def run_pipeline(
    dataset: ShotDataset,
    filter_config: Optional[FilterConfig] = None,
    em_config: Optional[EmConfig] = None,
    skip_filter: bool = False,
    threshold: Optional[float] = None,
) -> PipelineResult:
    """Depolarization filter followed by the EM sweep.

    If the filter would remove every shot (its threshold floor exceeds all
    support counts, as happens for wide registers where every observed
    string is unique) the pipeline falls back to running EM on the
    unfiltered dataset, which is the sensible degradation: the filter is a
    pre-processing heuristic, not a correctness requirement. ``threshold``
    overrides the derived filter threshold with an absolute value.
    """
    filter_report = None
    fallback = False
    working = dataset
    if not skip_filter:
        try:
            filter_report = filter_dataset(dataset, filter_config, threshold=threshold)
            working = filter_report.kept
        except AllFilteredError:
            fallback = True
            log.warning(
                "filter would remove all %d shots; running EM unfiltered",
                dataset.s,
            )
    report = run_em(working, em_config)
    return PipelineResult(report, filter_report, fallback)


def _cell_seeds(config: SweepConfig, noise_idx: int, n: int, k: int, s: int, repeat: int):
    ss = np.random.SeedSequence(
        [config.master_seed, noise_idx, n, k, s, repeat]
    )
    truth_seed, eps_seed, shots_seed, em_seed = (int(v) for v in ss.generate_state(4))
    return truth_seed, eps_seed, shots_seed, em_seed


def _subsample_seed(config: SweepConfig, noise_idx, n, k, s, repeat, point_idx) -> int:
    ss = np.random.SeedSequence(
        [config.master_seed, noise_idx, n, k, s, repeat, 1 + point_idx]
    )
    return int(ss.generate_state(1)[0])


def _evaluate_run(truth: GroundTruth, result: PipelineResult):
    model = result.report.best
    res = ber(list(truth.solutions), list(model.x), truth.n)
    hf = hellinger_fidelity(
        model_to_distribution(model),
        {s.text: float(w) for s, w in zip(truth.solutions, truth.weights) if w > 0},
    )
    return res, hf


def _run_repeat(task) -> list:
    """All rows for one (noise, n, K, S, repeat): the full dataset plus any
    subsample points. Failures land in the row's status, never raise."""
    config, noise_idx, n, k, s, repeat = task
    noise_grid = config.noise[noise_idx]
    truth_seed, eps_seed, shots_seed, em_seed = _cell_seeds(
        config, noise_idx, n, k, s, repeat
    )
    em_config = replace(config.em, seed=em_seed)

    rows = []
    base = dict(
        n=n, k_true=k, s_full=s, p=noise_grid.p,
        eps_low=noise_grid.eps_low, eps_high=noise_grid.eps_high, repeat=repeat,
    )

    try:
        truth = sample_ground_truth(n, k, truth_seed)
        eps = sample_flip_probabilities(
            n, eps_seed, noise_grid.eps_low, noise_grid.eps_high
        )
        noise = NoiseSpec(p=noise_grid.p, eps=eps)
        full = generate_shots(truth, noise, s, shots_seed)
    except Exception as exc:  # noqa: BLE001 - recorded, sweep must go on
        points = config.subsample_points or (s,)
        return [
            SweepRow(
                **base, s_used=point, k_hat=None, ber=None, k_error_flag=None,
                hellinger=None, filter_kept_fraction=None, filter_fallback=False,
                iterations=None, runtime_ms=0.0, status=f"generate: {exc}",
            )
            for point in points if point <= s
        ]

    points = config.subsample_points or (s,)
    for point_idx, point in enumerate(points):
        if point > s:
            continue
        if point == s:
            dataset = full
        else:
            sub_rng = np.random.default_rng(
                _subsample_seed(config, noise_idx, n, k, s, repeat, point_idx)
            )
            idx = np.sort(sub_rng.choice(s, size=point, replace=False))
            dataset = full.subset(idx)

        start = time.perf_counter()
        try:
            result = run_pipeline(dataset, config.filter, em_config)
            eval_res, hf = _evaluate_run(truth, result)
            runtime_ms = (time.perf_counter() - start) * 1000.0
            kept_fraction = (
                result.filter_report.kept.s / dataset.s
                if result.filter_report is not None
                else 1.0
            )
            rows.append(SweepRow(
                **base, s_used=point,
                k_hat=result.report.k_hat,
                ber=eval_res.ber,
                k_error_flag=not eval_res.k_correct,
                hellinger=hf,
                filter_kept_fraction=kept_fraction,
                filter_fallback=result.filter_fallback,
                iterations=result.report.iterations_total,
                runtime_ms=runtime_ms,
                status="ok",
            ))
        except Exception as exc:  # noqa: BLE001
            runtime_ms = (time.perf_counter() - start) * 1000.0
            rows.append(SweepRow(
                **base, s_used=point, k_hat=None, ber=None, k_error_flag=None,
                hellinger=None, filter_kept_fraction=None, filter_fallback=False,
                iterations=None, runtime_ms=runtime_ms, status=f"{type(exc).__name__}: {exc}",
            ))
    return rows


def _tasks(config: SweepConfig):
    for noise_idx in range(len(config.noise)):
        for n in config.n_values:
            for k in config.k_values:
                for s in config.s_values:
                    for repeat in range(config.repeats):
                        yield (config, noise_idx, n, k, s, repeat)


def run_sweep(config: SweepConfig, jobs: int = 1, out_dir=None) -> list:
    """Run every cell of the grid; returns all rows in deterministic order.

    With out_dir set, rows.csv / timings.csv are streamed as tasks finish
    and summary.json is written at the end. jobs > 1 runs cells in worker
    processes; per-cell seeding makes the output independent of the worker
    count.
    """
    tasks = list(_tasks(config))
    points = len(config.subsample_points) if config.subsample_points else 1
    log.info("sweep: %d tasks x %d shot counts, jobs=%d", len(tasks), points, jobs)

    writers = _RowWriters(out_dir) if out_dir is not None else None
    rows: list = []
    try:
        if jobs <= 1:
            results = map(_run_repeat, tasks)
            for chunk in results:
                rows.extend(chunk)
                if writers:
                    writers.write(chunk)
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                for chunk in pool.map(_run_repeat, tasks, chunksize=1):
                    rows.extend(chunk)
                    if writers:
                        writers.write(chunk)
    finally:
        if writers:
            writers.close()
    if out_dir is not None:
        write_summary_json(aggregate(rows), Path(out_dir) / "summary.json")
    return rows


class _RowWriters:
    """Streams rows.csv (deterministic columns) and timings.csv."""

    def __init__(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self._rows_fh = open(out / "rows.csv", "w", newline="", encoding="utf-8")
        self._timing_fh = open(out / "timings.csv", "w", newline="", encoding="utf-8")
        self._rows = csv.writer(self._rows_fh)
        self._timings = csv.writer(self._timing_fh)
        self._rows.writerow(ROW_FIELDS)
        self._timings.writerow(TIMING_FIELDS)

    def write(self, chunk):
        for row in chunk:
            self._rows.writerow(_csv_record(row))
            self._timings.writerow([
                row.n, row.k_true, row.s_full, row.s_used, row.p, row.repeat,
                f"{row.runtime_ms:.3f}",
            ])

    def close(self):
        self._rows_fh.close()
        self._timing_fh.close()


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return int(value)
    return value


def _csv_record(row: SweepRow) -> list:
    return [_csv_cell(getattr(row, name)) for name in ROW_FIELDS]


def write_rows_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROW_FIELDS)
        for row in rows:
            writer.writerow(_csv_record(row))


def aggregate(rows: Sequence[SweepRow]) -> list:
    """Per-cell summary: P_Kerror over completed runs, mean BER over the
    runs with correctly estimated K, mean runtime. Cells are ordered by
    their key for deterministic output."""
    if not rows:
        raise ValueError("nothing to aggregate")
    cells: dict = {}
    for row in rows:
        key = (row.n, row.k_true, row.s_used, row.p, row.eps_low, row.eps_high)
        cells.setdefault(key, []).append(row)

    table = []
    for key in sorted(cells):
        group = cells[key]
        ok = [r for r in group if r.status == "ok"]
        correct = [r for r in ok if not r.k_error_flag]
        entry = {
            "n": key[0], "k_true": key[1], "s_used": key[2], "p": key[3],
            "eps_low": key[4], "eps_high": key[5],
            "runs": len(group),
            "failed": len(group) - len(ok),
            "p_k_error": (
                sum(1 for r in ok if r.k_error_flag) / len(ok) if ok else None
            ),
            "ber_mean_correct_k": (
                sum(r.ber for r in correct) / len(correct) if correct else None
            ),
            "hellinger_mean_correct_k": (
                sum(r.hellinger for r in correct) / len(correct) if correct else None
            ),
            "mean_kept_fraction": (
                sum(r.filter_kept_fraction for r in ok) / len(ok) if ok else None
            ),
            "mean_runtime_ms": (
                sum(r.runtime_ms for r in group) / len(group)
            ),
        }
        table.append(entry)
    return table


def write_summary_json(table: list, path) -> None:
    """Summary without timing fields, so re-runs are byte-identical."""
    cleaned = [
        {k: v for k, v in entry.items() if not k.endswith("_ms")}
        for entry in table
    ]
    overall_rows = [e for e in cleaned if e["p_k_error"] is not None]
    doc = {
        "cells": cleaned,
        "overall_p_k_error": (
            sum(e["p_k_error"] * (e["runs"] - e["failed"]) for e in overall_rows)
            / sum(e["runs"] - e["failed"] for e in overall_rows)
            if overall_rows else None
        ),
    }
    Path(path).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_sweep_config(path) -> SweepConfig:
    """Read a sweep description from JSON."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: expected a JSON object")
    try:
        noise = tuple(
            NoiseGrid(
                p=float(entry["p"]),
                eps_low=float(entry.get("eps_low", 0.05)),
                eps_high=float(entry.get("eps_high", 0.15)),
            )
            for entry in doc["noise"]
        )
        config = SweepConfig(
            n_values=tuple(int(v) for v in doc["n_values"]),
            k_values=tuple(int(v) for v in doc["k_values"]),
            s_values=tuple(int(v) for v in doc["s_values"]),
            noise=noise,
            repeats=int(doc.get("repeats", 20)),
            subsample_points=(
                tuple(int(v) for v in doc["subsample_points"])
                if doc.get("subsample_points") else None
            ),
            master_seed=int(doc.get("master_seed", 0)),
            filter=FilterConfig(**doc.get("filter", {})),
            em=EmConfig(**doc.get("em", {})),
        )
    except KeyError as exc:
        raise ParseError(f"{path}: missing field {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return config
