"""Depolarization filter: drop shots whose Hamming neighborhood is sparse.

For each distinct observed string x the support count
``f(x) = count(x) + sum of counts of observed strings at Hamming distance 1``
is compared against a threshold T. Under pure uniform noise the expected
support is lam*(n+1) with lam = S/2**n, so shots with f(x) < T are treated
as depolarization noise and removed.

Neighbor counting enumerates the n single-bit toggles of each distinct
string and looks them up in the count table: O(U*n) lookups, never O(2**n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .errors import AllFilteredError
from .shotdata import ShotDataset

__all__ = ["FilterConfig", "FilterReport", "support_counts", "compute_threshold", "filter_dataset"]


@dataclass(frozen=True)
class FilterConfig:
    """Threshold tuning: T = max(t_floor, eta * lam * (n+1)).

    The multiplier placement is a calibration choice; eta scales the
    expected uniform support and t_floor keeps a minimal absolute bar.
    """

    eta: float = 1.5
    t_floor: int = 2

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.t_floor < 1:
            raise ValueError(f"t_floor must be >= 1, got {self.t_floor}")


@dataclass(frozen=True)
class FilterReport:
    """Outcome of one filtering pass.

    ``lam`` is the expected uniform frequency S/2**n; ``support_counts``
    maps each distinct observed BitString to its f(x).
    """

    kept: ShotDataset
    removed_count: int
    threshold_used: float
    lam: float
    support_counts: dict


def support_counts(dataset: ShotDataset) -> dict:
    """f(x) per distinct observed string: own count plus 1-Hamming neighbors.

    Only observed strings contribute (unobserved neighbors count 0).
    """
    by_value = {bs.value: c for bs, c in dataset.counts.items()}
    n = dataset.n
    masks = [1 << j for j in range(n)]
    get = by_value.get
    out = {}
    for bs, c in dataset.counts.items():
        v = bs.value
        f = c
        for m in masks:
            f += get(v ^ m, 0)
        out[bs] = f
    return out


def compute_threshold(s: int, n: int, config: FilterConfig) -> float:
    """T = max(t_floor, eta * (S/2**n) * (n+1))."""
    if s < 1 or n < 1:
        raise ValueError(f"need s >= 1 and n >= 1, got s={s}, n={n}")
    lam = math.ldexp(s, -n)
    return max(float(config.t_floor), config.eta * lam * (n + 1))


def filter_dataset(
    dataset: ShotDataset,
    config: Optional[FilterConfig] = None,
    threshold: Optional[float] = None,
) -> FilterReport:
    """Keep exactly the shots whose string has support f(x) >= T.

    Shot order and multiplicity are preserved. Pass ``threshold`` to reuse
    an absolute T (e.g. a previous report's threshold_used): re-deriving T
    from the smaller filtered S would silently shift the criterion.
    """
    config = config or FilterConfig()
    lam = math.ldexp(dataset.s, -dataset.n)
    t = compute_threshold(dataset.s, dataset.n, config) if threshold is None else float(threshold)
    support = support_counts(dataset)
    kept_shots = [s for s in dataset.shots if support[s] >= t]
    if not kept_shots:
        raise AllFilteredError(
            f"threshold {t:g} removed all {dataset.s} shots; lower eta "
            f"(currently {config.eta:g}) or pass an explicit --threshold"
        )
    kept = ShotDataset(kept_shots)
    return FilterReport(
        kept=kept,
        removed_count=dataset.s - kept.s,
        threshold_used=t,
        lam=lam,
        support_counts=support,
    )
