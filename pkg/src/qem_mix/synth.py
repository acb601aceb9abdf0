"""Synthetic shot generation under depolarizing plus per-bit flip noise.

Each shot is independently replaced by a uniform random bit-string with
probability p (the measurement-level effect of depolarization); otherwise a
mixture component is drawn and each of its bits is flipped independently
with probability eps_j. Flips are applied only to non-depolarized shots:
a uniform string XORed with independent flips is still uniform, so the
output distribution is unchanged and the oracle stays simple.

All randomness comes from numpy's PCG64 generator, so a fixed seed gives a
bit-identical dataset on any platform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DimensionError, InfeasibleError, ParseError
from .shotdata import BitString, ShotDataset

__all__ = [
    "NoiseSpec",
    "GroundTruth",
    "sample_ground_truth",
    "sample_flip_probabilities",
    "generate_shots",
    "save_ground_truth",
    "load_ground_truth",
]


@dataclass(frozen=True)
class NoiseSpec:
    """Depolarizing probability p and per-bit flip probabilities eps.

    depth_label is free-form run metadata with no effect on the model.
    """

    p: float
    eps: np.ndarray
    depth_label: Optional[str] = None

    def __post_init__(self):
        eps = np.asarray(self.eps, dtype=np.float64)
        object.__setattr__(self, "eps", eps)
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"depolarizing probability must be in [0,1], got {self.p}")
        if eps.ndim != 1 or eps.size < 1:
            raise DimensionError("eps must be a 1-D vector with one entry per bit")
        if np.any(eps < 0.0) or np.any(eps >= 0.5):
            raise ValueError("flip probabilities must satisfy 0 <= eps_j < 0.5")

    @property
    def n(self) -> int:
        return self.eps.size


@dataclass(frozen=True)
class GroundTruth:
    """The K true solution strings and their mixing weights."""

    solutions: tuple
    weights: np.ndarray

    def __post_init__(self):
        sols = tuple(self.solutions)
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "solutions", sols)
        object.__setattr__(self, "weights", w)
        if not sols:
            raise ValueError("ground truth needs at least one solution")
        n = sols[0].n
        if any(s.n != n for s in sols):
            raise DimensionError("solutions must all have the same width")
        if len(set(s.value for s in sols)) != len(sols):
            raise ValueError("solutions must be pairwise distinct")
        if w.shape != (len(sols),):
            raise DimensionError("one weight per solution required")
        if np.any(w < 0.0) or abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")

    @property
    def n(self) -> int:
        return self.solutions[0].n

    @property
    def k(self) -> int:
        return len(self.solutions)


def sample_ground_truth(n: int, k: int, rng_seed: int) -> GroundTruth:
    """Draw K distinct uniform-random n-bit strings with equal weights."""
    if n < 1:
        raise DimensionError(f"need n >= 1, got {n}")
    if k < 1 or k > (1 << n):
        raise InfeasibleError(f"cannot pick {k} distinct strings of {n} bits")
    rng = np.random.default_rng(rng_seed)
    if n <= 16:
        # Small spaces: permute the whole space, avoids slow rejection when
        # k is close to 2**n.
        values = [int(v) for v in rng.permutation(1 << n)[:k]]
    else:
        chosen: dict = {}
        while len(chosen) < k:
            batch = rng.integers(0, 2, size=(k, n), dtype=np.uint8)
            for row in batch:
                v = int.from_bytes(np.packbits(row, bitorder="big").tobytes(), "big")
                v >>= (-n) % 8
                if v not in chosen:
                    chosen[v] = None
                if len(chosen) == k:
                    break
        values = list(chosen)
    solutions = tuple(BitString(n, v) for v in values)
    weights = np.full(k, 1.0 / k)
    return GroundTruth(solutions, weights)


def sample_flip_probabilities(
    n: int, rng_seed: int, low: float = 0.05, high: float = 0.15
) -> np.ndarray:
    """Per-bit flip probabilities drawn independently uniform on [low, high]."""
    if not 0.0 <= low <= high < 0.5:
        raise ValueError(f"need 0 <= low <= high < 0.5, got [{low}, {high}]")
    rng = np.random.default_rng(rng_seed)
    return rng.uniform(low, high, size=n)


def generate_shots(
    truth: GroundTruth, noise: NoiseSpec, s: int, rng_seed: int
) -> ShotDataset:
    """Sample S noisy shots from the mixture under the given noise."""
    if s < 1:
        raise ValueError(f"need at least one shot, got {s}")
    n = truth.n
    if noise.n != n:
        raise DimensionError(f"noise has {noise.n} eps entries, truth has n={n}")
    rng = np.random.default_rng(rng_seed)

    depolarized = rng.random(s) < noise.p
    # Component index drawn for every shot (discarded for depolarized ones)
    # to keep the stream layout independent of the depolarization draw.
    cum = np.cumsum(truth.weights)
    cum[-1] = 1.0
    comp = np.searchsorted(cum, rng.random(s), side="right")

    bits = np.empty((s, n), dtype=np.uint8)
    n_dep = int(depolarized.sum())
    if n_dep:
        bits[depolarized] = rng.integers(0, 2, size=(n_dep, n), dtype=np.uint8)
    n_clean = s - n_dep
    if n_clean:
        centers = np.stack([sol.bits() for sol in truth.solutions])
        flips = (rng.random((n_clean, n)) < noise.eps).astype(np.uint8)
        bits[~depolarized] = centers[comp[~depolarized]] ^ flips
    return ShotDataset.from_bit_matrix(bits)


def save_ground_truth(truth: GroundTruth, noise: NoiseSpec, path, seed=None) -> None:
    """Write the ground-truth sidecar (solutions, weights, noise) as JSON."""
    doc = {
        "n": truth.n,
        "k": truth.k,
        "solutions": [s.text for s in truth.solutions],
        "weights": [float(w) for w in truth.weights],
        "p": float(noise.p),
        "eps": [float(e) for e in noise.eps],
        "depth_label": noise.depth_label,
        "seed": seed,
    }
    Path(path).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_ground_truth(path):
    """Read a ground-truth sidecar; returns (GroundTruth, NoiseSpec)."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    try:
        truth = GroundTruth(
            tuple(BitString.from_text(t) for t in doc["solutions"]),
            np.asarray(doc["weights"], dtype=np.float64),
        )
        noise = NoiseSpec(
            p=float(doc["p"]),
            eps=np.asarray(doc["eps"], dtype=np.float64),
            depth_label=doc.get("depth_label"),
        )
    except KeyError as exc:
        raise ParseError(f"{path}: missing field {exc}") from exc
    return truth, noise
