"""Bit-string and shot-dataset types plus text/counts file I/O.

Conventions used throughout the package:

* A bit-string of n bits is written most-significant-qubit first, i.e. the
  leftmost character of ``"1100"`` is bit j=1. Internally bits are packed
  into a single Python integer, so XOR and popcount run word-wise.
* A dataset is an ordered, immutable multiset of equal-length bit-strings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, EmptyDatasetError, ParseError

__all__ = [
    "BitString",
    "ShotDataset",
    "hamming_distance",
    "load_shots_text",
    "load_counts",
    "save_counts",
]


@dataclass(frozen=True)
class BitString:
    """Fixed-width binary vector, bit-packed into an int.

    ``value`` holds the bits with the leftmost (j=1) text character as the
    most significant bit, so lexicographic order on the text equals numeric
    order on ``value`` for fixed n.
    """

    n: int
    value: int

    def __post_init__(self):
        if self.n < 1:
            raise DimensionError(f"bit-string width must be >= 1, got {self.n}")
        if not 0 <= self.value < (1 << self.n):
            raise ValueError(f"value {self.value} does not fit in {self.n} bits")

    @classmethod
    def from_text(cls, text: str) -> "BitString":
        if not text or set(text) - {"0", "1"}:
            raise ParseError(f"not a binary string: {text!r}")
        return cls(len(text), int(text, 2))

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "BitString":
        value = 0
        for b in bits:
            if b not in (0, 1):
                raise ParseError(f"bit values must be 0 or 1, got {b!r}")
            value = (value << 1) | int(b)
        return cls(len(bits), value)

    @property
    def text(self) -> str:
        return format(self.value, f"0{self.n}b")

    def bit(self, j: int) -> int:
        """Bit at 1-indexed position j (leftmost = 1)."""
        return (self.value >> (self.n - j)) & 1

    def bits(self) -> np.ndarray:
        """Unpacked bits as a uint8 array of length n, index 0 = leftmost."""
        nbytes = (self.n + 7) // 8
        raw = np.frombuffer(self.value.to_bytes(nbytes, "big"), dtype=np.uint8)
        return np.unpackbits(raw)[8 * nbytes - self.n:]

    def __str__(self) -> str:
        return self.text


def hamming_distance(a: BitString, b: BitString) -> int:
    """Number of differing bit positions; XOR then popcount."""
    if a.n != b.n:
        raise DimensionError(f"length mismatch: {a.n} vs {b.n}")
    return (a.value ^ b.value).bit_count()


class ShotDataset:
    """Immutable ordered collection of S equal-length bit-strings.

    Derived views (count table, dense bit matrix) are computed lazily and
    cached; the object is safe to share across concurrent readers.
    """

    def __init__(self, shots: Iterable[BitString]):
        shots = tuple(shots)
        if not shots:
            raise EmptyDatasetError("a dataset must contain at least one shot")
        n = shots[0].n
        for i, s in enumerate(shots):
            if s.n != n:
                raise DimensionError(
                    f"shot {i} has {s.n} bits, expected {n}"
                )
        self._shots = shots
        self._n = n

    @property
    def n(self) -> int:
        return self._n

    @property
    def s(self) -> int:
        return len(self._shots)

    @property
    def shots(self) -> tuple:
        return self._shots

    @cached_property
    def counts(self) -> dict:
        """Occurrence count per distinct BitString, first-seen order."""
        table: dict = {}
        for s in self._shots:
            table[s] = table.get(s, 0) + 1
        return table

    @cached_property
    def bit_matrix(self) -> np.ndarray:
        """Dense S x n uint8 matrix of shot bits (read-only)."""
        nbytes = (self._n + 7) // 8
        buf = b"".join(s.value.to_bytes(nbytes, "big") for s in self._shots)
        raw = np.frombuffer(buf, dtype=np.uint8).reshape(self.s, nbytes)
        mat = np.unpackbits(raw, axis=1)[:, 8 * nbytes - self._n:]
        mat.flags.writeable = False
        return mat

    def distinct_sorted(self) -> tuple:
        """Distinct strings in lexicographic order with aligned counts.

        Returns (list of BitString, int64 count array); the canonical order
        used wherever determinism must not depend on shot order.
        """
        items = sorted(self.counts.items(), key=lambda kv: kv[0].value)
        strings = [bs for bs, _ in items]
        cnt = np.array([c for _, c in items], dtype=np.int64)
        return strings, cnt

    @classmethod
    def from_bit_matrix(cls, matrix: np.ndarray) -> "ShotDataset":
        """Build a dataset from an S x n {0,1} matrix."""
        matrix = np.asarray(matrix, dtype=np.uint8)
        if matrix.ndim != 2 or matrix.shape[1] < 1:
            raise DimensionError(f"expected an S x n matrix, got shape {matrix.shape}")
        s, n = matrix.shape
        nbytes = (n + 7) // 8
        padded = np.zeros((s, 8 * nbytes), dtype=np.uint8)
        padded[:, 8 * nbytes - n:] = matrix
        packed = np.packbits(padded, axis=1)
        shots = [
            BitString(n, int.from_bytes(row.tobytes(), "big")) for row in packed
        ]
        return cls(shots)

    def subset(self, indices: Sequence[int]) -> "ShotDataset":
        """New dataset containing the shots at the given positions, in order."""
        return ShotDataset(self._shots[i] for i in indices)

    def __eq__(self, other) -> bool:
        return isinstance(other, ShotDataset) and self._shots == other._shots

    def __hash__(self):
        return hash(self._shots)

    def __repr__(self) -> str:
        return f"ShotDataset(n={self._n}, s={self.s}, distinct={len(self.counts)})"


def load_shots_text(path) -> ShotDataset:
    """Read a dataset from a text file, one bit-string per line.

    Blank lines are ignored; n is inferred from the first shot. Raises
    ParseError / DimensionError with a 1-based line number on bad content.
    """
    shots = []
    n = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            if set(text) - {"0", "1"}:
                raise ParseError(f"{path}:{lineno}: not a binary string: {text!r}")
            if n is None:
                n = len(text)
            elif len(text) != n:
                raise DimensionError(
                    f"{path}:{lineno}: expected {n} bits, got {len(text)}"
                )
            shots.append(BitString(len(text), int(text, 2)))
    if not shots:
        raise EmptyDatasetError(f"{path}: no shots found")
    return ShotDataset(shots)


def load_counts(path) -> ShotDataset:
    """Read a dataset from a JSON count table {bitstring: count}.

    Keys are expanded in lexicographic order so the resulting shot order is
    deterministic regardless of the file's key order.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            table = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(table, dict):
        raise ParseError(f"{path}: expected a JSON object of counts")
    if not table:
        raise EmptyDatasetError(f"{path}: empty count table")
    n = None
    shots = []
    for key in sorted(table):
        count = table[key]
        if not isinstance(key, str) or not key or set(key) - {"0", "1"}:
            raise ParseError(f"{path}: bad bit-string key {key!r}")
        if isinstance(count, bool) or not isinstance(count, int) or count < 1:
            raise ParseError(f"{path}: count for {key!r} must be a positive integer")
        if n is None:
            n = len(key)
        elif len(key) != n:
            raise DimensionError(f"{path}: key {key!r} has {len(key)} bits, expected {n}")
        shots.extend([BitString(len(key), int(key, 2))] * count)
    return ShotDataset(shots)


def save_counts(dataset: ShotDataset, path) -> None:
    """Write a dataset's count table as JSON, keys sorted lexicographically."""
    table = {bs.text: c for bs, c in dataset.counts.items()}
    text = json.dumps(table, sort_keys=True, separators=(",", ":"))
    Path(path).write_text(text + "\n", encoding="utf-8")
