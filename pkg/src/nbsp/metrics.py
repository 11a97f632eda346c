"""Continual-learning metrics over a lower-triangular evaluation matrix.

``sr[i, j]`` (0-based here) is the performance on segment ``j``'s task
measured right after training segment ``i``; only ``j <= i`` is defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from nbsp.errors import ConfigError


class SrMatrix:
    """Write-once lower-triangular matrix of per-segment evaluations."""

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("an sr matrix needs at least one segment")
        self.k = k
        self.values = np.full((k, k), np.nan)

    def set(self, i: int, j: int, value: float) -> None:
        if not 0 <= j <= i < self.k:
            raise IndexError(f"sr[{i}][{j}] is outside the lower triangle of a {self.k}-segment matrix")
        if not np.isnan(self.values[i, j]):
            raise ValueError(f"sr[{i}][{j}] was already written")
        self.values[i, j] = float(value)

    def __getitem__(self, ij):
        return self.values[ij]

    def is_complete(self) -> bool:
        return bool(np.isfinite(self.values[np.tril_indices(self.k)]).all())

    @classmethod
    def from_array(cls, array) -> "SrMatrix":
        a = np.asarray(array, dtype=np.float64)
        sr = cls(a.shape[0])
        rows, cols = np.tril_indices(sr.k)
        sr.values[rows, cols] = a[rows, cols]
        return sr

    @classmethod
    def from_rows(cls, rows) -> "SrMatrix":
        """Build from ``(i, j, value)`` triples with 1-based indices."""
        rows = list(rows)
        if not rows:
            raise ValueError("no sr entries")
        k = max(int(i) for i, _, _ in rows)
        sr = cls(k)
        for i, j, v in rows:
            sr.set(int(i) - 1, int(j) - 1, float(v))
        return sr

    def rows(self):
        """``(i, j, value)`` triples, 1-based, for every written entry."""
        for i in range(self.k):
            for j in range(i + 1):
                if not np.isnan(self.values[i, j]):
                    yield i + 1, j + 1, float(self.values[i, j])


def _matrix(sr) -> np.ndarray:
    a = sr.values if isinstance(sr, SrMatrix) else np.asarray(sr, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"sr matrix must be square, got shape {a.shape}")
    return a


def _require_lower(a: np.ndarray) -> None:
    if not np.isfinite(a[np.tril_indices(a.shape[0])]).all():
        raise ValueError("sr matrix has missing lower-triangular entries")


def asr(sr) -> float:
    """Mean over rows of the row mean of the lower triangle."""
    a = _matrix(sr)
    _require_lower(a)
    k = a.shape[0]
    return float(np.mean([a[i, : i + 1].mean() for i in range(k)]))


def ar(returns) -> float:
    """Average normalized return; same aggregation as :func:`asr`."""
    return asr(returns)


def fm(sr, inner: str = "previous") -> float:
    """Forgetting measure.

    ``inner="previous"`` sums over earlier segments ``j < i`` with the
    ``1/(i-1)`` normalizer. ``"inclusive"`` also visits ``j = i`` (whose peak
    gap is empty and contributes zero) and normalizes by ``1/i``.
    Negative terms (backward transfer) are kept.
    """
    a = _matrix(sr)
    k = a.shape[0]
    if k < 2:
        raise ValueError("forgetting needs at least two segments")
    _require_lower(a)
    if inner not in ("previous", "inclusive"):
        raise ValueError(f"unknown inner bound {inner!r}")
    total = 0.0
    for i in range(1, k):
        gaps = (a[:i, :i] - a[i, :i]).copy()
        # only l >= j is defined
        gaps[np.triu_indices(i, 1)] = -np.inf
        row = gaps.max(axis=0).sum()
        total += row / i if inner == "previous" else row / (i + 1)
    return float(total / (k - 1))


def fwt(sr) -> float:
    """Mean of the diagonal."""
    a = _matrix(sr)
    d = np.diag(a)
    if not np.isfinite(d).all():
        raise ValueError("sr matrix diagonal is incomplete")
    return float(d.mean())


@dataclass(frozen=True)
class ReturnNorm:
    r_random: float
    r_reference: float

    def __post_init__(self):
        if self.r_reference == self.r_random:
            raise ConfigError("return anchors must differ")


# Atari anchors kept for reference checks
PONG = ReturnNorm(-20.7, 9.3)


def normalized_return(r_agent: float, norm: ReturnNorm) -> float:
    if norm.r_reference == norm.r_random:
        raise ConfigError("return anchors must differ")
    return (r_agent - norm.r_random) / (norm.r_reference - norm.r_random)


@dataclass
class MetricSummary:
    asr: float
    fm: float
    fwt: float
    per_segment_diagonal: list[float] = field(default_factory=list)

    @classmethod
    def of(cls, sr) -> "MetricSummary":
        a = _matrix(sr)
        return cls(asr(a), fm(a) if a.shape[0] > 1 else math.nan, fwt(a), [float(x) for x in np.diag(a)])


def mean_std(values) -> tuple[float, float]:
    """Mean and sample standard deviation (``n - 1``); std is 0 for one value."""
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0
