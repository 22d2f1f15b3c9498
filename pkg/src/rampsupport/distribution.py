"""Empirical RSC distributions and the statistics reported on them."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import check_fraction
from .exceptions import ValidationError

MIN_CONFIDENCE_SAMPLES = 100


class Provenance(str, enum.Enum):
    PCE_SURROGATE = "PCE_SURROGATE"
    MCS_ORACLE = "MCS_ORACLE"


@dataclass(frozen=True)
class RscDistribution:
    """Sorted sample of RSC values (per-unit)."""

    values: np.ndarray
    provenance: Provenance = Provenance.PCE_SURROGATE

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=float).ravel())
        if v.size == 0:
            raise ValidationError("distribution needs at least one value")
        if not np.all(np.isfinite(v)):
            raise ValidationError("distribution values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def variance(self) -> float:
        return float(self.values.var())

    def scaled(self, k: float) -> "RscDistribution":
        return RscDistribution(self.values * k, self.provenance)


def confidence_rsc(dist: RscDistribution, gamma: float = 0.95) -> float:
    """Value exceeded with empirical probability ``gamma``.

    Uses the lower order statistic ``values[ceil((1 - gamma) n) - 1]``.
    """
    gamma = check_fraction(gamma, "gamma")
    if dist.n < MIN_CONFIDENCE_SAMPLES:
        raise ValidationError(f"confidence level needs at least {MIN_CONFIDENCE_SAMPLES} values, got {dist.n}")
    # Round first so that e.g. (1 - 0.95) * 100 counts as exactly 5.
    rank = math.ceil(round((1.0 - gamma) * dist.n, 9))
    return float(dist.values[max(rank, 1) - 1])


def _ecdf_gap(a: np.ndarray, b: np.ndarray) -> float:
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance between empirical CDFs."""
    a = a.values if isinstance(a, RscDistribution) else np.sort(np.asarray(a, dtype=float).ravel())
    b = b.values if isinstance(b, RscDistribution) else np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValidationError("KS statistic needs two non-empty samples")
    return _ecdf_gap(a, b)


def histogram(dist: RscDistribution, bins: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Equal-width bin edges over [min, max] and the counts in each bin."""
    if int(bins) < 1:
        raise ValidationError("bins must be at least 1")
    lo, hi = dist.values[0], dist.values[-1]
    if lo == hi:
        edges = np.linspace(lo, lo, int(bins) + 1)
        counts = np.zeros(int(bins), dtype=int)
        counts[0] = dist.n
        return edges, counts
    counts, edges = np.histogram(dist.values, bins=int(bins), range=(lo, hi))
    return edges, counts


def save_cdf_csv(dist: RscDistribution, path, scale: float = 1.0) -> None:
    """Rows ``(value, cdf)``, one per sample, values multiplied by ``scale``."""
    n = dist.n
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value", "cdf"])
        for k, v in enumerate(dist.values, start=1):
            w.writerow([repr(float(v) * scale), repr(k / n)])


def save_pdf_csv(dist: RscDistribution, path, bins: int = 50, scale: float = 1.0) -> None:
    edges, counts = histogram(dist, bins)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo) * scale), repr(float(hi) * scale), int(c)])
