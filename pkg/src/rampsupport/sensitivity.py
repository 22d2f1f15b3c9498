"""Sobol' indices read off the coefficients of a fitted chaos expansion."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.utils.validation import check_is_fitted

from ._validation import check_fraction
from .exceptions import ValidationError, ZeroVarianceError


def _terms(model):
    check_is_fitted(model, "coef_")
    idx = np.asarray(model.indices_)
    c2 = np.asarray(model.coef_) ** 2
    nonconst = idx.any(axis=1)
    total = float(c2[nonconst].sum())
    if not total > 0:
        raise ZeroVarianceError("model has zero variance; Sobol' indices are undefined")
    return idx, c2, nonconst, total


def sobol_index(model, u: Iterable[int]) -> float:
    """Share of variance carried by terms whose support is exactly ``u`` (0-based columns)."""
    idx, c2, _, total = _terms(model)
    u = sorted(set(int(i) for i in u))
    if not u:
        raise ValidationError("variable subset must be non-empty")
    if u[0] < 0 or u[-1] >= idx.shape[1]:
        raise ValidationError(f"variable subset {u} out of range for {idx.shape[1]} inputs")
    mask = np.zeros(idx.shape[1], dtype=bool)
    mask[u] = True
    hit = np.all((idx != 0) == mask, axis=1)
    return float(c2[hit].sum() / total)


@dataclass(frozen=True)
class SobolReport:
    variables: tuple[str, ...]
    first_order: np.ndarray
    total_order: np.ndarray
    model_variance: float
    group: dict = field(default_factory=dict)

    def supports(self) -> dict:
        """Every non-empty support present in the model and its index."""
        return dict(self.group)

    def to_dict(self) -> dict:
        return {
            "variables": list(self.variables),
            "first_order": [float(v) for v in self.first_order],
            "total_order": [float(v) for v in self.total_order],
            "model_variance": float(self.model_variance),
            "group": [
                {"subset": [self.variables[i] for i in key], "index": float(val)}
                for key, val in sorted(self.group.items(), key=lambda kv: (len(kv[0]), kv[0]))
            ],
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    def save_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variable", "S_first", "S_total"])
            for name, s1, st in zip(self.variables, self.first_order, self.total_order):
                w.writerow([name, repr(float(s1)), repr(float(st))])


def sobol_report(model, variables: Sequence[str] | None = None) -> SobolReport:
    """First-order, total-order and per-support indices of a fitted model."""
    idx, c2, nonconst, total = _terms(model)
    d = idx.shape[1]
    if variables is None:
        cols = getattr(model, "columns_", None)
        variables = cols if cols is not None else tuple(f"x{i + 1}" for i in range(d))
    variables = tuple(variables)
    if len(variables) != d:
        raise ValidationError(f"{len(variables)} variable names for {d} inputs")
    active = idx != 0
    single = nonconst & (active.sum(axis=1) == 1)
    first = np.array([c2[single & active[:, i]].sum() for i in range(d)]) / total
    tot = np.array([c2[active[:, i]].sum() for i in range(d)]) / total
    group: dict = {}
    for row, w in zip(active[nonconst], c2[nonconst]):
        key = tuple(int(i) for i in np.flatnonzero(row))
        group[key] = group.get(key, 0.0) + w / total
    return SobolReport(variables, first, tot, total, group)


@dataclass(frozen=True)
class Dominance:
    variables: tuple[str, ...]
    positions: tuple[int, ...]
    total: float
    shortfall: bool


def rank_dominant(report: SobolReport, threshold: float = 0.8, index_kind: str = "first_order") -> Dominance:
    """Shortest prefix of the descending ranking whose indices sum to ``threshold``.

    Ties go to the lower column position. When even the full sum stays
    below the threshold (interaction mass), every variable is returned and
    ``shortfall`` is set.
    """
    threshold = check_fraction(threshold, "threshold", closed_right=True)
    if index_kind not in ("first_order", "total_order"):
        raise ValidationError("index_kind must be 'first_order' or 'total_order'")
    s = np.asarray(getattr(report, index_kind), dtype=float)
    order = sorted(range(len(s)), key=lambda i: (-s[i], i))
    acc = 0.0
    chosen = []
    for i in order:
        chosen.append(i)
        acc += s[i]
        if acc >= threshold - 1e-12:
            return Dominance(tuple(report.variables[k] for k in chosen), tuple(chosen), float(acc), False)
    return Dominance(tuple(report.variables[k] for k in chosen), tuple(chosen), float(acc), True)
