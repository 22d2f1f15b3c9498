"""Data-driven sparse polynomial chaos expansion.

The univariate bases are orthonormal with respect to the empirical
measure of the data: each degree-d polynomial is the monic solution of
the moment (Hankel) system

    sum_j mu_{k+j} p_j = 0   for k = 0..d-1,    p_d = 1,

rescaled to unit norm. Multivariate terms are products of univariate ones
over a total-degree truncation set, and coefficients come from ordinary
least squares followed by magnitude pruning.
"""

from __future__ import annotations

import json
import warnings
from math import comb
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_matrix, as_vector, column_names
from .exceptions import IllConditionedMomentsError, RankDeficientError, UnderdeterminedError, ValidationError
from .stochastic import MomentTable, raw_moments

SCHEMA_VERSION = 1


def build_truncation(n_vars: int, degree: int) -> np.ndarray:
    """All multi-indices with total degree <= ``degree``, graded then reverse-lexicographic.

    >>> build_truncation(2, 2).tolist()
    [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]]
    """
    if n_vars < 1 or degree < 0:
        raise ValidationError("need n_vars >= 1 and degree >= 0")

    def compositions(total, parts):
        if parts == 1:
            yield (total,)
            return
        for first in range(total, -1, -1):
            for rest in compositions(total - first, parts - 1):
                yield (first,) + rest

    rows = [c for d in range(degree + 1) for c in compositions(d, n_vars)]
    out = np.array(rows, dtype=int).reshape(-1, n_vars)
    assert len(out) == comb(n_vars + degree, degree)
    return out


def univariate_basis(moments, degree: int, max_cond: float = 1e12, var=None) -> np.ndarray:
    """Ascending power coefficients of the degree-``degree`` orthonormal polynomial.

    ``moments`` are raw moments ``mu_0, mu_1, ...`` up to at least order
    ``2 * degree``.
    """
    mu = np.asarray(moments, dtype=float)
    d = int(degree)
    if d == 0:
        return np.array([1.0 / np.sqrt(mu[0])])
    if mu.shape[0] < 2 * d + 1:
        raise ValidationError(f"degree {d} needs moments up to order {2 * d}")
    system = np.zeros((d + 1, d + 1))
    for k in range(d):
        system[k] = mu[k : k + d + 1]
    system[d, d] = 1.0
    cond = np.linalg.cond(system)
    if not np.isfinite(cond) or cond > max_cond:
        raise IllConditionedMomentsError(
            f"moment system for variable {var} at degree {d} is singular (condition {cond:.3g})", var, d
        )
    rhs = np.zeros(d + 1)
    rhs[d] = 1.0
    p = np.linalg.solve(system, rhs)
    hankel = np.array([[mu[j + k] for k in range(d + 1)] for j in range(d + 1)])
    norm2 = p @ hankel @ p
    if not norm2 > 0:
        raise IllConditionedMomentsError(
            f"variable {var} has non-positive degree-{d} norm ({norm2:.3g}); moments are inconsistent", var, d
        )
    return p / np.sqrt(norm2)


def eval_basis(tables, alpha, z) -> np.ndarray | float:
    """Evaluate one multivariate term ``prod_i p_{alpha_i}(z_i)`` at standardized points."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    out = np.ones(z.shape[0])
    for i, a in enumerate(alpha):
        if a:
            out *= np.polynomial.polynomial.polyval(z[:, i], tables[i][a])
    return out if out.shape[0] > 1 else float(out[0])


class ChaosBasis(TransformerMixin, BaseEstimator):
    """Maps raw inputs to the orthonormal polynomial chaos design matrix.

    ``fit`` standardizes each column, estimates raw moments up to order
    ``2 * degree`` and solves the moment systems; ``transform`` returns
    one column per multi-index in ``indices_``. Constant columns are
    treated as deterministic and only enter through the degree-0 term.
    """

    def __init__(self, degree=2, max_hankel_cond=1e12, degenerate_tol=1e-12):
        self.degree = degree
        self.max_hankel_cond = max_hankel_cond
        self.degenerate_tol = degenerate_tol

    def fit(self, X, y=None):
        x = as_matrix(X)
        q = int(self.degree)
        if q < 0:
            raise ValidationError("degree must be non-negative")
        table = raw_moments(x, 2 * q, tol=self.degenerate_tol)
        self.moments_: MomentTable = table
        self.mean_ = table.mean
        self.scale_ = table.scale
        self.degenerate_ = table.degenerate
        self.n_features_in_ = x.shape[1]
        self.tables_ = []
        for i in range(x.shape[1]):
            top = 0 if table.degenerate[i] else q
            self.tables_.append(
                [univariate_basis(table.moments[i], d, self.max_hankel_cond, var=i) for d in range(top + 1)]
            )
        active = np.flatnonzero(~table.degenerate)
        full = np.zeros((1, x.shape[1]), dtype=int)
        if active.size:
            sub = build_truncation(active.size, q)
            full = np.zeros((sub.shape[0], x.shape[1]), dtype=int)
            full[:, active] = sub
        self.indices_ = full
        return self

    def standardize(self, X) -> np.ndarray:
        check_is_fitted(self, "tables_")
        x = as_matrix(X)
        if x.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} columns, got {x.shape[1]}")
        z = (x - self.mean_) / self.scale_
        z[:, self.degenerate_] = 0.0
        return z

    def univariate_values(self, z: np.ndarray) -> list[np.ndarray]:
        """Per variable, a (degree+1) x N array of p_d(z_i)."""
        out = []
        for i, polys in enumerate(self.tables_):
            out.append(np.array([np.polynomial.polynomial.polyval(z[:, i], c) for c in polys]))
        return out

    def transform(self, X, indices=None):
        idx = self.indices_ if indices is None else np.asarray(indices, dtype=int)
        z = self.standardize(X)
        vals = self.univariate_values(z)
        psi = np.ones((z.shape[0], idx.shape[0]))
        for i in range(idx.shape[1]):
            col = idx[:, i]
            if np.any(col):
                psi *= vals[i][col].T
        return psi


class DataDrivenPCE(RegressorMixin, BaseEstimator):
    """Sparse polynomial chaos surrogate with data-driven orthonormal bases.

    Parameters
    ----------
    degree : int
        Total-degree truncation ``q``.
    sparsity : float
        Terms whose squared coefficient is below ``sparsity`` times the sum
        of all squared coefficients are pruned, then the rest is refit.
        ``0`` keeps the full expansion.
    max_hankel_cond, max_design_cond : float
        Conditioning guards for the moment systems and the design matrix.

    Attributes
    ----------
    indices_ : ndarray (n_terms, n_features)
        Retained multi-indices; row 0 is always the constant term.
    coef_ : ndarray (n_terms,)
        Expansion coefficients; ``coef_[0]`` is the model mean.
    loo_error_ : float
        Leave-one-out error relative to the response variance.
    condition_number_ : float
        Condition number of the retained design matrix.
    """

    def __init__(self, degree=2, sparsity=1e-8, max_hankel_cond=1e12, max_design_cond=1e12, degenerate_tol=1e-12):
        self.degree = degree
        self.sparsity = sparsity
        self.max_hankel_cond = max_hankel_cond
        self.max_design_cond = max_design_cond
        self.degenerate_tol = degenerate_tol

    def fit(self, X, y, moment_data=None):
        """Fit on (X, y). Moments come from ``moment_data`` when given, else from X."""
        x = as_matrix(X)
        y = as_vector(y, x.shape[0])
        self.columns_ = column_names(X)
        basis = ChaosBasis(self.degree, self.max_hankel_cond, self.degenerate_tol)
        basis.fit(x if moment_data is None else moment_data)
        if basis.n_features_in_ != x.shape[1]:
            raise ValidationError("moment data and training data have different column counts")
        self.basis_ = basis
        self.n_features_in_ = x.shape[1]

        n_terms = basis.indices_.shape[0]
        if x.shape[0] <= n_terms:
            raise UnderdeterminedError(
                f"UNDERDETERMINED: {x.shape[0]} samples for {n_terms} expansion terms"
            )
        if x.shape[0] < 2 * n_terms:
            warnings.warn(
                f"only {x.shape[0]} samples for {n_terms} terms; fewer than twice the term count",
                RuntimeWarning,
                stacklevel=2,
            )
        self.n_terms_full_ = n_terms
        psi = basis.transform(x)
        coef, q_mat, cond = self._solve(psi, y)
        keep = np.ones(n_terms, dtype=bool)
        if self.sparsity > 0 and n_terms > 1:
            c2 = coef**2
            keep = c2 >= self.sparsity * c2.sum()
            keep[0] = True
            if not keep.all():
                psi = psi[:, keep]
                coef, q_mat, cond = self._solve(psi, y)
        self.indices_ = basis.indices_[keep]
        self.coef_ = coef
        self.condition_number_ = cond
        resid = y - psi @ coef
        self.train_residual_ = float(np.max(np.abs(resid))) if resid.size else 0.0
        h = np.sum(q_mat**2, axis=1)
        var = y.var()
        if var > 0:
            loo = (resid / np.maximum(1.0 - h, 1e-12)) ** 2
            self.loo_error_ = float(loo.mean() / var)
        else:
            self.loo_error_ = 0.0
        return self

    def _solve(self, psi, y):
        q_mat, r = np.linalg.qr(psi)
        s = np.linalg.svd(r, compute_uv=False)
        cond = float(s[0] / s[-1]) if s[-1] > 0 else np.inf
        if not cond <= self.max_design_cond:
            raise RankDeficientError(f"design matrix is rank deficient (condition {cond:.3g})", cond)
        coef = solve_triangular(r, q_mat.T @ y)
        return coef, q_mat, cond

    def _check_columns(self, X):
        cols = column_names(X)
        if cols is not None and self.columns_ is not None and cols != self.columns_:
            raise ValidationError(f"input columns {cols} do not match the fitted columns {self.columns_}")

    def design_matrix(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        self._check_columns(X)
        return self.basis_.transform(X, self.indices_)

    def predict(self, X):
        return self.design_matrix(X) @ self.coef_

    @property
    def mean_(self) -> float:
        check_is_fitted(self, "coef_")
        return float(self.coef_[0])

    @property
    def variance_(self) -> float:
        check_is_fitted(self, "coef_")
        return float(np.sum(self.coef_[1:] ** 2))

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        check_is_fitted(self, "coef_")
        b = self.basis_
        return {
            "schema_version": SCHEMA_VERSION,
            "params": self.get_params(),
            "columns": list(self.columns_) if self.columns_ is not None else None,
            "standardization": {"mean": b.mean_.tolist(), "scale": b.scale_.tolist(),
                                "degenerate": b.degenerate_.tolist()},
            "univariate": [[c.tolist() for c in polys] for polys in b.tables_],
            "moments": b.moments_.moments.tolist(),
            "indices": self.indices_.tolist(),
            "coefficients": self.coef_.tolist(),
            "diagnostics": {"loo_error": self.loo_error_, "condition_number": self.condition_number_,
                            "n_terms_full": self.n_terms_full_, "train_residual": self.train_residual_},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DataDrivenPCE":
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValidationError(f"unsupported model schema version {data.get('schema_version')}")
        model = cls(**data["params"])
        std = data["standardization"]
        basis = ChaosBasis(model.degree, model.max_hankel_cond, model.degenerate_tol)
        basis.mean_ = np.array(std["mean"])
        basis.scale_ = np.array(std["scale"])
        basis.degenerate_ = np.array(std["degenerate"], dtype=bool)
        basis.n_features_in_ = basis.mean_.shape[0]
        basis.tables_ = [[np.array(c) for c in polys] for polys in data["univariate"]]
        mom = np.array(data["moments"])
        basis.moments_ = MomentTable(mom, basis.mean_, basis.scale_, basis.degenerate_)
        basis.indices_ = np.array(data["indices"], dtype=int)
        model.basis_ = basis
        model.n_features_in_ = basis.n_features_in_
        model.columns_ = tuple(data["columns"]) if data["columns"] is not None else None
        model.indices_ = np.array(data["indices"], dtype=int).reshape(-1, basis.n_features_in_)
        model.coef_ = np.array(data["coefficients"])
        diag = data["diagnostics"]
        model.loo_error_ = diag["loo_error"]
        model.condition_number_ = diag["condition_number"]
        model.n_terms_full_ = diag["n_terms_full"]
        model.train_residual_ = diag["train_residual"]
        return model


def save_model(model: DataDrivenPCE, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=1, sort_keys=True) + "\n")


def load_model(path) -> DataDrivenPCE:
    return DataDrivenPCE.from_dict(json.loads(Path(path).read_text()))
