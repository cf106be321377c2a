"""Cumulative-logit ordinal model: predictors, probabilities, likelihood.

Categories are handled internally as integer indices ``0..K-1`` in their
natural order; ``J = K - 1`` cumulative margins separate them.  Margin ``j``
models ``Pr(y <= j)`` through the linear predictor

    eta_j = c_j + x . beta + x . B[:, j]

where ``beta`` is shared by every margin and ``B[:, j]`` is the
margin-specific deviation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.special import expit, log_expit

LOG_FLOOR = math.log(1e-300)


class InvalidRegion(ValueError):
    """Linear predictors produce a negative (or zero, where observed) probability."""

    def __init__(self, message: str, margin: int | None = None):
        super().__init__(message)
        self.margin = margin


class StructuralError(ValueError):
    """Dimension mismatch between coefficients and data."""


@dataclass
class CoefficientSet:
    thresholds: np.ndarray
    shared: np.ndarray
    specific: np.ndarray

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=float).reshape(-1)
        self.shared = np.asarray(self.shared, dtype=float).reshape(-1)
        specific = np.asarray(self.specific, dtype=float)
        if specific.size == 0:
            specific = specific.reshape(self.shared.size, self.thresholds.size)
        self.specific = specific
        if self.specific.shape != (self.shared.size, self.thresholds.size):
            raise StructuralError(
                f"specific has shape {self.specific.shape}, expected "
                f"({self.shared.size}, {self.thresholds.size})"
            )

    @classmethod
    def zeros(cls, n_features: int, n_margins: int) -> "CoefficientSet":
        return cls(np.zeros(n_margins), np.zeros(n_features), np.zeros((n_features, n_margins)))

    @property
    def n_margins(self) -> int:
        return self.thresholds.size

    @property
    def n_features(self) -> int:
        return self.shared.size

    def effective(self) -> np.ndarray:
        """Per-margin coefficients ``gamma_j = beta + B[:, j]`` as a P x J matrix."""
        return self.shared[:, None] + self.specific

    def copy(self) -> "CoefficientSet":
        return CoefficientSet(self.thresholds.copy(), self.shared.copy(), self.specific.copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.thresholds, self.shared, self.specific.ravel()])

    @classmethod
    def from_vector(cls, vec, n_features: int, n_margins: int) -> "CoefficientSet":
        vec = np.asarray(vec, dtype=float)
        J, P = n_margins, n_features
        return cls(vec[:J], vec[J:J + P], vec[J + P:].reshape(P, J))


@dataclass
class OrdinalDataset:
    """Responses, covariate records, and normalized weights for n respondents.

    ``y`` holds category indices; ``categories`` maps them back to the
    original codes (e.g. ``(-1, 0, 1)``).  ``weights`` are rescaled so that
    they sum to n; ``raw_weights`` keeps the values as supplied.
    """

    y: np.ndarray
    categories: tuple
    records: pd.DataFrame | None = None
    raw_weights: np.ndarray | None = None
    weights: np.ndarray = field(init=False)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        self.categories = tuple(self.categories)
        K = len(self.categories)
        if K < 3:
            raise ValueError(f"need at least 3 ordered categories, got {K}")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= K):
            raise ValueError("response index outside the declared categories")
        if self.records is not None and len(self.records) != self.y.size:
            raise StructuralError("records and responses differ in length")
        raw = np.ones(self.y.size) if self.raw_weights is None else np.asarray(self.raw_weights, float)
        if raw.shape != self.y.shape:
            raise StructuralError("weights and responses differ in length")
        if np.any(raw < 0) or not np.all(np.isfinite(raw)):
            raise ValueError("weights must be finite and nonnegative")
        self.raw_weights = raw
        self.weights = normalize_weights(raw)

    @classmethod
    def from_codes(cls, codes, categories, records=None, weights=None) -> "OrdinalDataset":
        lookup = {c: k for k, c in enumerate(categories)}
        y = np.array([lookup[c] for c in codes], dtype=np.int64)
        return cls(y, tuple(categories), records, weights)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    @property
    def codes(self) -> np.ndarray:
        return np.asarray(self.categories)[self.y]

    def subset(self, idx) -> "OrdinalDataset":
        idx = np.asarray(idx)
        recs = None if self.records is None else self.records.iloc[idx].reset_index(drop=True)
        return OrdinalDataset(self.y[idx], self.categories, recs, self.raw_weights[idx])

    def stratum_labels(self, key: Sequence[str]) -> np.ndarray:
        if self.records is None:
            raise ValueError("dataset has no covariate records")
        if not key:
            return np.full(self.n, "all", dtype=object)
        parts = self.records[list(key)].astype(str)
        return parts.agg(":".join, axis=1).to_numpy(dtype=object)


def normalize_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.size == 0:
        return w.copy()
    total = math.fsum(w)
    if total <= 0:
        raise ValueError("weights sum to zero")
    return w * (w.size / total)


@dataclass
class LinearPredictor:
    eta: np.ndarray
    threshold_part: np.ndarray
    shared_part: float
    specific_part: np.ndarray


def _check_width(n_cols: int, coefs: CoefficientSet):
    if n_cols != coefs.n_features:
        raise StructuralError(f"design has {n_cols} columns, coefficients have {coefs.n_features}")


def linear_predictors(row, coefs: CoefficientSet) -> LinearPredictor:
    row = np.asarray(row, dtype=float).reshape(-1)
    _check_width(row.size, coefs)
    shared = float(row @ coefs.shared)
    specific = row @ coefs.specific
    eta = coefs.thresholds + shared + specific
    return LinearPredictor(eta, coefs.thresholds.copy(), shared, specific)


def linear_predictor_matrix(X, coefs: CoefficientSet) -> np.ndarray:
    """n x J matrix of linear predictors for every row of ``X``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise StructuralError("design must be two-dimensional")
    _check_width(X.shape[1], coefs)
    return coefs.thresholds[None, :] + X @ coefs.effective()


def cumulative_probabilities(eta) -> np.ndarray:
    """Category probabilities from cumulative linear predictors.

    Accepts a length-J vector or an n x J matrix and returns K (or n x K)
    probabilities.  Raises :class:`InvalidRegion` when the cumulative
    probabilities decrease across margins.
    """
    eta = np.asarray(eta, dtype=float)
    single = eta.ndim == 1
    E = np.atleast_2d(eta)
    if not np.all(np.isfinite(E)):
        raise ValueError("linear predictors must be finite")
    F = expit(E)
    bad = np.diff(F, axis=1) < 0
    if bad.any():
        margin = int(np.argmax(bad.any(axis=0)))
        raise InvalidRegion(
            f"cumulative probability decreases between margins {margin} and {margin + 1}",
            margin=margin,
        )
    n = E.shape[0]
    full = np.hstack([np.zeros((n, 1)), F, np.ones((n, 1))])
    pi = np.diff(full, axis=1)
    return pi[0] if single else pi


def rearranged_probabilities(eta) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities after monotone rearrangement of crossing cumulative curves.

    Used only when forecasting on rows outside the training sample, where a
    non-parallel fit may cross.  Returns ``(probs, crossed_mask)``.
    """
    E = np.atleast_2d(np.asarray(eta, dtype=float))
    F = expit(E)
    crossed = np.any(np.diff(F, axis=1) < 0, axis=1)
    F = np.sort(F, axis=1)
    n = E.shape[0]
    pi = np.diff(np.hstack([np.zeros((n, 1)), F, np.ones((n, 1))]), axis=1)
    return pi, crossed


def _check_valid(eta: np.ndarray, y: np.ndarray):
    gaps = np.diff(eta, axis=1)
    if gaps.size == 0:
        return
    if np.any(gaps < 0):
        margin = int(np.argmax((gaps < 0).any(axis=0)))
        raise InvalidRegion(f"linear predictors cross at margin {margin}", margin=margin)
    # a zero-width interior category is only fatal when it was observed
    J = eta.shape[1]
    interior = (y > 0) & (y < J)
    if interior.any():
        rows = np.flatnonzero(interior)
        k = y[rows]
        zero = eta[rows, k] <= eta[rows, k - 1]
        if zero.any():
            raise InvalidRegion(
                f"observed category {int(k[zero][0])} has zero probability",
                margin=int(k[zero][0]) - 1,
            )


def _log_prob(eta: np.ndarray, y: np.ndarray) -> np.ndarray:
    """log pi_{y_i, i} evaluated in log-sigmoid form."""
    n, J = eta.shape
    out = np.empty(n)
    first = y == 0
    last = y == J
    mid = ~(first | last)
    out[first] = log_expit(eta[first, 0])
    out[last] = log_expit(-eta[last, J - 1])
    if mid.any():
        rows = np.flatnonzero(mid)
        k = y[rows]
        hi = eta[rows, k]
        lo = eta[rows, k - 1]
        # sigma(hi) - sigma(lo) = sigma(hi) * sigma(-lo) * (1 - exp(lo - hi))
        out[rows] = log_expit(hi) + log_expit(-lo) + np.log(-np.expm1(lo - hi))
    return np.maximum(out, LOG_FLOOR)


def loglik_arrays(X, y, w, coefs: CoefficientSet) -> float:
    eta = linear_predictor_matrix(X, coefs)
    _check_valid(eta, y)
    n = y.size
    return float(np.dot(w, _log_prob(eta, y)) / n)


def eta_derivatives(eta: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Derivatives of the mean negative log-likelihood with respect to eta.

    Returns ``(grad, hdiag, hoff)``: ``grad`` and ``hdiag`` are n x J, and
    ``hoff[:, j]`` is the cross term between margins j and j+1 (n x J-1).
    The per-row Hessian blocks are positive semi-definite.
    """
    n, J = eta.shape
    scale = w / n
    grad = np.zeros((n, J))
    hdiag = np.zeros((n, J))
    hoff = np.zeros((n, max(J - 1, 0)))

    first = np.flatnonzero(y == 0)
    if first.size:
        e = eta[first, 0]
        s, sm = expit(e), expit(-e)
        grad[first, 0] = -scale[first] * sm
        hdiag[first, 0] = scale[first] * s * sm
    last = np.flatnonzero(y == J)
    if last.size:
        e = eta[last, J - 1]
        s, sm = expit(e), expit(-e)
        grad[last, J - 1] = scale[last] * s
        hdiag[last, J - 1] = scale[last] * s * sm
    mid = np.flatnonzero((y > 0) & (y < J))
    if mid.size:
        k = y[mid]
        hi = eta[mid, k]
        lo = eta[mid, k - 1]
        s_hi, sm_hi = expit(hi), expit(-hi)
        s_lo, sm_lo = expit(lo), expit(-lo)
        pi = s_hi * sm_lo * -np.expm1(lo - hi)
        f_hi = s_hi * sm_hi
        f_lo = s_lo * sm_lo
        r_hi = f_hi / pi
        r_lo = f_lo / pi
        sc = scale[mid]
        grad[mid, k] = -sc * r_hi
        grad[mid, k - 1] = sc * r_lo
        hdiag[mid, k] = sc * (r_hi * r_hi - r_hi * (sm_hi - s_hi))
        hdiag[mid, k - 1] = sc * (r_lo * r_lo + r_lo * (sm_lo - s_lo))
        hoff[mid, k - 1] = -sc * r_hi * r_lo
    return grad, hdiag, hoff


def _arrays(data: OrdinalDataset, design):
    X = np.asarray(getattr(design, "values", design), dtype=float)
    if X.ndim != 2 or X.shape[0] != data.n:
        raise StructuralError(f"design rows {X.shape} do not match {data.n} observations")
    return X, data.y, data.weights


def log_likelihood(data: OrdinalDataset, design, coefs: CoefficientSet) -> float:
    """Weighted, rescaled log-likelihood ``(1/n) sum_i w_i log pi_{y_i, i}``."""
    X, y, w = _arrays(data, design)
    if coefs.n_margins != data.n_categories - 1:
        raise StructuralError("coefficient margins do not match the category count")
    return loglik_arrays(X, y, w, coefs)


def gradient(data: OrdinalDataset, design, coefs: CoefficientSet) -> CoefficientSet:
    """Analytic gradient of :func:`log_likelihood`, packed like the coefficients."""
    X, y, w = _arrays(data, design)
    _check_width(X.shape[1], coefs)
    eta = linear_predictor_matrix(X, coefs)
    _check_valid(eta, y)
    g_eta = -eta_derivatives(eta, y, w)[0]
    g_specific = X.T @ g_eta
    return CoefficientSet(g_eta.sum(axis=0), g_specific.sum(axis=1), g_specific)


def validate_coefficients(coefs: CoefficientSet) -> list[str]:
    """Threshold-ordering violations at the zero covariate vector."""
    c = coefs.thresholds
    return [
        f"threshold {j} ({c[j]:g}) is not below threshold {j + 1} ({c[j + 1]:g})"
        for j in range(c.size - 1)
        if not c[j] < c[j + 1]
    ]


def intercept_only_thresholds(y, w, n_categories: int, clip: float = 1e-10) -> np.ndarray:
    """Closed-form thresholds: logit of the weighted cumulative class shares."""
    w = np.asarray(w, dtype=float)
    props = np.bincount(y, weights=w, minlength=n_categories) / w.sum()
    cum = np.clip(np.cumsum(props)[:-1], clip, 1 - clip)
    return np.log(cum) - np.log1p(-cum)
