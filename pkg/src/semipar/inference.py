"""Stratified bootstrap, percentile bands, pseudo-R2 and variance decomposition."""

from __future__ import annotations

import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .core import CoefficientSet, OrdinalDataset
from .optimizer import FitOptions, HyperParams, ModelFit, fit

LOGISTIC_VARIANCE = math.pi ** 2 / 3
ENSEMBLE_FORMAT = "semipar-ensemble/1"
MIN_REPLICATES = 20


class InferenceError(ValueError):
    pass


@dataclass(frozen=True)
class Stratum:
    key: str
    indices: np.ndarray

    @property
    def size(self) -> int:
        return self.indices.size


def make_strata(labels) -> list[Stratum]:
    """Partition row positions by label; strata come out in sorted label order."""
    labels = np.asarray(labels, dtype=object)
    if labels.size == 0:
        raise InferenceError("no units to stratify")
    keys, codes = np.unique(labels.astype(str), return_inverse=True)
    order = np.argsort(codes, kind="stable")
    bounds = np.searchsorted(codes[order], np.arange(keys.size + 1))
    return [Stratum(str(k), order[bounds[i]:bounds[i + 1]]) for i, k in enumerate(keys)]


def stratified_resample(strata, rng) -> np.ndarray:
    """Row positions of one replicate: n_s draws with replacement per stratum."""
    rng = np.random.default_rng(rng)
    parts = [s.indices[rng.integers(0, s.size, size=s.size)] for s in strata]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=int)


def resample_dataset(data: OrdinalDataset, strata, rng) -> OrdinalDataset:
    """One stratified bootstrap replicate of ``data``."""
    return data.subset(stratified_resample(strata, rng))


def replicate_seeds(seed: int, R: int) -> list[np.random.SeedSequence]:
    """Independent per-replicate streams split from one master seed."""
    return np.random.SeedSequence(seed).spawn(R)


@dataclass
class BootstrapEnsemble:
    replicates: list  # CoefficientSet or None for failures, indexed by replicate
    seeds: list
    failures: list  # (replicate index, message)
    full_fit: ModelFit | None = None
    warm_start: bool = True
    columns: list = field(default_factory=list)
    master_seed: int | None = None

    @property
    def R(self) -> int:
        return len(self.replicates)

    @property
    def successes(self) -> list[CoefficientSet]:
        return [c for c in self.replicates if c is not None]

    @property
    def reliable(self) -> bool:
        return len(self.failures) <= 0.1 * self.R

    def effective_draws(self) -> np.ndarray:
        """S x P x J array of per-margin coefficients ``beta + B_j`` over successes."""
        ok = self.successes
        if not ok:
            return np.zeros((0, 0, 0))
        return np.stack([c.effective() for c in ok])

    def threshold_draws(self) -> np.ndarray:
        return np.stack([c.thresholds for c in self.successes])

    def summary(self, level: float = 0.95) -> pd.DataFrame:
        """Per-margin coefficient estimates with percentile bands and bootstrap sd."""
        draws = self.effective_draws()
        J = draws.shape[2] if draws.size else 0
        est = self.full_fit.coefs if self.full_fit else None
        names = self.columns or [f"x{p}" for p in range(draws.shape[1])]
        rows = []
        thr = self.threshold_draws()
        for j in range(thr.shape[1]):
            lo, hi = percentile_interval(thr[:, j], level=level)
            rows.append({"coefficient": f"threshold[{j}]", "margin": j,
                         "estimate": est.thresholds[j] if est else thr[:, j].mean(),
                         "lo": lo, "hi": hi, "sd": thr[:, j].std(ddof=1)})
        for p, nm in enumerate(names):
            for j in range(J):
                vals = draws[:, p, j]
                lo, hi = percentile_interval(vals, level=level)
                rows.append({"coefficient": nm, "margin": j,
                             "estimate": est.effective()[p, j] if est else vals.mean(),
                             "lo": lo, "hi": hi, "sd": vals.std(ddof=1)})
        return pd.DataFrame(rows)

    def to_dict(self) -> dict:
        return {
            "format": ENSEMBLE_FORMAT,
            "columns": list(self.columns),
            "warm_start": self.warm_start,
            "R": self.R,
            "master_seed": self.master_seed,
            "seeds": [int(s) for s in self.seeds],
            "failures": [[int(i), msg] for i, msg in self.failures],
            "reliable": self.reliable,
            "replicates": [None if c is None else {"thresholds": c.thresholds.tolist(),
                                                   "shared": c.shared.tolist(),
                                                   "specific": c.specific.tolist()}
                           for c in self.replicates],
            "full_fit": self.full_fit.to_dict() if self.full_fit else None,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BootstrapEnsemble":
        if doc.get("format") != ENSEMBLE_FORMAT:
            raise ValueError(f"unsupported ensemble format {doc.get('format')!r}")
        reps = [None if r is None else CoefficientSet(r["thresholds"], r["shared"], r["specific"])
                for r in doc["replicates"]]
        full = ModelFit.from_dict(doc["full_fit"]) if doc.get("full_fit") else None
        return cls(reps, doc["seeds"], [tuple(f) for f in doc["failures"]], full, doc["warm_start"], doc["columns"],
                   doc.get("master_seed"))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def bootstrap(data: OrdinalDataset, design, hyper: HyperParams, R: int = 1000, seed: int = 0,
              strata_labels=None, options: FitOptions | None = None, full_fit: ModelFit | None = None,
              warm_start: bool = True, n_jobs: int = 1) -> BootstrapEnsemble:
    """Refit the model on R stratified resamples of the rows of ``design``.

    Each replicate draws from its own stream split off ``seed``, so results
    do not depend on how replicates are scheduled across workers.  A fit that
    raises or stops unconverged is recorded as a failure.
    """
    if R < 1:
        raise InferenceError("need at least one replicate")
    options = options or FitOptions()
    X = np.asarray(getattr(design, "values", design), dtype=float)
    if strata_labels is None:
        strata_labels = np.zeros(data.n, dtype=int)
    strata = make_strata(strata_labels)
    if full_fit is None:
        full_fit = fit(data, X, hyper, options)
    init = full_fit.coefs if warm_start else None
    seqs = replicate_seeds(seed, R)

    def run(r):
        idx = stratified_resample(strata, seqs[r])
        rep = OrdinalDataset(data.y[idx], data.categories, None, data.raw_weights[idx])
        try:
            res = fit(rep, X[idx], hyper, options, init=init)
        except Exception as exc:
            return None, f"{type(exc).__name__}: {exc}"
        if not res.converged:
            return res.coefs, "not converged" + (f" ({'; '.join(res.warnings)})" if res.warnings else "")
        return res.coefs, None

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            outcomes = list(pool.map(run, range(R)))
    else:
        outcomes = [run(r) for r in range(R)]
    replicates, failures = [], []
    for r, (coefs, msg) in enumerate(outcomes):
        if msg is None:
            replicates.append(coefs)
        else:
            replicates.append(None)
            failures.append((r, msg))
    names = getattr(design, "names", None) or full_fit.column_names()
    # replicate r draws from SeedSequence(seed).spawn(R)[r]; the spawn index identifies it
    return BootstrapEnsemble(replicates, [int(s.spawn_key[-1]) for s in seqs], failures, full_fit,
                             warm_start, list(names), seed)


def percentile_interval(values, index=None, level: float = 0.95) -> tuple[float, float]:
    """Type-7 (linear interpolation) percentile band.

    ``values`` is either a 1-d array of replicate values or a
    :class:`BootstrapEnsemble`, in which case ``index`` selects a coefficient
    of the flattened ``(thresholds, shared, specific)`` vector.
    """
    if not 0 < level < 1:
        raise InferenceError("level must lie strictly between 0 and 1")
    if isinstance(values, BootstrapEnsemble):
        vals = np.array([c.to_vector()[index] for c in values.successes])
    else:
        vals = np.asarray(values, dtype=float).reshape(-1)
    if vals.size < MIN_REPLICATES:
        raise InferenceError(f"need at least {MIN_REPLICATES} replicates, have {vals.size}")
    tail = (1 - level) / 2
    lo, hi = np.quantile(vals, [tail, 1 - tail], method="linear")
    return float(lo), float(hi)


def _eta(fit_or_coefs, design) -> np.ndarray:
    # thresholds shift each column by a constant and cannot change its variance;
    # leaving them out keeps an intercept-only predictor at exactly zero variance
    coefs = getattr(fit_or_coefs, "coefs", fit_or_coefs)
    return np.asarray(getattr(design, "values", design), dtype=float) @ coefs.effective()


def explained_variance(eta: np.ndarray) -> np.ndarray:
    if eta.shape[0] < 2:
        raise InferenceError("need at least two observations")
    return eta.var(axis=0, ddof=1)


def r2_from_variance(var) -> np.ndarray:
    var = np.asarray(var, dtype=float)
    return var / (var + LOGISTIC_VARIANCE)


def pseudo_r2(fit_or_coefs, data: OrdinalDataset | None, design) -> np.ndarray:
    """Per-margin ``var(eta_j) / (var(eta_j) + pi^2/3)``."""
    return r2_from_variance(explained_variance(_eta(fit_or_coefs, design)))


@dataclass
class VarianceDecomposition:
    linear_predictor: np.ndarray  # var(eta_j)
    fixed_effects: np.ndarray  # var of the LHU-block contribution
    covariates: np.ndarray  # var of the main-effects contribution
    covariance: np.ndarray  # cov(main part, LHU part)
    pseudo_r2: np.ndarray
    has_lhu: bool = True

    @property
    def total_with_logistic(self) -> np.ndarray:
        return self.linear_predictor + LOGISTIC_VARIANCE

    def to_frame(self) -> pd.DataFrame:
        J = self.linear_predictor.size
        return pd.DataFrame({
            "margin": np.arange(J),
            "linear_pred_var": self.linear_predictor,
            "total_var_with_logistic": self.total_with_logistic,
            "fixed_effects_var": self.fixed_effects,
            "covariates_var": self.covariates,
            "covariance": self.covariance,
            "r2_x100": 100 * self.pseudo_r2,
        })


def variance_decomposition(fit_or_coefs, data: OrdinalDataset | None, design) -> VarianceDecomposition:
    """Split the linear-predictor variance into LHU and main-effect parts."""
    coefs = getattr(fit_or_coefs, "coefs", fit_or_coefs)
    X = np.asarray(design.values, dtype=float)
    eta = _eta(coefs, X)
    total = explained_variance(eta)
    gamma = coefs.effective()
    lhu = design.block("lhu")
    main = design.block("main")
    main_part = X[:, main] @ gamma[main]
    if lhu.size:
        lhu_part = X[:, lhu] @ gamma[lhu]
        fixed = lhu_part.var(axis=0, ddof=1)
        dm = main_part - main_part.mean(axis=0)
        dl = lhu_part - lhu_part.mean(axis=0)
        cov = (dm * dl).sum(axis=0) / (X.shape[0] - 1)
    else:
        fixed = np.zeros_like(total)
        cov = np.zeros_like(total)
    return VarianceDecomposition(total, fixed, main_part.var(axis=0, ddof=1), cov, r2_from_variance(total),
                                 bool(lhu.size))


def ensemble_decomposition(ensemble: BootstrapEnsemble, design) -> pd.DataFrame:
    """Bootstrap standard deviations of each decomposition entry."""
    frames = [variance_decomposition(c, None, design).to_frame() for c in ensemble.successes]
    stacked = pd.concat(frames)
    return stacked.groupby("margin").std(ddof=1).reset_index()


def summary_csv(frame: pd.DataFrame) -> str:
    buf = io.StringIO()
    frame.to_csv(buf, index=False, float_format="%.10g", lineterminator="\n")
    return buf.getvalue()
