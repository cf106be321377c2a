"""Out-of-sample scoring: RPS, misclassification, k-fold CV, grid search.

Folds are numbered 1..V.  Everything computed from data (design scaling,
baseline class shares, model fits) uses training rows only and is then
transferred to the held-out fold.
"""

from __future__ import annotations

import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .core import OrdinalDataset
from .design import DesignSpec, design_from_spec, transfer_from_spec
from .optimizer import FitOptions, HyperParams, fit, predict_proba

log = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = tuple(10.0 ** e for e in (-6.00, -5.33, -4.67, -4.00, -3.33, -2.67, -2.00))
DEFAULT_RHO_GRID = (0.50, 0.67, 0.83, 1.00, 1.17, 1.33, 1.50)
MODEL_KINDS = ("marginal", "stratified", "parallel", "nonparallel", "semiparallel")


class EvaluationError(ValueError):
    pass


def _check(probs, outcomes):
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    outcomes = np.asarray(outcomes, dtype=int).reshape(-1)
    if probs.shape[0] != outcomes.size:
        raise EvaluationError(f"{probs.shape[0]} forecasts for {outcomes.size} outcomes")
    if outcomes.size == 0:
        raise EvaluationError("empty validation set")
    if outcomes.min() < 0 or outcomes.max() >= probs.shape[1]:
        raise EvaluationError("outcome outside the forecast categories")
    return probs, outcomes


def _average(values, weights):
    if weights is None:
        return float(values.mean())
    weights = np.asarray(weights, dtype=float)
    return float(np.dot(values, weights) / weights.sum())


def rps(probs, outcomes, weights=None) -> float:
    """Ranked probability score, summed over categories and averaged over units.

    ``outcomes`` are category indices.  The top category's cumulative term
    is identically zero and is left in for clarity.
    """
    probs, outcomes = _check(probs, outcomes)
    K = probs.shape[1]
    F_hat = np.cumsum(probs, axis=1)
    F = (outcomes[:, None] <= np.arange(K)[None, :]).astype(float)
    per_unit = ((F - F_hat) ** 2).sum(axis=1)
    return _average(per_unit, weights)


def misclassification(probs, outcomes, weights=None) -> float:
    """Share of units whose modal forecast differs from the outcome.

    Ties go to the lowest category (``argmax`` returns the first maximum).
    """
    probs, outcomes = _check(probs, outcomes)
    wrong = (np.argmax(probs, axis=1) != outcomes).astype(float)
    return _average(wrong, weights)


@dataclass
class FoldAssignment:
    fold_of: np.ndarray
    seed: int | None
    n_folds: int

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.n_folds + 1)[1:]

    def split(self, v: int):
        return np.flatnonzero(self.fold_of != v), np.flatnonzero(self.fold_of == v)


def make_folds(n: int, V: int = 5, seed: int | None = 0, strata=None) -> FoldAssignment:
    """Uniform random partition into V folds whose sizes differ by at most one.

    With ``strata``, units are dealt round-robin within each stratum (in a
    shuffled order), which still keeps overall sizes within one.
    """
    if V < 2:
        raise EvaluationError("need at least 2 folds")
    if n < V:
        raise EvaluationError(f"cannot split {n} units into {V} folds")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=int)
    if strata is None:
        order = rng.permutation(n)
    else:
        strata = np.asarray(strata)
        _, codes = np.unique(strata, return_inverse=True)
        shuffled = rng.permutation(n)
        order = shuffled[np.argsort(codes[shuffled], kind="stable")]
    fold_of[order] = np.arange(n) % V + 1
    return FoldAssignment(fold_of, seed, V)


@dataclass
class MarginalRule:
    probs: np.ndarray

    def predict(self, n: int) -> np.ndarray:
        return np.tile(self.probs, (n, 1))


def baseline_marginal(y_train, weights=None, n_categories: int = 3) -> MarginalRule:
    """Constant forecast equal to the weighted training class shares."""
    y_train = np.asarray(y_train, dtype=int)
    if y_train.size == 0:
        raise EvaluationError("empty training set")
    w = np.ones(y_train.size) if weights is None else np.asarray(weights, dtype=float)
    counts = np.bincount(y_train, weights=w, minlength=n_categories)
    return MarginalRule(counts / counts.sum())


@dataclass
class StratifiedRule:
    table: dict
    fallback: MarginalRule

    def predict(self, strata) -> tuple[np.ndarray, np.ndarray]:
        """Forecasts for the given stratum labels and a mask of fallback rows."""
        strata = list(strata)
        out = np.empty((len(strata), self.fallback.probs.size))
        used = np.zeros(len(strata), dtype=bool)
        for i, s in enumerate(strata):
            p = self.table.get(s)
            if p is None:
                out[i] = self.fallback.probs
                used[i] = True
            else:
                out[i] = p
        return out, used


def baseline_stratified(y_train, strata, weights=None, n_categories: int = 3) -> StratifiedRule:
    """Per-stratum training class shares; unseen strata get the marginal shares."""
    y_train = np.asarray(y_train, dtype=int)
    w = np.ones(y_train.size) if weights is None else np.asarray(weights, dtype=float)
    frame = pd.DataFrame({"s": list(strata), "y": y_train, "w": w})
    table = {}
    for key, grp in frame.groupby("s", sort=True):
        counts = np.bincount(grp["y"].to_numpy(), weights=grp["w"].to_numpy(), minlength=n_categories)
        table[key] = counts / counts.sum()
    return StratifiedRule(table, baseline_marginal(y_train, w, n_categories))


@dataclass(frozen=True)
class ModelSpec:
    """One row of the comparison table.

    ``kind`` is one of :data:`MODEL_KINDS`.  ``stratum_key`` lists record
    columns for the stratified baseline; ``group_column`` swaps the LHU
    fixed-effect block for another grouping (e.g. region).
    """

    name: str
    kind: str
    hyper: HyperParams | None = None
    stratum_key: tuple = ()
    group_column: str | None = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise EvaluationError(f"unknown model kind {self.kind!r}")
        if self.kind == "semiparallel" and (self.hyper is None or self.hyper.lam <= 0):
            raise EvaluationError(f"{self.name}: penalized model needs lambda > 0")


def default_models(lam: float = 1e-4, rho: float = 1.0, region_column: str | None = "region",
                   lhu_column: str = "lhu", sex_column: str = "sex", age_column: str = "age") -> list:
    """The comparison family of the study, minus the random-forest comparator."""
    models = [ModelSpec("Marginal mean", "marginal")]
    if region_column:
        models.append(ModelSpec("Region:Sex:AgeClass", "stratified",
                                stratum_key=(region_column, sex_column, age_column)))
    models += [
        ModelSpec("LHU:Sex:AgeClass", "stratified", stratum_key=(lhu_column, sex_column, age_column)),
        ModelSpec("Ordinal parallel model", "parallel", HyperParams(0.0)),
    ]
    if region_column:
        models.append(ModelSpec("Ordinal non-parallel model", "nonparallel", HyperParams(0.0),
                                group_column=region_column))
    models += [
        ModelSpec("Ridge LHU (alpha=0)", "semiparallel", HyperParams(lam, 0.0, rho)),
        ModelSpec("Lasso LHU (alpha=1)", "semiparallel", HyperParams(lam, 1.0, rho)),
        ModelSpec("ElasticNet LHU (alpha=0.5)", "semiparallel", HyperParams(lam, 0.5, rho)),
    ]
    return models


@dataclass
class FoldResult:
    model: str
    fold: int
    rps: float
    me: float
    n_valid: int
    fallback: int = 0
    crossed: int = 0
    converged: bool = True
    warnings: list = field(default_factory=list)


@dataclass
class EvaluationReport:
    results: list
    n_folds: int
    seed: int | None = None

    def models(self) -> list[str]:
        seen = []
        for r in self.results:
            if r.model not in seen:
                seen.append(r.model)
        return seen

    def fold_values(self, model: str, metric: str = "rps") -> np.ndarray:
        rows = sorted((r for r in self.results if r.model == model), key=lambda r: r.fold)
        return np.array([getattr(r, metric) for r in rows])

    def average(self, model: str, metric: str = "rps") -> float:
        vals = self.fold_values(model, metric)
        return math.fsum(vals) / vals.size

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([
            {"model": r.model, "fold": r.fold, "rps": r.rps, "me": r.me,
             "rps_x100": 100 * r.rps, "me_x100": 100 * r.me, "n_valid": r.n_valid,
             "fallback": r.fallback, "crossed": r.crossed, "converged": r.converged}
            for r in self.results
        ])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.to_frame().to_csv(buf, index=False, float_format="%.10g", lineterminator="\n")
        return buf.getvalue()

    def summary(self, metric: str = "rps") -> str:
        """Fold-by-model table (values x 100), the layout of the comparison tables."""
        title = {"rps": "Ranked Probability Score x 100", "me": "Misclassification error rate x 100"}[metric]
        header = ["Model"] + [f"Fold {v}" for v in range(1, self.n_folds + 1)] + ["Average"]
        rows = []
        for m in self.models():
            vals = self.fold_values(m, metric)
            rows.append([m] + [f"{100 * v:.3f}" for v in vals] + [f"{100 * self.average(m, metric):.3f}"])
        width = max(len(header[0]), *(len(r[0]) for r in rows))
        lines = [title, "  ".join([header[0].ljust(width)] + [h.rjust(8) for h in header[1:]])]
        for r in rows:
            lines.append("  ".join([r[0].ljust(width)] + [v.rjust(8) for v in r[1:]]))
        return "\n".join(lines) + "\n"


def _group_levels(data: OrdinalDataset, column: str) -> tuple:
    return tuple(sorted(set(data.records[column].astype(str))))


def _evaluate_model(model: ModelSpec, data: OrdinalDataset, spec: DesignSpec, train, valid,
                    options: FitOptions, weighted: bool) -> FoldResult:
    K = data.n_categories
    y_tr, y_va = data.y[train], data.y[valid]
    w_va = data.weights[valid] if weighted else None
    fallback = crossed = 0
    converged, warnings = True, []
    if model.kind == "marginal":
        probs = baseline_marginal(y_tr, data.weights[train], K).predict(valid.size)
    elif model.kind == "stratified":
        labels = data.stratum_labels(model.stratum_key)
        rule = baseline_stratified(y_tr, labels[train], data.weights[train], K)
        probs, used = rule.predict(labels[valid])
        fallback = int(used.sum())
    else:
        mspec = spec
        if model.group_column is not None:
            mspec = spec.with_group(model.group_column, _group_levels(data, model.group_column))
        train_data = data.subset(train)
        train_design = design_from_spec(train_data.records, mspec)
        valid_design = transfer_from_spec(data.records.iloc[valid].reset_index(drop=True), mspec, train_design)
        restriction = {"parallel": "parallel", "nonparallel": "nonparallel"}.get(model.kind, "none")
        opts = FitOptions(options.max_outer_iterations, options.objective_tolerance,
                          options.coordinate_tolerance, options.step_halving_max,
                          options.max_inner_passes, restriction)
        result = fit(train_data, train_design, model.hyper, opts)
        probs, crossing = predict_proba(result, valid_design)
        crossed = int(crossing.sum())
        converged, warnings = result.converged, list(result.warnings)
    return FoldResult(model.name, 0, rps(probs, y_va, w_va), misclassification(probs, y_va, w_va),
                      int(valid.size), fallback, crossed, converged, warnings)


def cross_validate(data: OrdinalDataset, design_spec: DesignSpec, models: Sequence[ModelSpec], V: int = 5,
                   seed: int | None = 0, folds: FoldAssignment | None = None, options: FitOptions | None = None,
                   weighted: bool = False, n_jobs: int = 1) -> EvaluationReport:
    """V-fold cross-validated RPS and misclassification for each model."""
    if data.records is None:
        raise EvaluationError("cross-validation needs covariate records")
    folds = folds or make_folds(data.n, V, seed)
    options = options or FitOptions()
    jobs = [(m, v) for m in models for v in range(1, folds.n_folds + 1)]

    def run(job):
        m, v = job
        train, valid = folds.split(v)
        res = _evaluate_model(m, data, design_spec, train, valid, options, weighted)
        res.fold = v
        return res

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    return EvaluationReport(results, folds.n_folds, folds.seed)


@dataclass
class GridPoint:
    lam: float
    rho: float
    rps: float = math.nan
    me: float = math.nan
    failed: bool = False
    message: str = ""


@dataclass
class GridReport:
    best: HyperParams
    points: list
    alpha: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([
            {"lambda": p.lam, "log10_lambda": math.log10(p.lam), "rho": p.rho, "alpha": self.alpha,
             "rps": p.rps, "me": p.me, "status": "failed" if p.failed else "ok", "message": p.message}
            for p in self.points
        ])

    @property
    def evaluated(self) -> list:
        return [p for p in self.points if not p.failed]


def select_best(points: Sequence[GridPoint]) -> GridPoint:
    """Lowest average RPS; ties go to the larger lambda, then the larger rho."""
    ok = [p for p in points if not p.failed]
    if not ok:
        raise EvaluationError("every grid point failed")
    return min(ok, key=lambda p: (p.rps, -p.lam, -p.rho))


def grid_search(data: OrdinalDataset, design_spec: DesignSpec, lambda_grid=DEFAULT_LAMBDA_GRID,
                rho_grid=DEFAULT_RHO_GRID, alpha: float = 0.5, V: int = 5, seed: int | None = 0,
                options: FitOptions | None = None, n_jobs: int = 1, folds: FoldAssignment | None = None) -> GridReport:
    """Cross-validated search over (lambda, rho) at fixed alpha.

    Every point uses the same folds and a cold start, so the outcome does
    not depend on the order in which points are evaluated.
    """
    lambda_grid, rho_grid = list(lambda_grid), list(rho_grid)
    if not lambda_grid or not rho_grid:
        raise EvaluationError("grids must be nonempty")
    folds = folds or make_folds(data.n, V, seed)
    options = options or FitOptions()

    def run(pair):
        lam, rho = pair
        point = GridPoint(lam, rho)
        try:
            model = ModelSpec(f"lambda={lam:g},rho={rho:g}", "semiparallel", HyperParams(lam, alpha, rho))
            report = cross_validate(data, design_spec, [model], folds=folds, options=options)
            point.rps = report.average(model.name, "rps")
            point.me = report.average(model.name, "me")
        except Exception as exc:  # recorded, excluded from selection
            log.warning("grid point lambda=%g rho=%g failed: %s", lam, rho, exc)
            point.failed, point.message = True, str(exc)
        return point

    pairs = [(lam, rho) for lam in lambda_grid for rho in rho_grid]
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            points = list(pool.map(run, pairs))
    else:
        points = [run(p) for p in pairs]
    best = select_best(points)
    return GridReport(HyperParams(best.lam, alpha, best.rho), points, alpha)
