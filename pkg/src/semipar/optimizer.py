"""Elastic-net semi-parallel penalty and its coordinate-descent minimizer.

The objective is

    M(c, beta, B) = -loglik(c, beta, B)
                    + lam * ( rho * sum_p en(beta_p) + sum_{p,j} en(B_pj) )

with ``en(t) = alpha |t| + (1 - alpha) t^2 / 2``.  Thresholds are never
penalized.

Each outer iteration builds the second-order model of the negative
log-likelihood in coefficient space (assembled from the small positive
semi-definite per-row Hessians in the linear predictors), runs cyclic
soft-thresholded coordinate updates on that penalized model, and then halves the step
towards the proposal until the true objective decreases.  Iterates that
would cross the cumulative curves on the training rows score +inf, so
the line search backs away from them.

The valid region is a polyhedron in the coefficients (consecutive linear
predictors must not cross), and the loss is convex on it.  When the
descent is stopped by that boundary, a log-barrier on the gaps between
consecutive linear predictors is added and shrunk stage by stage, which
walks the iterate along the boundary to the constrained optimum.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    CoefficientSet,
    InvalidRegion,
    OrdinalDataset,
    StructuralError,
    _arrays,
    eta_derivatives,
    intercept_only_thresholds,
    loglik_arrays,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = "semipar-fit/1"
THRESHOLD_GAP = 1e-8
SEPARATION_BOUND = 30.0
SEPARATION_RIDGE = 1e-8
PERFECT_FIT = 1e-6
BARRIER_START = 1e-4
BARRIER_END = 1e-12
PASSES_PER_ROUND = 10
STAGE_ITERATIONS = 50
MAX_MODEL_STEP = 10.0
RESTRICTIONS = ("none", "parallel", "nonparallel")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class HyperParams:
    lam: float
    alpha: float = 0.5
    rho: float = 1.0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.lam}")
        if not 0 <= self.alpha <= 1:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.rho >= 0:
            raise ConfigurationError(f"rho must be >= 0, got {self.rho}")


@dataclass(frozen=True)
class FitOptions:
    max_outer_iterations: int = 200
    objective_tolerance: float = 1e-10
    coordinate_tolerance: float = 1e-7
    step_halving_max: int = 30
    max_inner_passes: int = 500
    restriction: str = "none"

    def __post_init__(self):
        if self.restriction not in RESTRICTIONS:
            raise ConfigurationError(f"unknown restriction {self.restriction!r}")
        if not (self.objective_tolerance > 0 and self.coordinate_tolerance > 0):
            raise ConfigurationError("tolerances must be positive")
        if min(self.max_outer_iterations, self.step_halving_max, self.max_inner_passes) < 1:
            raise ConfigurationError("iteration caps must be >= 1")


@dataclass
class ModelFit:
    coefs: CoefficientSet
    hyper: HyperParams
    objective_trace: list
    converged: bool
    n_iterations: int
    restriction: str = "none"
    loglik: float = float("nan")
    penalty: float = float("nan")
    warnings: list = field(default_factory=list)
    categories: tuple = ()
    design: dict | None = None

    @property
    def objective_value(self) -> float:
        return self.objective_trace[-1]

    def column_names(self) -> list[str]:
        if self.design:
            return [c["name"] for c in self.design["columns"]]
        return [f"x{p}" for p in range(self.coefs.n_features)]

    def to_dict(self) -> dict:
        names = self.column_names()
        c = self.coefs
        return {
            "format": FORMAT_VERSION,
            "hyper": {"lambda": self.hyper.lam, "alpha": self.hyper.alpha, "rho": self.hyper.rho},
            "restriction": self.restriction,
            "categories": list(self.categories),
            "thresholds": c.thresholds.tolist(),
            "columns": names,
            "shared": dict(zip(names, c.shared.tolist())),
            "specific": {nm: row for nm, row in zip(names, c.specific.tolist())},
            "diagnostics": {
                "converged": self.converged,
                "n_iterations": self.n_iterations,
                "objective": self.objective_trace[-1] if self.objective_trace else None,
                "loglik": self.loglik,
                "penalty": self.penalty,
                "objective_trace": list(self.objective_trace),
                "warnings": list(self.warnings),
            },
            "design": self.design,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelFit":
        if doc.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported fit format {doc.get('format')!r}")
        names = doc["columns"]
        coefs = CoefficientSet(
            doc["thresholds"],
            [doc["shared"][nm] for nm in names],
            np.array([doc["specific"][nm] for nm in names], dtype=float).reshape(len(names), len(doc["thresholds"])),
        )
        h = doc["hyper"]
        d = doc["diagnostics"]
        return cls(coefs, HyperParams(h["lambda"], h["alpha"], h["rho"]), d["objective_trace"], d["converged"],
                   d["n_iterations"], doc["restriction"], d["loglik"], d["penalty"], d["warnings"],
                   tuple(doc["categories"]), doc.get("design"))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "ModelFit":
        return cls.from_dict(json.loads(text))


def _en(t: np.ndarray, alpha: float) -> float:
    return float(alpha * np.abs(t).sum() + 0.5 * (1 - alpha) * np.dot(t.ravel(), t.ravel()))


def penalty_value(coefs: CoefficientSet, hyper: HyperParams) -> float:
    if hyper.lam == 0:
        return 0.0
    return hyper.lam * (hyper.rho * _en(coefs.shared, hyper.alpha) + _en(coefs.specific, hyper.alpha))


def soft_threshold(z, gamma):
    """``sign(z) * max(|z| - gamma, 0)``."""
    return np.sign(z) * np.maximum(np.abs(z) - gamma, 0.0)


def _objective_arrays(X, y, w, coefs, hyper) -> float:
    try:
        ll = loglik_arrays(X, y, w, coefs)
    except InvalidRegion:
        return math.inf
    return -ll + penalty_value(coefs, hyper)


def objective(data: OrdinalDataset, design, coefs: CoefficientSet, hyper: HyperParams) -> float:
    """Penalized negative log-likelihood; ``+inf`` outside the valid region."""
    X, y, w = _arrays(data, design)
    return _objective_arrays(X, y, w, coefs, hyper)


def objective_parts(data: OrdinalDataset, design, coefs: CoefficientSet, hyper: HyperParams) -> tuple[float, float]:
    """``(-loglik, penalty)``; raises InvalidRegion instead of returning inf."""
    X, y, w = _arrays(data, design)
    return -loglik_arrays(X, y, w, coefs), penalty_value(coefs, hyper)


def _coordinate_step(value, a, h, l1, l2):
    """Minimize ``a t + h t^2 / 2 + l1 |v + t| + l2 (v + t)^2 / 2`` over t."""
    denom = h + l2
    if denom <= 0:
        return 0.0
    z = h * value - a
    z = z - l1 if z > l1 else (z + l1 if z < -l1 else 0.0)
    return z / denom - value


def _lift_matrix(P: int, J: int) -> np.ndarray:
    """Linear map from ``(c, beta, vec(B))`` to the stacked per-margin ``(c_j, gamma_j)``."""
    width = P + 1
    M = np.zeros((J * width, J + P + P * J))
    for j in range(J):
        M[j * width, j] = 1.0
        rows = j * width + 1 + np.arange(P)
        M[rows, J + np.arange(P)] = 1.0
        M[rows, J + P + np.arange(P) * J + j] = 1.0
    return M


class _Solver:
    def __init__(self, X, y, w, K, hyper, options):
        self.X = X
        self.Z = np.hstack([np.ones((X.shape[0], 1)), X])
        self.y = y
        self.w = w
        self.J = J = K - 1
        self.P = P = X.shape[1]
        self.hyper = hyper
        self.opt = options
        self.M = _lift_matrix(P, J)
        lam, a = hyper.lam, hyper.alpha
        dim = J + P + P * J
        self.l1 = np.zeros(dim)
        self.l2 = np.zeros(dim)
        self.l1[J:J + P], self.l2[J:J + P] = lam * hyper.rho * a, lam * hyper.rho * (1 - a)
        self.l1[J + P:], self.l2[J + P:] = lam * a, lam * (1 - a)
        active = np.ones(dim, dtype=bool)
        if options.restriction == "nonparallel":
            active[J:J + P] = False
        if options.restriction == "parallel":
            active[J + P:] = False
        self.active = np.flatnonzero(active[J:]) + J
        self.mu = 0.0  # weight of the log-barrier on the curve gaps

    def gaps(self, coefs) -> np.ndarray:
        eta = coefs.thresholds[None, :] + self.X @ coefs.effective()
        return np.diff(eta, axis=1)

    def objective(self, coefs):
        value = _objective_arrays(self.X, self.y, self.w, coefs, self.hyper)
        if self.mu > 0 and math.isfinite(value):
            gaps = self.gaps(coefs)
            if gaps.size and gaps.min() <= 0:
                return math.inf
            value -= self.mu / self.y.size * float(np.log(gaps).sum())
        return value

    def model_value(self, g, A, theta0, theta):
        d = theta - theta0
        return float(g @ d + 0.5 * d @ A @ d + self.l1 @ np.abs(theta) + 0.5 * self.l2 @ (theta * theta))

    def quadratic_model(self, coefs: CoefficientSet):
        """Gradient and Hessian of the objective in coefficient space."""
        J, Z, M = self.J, self.Z, self.M
        width = Z.shape[1]
        eta = coefs.thresholds[None, :] + self.X @ coefs.effective()
        grad, hdiag, hoff = eta_derivatives(eta, self.y, self.w)
        G = np.zeros((J * width, J * width))
        for j in range(J):
            sj = slice(j * width, (j + 1) * width)
            G[sj, sj] = Z.T @ (Z * hdiag[:, j:j + 1])
            if j < J - 1:
                sk = slice((j + 1) * width, (j + 2) * width)
                G[sj, sk] = Z.T @ (Z * hoff[:, j:j + 1])
                G[sk, sj] = G[sj, sk].T
        g = M.T @ (Z.T @ grad).T.reshape(-1)
        A = M.T @ G @ M
        if self.mu > 0:
            # the barrier acts on gaps only; adding it through the exact gap map
            # keeps its large curvature out of the directions that move all curves together
            gaps = np.diff(eta, axis=1)
            d = (self.mu / eta.shape[0]) / gaps
            for j in range(J - 1):
                D = M[(j + 1) * width:(j + 2) * width] - M[j * width:(j + 1) * width]
                g -= D.T @ (Z.T @ d[:, j])
                A += D.T @ (Z.T @ (Z * (d[:, j:j + 1] / gaps[:, j:j + 1]))) @ D
        return g, A

    def proposal(self, coefs: CoefficientSet):
        """Minimize the penalized local quadratic model.

        Rounds of cyclic coordinate descent settle the sign pattern; each
        round ends with an exact solve on the current nonzero set, which
        copes with stiff directions that single coordinates cannot follow.
        Returns the proposed coefficients and the predicted decrease.
        """
        J = self.J
        g, A = self.quadratic_model(coefs)
        theta0 = coefs.to_vector()
        theta = theta0.tolist()
        diag = np.diag(A).tolist()
        l1, l2 = self.l1.tolist(), self.l2.tolist()
        r = g.copy()  # model gradient at the running proposal
        tol = self.opt.coordinate_tolerance
        scale = max(1.0, abs(self.objective(coefs)))
        passes = 0
        floor = 0.01 * self.opt.objective_tolerance * scale
        last = self.model_value(g, A, theta0, theta0)
        while passes < self.opt.max_inner_passes:
            settled = False
            for _ in range(min(PASSES_PER_ROUND, self.opt.max_inner_passes - passes)):
                passes += 1
                biggest = 0.0
                gain = 0.0
                for j in range(J):
                    if diag[j] <= 0:
                        continue
                    a = float(r[j])
                    lo = theta[j - 1] + THRESHOLD_GAP if j > 0 else -math.inf
                    hi = theta[j + 1] - THRESHOLD_GAP if j < J - 1 else math.inf
                    new = min(max(theta[j] - a / diag[j], lo, theta[j] - MAX_MODEL_STEP), hi, theta[j] + MAX_MODEL_STEP)
                    t = new - theta[j]
                    if t != 0.0:
                        gain += a * t + 0.5 * diag[j] * t * t
                        theta[j] = new
                        r += t * A[j]
                        biggest = max(biggest, abs(t))
                for k in self.active:
                    a = float(r[k])
                    v = theta[k]
                    t = min(max(_coordinate_step(v, a, diag[k], l1[k], l2[k]), -MAX_MODEL_STEP), MAX_MODEL_STEP)
                    if t != 0.0:
                        nv = v + t
                        gain += (a * t + 0.5 * diag[k] * t * t
                                 + l1[k] * (abs(nv) - abs(v)) + 0.5 * l2[k] * (nv * nv - v * v))
                        theta[k] = nv
                        r += t * A[k]
                        biggest = max(biggest, abs(t))
                if biggest < tol or -gain < floor:
                    settled = True
                    break
            moved = 0.0
            for _ in range(len(theta)):
                # a step cut at a sign change drops that coordinate; re-solve at once
                change, dropped = self._support_step(A, r, theta)
                moved = max(moved, change)
                if not dropped:
                    break
            value = self.model_value(g, A, theta0, np.array(theta))
            if (settled and moved < tol) or last - value < floor:
                break
            last = value
        theta = np.array(theta)
        predicted = self.model_value(g, A, theta0, theta) - self.model_value(g, A, theta0, theta0)
        return CoefficientSet.from_vector(theta, self.P, J), -predicted

    def _support_step(self, A, r, theta) -> float:
        """Exact model minimizer over the nonzero coordinates with signs held fixed.

        The step is cut where a penalized coordinate would change sign (it
        is then set to zero) or where thresholds would lose their order, so
        the model never increases.  Updates ``theta`` and ``r`` in place and
        returns the largest coordinate change and whether a coordinate left the support.
        """
        J = self.J
        vals = np.array(theta)
        free = [j for j in range(J)] + [k for k in self.active if vals[k] != 0 or self.l1[k] == 0]
        F = np.array(free)
        sign = np.sign(vals[F])
        H = A[np.ix_(F, F)] + np.diag(self.l2[F])
        # a tiny shift turns flat directions into long steps that the sign cut below shortens
        H[np.diag_indices_from(H)] += 1e-12 * max(1.0, float(np.max(np.abs(np.diag(H)))))
        slope = r[F] + self.l1[F] * sign + self.l2[F] * vals[F]
        try:
            step = -np.linalg.solve(H, slope)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(H, slope, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            return 0.0, False
        t = 1.0
        zero_at = None
        lasso = (self.l1[F] > 0) & (sign != 0)
        crossing = lasso & (sign * step < 0)
        if crossing.any():
            ratios = -vals[F][crossing] / step[crossing]
            i = int(np.argmin(ratios))
            if ratios[i] < t:
                t = float(ratios[i])
                zero_at = int(F[np.flatnonzero(crossing)[i]])
        if J > 1:
            dc = np.diff(step[:J])
            room = np.diff(vals[:J]) - THRESHOLD_GAP
            shrinking = dc < 0
            if shrinking.any():
                limit = float(np.min(np.maximum(room[shrinking], 0.0) / -dc[shrinking]))
                if limit < t:
                    t, zero_at = limit, None
        longest = float(np.max(np.abs(step), initial=0.0))
        if t * longest > MAX_MODEL_STEP:
            # an unbounded flat direction; coordinate descent takes over from here
            t, zero_at = MAX_MODEL_STEP / longest, None
        if t <= 0:
            return 0.0, False
        delta = t * step
        new = vals[F] + delta
        if zero_at is not None:
            new[np.flatnonzero(F == zero_at)[0]] = 0.0
            delta = new - vals[F]
        change = (r[F] @ delta + 0.5 * delta @ A[np.ix_(F, F)] @ delta
                  + self.l1[F] @ (np.abs(new) - np.abs(vals[F])) + 0.5 * self.l2[F] @ (new * new - vals[F] ** 2))
        if not change < 0:
            # an ill-conditioned solve can point uphill; keep the coordinate-descent point
            return 0.0, False
        for pos, k in enumerate(F):
            theta[k] = float(new[pos])
        r += A[:, F] @ delta
        return float(np.max(np.abs(delta), initial=0.0)), zero_at is not None


def _check_inputs(data: OrdinalDataset, design, init):
    X, y, w = _arrays(data, design)
    K = data.n_categories
    if init is not None:
        if init.n_features != X.shape[1] or init.n_margins != K - 1:
            raise StructuralError("initial coefficients do not match the design")
    return X, y, w, K


def _descend(solver, coefs, current, trace, options, watch_separation):
    """Damped second-order descent from ``coefs``; appends accepted values to ``trace``."""
    J, P = solver.J, solver.P
    tol = options.objective_tolerance
    converged = separated = blocked = False
    it = 0
    for it in range(1, options.max_outer_iterations + 1):
        scale = max(1.0, abs(current))
        prop, predicted = solver.proposal(coefs)
        if predicted <= tol * scale:
            converged = True
            break
        start = coefs.to_vector()
        step = prop.to_vector() - start
        t = _fraction_to_boundary(solver, coefs, prop) if solver.mu > 0 else 1.0
        accepted = None
        blocked_here = False
        for _ in range(options.step_halving_max + 1):
            trial = CoefficientSet.from_vector(start + t * step, P, J)
            value = solver.objective(trial)
            if value <= current:
                accepted = (trial, value)
                break
            blocked_here |= value == math.inf
            t *= 0.5
        blocked |= blocked_here
        if accepted is None:
            # no descent along the model direction: numerically stationary
            converged = predicted <= math.sqrt(tol) * scale or blocked_here
            break
        coefs, new = accepted
        decrease = current - new
        current = new
        if trace is not None:
            trace.append(current)
        if watch_separation and np.max(np.abs(np.concatenate([coefs.shared, coefs.specific.ravel()])),
                                       initial=0) > SEPARATION_BOUND:
            separated = True
            break
        if decrease <= tol * scale:
            # a shortened step that gains nothing is a stall unless the valid
            # region itself cut the step short
            converged = t == 1.0 or blocked_here
            break
    return coefs, current, converged, it, separated, blocked


def _fraction_to_boundary(solver, coefs, prop, keep=0.99):
    """Largest step fraction (capped at 1) that keeps every gap above ``1 - keep`` of its value."""
    gaps = solver.gaps(coefs)
    change = solver.gaps(prop) - gaps  # gaps are linear in the coefficients
    closing = change < 0
    if not closing.any():
        return 1.0
    return min(1.0, keep * float(np.min(gaps[closing] / -change[closing])))


def _barrier_polish(solver, coefs, current, options):
    """Follow a shrinking log-barrier from a point where the valid region stopped the descent.

    Returns the better of the starting point and the final barrier iterate,
    its objective, whether the last stage converged, and the iterations used.
    """
    J, P = solver.J, solver.P
    anchor = CoefficientSet(intercept_only_thresholds(solver.y, solver.w, J + 1), np.zeros(P), np.zeros((P, J)))
    if not (np.all(np.isfinite(anchor.thresholds)) and np.all(np.diff(anchor.thresholds) > 0)):
        return coefs, current, True, 0
    theta = coefs.to_vector()
    if solver.gaps(coefs).min() <= 0:
        # nudge strictly inside along the segment to an interior point
        theta = (1 - 1e-6) * theta + 1e-6 * anchor.to_vector()
    point = CoefficientSet.from_vector(theta, P, J)
    iterations, converged = 0, True
    previous = math.inf
    final = current
    mu = BARRIER_START
    try:
        while mu >= BARRIER_END:
            solver.mu = mu
            stage = options
            if mu > BARRIER_END * 1.5:
                # intermediate stages only trace the central path; their own
                # suboptimality is of the order of mu anyway
                stage = replace(options, objective_tolerance=max(options.objective_tolerance, 1e-2 * mu),
                                max_outer_iterations=min(options.max_outer_iterations, STAGE_ITERATIONS))
            solver.opt = stage
            point, _, ok, its, _, _ = _descend(solver, point, solver.objective(point), None, stage, False)
            iterations += its
            solver.mu = 0.0
            solver.opt = options
            final = solver.objective(point)
            # a stalled stage is fine once the unpenalized-by-barrier value has settled
            converged = ok or abs(previous - final) <= options.objective_tolerance * max(1.0, abs(final))
            previous = final
            mu *= 0.1
    finally:
        solver.mu = 0.0
        solver.opt = options
    if final < current:
        return point, final, converged, iterations
    return coefs, current, True, iterations


def _minimize(X, y, w, K, hyper, options, init=None):
    J, P = K - 1, X.shape[1]
    if init is None:
        coefs = CoefficientSet(intercept_only_thresholds(y, w, K), np.zeros(P), np.zeros((P, J)))
    else:
        coefs = init.copy()
        if options.restriction == "parallel":
            coefs.specific[:] = 0
        elif options.restriction == "nonparallel":
            coefs.shared[:] = 0
    solver = _Solver(X, y, w, K, hyper, options)
    current = solver.objective(coefs)
    if not math.isfinite(current):
        # warm start outside the valid region for these rows
        coefs = CoefficientSet(intercept_only_thresholds(y, w, K), np.zeros(P), np.zeros((P, J)))
        current = solver.objective(coefs)
    trace = [current]
    coefs, current, converged, it, separated, boundary = _descend(solver, coefs, current, trace, options,
                                                                  hyper.lam == 0)
    if hyper.lam == 0 and not separated and current < PERFECT_FIT:
        # a vanishing unpenalized loss means the classes are perfectly separated
        separated = True
    if boundary and J > 1 and not separated:
        coefs, polished, ok, extra = _barrier_polish(solver, coefs, current, options)
        it += extra
        if polished < current:
            current = polished
            trace.append(current)
            converged = ok
    if boundary and J > 1:
        # only report the boundary when the final curves actually nearly meet
        boundary = float(solver.gaps(coefs).min()) < 1e-6
    return coefs, trace, converged, it, separated, boundary and J > 1


def _finish(coefs, trace, converged, it, hyper, options, X, y, w, data, design, warnings):
    ll = loglik_arrays(X, y, w, coefs)
    meta = design.metadata() if hasattr(design, "metadata") else None
    if not converged:
        log.info("fit stopped without convergence after %d iterations", it)
    return ModelFit(coefs, hyper, trace, converged, it, options.restriction, ll,
                    penalty_value(coefs, hyper), warnings, data.categories, meta)


def fit(data: OrdinalDataset, design, hyper: HyperParams, options: FitOptions | None = None,
        init: CoefficientSet | None = None) -> ModelFit:
    """Penalized semi-parallel fit (or a restricted fit when ``options`` says so)."""
    options = options or FitOptions()
    if options.restriction == "none" and hyper.lam == 0:
        raise ConfigurationError("the unrestricted semi-parallel model is not identifiable with lambda = 0")
    X, y, w, K = _check_inputs(data, design, init)
    coefs, trace, converged, it, separated, boundary = _minimize(X, y, w, K, hyper, options, init)
    warnings = []
    if separated:
        warnings.append(
            f"separation: coefficients exceeded {SEPARATION_BOUND:g} on the logit scale or the data are fit perfectly; "
            f"refit with ridge lambda={SEPARATION_RIDGE:g}"
        )
        log.warning(warnings[-1])
        hyper = HyperParams(SEPARATION_RIDGE, 0.0, 1.0)
        coefs, trace, converged, it, _, boundary = _minimize(X, y, w, K, hyper, options, init)
    if boundary:
        warnings.append("solution touches the boundary of the valid-probability region (cumulative curves meet on some rows)")
    return _finish(coefs, trace, converged, it, hyper, options, X, y, w, data, design, warnings)


def fit_restricted(data: OrdinalDataset, design, hyper: HyperParams, options: FitOptions | None = None,
                   restriction: str | None = None, init: CoefficientSet | None = None) -> ModelFit:
    """Parallel (B = 0) or non-parallel (beta = 0) fit; lambda = 0 is allowed."""
    options = options or FitOptions(restriction="parallel")
    if restriction is not None:
        options = replace(options, restriction=restriction)
    if options.restriction == "none":
        raise ConfigurationError("fit_restricted needs restriction='parallel' or 'nonparallel'")
    return fit(data, design, hyper, options, init)


def predict_proba(fit_or_coefs, X) -> tuple[np.ndarray, np.ndarray]:
    """Category probabilities for new rows and a mask of rows whose curves crossed."""
    from .core import linear_predictor_matrix, rearranged_probabilities

    coefs = getattr(fit_or_coefs, "coefs", fit_or_coefs)
    X = np.asarray(getattr(X, "values", X), dtype=float)
    return rearranged_probabilities(linear_predictor_matrix(X, coefs))
