import numpy as np
import pytest

from semipar.core import CoefficientSet, OrdinalDataset, linear_predictor_matrix, rearranged_probabilities


def random_instance(rng, n=40, P=4, K=3, specific_scale=0.2, weighted=True):
    """Small dense problem whose truth keeps the cumulative curves apart."""
    J = K - 1
    X = rng.standard_normal((n, P))
    c = np.sort(rng.uniform(-1.5, 1.5, J)) + np.arange(J) * 0.8
    coefs = CoefficientSet(c, rng.normal(0, 0.5, P), rng.normal(0, specific_scale, (P, J)))
    probs, _ = rearranged_probabilities(linear_predictor_matrix(X, coefs))
    u = rng.random(n)
    y = (u[:, None] > np.cumsum(probs, axis=1)[:, :-1]).sum(axis=1)
    w = rng.uniform(0.5, 2.0, n) if weighted else None
    return OrdinalDataset(y, tuple(range(K)), None, w), X, coefs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def _gap_normals(X, coefs, active_gap):
    """Gradients (in the flattened coefficient order) of the curve gaps that are nearly closed."""
    J, P = coefs.n_margins, coefs.n_features
    eta = coefs.thresholds[None, :] + X @ coefs.effective()
    rows = []
    for i, j in zip(*np.nonzero(np.diff(eta, axis=1) < active_gap)):
        v = np.zeros(J + P + P * J)
        v[j], v[j + 1] = -1.0, 1.0
        spec = np.zeros((P, J))
        spec[:, j], spec[:, j + 1] = -X[i], X[i]
        v[J + P:] = spec.ravel()
        rows.append(v)
    return np.array(rows).reshape(-1, J + P + P * J)


def kkt_violation(data, X, fit, active_gap=1e-6, zero_tol=1e-8):
    """Largest per-coordinate violation of the optimality conditions of the penalized fit.

    The objective is infinite where consecutive cumulative curves cross, so
    rows whose curves touch contribute nonnegative multipliers on their gap
    constraints; those are fitted by nonnegative least squares.  Penalized
    coefficients below ``zero_tol`` in magnitude count as zero.
    """
    from scipy.optimize import nnls

    from semipar.core import gradient

    h = fit.hyper
    g = -gradient(data, X, fit.coefs).to_vector()  # gradient of the negative log-likelihood
    c = fit.coefs
    J, P = c.n_margins, c.n_features
    vec = c.to_vector()
    vec[J:][np.abs(vec[J:]) <= zero_tol] = 0.0
    l1 = np.zeros_like(vec)
    l2 = np.zeros_like(vec)
    free = np.zeros(vec.size, dtype=bool)
    free[:J] = True
    if fit.restriction != "nonparallel":
        l1[J:J + P], l2[J:J + P] = h.lam * h.rho * h.alpha, h.lam * h.rho * (1 - h.alpha)
        free[J:J + P] = True
    if fit.restriction != "parallel":
        l1[J + P:], l2[J + P:] = h.lam * h.alpha, h.lam * (1 - h.alpha)
        free[J + P:] = True
    smooth = g + l2 * vec
    normals = _gap_normals(X, c, active_gap)
    if normals.size:
        eq = free & ((vec != 0) | (np.arange(vec.size) < J))
        target = smooth[eq] + l1[eq] * np.sign(vec[eq])
        mult, _ = nnls(normals[:, eq].T, target)
        smooth = smooth - normals.T @ mult
    nz = free & (vec != 0)
    zero = free & (vec == 0)
    worst = float(np.max(np.abs(smooth[:J])))
    worst = max(worst, float(np.max(np.abs(smooth[nz] + l1[nz] * np.sign(vec[nz])), initial=0.0)))
    worst = max(worst, float(np.max(np.abs(smooth[zero]) - l1[zero], initial=0.0)))
    return worst


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
