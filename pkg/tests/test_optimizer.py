import numpy as np
import pytest
from scipy.optimize import minimize

from semipar.core import CoefficientSet, OrdinalDataset, intercept_only_thresholds, log_likelihood
from semipar.optimizer import (
    ConfigurationError,
    FitOptions,
    HyperParams,
    ModelFit,
    fit,
    fit_restricted,
    objective,
    objective_parts,
    penalty_value,
    soft_threshold,
)
from semipar.synth import PopulationConfig, generate

from conftest import kkt_violation, random_instance

EXAMPLE = CoefficientSet([0.0, 1.0], [2.0], [[1.0, -1.0]])


def test_penalty_zero_lambda():
    assert penalty_value(EXAMPLE, HyperParams(0.0)) == 0.0


def test_penalty_lasso_end():
    assert penalty_value(EXAMPLE, HyperParams(1.0, 1.0, 1.0)) == pytest.approx(4.0)


def test_penalty_ridge_end():
    assert penalty_value(EXAMPLE, HyperParams(1.0, 0.0, 1.0)) == pytest.approx(3.0)


def test_penalty_rho_weights_shared_part():
    # rho multiplies only the shared coefficients
    assert penalty_value(EXAMPLE, HyperParams(1.0, 1.0, 3.0)) == pytest.approx(3 * 2 + 2)


@pytest.mark.parametrize("z,g,out", [(3, 1, 2), (-0.5, 1, 0), (-3, 0.5, -2.5)])
def test_soft_threshold(z, g, out):
    assert soft_threshold(z, g) == out


@pytest.mark.parametrize("bad", [dict(lam=-1), dict(lam=1, alpha=1.5), dict(lam=1, rho=-0.1)])
def test_hyper_validation(bad):
    with pytest.raises(ConfigurationError):
        HyperParams(**bad)


def test_options_validation():
    with pytest.raises(ConfigurationError):
        FitOptions(objective_tolerance=0)
    with pytest.raises(ConfigurationError):
        FitOptions(max_outer_iterations=0)


def test_objective_unpenalized_and_parts(rng):
    data, X, coefs = random_instance(rng)
    assert objective(data, X, coefs, HyperParams(0.0)) == -log_likelihood(data, X, coefs)
    h = HyperParams(0.3, 0.4, 1.2)
    nll, pen = objective_parts(data, X, coefs, h)
    assert abs(nll + pen - objective(data, X, coefs, h)) < 1e-12


def test_objective_invalid_region_is_inf():
    data = OrdinalDataset([1], (0, 1, 2))
    coefs = CoefficientSet([0.0, 1.0], [0.0], [[2.0, -2.0]])
    assert objective(data, np.ones((1, 1)), coefs, HyperParams(0.1)) == np.inf


def test_intercept_closed_form_minimizes(rng):
    data, X, _ = random_instance(rng, n=60)
    c = intercept_only_thresholds(data.y, data.weights, 3)
    base = CoefficientSet(c, np.zeros(X.shape[1]), np.zeros((X.shape[1], 2)))
    best = objective(data, X, base, HyperParams(0.0))
    for shift in (-1e-3, 1e-3):
        for j in range(2):
            moved = base.copy()
            moved.thresholds[j] += shift
            assert objective(data, X, moved, HyperParams(0.0)) > best


def test_unrestricted_needs_lambda(rng):
    data, X, _ = random_instance(rng)
    with pytest.raises(ConfigurationError):
        fit(data, X, HyperParams(0.0))


@pytest.mark.parametrize("seed", range(5))
def test_subgradient_conditions(seed):
    rng = np.random.default_rng(seed)
    data, X, _ = random_instance(rng, n=80, P=4, specific_scale=0.1)
    result = fit(data, X, HyperParams(0.02, 0.5, 1.0))
    assert result.converged
    assert kkt_violation(data, X, result) < 1e-4
    assert np.all(np.diff(result.objective_trace) <= 1e-10)


def test_lasso_sets_exact_zeros(rng):
    data, X, _ = random_instance(rng, n=80, P=6)
    result = fit(data, X, HyperParams(0.05, 1.0, 1.0))
    assert np.sum(result.coefs.specific == 0) > 0


def test_shrinkage_monotone(rng):
    data, X, _ = random_instance(rng, n=120, P=4)
    norms = []
    for lam in (0.001, 0.005, 0.02, 0.08, 0.3):
        c = fit(data, X, HyperParams(lam, 0.5, 1.0)).coefs
        norms.append(np.abs(c.shared).sum() + np.abs(c.specific).sum())
    assert all(b <= a + 1e-6 for a, b in zip(norms, norms[1:]))


def test_huge_lambda_gives_intercept_only(rng):
    data, X, _ = random_instance(rng, n=100)
    result = fit(data, X, HyperParams(1e6))
    assert np.all(result.coefs.shared == 0) and np.all(result.coefs.specific == 0)
    np.testing.assert_allclose(result.coefs.thresholds, intercept_only_thresholds(data.y, data.weights, 3),
                               atol=1e-6)


def test_parallel_restriction_zeroes_specific(rng):
    data, X, _ = random_instance(rng)
    result = fit_restricted(data, X, HyperParams(0.0), restriction="parallel")
    assert np.all(result.coefs.specific == 0)
    assert result.restriction == "parallel"


def test_nonparallel_restriction_zeroes_shared(rng):
    data, X, _ = random_instance(rng)
    result = fit_restricted(data, X, HyperParams(0.0), restriction="nonparallel")
    assert np.all(result.coefs.shared == 0)


def test_intercept_only_parallel_fit(rng):
    y = rng.integers(0, 3, 200)
    data = OrdinalDataset(y, (0, 1, 2))
    result = fit_restricted(data, np.zeros((200, 0)), HyperParams(0.0))
    np.testing.assert_allclose(result.coefs.thresholds, intercept_only_thresholds(y, np.ones(200), 3), atol=1e-6)


def test_parallel_recovery_without_specific_effects():
    truth = CoefficientSet([-0.8, 0.9], [0.7, -0.4, 0.25], np.zeros((3, 2)))
    pop = generate(PopulationConfig(n=10000, L=1, binaries=(), numerics=("z1", "z2", "z3"), stratum_covariates=False,
                                    include_lhu=False, interactions=False, scaling="none", thresholds=(-0.8, 0.9),
                                    truth=truth, seed=4))
    result = fit_restricted(pop.dataset, pop.design, HyperParams(0.0))
    assert np.max(np.abs(result.coefs.shared - truth.shared)) < 0.05


def test_nonparallel_matches_dense_optimizer(rng):
    # bounded covariates and mild margin differences keep both solutions interior
    n = 2000
    X = rng.uniform(-1, 1, (n, 2))
    truth = CoefficientSet([-0.7, 0.8], [0.0, 0.0], [[0.5, 0.7], [-0.3, -0.2]])
    from semipar.core import linear_predictor_matrix, cumulative_probabilities, gradient

    probs = cumulative_probabilities(linear_predictor_matrix(X, truth))
    y = (rng.random(n)[:, None] > np.cumsum(probs, axis=1)[:, :-1]).sum(axis=1)
    data = OrdinalDataset(y, (0, 1, 2))
    result = fit_restricted(data, X, HyperParams(0.0), restriction="nonparallel")
    assert result.converged and not result.warnings

    def unpack(v):
        return CoefficientSet(v[:2], np.zeros(2), v[2:].reshape(2, 2))

    def nll(v):
        return objective(data, X, unpack(v), HyperParams(0.0))

    def jac(v):
        g = gradient(data, X, unpack(v))
        return -np.concatenate([g.thresholds, g.specific.ravel()])

    start = np.concatenate([intercept_only_thresholds(data.y, data.weights, 3), np.zeros(4)])
    dense = minimize(nll, start, jac=jac, method="BFGS", options={"gtol": 1e-10})
    assert abs(result.objective_value - dense.fun) < 1e-6


def test_separation_flagged():
    X = np.array([[-3.0], [-2.5], [-0.5], [0.5], [2.5], [3.0]])
    data = OrdinalDataset([0, 0, 1, 1, 2, 2], (0, 1, 2))
    result = fit_restricted(data, X, HyperParams(0.0))
    assert any("separation" in w for w in result.warnings)
    assert result.hyper.lam == pytest.approx(1e-8)


def test_rho_large_lambda_large_matches_parallel(rng):
    # shared penalty lam*rho stays fixed while the specific penalty explodes
    data, X, _ = random_instance(rng, n=150, P=3)
    target = 0.01
    semi = fit(data, X, HyperParams(1e6, 0.5, target / 1e6))
    par = fit_restricted(data, X, HyperParams(target, 0.5, 1.0))
    assert np.max(np.abs(semi.coefs.specific)) == 0
    assert np.max(np.abs(semi.coefs.to_vector() - par.coefs.to_vector())) < 1e-4


def test_warm_start_reaches_same_point(rng):
    data, X, _ = random_instance(rng, n=100)
    h = HyperParams(0.01)
    cold = fit(data, X, h)
    warm = fit(data, X, h, init=cold.coefs)
    np.testing.assert_allclose(warm.coefs.to_vector(), cold.coefs.to_vector(), atol=1e-5)


def test_serialization_round_trip(rng):
    data, X, _ = random_instance(rng)
    result = fit(data, X, HyperParams(0.01, 0.3, 1.1))
    back = ModelFit.loads(result.dumps())
    np.testing.assert_array_equal(back.coefs.to_vector(), result.coefs.to_vector())
    assert back.hyper == result.hyper and back.converged == result.converged
