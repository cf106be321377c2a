import math

import numpy as np
import pytest

from semipar.core import CoefficientSet, OrdinalDataset
from semipar.inference import (
    BootstrapEnsemble,
    InferenceError,
    bootstrap,
    make_strata,
    percentile_interval,
    pseudo_r2,
    r2_from_variance,
    resample_dataset,
    stratified_resample,
    variance_decomposition,
)
from semipar.optimizer import HyperParams, fit
from semipar.synth import PopulationConfig, generate

from conftest import random_instance


def test_strata_sizes_preserved(rng):
    labels = rng.choice(["a", "b", "c"], size=60)
    strata = make_strata(labels)
    for r in range(20):
        idx = stratified_resample(strata, r)
        assert idx.size == 60
        for s in strata:
            assert np.isin(idx, s.indices).sum() == s.size


def test_singleton_stratum_contributes_itself():
    strata = make_strata(["a", "a", "b", "a"])
    for r in range(10):
        assert 2 in stratified_resample(strata, r)


def test_same_seed_same_replicate(rng):
    strata = make_strata(rng.integers(0, 4, 50))
    np.testing.assert_array_equal(stratified_resample(strata, 7), stratified_resample(strata, 7))


def test_empty_strata_rejected():
    with pytest.raises(InferenceError):
        make_strata([])


def test_resample_dataset_size(rng):
    data, _, _ = random_instance(rng, n=30)
    rep = resample_dataset(data, make_strata(np.arange(30) % 3), 1)
    assert rep.n == 30


def test_percentile_type7():
    assert percentile_interval(np.arange(1, 101), level=0.95) == pytest.approx((3.475, 97.525), abs=1e-12)


def test_percentile_constant():
    assert percentile_interval(np.full(30, 2.5)) == (2.5, 2.5)


def test_percentile_half_level():
    vals = np.arange(1, 101)
    assert percentile_interval(vals, level=0.5) == pytest.approx(tuple(np.quantile(vals, [0.25, 0.75])))


@pytest.mark.parametrize("level", [0.0, 1.0, 1.5])
def test_percentile_level_checked(level):
    with pytest.raises(InferenceError):
        percentile_interval(np.arange(50), level=level)


def test_percentile_needs_twenty():
    with pytest.raises(InferenceError):
        percentile_interval(np.arange(19))


def test_percentile_equivariant(rng):
    v = rng.normal(size=200)
    lo, hi = percentile_interval(v)
    lo2, hi2 = percentile_interval(3 * v + 1)
    assert lo2 == pytest.approx(3 * lo + 1) and hi2 == pytest.approx(3 * hi + 1)


def test_r2_values():
    np.testing.assert_allclose(r2_from_variance([0.0, math.pi ** 2 / 3, math.pi ** 2]), [0, 0.5, 0.75], atol=1e-15)


def test_r2_intercept_only():
    coefs = CoefficientSet([-1, 1], np.zeros(2), np.zeros((2, 2)))
    X = np.random.default_rng(0).normal(size=(20, 2))
    np.testing.assert_array_equal(pseudo_r2(coefs, None, X), 0)


def test_r2_location_invariant(rng):
    _, X, coefs = random_instance(rng)
    moved = coefs.copy()
    moved.thresholds += 3.0
    np.testing.assert_allclose(pseudo_r2(coefs, None, X), pseudo_r2(moved, None, X), atol=1e-12)


def test_r2_needs_two_rows():
    with pytest.raises(InferenceError):
        pseudo_r2(CoefficientSet([0, 1], [0.0], [[0, 0]]), None, np.zeros((1, 1)))


def _population():
    return generate(PopulationConfig(n=300, L=4, seed=3))


def test_decomposition_identity():
    pop = _population()
    d = variance_decomposition(pop.truth, None, pop.design)
    np.testing.assert_allclose(d.fixed_effects + d.covariates + 2 * d.covariance, d.linear_predictor, atol=1e-9)
    np.testing.assert_allclose(d.pseudo_r2, pseudo_r2(pop.truth, None, pop.design), atol=0)


def test_decomposition_without_lhu_effects():
    pop = _population()
    coefs = pop.truth.coefs.copy()
    lhu = pop.design.block("lhu")
    coefs.shared[lhu] = 0
    coefs.specific[lhu] = 0
    d = variance_decomposition(coefs, None, pop.design)
    np.testing.assert_array_equal(d.fixed_effects, 0)
    np.testing.assert_allclose(d.covariates, d.linear_predictor, atol=1e-12)


def _ensemble(R=3, failures=None):
    reps = [CoefficientSet([-1, 1], [0.1 * r], [[0.0, 0.01 * r]]) for r in range(R)]
    failures = failures or []
    for i, _ in failures:
        reps[i] = None
    return BootstrapEnsemble(reps, list(range(R)), failures, columns=["x"], master_seed=5)


def test_reliability_flag():
    assert _ensemble(10, [(0, "boom")]).reliable
    assert not _ensemble(10, [(0, "boom"), (1, "boom")]).reliable


def test_ensemble_round_trip():
    ens = _ensemble(4, [(2, "not converged")])
    back = BootstrapEnsemble.from_dict(ens.to_dict())
    assert back.dumps() == ens.dumps()


def test_identity_resampling_reproduces_full_fit(rng):
    data, X, _ = random_instance(rng, n=40, P=2)
    h = HyperParams(0.02)
    full = fit(data, X, h)
    ens = bootstrap(data, X, h, R=1, strata_labels=np.arange(40), full_fit=full, warm_start=False)
    assert not ens.failures
    np.testing.assert_allclose(ens.replicates[0].to_vector(), full.coefs.to_vector(), atol=1e-5)


def test_bootstrap_thread_invariance(rng):
    data, X, _ = random_instance(rng, n=60, P=2)
    labels = np.arange(60) % 3
    a = bootstrap(data, X, HyperParams(0.02), R=6, seed=11, strata_labels=labels)
    b = bootstrap(data, X, HyperParams(0.02), R=6, seed=11, strata_labels=labels, n_jobs=3)
    assert a.dumps() == b.dumps()


def test_bootstrap_mean_near_full_fit():
    rng = np.random.default_rng(8)
    n = 2000
    X = rng.standard_normal((n, 3))
    truth = CoefficientSet([-0.8, 0.8], [0.5, -0.3, 0.2], np.zeros((3, 2)))
    from semipar.core import cumulative_probabilities, linear_predictor_matrix

    probs = cumulative_probabilities(linear_predictor_matrix(X, truth))
    y = (rng.random(n)[:, None] > np.cumsum(probs, axis=1)[:, :-1]).sum(axis=1)
    data = OrdinalDataset(y, (0, 1, 2))
    ens = bootstrap(data, X, HyperParams(1e-3), R=200, seed=2)
    assert ens.reliable
    mean = np.mean([c.to_vector() for c in ens.successes], axis=0)
    assert np.max(np.abs(mean - ens.full_fit.coefs.to_vector())) < 0.05
