import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rpsoftmax.core import InvalidParameterError, NoUniqueBestActionError
from rpsoftmax.environments import (
    enumerate_outcomes,
    environment_from_spec,
    environment_to_spec,
    make_bernoulli,
    make_correlated,
    make_deterministic,
    make_finite_support,
    sample_round,
)

ALL_KINDS = [
    make_bernoulli([0.2, 0.8, 0.5]),
    make_correlated([0.3, 0.6, 0.9], 0.4),
    make_deterministic([0.0, 1.0, 0.25]),
    make_finite_support([((0, 1, 0.5), 0.25), ((1, 0, 0.5), 0.5), ((0.5, 0.5, 1), 0.25)]),
]


def test_bernoulli_degenerate(rng):
    x = make_bernoulli([0, 1]).sample(rng, 1000)
    assert np.all(x == [0.0, 1.0])


def test_bernoulli_means_and_independence(rng):
    x = make_bernoulli([0.5, 0.5]).sample(rng, 10**5)
    assert np.all(np.abs(x.mean(axis=0) - 0.5) <= 0.01)
    y = make_bernoulli([0.2, 0.8]).sample(rng, 10**5)
    assert abs(np.cov(y.T)[0, 1]) <= 0.02


@pytest.mark.parametrize("bad", [[0.5, 1.2], [-0.1, 0.5], [0.5], [float("nan"), 0.5]])
def test_bernoulli_rejects(bad):
    with pytest.raises(InvalidParameterError):
        make_bernoulli(bad)


def test_correlated_zero_coupling_matches_bernoulli_law():
    a, pa = make_correlated([0.2, 0.7], 0.0).support()
    b, pb = make_bernoulli([0.2, 0.7]).support()
    law_a = {tuple(v): p for v, p in zip(a.tolist(), pa.tolist())}
    law_b = {tuple(v): p for v, p in zip(b.tolist(), pb.tolist())}
    assert law_a.keys() == law_b.keys()
    for k in law_a:
        assert law_a[k] == pytest.approx(law_b[k], abs=1e-15)


def test_correlated_comonotone(rng):
    x = make_correlated([0.3, 0.6], 1.0).sample(rng, 10**4)
    assert np.all(x[x[:, 0] == 1, 1] == 1)


@pytest.mark.parametrize("coupling", [0.0, 0.3, 1.0])
def test_correlated_marginals(coupling, rng):
    x = make_correlated([0.3, 0.6, 0.9], coupling).sample(rng, 10**5)
    assert np.all(np.abs(x.mean(axis=0) - [0.3, 0.6, 0.9]) <= 0.01)


@pytest.mark.parametrize("c", [-0.1, 1.5])
def test_correlated_rejects(c):
    with pytest.raises(InvalidParameterError):
        make_correlated([0.2, 0.4], c)


def test_deterministic():
    env = make_deterministic([0, 1, 1])
    assert env.means == (0.0, 1.0, 1.0)
    assert env.gap_profile().gaps == (0.0, 1.0, 1.0)
    with pytest.raises(NoUniqueBestActionError):
        make_deterministic([0.5, 0.5]).gap_profile()
    probs, totals = enumerate_outcomes(make_deterministic([0, 1]), 7)
    assert probs.tolist() == [1.0] and totals.tolist() == [[0.0, 7.0]]


def test_finite_support_examples(rng):
    single = make_finite_support([((0.2, 0.9), 1.0)])
    np.testing.assert_array_equal(single.sample(rng, 50), make_deterministic([0.2, 0.9]).sample(rng, 50))
    anti = make_finite_support([((0, 1), 0.5), ((1, 0), 0.5)])
    assert anti.means == (0.5, 0.5)
    x = anti.sample(rng, 1000)
    assert np.all(x.sum(axis=1) == 1)
    two = make_finite_support([((0, 0), 0.25), ((1, 1), 0.75)])
    freq = two.sample(rng, 10**5)[:, 0].mean()
    assert abs(freq - 0.75) <= 0.01


@pytest.mark.parametrize(
    "atoms",
    [[((0, 1), 0.5), ((1, 0), 0.4)], [((0, 1), -0.5), ((1, 0), 1.5)], [], [((0, 1), 0.5), ((1, 0, 1), 0.5)]],
)
def test_finite_support_rejects(atoms):
    with pytest.raises(InvalidParameterError):
        make_finite_support(atoms)


@pytest.mark.parametrize("env", ALL_KINDS, ids=lambda e: e.kind)
def test_analytic_means_match_samples(env, rng):
    n = 10**6
    x = env.sample(rng, n)
    assert np.all((x >= 0) & (x <= 1))
    band = 4 * math.sqrt(math.log(10) / (2 * n))
    assert np.all(np.abs(x.mean(axis=0) - np.array(env.means)) <= band)


@pytest.mark.parametrize("env", ALL_KINDS, ids=lambda e: e.kind)
def test_support_is_exact_law(env):
    atoms, probs = env.support()
    assert math.fsum(probs) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(probs @ atoms, env.means, atol=1e-12)


@pytest.mark.parametrize("env", ALL_KINDS, ids=lambda e: e.kind)
def test_sampling_reproducible(env):
    a = env.sample(np.random.default_rng(3), 100)
    b = env.sample(np.random.default_rng(3), 100)
    np.testing.assert_array_equal(a, b)
    assert sample_round(env, np.random.default_rng(3)).shape == (env.K,)


@pytest.mark.parametrize("env", ALL_KINDS, ids=lambda e: e.kind)
def test_enumeration_sums_to_one(env):
    n = len(env.support()[1])
    m = max(1, int(math.log(2e4) / math.log(max(n, 2))))
    probs, totals = enumerate_outcomes(env, m)
    assert len(probs) == n**m
    assert abs(math.fsum(probs) - 1) <= 1e-10
    np.testing.assert_allclose(probs @ totals, m * np.array(env.means), atol=1e-10)


def test_enumeration_budget():
    with pytest.raises(InvalidParameterError):
        enumerate_outcomes(make_bernoulli([0.2, 0.8]), 11)


@pytest.mark.parametrize("env", ALL_KINDS, ids=lambda e: e.kind)
def test_spec_round_trip(env):
    again = environment_from_spec(environment_to_spec(env))
    assert again.kind == env.kind and again.means == env.means


@pytest.mark.parametrize(
    "spec",
    [
        {"kind": "gaussian", "means": [0, 1]},
        {"kind": "bernoulli", "means": [0.1, 0.2], "extra": 1},
        {"kind": "correlated", "means": [0.1, 0.2]},
        {"kind": "finite_support", "atoms": [{"vector": [0, 1]}]},
        [1, 2],
    ],
)
def test_spec_rejects(spec):
    with pytest.raises(InvalidParameterError):
        environment_from_spec(spec)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=5), st.floats(0, 1), st.integers(0, 2**32))
def test_correlated_support_means_exact(means, coupling, seed):
    env = make_correlated(means, coupling)
    atoms, probs = env.support()
    np.testing.assert_allclose(probs @ atoms, means, atol=1e-12)
    x = env.sample(np.random.default_rng(seed), 64)
    assert set(np.unique(x)) <= {0.0, 1.0}
