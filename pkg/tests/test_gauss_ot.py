import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from wbsac.gauss_ot import (BarycenterWeights, DiagGaussian, barycenter_objective,
                            differential_entropy, entropy_bound_slack, log_prob_squashed,
                            make_diag_gaussian, sample_reparameterized, w2_squared_diag,
                            wasserstein_barycenter)
from wbsac.verify import barycenter_grid_minimizer, w2_quantile_oracle

HALF_LOG_2PIE = 1.4189385332046727


def gauss(mean, std):
    return DiagGaussian(np.array(mean, float), np.array(std, float))


def rand_gauss(rng, d):
    return DiagGaussian(rng.normal(0, 2, d), np.exp(rng.uniform(-2, 1.5, d)))


finite = st.floats(-50, 50, allow_nan=False)
pos = st.floats(1e-3, 1e3, allow_nan=False)


@st.composite
def gaussian_pair(draw, max_dim=6):
    d = draw(st.integers(1, max_dim))
    mk = lambda: gauss(draw(st.lists(finite, min_size=d, max_size=d)),
                       draw(st.lists(pos, min_size=d, max_size=d)))
    return mk(), mk()


# ---------------------------------------------------------------- types

def test_diag_gaussian_validation():
    with pytest.raises(ValueError):
        gauss([0.0], [0.0])
    with pytest.raises(ValueError):
        gauss([0.0, 1.0], [1.0])
    with pytest.raises(ValueError):
        DiagGaussian(np.array(0.0), np.array(1.0))
    with pytest.raises(ValueError):
        BarycenterWeights(1.5)
    with pytest.raises(ValueError):
        BarycenterWeights(-0.1)
    assert BarycenterWeights(0.25).xi_p == 0.75


def test_make_diag_gaussian_clamps():
    g = make_diag_gaussian([0.0, 0.0], [-50.0, 10.0])
    np.testing.assert_array_equal(g.std, [math.exp(-20.0), math.exp(2.0)])


def test_sample_reparameterized():
    g = gauss([1.0, -1.0], [2.0, 0.5])
    pre, a = sample_reparameterized(g, [0.5, 2.0])
    np.testing.assert_array_equal(pre, [2.0, 0.0])
    np.testing.assert_array_equal(a, np.tanh([2.0, 0.0]))


# ---------------------------------------------------------------- log-prob

def test_log_prob_standard_normal_at_zero():
    # oracle: scipy standard-normal logpdf plus the squash correction
    expected = norm.logpdf(0.0) - math.log(1.0 + 1e-6)
    got = log_prob_squashed(gauss([0.0], [1.0]), np.array([0.0]))
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(-0.9189395, abs=1e-6)


def test_log_prob_std_doubling_lowers_by_ln2():
    pre = np.array([0.3])
    a = log_prob_squashed(gauss([0.3], [1.0]), pre)
    b = log_prob_squashed(gauss([0.3], [2.0]), pre)
    assert a - b == pytest.approx(math.log(2.0), abs=1e-12)


def test_log_prob_factorizes():
    pre = np.array([0.2, -1.1])
    g = gauss([0.1, -0.5], [0.7, 1.3])
    joint = log_prob_squashed(g, pre)
    parts = sum(log_prob_squashed(gauss([g.mean[i]], [g.std[i]]), pre[i:i + 1]) for i in range(2))
    assert joint == pytest.approx(parts, abs=1e-12)


def test_log_prob_finite_at_extreme_actions():
    assert np.isfinite(log_prob_squashed(gauss([0.0], [1.0]), np.array([40.0])))


def test_squashed_density_integrates_to_one():
    g = gauss([0.4], [0.8])

    def density(a):
        pre = np.arctanh(a)
        return math.exp(log_prob_squashed(g, np.array([pre]), tanh_eps=0.0))

    total, _ = integrate.quad(density, -1 + 1e-12, 1 - 1e-12, limit=200)
    assert abs(total - 1.0) < 1e-3


# ---------------------------------------------------------------- entropy

def test_entropy_examples():
    assert differential_entropy(gauss([0.0], [1.0])) == pytest.approx(HALF_LOG_2PIE, abs=1e-12)
    assert differential_entropy(gauss([0.0], [math.e])) == pytest.approx(HALF_LOG_2PIE + 1, abs=1e-12)
    assert differential_entropy(gauss([0.0] * 3, [1.0] * 3)) == pytest.approx(4.256815599614018, abs=1e-12)


def test_entropy_matches_scipy():
    g = gauss([0.0, 1.0], [0.3, 2.5])
    assert differential_entropy(g) == pytest.approx(sum(norm(0, s).entropy() for s in g.std), abs=1e-12)


# ---------------------------------------------------------------- W2

def test_w2_examples():
    p = gauss([0.0], [1.0])
    assert w2_squared_diag(p, p) == 0.0
    assert w2_squared_diag(p, gauss([3.0], [1.0])) == 9.0
    # oracle: inverse-CDF coupling on a fine quantile grid
    oracle = w2_quantile_oracle(0.0, 1.0, 0.0, 2.0)
    assert oracle == pytest.approx(1.0, rel=1e-3)
    assert w2_squared_diag(p, gauss([0.0], [2.0])) == pytest.approx(oracle, rel=1e-3)


def test_w2_dimension_mismatch():
    with pytest.raises(ValueError):
        w2_squared_diag(gauss([0.0], [1.0]), gauss([0.0, 0.0], [1.0, 1.0]))


def test_w2_metric_axioms(rng):
    for _ in range(1000):
        d = int(rng.integers(1, 5))
        p, q, r = (rand_gauss(rng, d) for _ in range(3))
        pq, qp = w2_squared_diag(p, q), w2_squared_diag(q, p)
        assert pq == qp and pq >= 0.0
        assert pq > 0.0
        tri = math.sqrt(w2_squared_diag(p, q)) + math.sqrt(w2_squared_diag(q, r))
        assert math.sqrt(w2_squared_diag(p, r)) <= tri + 1e-12


@given(gaussian_pair())
def test_w2_symmetric_nonnegative(pair):
    p, q = pair
    assert w2_squared_diag(p, q) == w2_squared_diag(q, p) >= 0.0
    assert w2_squared_diag(p, p) == 0.0


# ---------------------------------------------------------------- barycenter

def test_barycenter_degenerate_weights_return_inputs():
    p, o = gauss([0.0, 1.0], [1.0, 2.0]), gauss([2.0, -1.0], [3.0, 0.5])
    assert wasserstein_barycenter(p, o, BarycenterWeights(0.0)) is p
    assert wasserstein_barycenter(p, o, BarycenterWeights(1.0)) is o


def test_barycenter_midpoint_example():
    p, o = gauss([0.0], [1.0]), gauss([2.0], [3.0])
    e = wasserstein_barycenter(p, o, BarycenterWeights(0.5))
    m, s = barycenter_grid_minimizer(p, o, 0.5)
    np.testing.assert_allclose([m[0], s[0]], [1.0, 2.0], atol=1e-6)
    np.testing.assert_allclose([e.mean[0], e.std[0]], [m[0], s[0]], atol=1e-6)


@given(gaussian_pair(), st.floats(0, 1))
def test_barycenter_of_identical_is_identity(pair, xi):
    p, _ = pair
    e = wasserstein_barycenter(p, DiagGaussian(p.mean.copy(), p.std.copy()), BarycenterWeights(xi))
    np.testing.assert_allclose(e.mean, p.mean, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(e.std, p.std, rtol=1e-12)


def test_barycenter_beats_perturbations(rng):
    for i in range(200):
        d = (1, 2, 4)[i % 3]
        p, o = rand_gauss(rng, d), rand_gauss(rng, d)
        w = BarycenterWeights(float(rng.uniform()))
        e = wasserstein_barycenter(p, o, w)
        best = barycenter_objective(e, p, o, w)
        for delta in (1e-2, 1e-3):
            for k in range(d):
                for sign in (1.0, -1.0):
                    step = np.zeros(d)
                    step[k] = sign * delta
                    assert barycenter_objective(DiagGaussian(e.mean + step, e.std), p, o, w) > best
                    assert barycenter_objective(DiagGaussian(e.mean, e.std + step), p, o, w) > best


def test_barycenter_affine_in_weights():
    p, o = gauss([0.0, 4.0], [1.0, 0.25]), gauss([8.0, -4.0], [5.0, 2.25])
    for xi in (0.0, 0.25, 0.5, 0.75, 1.0):
        e = wasserstein_barycenter(p, o, BarycenterWeights(xi))
        np.testing.assert_array_equal(e.mean, (1 - xi) * p.mean + xi * o.mean)
        np.testing.assert_array_equal(e.std, (1 - xi) * p.std + xi * o.std)


def test_barycenter_batched():
    p = DiagGaussian(np.zeros((5, 2)), np.ones((5, 2)))
    o = DiagGaussian(np.full((5, 2), 2.0), np.full((5, 2), 3.0))
    e = wasserstein_barycenter(p, o, BarycenterWeights(0.5))
    assert e.mean.shape == (5, 2)
    np.testing.assert_array_equal(e.std, 2.0)


# ---------------------------------------------------------------- entropy bound

def test_slack_examples():
    p, o = gauss([0.0], [1.0]), gauss([0.0], [4.0])
    assert entropy_bound_slack(p, p, BarycenterWeights(0.3)) == 0.0
    assert entropy_bound_slack(p, o, BarycenterWeights(0.0)) == 0.0
    slack = entropy_bound_slack(p, o, BarycenterWeights(0.5))
    # oracle: both sides via differential_entropy of the hand-built barycenter N(0, 2.5)
    lhs = differential_entropy(gauss([0.0], [2.5]))
    rhs = 0.5 * differential_entropy(p) + 0.5 * differential_entropy(o)
    assert slack == pytest.approx(lhs - rhs, abs=1e-12)
    assert slack == pytest.approx(math.log(2.5) - 0.5 * math.log(4.0), abs=1e-12)
    assert slack == pytest.approx(0.22314355131420976, abs=1e-12)


@given(gaussian_pair(max_dim=8), st.floats(0, 1))
def test_slack_nonnegative(pair, xi):
    p, o = pair
    assert entropy_bound_slack(p, o, BarycenterWeights(xi)) >= -1e-12
