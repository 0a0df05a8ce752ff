import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from tsdmfb import dirichlet as dr
from tsdmfb.errors import DegenerateDataError, DomainError, InvalidParameterError, ValidationError

from conftest import random_simplex


def test_params_validation():
    with pytest.raises(InvalidParameterError):
        dr.DirichletParams([1.0, 0.0, 2.0])
    with pytest.raises(InvalidParameterError):
        dr.DirichletParams([1.0, np.inf])
    with pytest.raises(InvalidParameterError):
        dr.DirichletParams([3.0])
    p = dr.DirichletParams([2, 2, 4])
    np.testing.assert_array_equal(p.mean(), [0.25, 0.25, 0.5])
    with pytest.raises(ValueError):
        p.alpha[0] = 5.0  # read-only


def test_uniform_density_is_log_gamma_d():
    # Dir(1,...,1) is uniform on the simplex with density (D-1)!
    p = dr.DirichletParams(np.ones(4))
    assert dr.log_density(p, [0.1, 0.2, 0.3, 0.4]) == pytest.approx(np.log(6.0), abs=1e-13)


@given(st.integers(2, 8), st.integers(0, 10_000))
def test_log_density_matches_scipy(D, seed):
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(0.1, 50.0, D)
    y = random_simplex(rng, 20, D)
    got = dr.log_density(dr.DirichletParams(alpha), y)
    want = stats.dirichlet.logpdf(np.clip(y, dr.CLAMP, 1 - dr.CLAMP).T, alpha)
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-9)


def test_density_integrates_to_one_2d():
    p = dr.DirichletParams([2.5, 1.5])
    val, _ = integrate.quad(lambda t: np.exp(dr.log_density(p, [t, 1 - t])), 0, 1)
    assert val == pytest.approx(1.0, abs=1e-8)


def test_density_integrates_to_one_3d_monte_carlo(rng):
    # uniform sampling on the simplex: E_unif[f / f_unif] = 1
    p = dr.DirichletParams([3.0, 2.0, 4.0])
    u = rng.dirichlet(np.ones(3), 400_000)
    w = np.exp(dr.log_density(p, u) - np.log(2.0))
    se = w.std() / np.sqrt(w.size)
    assert abs(w.mean() - 1.0) < 4 * se


@pytest.mark.parametrize(
    "y",
    [[0.5, 0.6], [0.0, 1.0], [-0.1, 1.1], [0.3, 0.3, 0.3], [np.nan, 0.5]],
)
def test_domain_errors(y):
    with pytest.raises(DomainError):
        dr.log_density(dr.DirichletParams([1, 1, 1][: len(y)]), y)


def test_dimension_mismatch():
    with pytest.raises(DomainError):
        dr.log_density(dr.DirichletParams([1, 1, 1]), [0.5, 0.5])


def test_sample_determinism_and_moments():
    p = dr.DirichletParams([2.0, 3.0, 5.0])
    a = dr.sample(p, 7, 20_000)
    np.testing.assert_array_equal(a, dr.sample(p, 7, 20_000))
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)
    # mean alpha/sum, var m(1-m)/(A+1)
    m = p.mean()
    se = np.sqrt(m * (1 - m) / 11 / a.shape[0])
    assert np.all(np.abs(a.mean(axis=0) - m) < 4 * se)
    with pytest.raises(ValidationError):
        dr.sample(p, 0, 0)


@pytest.mark.parametrize("alpha", [[0.3, 0.5, 0.4], [2.0, 3.0, 5.0], [50.0, 80.0, 20.0, 10.0]])
def test_mle_recovers_parameters(alpha):
    y = dr.sample(dr.DirichletParams(alpha), 3, 20_000)
    fit = dr.mle_weighted(y, np.ones(len(y)))
    np.testing.assert_allclose(fit.alpha, alpha, rtol=0.06)


def _fd_gradient(p, y, w, h=1e-6):
    g = np.empty(p.dim)
    for d in range(p.dim):
        up, dn = p.alpha.copy(), p.alpha.copy()
        step = h * max(1.0, p.alpha[d])
        up[d] += step
        dn[d] -= step
        g[d] = (
            dr.weighted_log_likelihood(dr.DirichletParams(up), y, w)
            - dr.weighted_log_likelihood(dr.DirichletParams(dn), y, w)
        ) / (2 * step)
    return g


@given(st.integers(2, 6), st.integers(0, 10_000))
def test_gradient_matches_finite_differences(D, seed):
    rng = np.random.default_rng(seed)
    p = dr.DirichletParams(rng.uniform(0.5, 20.0, D))
    y = random_simplex(rng, 50, D)
    w = rng.uniform(0.0, 1.0, 50)
    g = dr.log_likelihood_gradient(p, y, w)
    fd = _fd_gradient(p, y, w)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-5 * np.abs(fd).max())


@given(st.integers(2, 8), st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_mle_is_stationary(D, seed, scale):
    rng = np.random.default_rng(seed)
    y = random_simplex(rng, 60, D, conc=rng.uniform(0.5, 10.0))
    w = rng.uniform(0.05, 1.0, 60) * scale
    p = dr.mle_weighted(y, w)
    g = dr.log_likelihood_gradient(p, y, w)
    assert np.max(np.abs(g)) <= 1e-6 * w.sum()


def test_weighted_equals_replicated(rng):
    y = random_simplex(rng, 30, 3)
    counts = rng.integers(1, 4, 30)
    a = dr.mle_weighted(y, counts.astype(float))
    b = dr.mle_weighted(np.repeat(y, counts, axis=0), np.ones(counts.sum()))
    np.testing.assert_allclose(a.alpha, b.alpha, rtol=1e-7)


def test_weight_scale_invariance(rng):
    y = random_simplex(rng, 40, 4)
    w = rng.uniform(0.1, 1, 40)
    np.testing.assert_allclose(dr.mle_weighted(y, w).alpha, dr.mle_weighted(y, 1e4 * w).alpha, rtol=1e-8)


def test_degenerate_inputs(rng):
    y = random_simplex(rng, 10, 3)
    with pytest.raises(DegenerateDataError):
        dr.mle_weighted(y, np.zeros(10))
    one_hot = np.zeros(10)
    one_hot[3] = 1.0
    with pytest.raises(DegenerateDataError):
        dr.mle_weighted(y, one_hot)
    with pytest.raises(DegenerateDataError):
        dr.mle_weighted(np.tile(y[:1], (10, 1)), np.ones(10))
    with pytest.raises(ValidationError):
        dr.mle_weighted(y, -np.ones(10))


def test_columns_solver_matches_single(rng):
    y = random_simplex(rng, 200, 4)
    resp = rng.dirichlet(np.ones(3), 200)
    cols = dr.mle_weighted_columns(np.log(y), resp, y)
    for j in range(3):
        np.testing.assert_allclose(cols[j], dr.mle_weighted(y, resp[:, j]).alpha, rtol=1e-6)
