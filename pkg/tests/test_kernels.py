"""Special functions and kernels against scipy, and numpy/numba parity."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from tsdmfb import kernels
from tsdmfb.kernels import _numba, _numpy

BACKENDS = [_numpy, _numba]
X = np.concatenate([np.geomspace(1e-8, 1e-1, 40), np.linspace(0.1, 30, 300), np.geomspace(30, 1e10, 40)])


@pytest.mark.parametrize("k", BACKENDS, ids=["numpy", "numba"])
def test_gammaln_matches_scipy(k):
    np.testing.assert_allclose(k.gammaln(X), special.gammaln(X), rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("k", BACKENDS, ids=["numpy", "numba"])
def test_digamma_matches_scipy(k):
    np.testing.assert_allclose(k.digamma(X), special.digamma(X), rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("k", BACKENDS, ids=["numpy", "numba"])
def test_trigamma_matches_scipy(k):
    np.testing.assert_allclose(k.trigamma(X), special.polygamma(1, X), rtol=1e-12)


@pytest.mark.parametrize("k", BACKENDS, ids=["numpy", "numba"])
def test_inv_digamma_roundtrip(k):
    y = np.linspace(-50, 20, 200)
    x = k.inv_digamma(y)
    assert np.all(x > 0)
    np.testing.assert_allclose(special.digamma(x), y, rtol=1e-12, atol=1e-12)


def test_known_values():
    assert _numpy.gammaln(np.array([1.0, 2.0]))[0] == pytest.approx(0.0, abs=1e-15)
    assert _numba.digamma(np.array([1.0]))[0] == pytest.approx(-0.5772156649015329, rel=1e-14)
    assert _numpy.trigamma(np.array([1.0]))[0] == pytest.approx(np.pi ** 2 / 6, rel=1e-14)


def test_log_norm_and_component_pdf_match_scipy(rng):
    from scipy.stats import dirichlet

    alphas = rng.uniform(0.3, 30.0, (4, 5))
    y = rng.dirichlet(np.ones(5), 50)
    for k in BACKENDS:
        got = k.component_log_pdf(np.log(y), alphas)
        want = np.column_stack([dirichlet.logpdf(y.T, a) for a in alphas])
        np.testing.assert_allclose(got, want, rtol=1e-11, atol=1e-10)


@given(st.integers(1, 40), st.integers(1, 6), st.floats(-700, 700))
def test_log_normalize_rows_parity(n, m, shift):
    rng = np.random.default_rng(n * 7 + m)
    logp = rng.normal(size=(n, m)) * 20 + shift
    r1, l1 = _numpy.log_normalize_rows(logp)
    r2, l2 = _numba.log_normalize_rows(logp)
    np.testing.assert_allclose(r1, r2, rtol=1e-13, atol=1e-300)
    np.testing.assert_allclose(l1, l2, rtol=1e-13)
    np.testing.assert_allclose(r1.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(l1, special.logsumexp(logp, axis=1), rtol=1e-12)


def test_log_normalize_rows_handles_minus_inf():
    logp = np.array([[0.0, -np.inf], [-np.inf, 3.0]])
    for k in BACKENDS:
        resp, lse = k.log_normalize_rows(logp)
        np.testing.assert_array_equal(resp, [[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_array_equal(lse, [0.0, 3.0])


@given(st.integers(2, 8), st.integers(0, 10_000))
def test_mle_parity_between_backends(D, seed):
    rng = np.random.default_rng(seed)
    alpha_true = rng.uniform(0.2, 40.0, D)
    y = np.clip(rng.dirichlet(alpha_true, 300), 1e-12, None)
    s = np.log(y).mean(axis=0)
    a1, _, ok1 = _numpy.dirichlet_mle(s, np.ones(D), 1e-8, 1e-8, 1000)
    a2, _, ok2 = _numba.dirichlet_mle(s, np.ones(D), 1e-8, 1e-8, 1000)
    assert ok1 and ok2
    np.testing.assert_allclose(a1, a2, rtol=1e-7)
    assert np.max(np.abs(_numpy.dirichlet_gradient(a1, s))) <= 1e-8


def test_batch_equals_loop(rng):
    stats = np.log(rng.dirichlet(np.ones(4), (3, 100))).mean(axis=1)
    a0 = np.ones((3, 4))
    for k in BACKENDS:
        batch, ok = k.dirichlet_mle_batch(stats, a0, 1e-8, 1e-8, 1000)
        assert ok.all()
        for j in range(3):
            np.testing.assert_allclose(batch[j], k.dirichlet_mle(stats[j], a0[j], 1e-8, 1e-8, 1000)[0], rtol=0)


def test_backend_flag():
    import importlib
    import os
    import subprocess
    import sys

    code = "from tsdmfb import kernels; print(kernels.BACKEND)"
    for flag, want in (("1", "numpy"), ("", "numba")):
        out = subprocess.run(
            [sys.executable, "-c", code], capture_output=True, text=True, check=True,
            env={**os.environ, "TSDMFB_DISABLE_NUMBA": flag},
        )
        assert out.stdout.strip() == want
    assert importlib.import_module("tsdmfb").BACKEND == kernels.BACKEND
