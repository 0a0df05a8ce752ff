import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats
from scipy.special import logsumexp

from tsdmfb import inner_em as ie
from tsdmfb.errors import AllRunsDiscardedError, ValidationError

from conftest import random_simplex
from helpers import mixture_data, random_mixture


def test_mixture_validation():
    with pytest.raises(ValidationError):
        ie.InnerMixture([0.5, 0.6], np.ones((2, 3)))
    with pytest.raises(ValidationError):
        ie.InnerMixture([1.0], -np.ones((1, 3)))
    with pytest.raises(ValidationError):
        ie.InnerMixture([0.5, 0.5], np.ones((3, 3)))


def test_log_density_matches_scipy_sum(rng):
    m = random_mixture(rng, 3, 4)
    y = random_simplex(rng, 30, 4)
    want = logsumexp(
        [np.log(w) + stats.dirichlet.logpdf(y.T, a) for w, a in zip(m.weights, m.alphas)], axis=0
    )
    np.testing.assert_allclose(m.log_density(y), want, rtol=1e-11)


@given(st.integers(1, 4), st.integers(2, 6), st.integers(0, 10_000))
def test_e_step_rows_sum_to_one(J, D, seed):
    rng = np.random.default_rng(seed)
    m = random_mixture(rng, J, D)
    resp = ie.e_step(m, random_simplex(rng, 25, D))
    np.testing.assert_allclose(resp.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(resp >= 0)


def test_e_step_equal_components_give_uniform_rows(rng):
    m = ie.InnerMixture([0.5, 0.5], np.array([[2.0, 3.0, 4.0]] * 2))
    np.testing.assert_allclose(ie.e_step(m, random_simplex(rng, 5, 3)), 0.5, atol=1e-15)


def test_m_step_weights_are_column_means(rng):
    y = random_simplex(rng, 100, 3)
    resp = rng.dirichlet(np.ones(3), 100)
    m = ie.m_step(resp, y)
    np.testing.assert_allclose(m.weights, resp.mean(axis=0), rtol=1e-14)


def test_bic_formula():
    assert ie.n_free_parameters(3, 5) == 17
    assert ie.bic(-100.0, 17, 600) == pytest.approx(200.0 + 17 * math.log(600))


@pytest.mark.parametrize("J,D,n", [(2, 3, 100), (3, 5, 300), (2, 8, 200)])
def test_em_monotone_every_start(J, D, n):
    y, _ = mixture_data(J, D, n, seed=J + D)
    logy = np.log(y)
    cfg = ie.EMConfig()
    for ss in ie._start_seeds(0, 4):
        init = ie.kmeans_init(y, J, np.random.default_rng(ss))
        run = ie.run_em(logy, y, init, cfg)
        assert run.mixture is not None
        assert np.min(np.diff(run.trace)) >= -1e-8


def test_fixed_j_recovers_truth():
    y, truth = mixture_data(3, 4, 900, seed=5)
    m, rep = ie.fit_fixed_j(y, 3)
    got = np.array(sorted((a / a.sum()).tolist() for a in m.alphas))
    want = np.array(sorted((a / a.sum()).tolist() for a in truth.alphas))
    np.testing.assert_allclose(got, want, atol=0.03)
    assert rep.converged and rep.n_starts_kept >= 1 and rep.min_occupancy >= 3


def test_select_j_picks_truth_and_reports():
    y, _ = mixture_data(3, 4, 600, seed=2)
    m, rep = ie.select_j(y, range(1, 6))
    assert m.J == 3 and rep.J == 3
    assert set(rep.candidate_bics) == {1, 2, 3, 4, 5}
    finite = {j: b for j, b in rep.candidate_bics.items() if b is not None}
    assert min(finite, key=finite.get) == 3


def test_unimodal_selects_one():
    y, _ = mixture_data(1, 4, 600, seed=4)
    assert ie.select_j(y, range(1, 4))[0].J == 1


def test_infeasible_j_gets_none():
    y, _ = mixture_data(1, 3, 10, seed=1)
    m, rep = ie.select_j(y, [1, 4, 5], ie.EMConfig(n_min=3))
    assert rep.candidate_bics[4] is None and rep.candidate_bics[5] is None and m.J == 1
    with pytest.raises(ValidationError):
        ie.select_j(y, [4, 5])
    with pytest.raises(ValidationError):
        ie.fit_fixed_j(y, 4)


def test_all_runs_discarded():
    # 12 points cannot keep 3 in each of 4 components
    y, _ = mixture_data(1, 3, 12, seed=1)
    with pytest.raises(AllRunsDiscardedError):
        ie.fit_fixed_j(y, 4, ie.EMConfig(n_min=3, n_starts=3))


def test_determinism_and_worker_independence():
    y, _ = mixture_data(2, 4, 200, seed=9)
    a, ra = ie.select_j(y, range(1, 4), ie.EMConfig(seed=3))
    b, rb = ie.select_j(y, range(1, 4), ie.EMConfig(seed=3, workers=4))
    np.testing.assert_array_equal(a.alphas, b.alphas)
    np.testing.assert_array_equal(a.weights, b.weights)
    assert ra.to_dict() == rb.to_dict()


def test_report_round_trip():
    y, _ = mixture_data(2, 3, 120, seed=1)
    _, rep = ie.select_j(y, [1, 2, 9])
    assert ie.FitReport.from_dict(rep.to_dict()).to_dict() == rep.to_dict()
