"""Dirichlet density, sampling and weighted maximum likelihood."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (
    DegenerateDataError,
    DomainError,
    InvalidParameterError,
    NonConvergenceError,
    ValidationError,
)

CLAMP = 1e-12
SUM_ATOL = 1e-9

MLE_TOL = 1e-8
MLE_MAX_ITER = 1000
# per unit weight; the public contract is 1e-6, the solver aims lower
MLE_GRAD_TOL = 1e-8
MIN_EFFECTIVE_POINTS = 2.0


@dataclass(frozen=True, eq=False)
class DirichletParams:
    """Concentration vector of a Dirichlet distribution on the D-part simplex."""

    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=np.float64)
        if alpha.ndim != 1 or alpha.size < 2:
            raise InvalidParameterError(f"alpha must be a vector of length >= 2, got shape {alpha.shape}")
        if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0.0):
            raise InvalidParameterError(f"alpha must be strictly positive and finite: {alpha}")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)

    @property
    def dim(self) -> int:
        return self.alpha.size

    def mean(self) -> np.ndarray:
        return self.alpha / self.alpha.sum()

    def __eq__(self, other):
        if not isinstance(other, DirichletParams):
            return NotImplemented
        return np.array_equal(self.alpha, other.alpha)

    def __repr__(self):
        return f"DirichletParams(alpha={self.alpha.tolist()!r})"


def as_simplex(y, dim: int | None = None) -> np.ndarray:
    """Validate points of the open simplex and return them as a 2-D float array.

    Coordinates must lie strictly in (0, 1) and rows must sum to one within
    ``SUM_ATOL``.  Values are then clamped to ``[CLAMP, 1 - CLAMP]``.
    """
    arr = np.array(y, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DomainError(f"expected an (n, D) array of simplex points, got shape {arr.shape}")
    if arr.shape[0] == 0:
        return arr.reshape(0, dim if dim is not None else arr.shape[1])
    if dim is not None and arr.shape[1] != dim:
        raise DomainError(f"points have dimension {arr.shape[1]}, expected {dim}")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("simplex coordinates must lie strictly inside (0, 1)")
    dev = np.abs(arr.sum(axis=1) - 1.0)
    if np.any(dev > SUM_ATOL):
        i = int(np.argmax(dev))
        raise DomainError(f"row {i} sums to {arr[i].sum()!r}, not 1")
    return np.clip(arr, CLAMP, 1.0 - CLAMP)


def log_density(p: DirichletParams, y):
    """Log density of ``p`` at one point (returns float) or at rows of a matrix."""
    single = np.ndim(y) == 1
    pts = as_simplex(y, p.dim)
    out = kernels.component_log_pdf(np.log(pts), p.alpha[None, :])[:, 0]
    return float(out[0]) if single else out


def sample(p: DirichletParams, rng_seed: int, n: int) -> np.ndarray:
    """Draw ``n`` points by normalising independent Gamma(alpha_d, 1) variates."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    return _sample_with(p.alpha, rng, n)


def _sample_with(alpha: np.ndarray, rng: np.random.Generator, n: int) -> np.ndarray:
    g = rng.standard_gamma(alpha, size=(n, alpha.size))
    y = g / g.sum(axis=1, keepdims=True)
    # very small concentrations can underflow a coordinate to zero
    y = np.clip(y, CLAMP, 1.0 - CLAMP)
    return y / y.sum(axis=1, keepdims=True)


def weighted_log_stats(logy: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted mean of log coordinates, the Dirichlet sufficient statistic."""
    return (weights @ logy) / weights.sum()


def moment_match(y: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Method-of-moments concentration estimate from (weighted) simplex points."""
    if weights is None:
        weights = np.ones(y.shape[0])
    total = weights.sum()
    m = (weights @ y) / total
    m2 = (weights @ (y * y)) / total
    var = m2 - m * m
    with np.errstate(divide="ignore", invalid="ignore"):
        prec = (m - m2) / var
    prec = prec[np.isfinite(prec) & (prec > 0)]
    precision = float(np.median(prec)) if prec.size else float(y.shape[1])
    precision = min(max(precision, 1e-2), 1e8)
    return np.maximum(precision * m, 1e-6)


def _effective_points(weights: np.ndarray) -> float:
    sq = float(np.dot(weights, weights))
    return float(weights.sum()) ** 2 / sq if sq > 0 else 0.0


def mle_weighted_log(
    logy: np.ndarray,
    weights: np.ndarray,
    alpha0: np.ndarray | None = None,
    y: np.ndarray | None = None,
) -> tuple[np.ndarray, int]:
    """Weighted MLE working on precomputed ``log y``; returns ``(alpha, iterations)``.

    ``alpha0`` overrides the moment-matching start (used for warm starts
    inside EM).
    """
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValidationError("weights must be finite and non-negative")
    if weights.sum() <= 0.0:
        raise DegenerateDataError("weights sum to zero")
    if _effective_points(weights) < MIN_EFFECTIVE_POINTS - 1e-9:
        raise DegenerateDataError(
            f"effective sample size {_effective_points(weights):.3g} is below {MIN_EFFECTIVE_POINTS}"
        )
    active = weights > 0
    lg = logy[active]
    if np.all(lg == lg[0]):
        raise DegenerateDataError("all weighted points coincide")
    s = weighted_log_stats(logy, weights)
    warm = alpha0 is not None
    if not warm:
        pts = np.exp(logy) if y is None else y
        alpha0 = moment_match(pts[active], weights[active])
    alpha, iters, ok = kernels.dirichlet_mle(s, alpha0, MLE_TOL, MLE_GRAD_TOL, MLE_MAX_ITER)
    if not ok and warm:
        # a warm start can sit far from a moved optimum; retry from moments
        pts = np.exp(logy) if y is None else y
        alpha, more, ok = kernels.dirichlet_mle(
            s, moment_match(pts[active], weights[active]), MLE_TOL, MLE_GRAD_TOL, MLE_MAX_ITER
        )
        iters += more
    if not ok:
        raise NonConvergenceError(
            f"Dirichlet MLE did not converge within {MLE_MAX_ITER} iterations"
        )
    return alpha, iters


def mle_weighted(data, weights) -> DirichletParams:
    """Concentrations maximising ``sum_i w_i log f(y_i; alpha)``.

    Raises ``DegenerateDataError`` when the weighted sample holds fewer than
    two effective points (Kish effective size, which is invariant to
    rescaling the weights) and ``NonConvergenceError`` when the solver
    exhausts its budget.
    """
    y = as_simplex(data)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (y.shape[0],):
        raise ValidationError("weights must have one entry per point")
    alpha, _ = mle_weighted_log(np.log(y), weights, y=y)
    return DirichletParams(alpha)


def log_likelihood_gradient(p: DirichletParams, data, weights) -> np.ndarray:
    """Gradient of ``sum_i w_i log f(y_i; alpha)`` with respect to alpha."""
    y = as_simplex(data, p.dim)
    weights = np.asarray(weights, dtype=np.float64)
    s = weighted_log_stats(np.log(y), weights)
    return weights.sum() * kernels.dirichlet_gradient(p.alpha, s)


def weighted_log_likelihood(p: DirichletParams, data, weights) -> float:
    y = as_simplex(data, p.dim)
    return float(np.dot(weights, log_density(p, y)))


def mle_weighted_columns(
    logy: np.ndarray, resp: np.ndarray, y: np.ndarray, warm: np.ndarray | None = None
) -> np.ndarray:
    """Weighted MLE for every column of ``resp`` at once; returns a (J, D) array.

    The compiled batch solver handles all columns in one call; columns that
    fail from the warm start are retried one at a time from moment matching.
    """
    col = resp.sum(axis=0)
    sq = (resp * resp).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        n_eff = np.where(sq > 0, col * col / sq, 0.0)
    bad = np.flatnonzero(~(col > 0) | (n_eff < MIN_EFFECTIVE_POINTS - 1e-9))
    if bad.size:
        raise DegenerateDataError(
            f"component {int(bad[0])} has effective size {float(n_eff[bad[0]]):.3g}"
        )
    stats = (resp.T @ logy) / col[:, None]
    if warm is None:
        warm = np.vstack([moment_match(y, resp[:, j]) for j in range(resp.shape[1])])
    alphas, ok = kernels.dirichlet_mle_batch(stats, warm, MLE_TOL, MLE_GRAD_TOL, MLE_MAX_ITER)
    for j in np.flatnonzero(~ok):
        alphas[j], _ = mle_weighted_log(logy, resp[:, j], y=y)
    return alphas
