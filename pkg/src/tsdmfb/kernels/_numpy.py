"""Pure-numpy implementations of the numeric kernels.

Every function here has a twin in ``_numba`` with the same signature and
semantics; ``tsdmfb.kernels`` picks one of the two at import time.
"""
import math

import numpy as np

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_SHIFT = 10.0

# Stirling series coefficients B_{2k} / (2k (2k-1)), k = 1..7
_LGAMMA_SERIES = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
)
# asymptotic digamma coefficients B_{2k} / (2k), k = 1..7
_DIGAMMA_SERIES = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
# asymptotic trigamma coefficients B_{2k}, k = 1..7
_TRIGAMMA_SERIES = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
)
_EULER = 0.5772156649015329


def _poly(z, coeffs):
    # coeffs[0] + coeffs[1] z + coeffs[2] z^2 + ...
    acc = np.zeros_like(z)
    for c in reversed(coeffs):
        acc = acc * z + c
    return acc


def gammaln(x):
    """log Gamma(x) for x > 0 by upward recurrence plus the Stirling series."""
    x = np.array(x, dtype=np.float64, copy=True)
    shift = np.zeros_like(x)
    mask = x < _SHIFT
    while mask.any():
        shift[mask] += np.log(x[mask])
        x[mask] += 1.0
        mask = x < _SHIFT
    inv = 1.0 / x
    series = inv * _poly(inv * inv, _LGAMMA_SERIES)
    return (x - 0.5) * np.log(x) - x + _HALF_LOG_2PI + series - shift


def digamma(x):
    x = np.array(x, dtype=np.float64, copy=True)
    acc = np.zeros_like(x)
    mask = x < _SHIFT
    while mask.any():
        acc[mask] -= 1.0 / x[mask]
        x[mask] += 1.0
        mask = x < _SHIFT
    inv2 = 1.0 / (x * x)
    return acc + np.log(x) - 0.5 / x - inv2 * _poly(inv2, _DIGAMMA_SERIES)


def trigamma(x):
    x = np.array(x, dtype=np.float64, copy=True)
    acc = np.zeros_like(x)
    mask = x < _SHIFT
    while mask.any():
        acc[mask] += 1.0 / (x[mask] * x[mask])
        x[mask] += 1.0
        mask = x < _SHIFT
    inv = 1.0 / x
    inv2 = inv * inv
    return acc + inv + 0.5 * inv2 + inv * inv2 * _poly(inv2, _TRIGAMMA_SERIES)


def inv_digamma(y, n_newton=50, tol=1e-15):
    """Solve digamma(x) = y for x > 0 by Newton's method."""
    y = np.asarray(y, dtype=np.float64)
    x = np.where(y >= -2.22, np.exp(y) + 0.5, -1.0 / (y + _EULER))
    for _ in range(n_newton):
        step = (digamma(x) - y) / trigamma(x)
        x_new = x - step
        # Newton from the Minka start stays positive; halve if it does not
        x_new = np.where(x_new > 0.0, x_new, 0.5 * x)
        done = np.all(np.abs(x_new - x) <= tol * x_new)
        x = x_new
        if done:
            break
    return x


def dirichlet_log_norm(alphas):
    """Row-wise log(1/B(alpha)) for a (J, D) array of concentrations."""
    alphas = np.atleast_2d(np.asarray(alphas, dtype=np.float64))
    return gammaln(alphas.sum(axis=1)) - gammaln(alphas).sum(axis=1)


def component_log_pdf(logy, alphas):
    """(n, J) matrix of log f(y_i; alpha_j) given log-coordinates ``logy``."""
    alphas = np.atleast_2d(alphas)
    return logy @ (alphas - 1.0).T + dirichlet_log_norm(alphas)


def log_normalize_rows(logp):
    """Return (responsibilities, row log-sum-exp) of an (n, m) log matrix."""
    mx = logp.max(axis=1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    ex = np.exp(logp - mx)
    tot = ex.sum(axis=1, keepdims=True)
    resp = ex / tot
    return resp, (np.log(tot) + mx)[:, 0]


def dirichlet_objective(alpha, s):
    """Mean weighted log-likelihood per unit weight; ``s`` is the weighted mean of log y."""
    return float(
        gammaln(alpha.sum()) - gammaln(alpha).sum() + np.dot(alpha - 1.0, s)
    )


def dirichlet_gradient(alpha, s):
    return digamma(alpha.sum()) - digamma(alpha) + s


def dirichlet_mle(s, alpha0, tol, grad_tol, max_iter):
    """Maximise the Dirichlet log-likelihood given mean log sufficient statistics.

    Each iteration tries a Newton step that exploits the diagonal-plus-rank-one
    Hessian and falls back to the digamma fixed-point update whenever the
    Newton step leaves the positive orthant or lowers the objective.

    Returns ``(alpha, iterations, converged)``.
    """
    alpha = np.array(alpha0, dtype=np.float64, copy=True)
    f = dirichlet_objective(alpha, s)
    for it in range(1, max_iter + 1):
        total = alpha.sum()
        g = digamma(total) - digamma(alpha) + s
        q = -trigamma(alpha)
        z = float(trigamma(total))
        b = np.sum(g / q) / (1.0 / z + np.sum(1.0 / q))
        cand = alpha - (g - b) / q
        f_cand = -np.inf
        if np.all(cand > 0.0) and np.all(np.isfinite(cand)):
            f_cand = dirichlet_objective(cand, s)
        if not f_cand >= f - 1e-13 * (1.0 + abs(f)):
            cand = inv_digamma(digamma(total) + s)
            f_cand = dirichlet_objective(cand, s)
        rel = np.max(np.abs(cand - alpha) / cand)
        alpha = cand
        f = f_cand
        if not np.all(np.isfinite(alpha)) or alpha.max() > 1e12:
            return alpha, it, False
        if rel < tol:
            g = dirichlet_gradient(alpha, s)
            if np.max(np.abs(g)) <= grad_tol:
                return alpha, it, True
    return alpha, max_iter, False


def dirichlet_mle_batch(stats, alpha0, tol, grad_tol, max_iter):
    """Row-wise ``dirichlet_mle`` over a (J, D) stack of sufficient statistics.

    Returns ``(alphas, converged_flags)``.
    """
    out = np.empty_like(alpha0, dtype=np.float64)
    ok = np.zeros(stats.shape[0], dtype=np.bool_)
    for j in range(stats.shape[0]):
        out[j], _, ok[j] = dirichlet_mle(stats[j], alpha0[j], tol, grad_tol, max_iter)
    return out, ok
