"""numba-compiled twins of the kernels in ``_numpy``.

Scalar special functions are written as explicit loops so that they inline
into the compiled matrix kernels; the array wrappers keep the numpy
signatures.
"""
import math

import numba
import numpy as np

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_SHIFT = 10.0
_EULER = 0.5772156649015329

_jit = numba.njit(cache=True, fastmath=False, nogil=True)


@_jit
def _gammaln_scalar(x):
    shift = 0.0
    while x < _SHIFT:
        shift += math.log(x)
        x += 1.0
    inv = 1.0 / x
    z = inv * inv
    series = inv * (
        1.0 / 12.0
        + z * (-1.0 / 360.0
        + z * (1.0 / 1260.0
        + z * (-1.0 / 1680.0
        + z * (1.0 / 1188.0
        + z * (-691.0 / 360360.0
        + z * (1.0 / 156.0))))))
    )
    return (x - 0.5) * math.log(x) - x + _HALF_LOG_2PI + series - shift


@_jit
def _digamma_scalar(x):
    acc = 0.0
    while x < _SHIFT:
        acc -= 1.0 / x
        x += 1.0
    z = 1.0 / (x * x)
    series = z * (
        1.0 / 12.0
        + z * (-1.0 / 120.0
        + z * (1.0 / 252.0
        + z * (-1.0 / 240.0
        + z * (1.0 / 132.0
        + z * (-691.0 / 32760.0
        + z * (1.0 / 12.0))))))
    )
    return acc + math.log(x) - 0.5 / x - series


@_jit
def _trigamma_scalar(x):
    acc = 0.0
    while x < _SHIFT:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    z = inv * inv
    series = inv * z * (
        1.0 / 6.0
        + z * (-1.0 / 30.0
        + z * (1.0 / 42.0
        + z * (-1.0 / 30.0
        + z * (5.0 / 66.0
        + z * (-691.0 / 2730.0
        + z * (7.0 / 6.0))))))
    )
    return acc + inv + 0.5 * z + series


@_jit
def _inv_digamma_scalar(y):
    if y >= -2.22:
        x = math.exp(y) + 0.5
    else:
        x = -1.0 / (y + _EULER)
    for _ in range(50):
        x_new = x - (_digamma_scalar(x) - y) / _trigamma_scalar(x)
        if x_new <= 0.0:
            x_new = 0.5 * x
        if abs(x_new - x) <= 1e-15 * x_new:
            return x_new
        x = x_new
    return x


def _vectorize(scalar):
    @_jit
    def inner(flat, out):
        for i in range(flat.shape[0]):
            out[i] = scalar(flat[i])

    def wrapper(x):
        arr = np.asarray(x, dtype=np.float64)
        flat = np.ascontiguousarray(arr).ravel()
        out = np.empty_like(flat)
        inner(flat, out)
        return out.reshape(arr.shape)

    return wrapper


gammaln = _vectorize(_gammaln_scalar)
digamma = _vectorize(_digamma_scalar)
trigamma = _vectorize(_trigamma_scalar)
_inv_digamma = _vectorize(_inv_digamma_scalar)


def inv_digamma(y, n_newton=50, tol=1e-15):
    return _inv_digamma(y)


@_jit
def _log_norm_rows(alphas, out):
    for j in range(alphas.shape[0]):
        total = 0.0
        acc = 0.0
        for d in range(alphas.shape[1]):
            total += alphas[j, d]
            acc -= _gammaln_scalar(alphas[j, d])
        out[j] = acc + _gammaln_scalar(total)


def dirichlet_log_norm(alphas):
    alphas = np.ascontiguousarray(np.atleast_2d(alphas), dtype=np.float64)
    out = np.empty(alphas.shape[0])
    _log_norm_rows(alphas, out)
    return out


@_jit
def _component_log_pdf(logy, alphas, out):
    n, dim = logy.shape
    n_comp = alphas.shape[0]
    norms = np.empty(n_comp)
    _log_norm_rows(alphas, norms)
    for i in range(n):
        for j in range(n_comp):
            acc = norms[j]
            for d in range(dim):
                acc += (alphas[j, d] - 1.0) * logy[i, d]
            out[i, j] = acc


def component_log_pdf(logy, alphas):
    logy = np.ascontiguousarray(logy, dtype=np.float64)
    alphas = np.ascontiguousarray(np.atleast_2d(alphas), dtype=np.float64)
    out = np.empty((logy.shape[0], alphas.shape[0]))
    _component_log_pdf(logy, alphas, out)
    return out


@_jit
def _log_normalize_rows(logp, resp, lse):
    n, m = logp.shape
    for i in range(n):
        mx = -np.inf
        for j in range(m):
            if logp[i, j] > mx:
                mx = logp[i, j]
        if not np.isfinite(mx):
            mx = 0.0
        tot = 0.0
        for j in range(m):
            e = math.exp(logp[i, j] - mx)
            resp[i, j] = e
            tot += e
        for j in range(m):
            resp[i, j] /= tot
        lse[i] = math.log(tot) + mx


def log_normalize_rows(logp):
    logp = np.ascontiguousarray(logp, dtype=np.float64)
    resp = np.empty_like(logp)
    lse = np.empty(logp.shape[0])
    _log_normalize_rows(logp, resp, lse)
    return resp, lse


@_jit
def _objective(alpha, s):
    total = 0.0
    acc = 0.0
    for d in range(alpha.shape[0]):
        total += alpha[d]
        acc += (alpha[d] - 1.0) * s[d] - _gammaln_scalar(alpha[d])
    return acc + _gammaln_scalar(total)


def dirichlet_objective(alpha, s):
    return float(_objective(np.asarray(alpha, np.float64), np.asarray(s, np.float64)))


@_jit
def _gradient(alpha, s, out):
    total = 0.0
    for d in range(alpha.shape[0]):
        total += alpha[d]
    psi_total = _digamma_scalar(total)
    for d in range(alpha.shape[0]):
        out[d] = psi_total - _digamma_scalar(alpha[d]) + s[d]


def dirichlet_gradient(alpha, s):
    alpha = np.asarray(alpha, np.float64)
    out = np.empty_like(alpha)
    _gradient(alpha, np.asarray(s, np.float64), out)
    return out


@_jit
def _dirichlet_mle(s, alpha0, tol, grad_tol, max_iter):
    dim = alpha0.shape[0]
    alpha = alpha0.copy()
    cand = np.empty(dim)
    g = np.empty(dim)
    q = np.empty(dim)
    f = _objective(alpha, s)
    for it in range(1, max_iter + 1):
        total = 0.0
        for d in range(dim):
            total += alpha[d]
        psi_total = _digamma_scalar(total)
        z = _trigamma_scalar(total)
        sum_gq = 0.0
        sum_iq = 0.0
        for d in range(dim):
            g[d] = psi_total - _digamma_scalar(alpha[d]) + s[d]
            q[d] = -_trigamma_scalar(alpha[d])
            sum_gq += g[d] / q[d]
            sum_iq += 1.0 / q[d]
        b = sum_gq / (1.0 / z + sum_iq)
        ok = True
        for d in range(dim):
            cand[d] = alpha[d] - (g[d] - b) / q[d]
            if not (cand[d] > 0.0 and np.isfinite(cand[d])):
                ok = False
        f_cand = -np.inf
        if ok:
            f_cand = _objective(cand, s)
        if not f_cand >= f - 1e-13 * (1.0 + abs(f)):
            for d in range(dim):
                cand[d] = _inv_digamma_scalar(psi_total + s[d])
            f_cand = _objective(cand, s)
        rel = 0.0
        big = 0.0
        finite = True
        for d in range(dim):
            r = abs(cand[d] - alpha[d]) / cand[d]
            if r > rel:
                rel = r
            alpha[d] = cand[d]
            if alpha[d] > big:
                big = alpha[d]
            if not np.isfinite(alpha[d]):
                finite = False
        f = f_cand
        if not finite or big > 1e12:
            return alpha, it, False
        if rel < tol:
            _gradient(alpha, s, g)
            gmax = 0.0
            for d in range(dim):
                if abs(g[d]) > gmax:
                    gmax = abs(g[d])
            if gmax <= grad_tol:
                return alpha, it, True
    return alpha, max_iter, False


def dirichlet_mle(s, alpha0, tol, grad_tol, max_iter):
    alpha, it, ok = _dirichlet_mle(
        np.ascontiguousarray(s, dtype=np.float64),
        np.ascontiguousarray(alpha0, dtype=np.float64),
        float(tol),
        float(grad_tol),
        int(max_iter),
    )
    return alpha, int(it), bool(ok)


@_jit
def _dirichlet_mle_batch(stats, alpha0, tol, grad_tol, max_iter, out, ok):
    for j in range(stats.shape[0]):
        a, _, flag = _dirichlet_mle(stats[j], alpha0[j], tol, grad_tol, max_iter)
        out[j] = a
        ok[j] = flag


def dirichlet_mle_batch(stats, alpha0, tol, grad_tol, max_iter):
    stats = np.ascontiguousarray(stats, dtype=np.float64)
    alpha0 = np.ascontiguousarray(alpha0, dtype=np.float64)
    out = np.empty_like(alpha0)
    ok = np.zeros(stats.shape[0], dtype=np.bool_)
    _dirichlet_mle_batch(stats, alpha0, float(tol), float(grad_tol), int(max_iter), out, ok)
    return out, ok
