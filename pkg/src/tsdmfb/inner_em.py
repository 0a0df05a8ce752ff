"""EM for a finite Dirichlet mixture with multi-start, occupancy filter and BIC."""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.cluster.vq import kmeans2

from . import kernels
from .dirichlet import DirichletParams, as_simplex, mle_weighted_columns, moment_match
from .errors import AllRunsDiscardedError, ConvergenceError, ValidationError

log = logging.getLogger(__name__)

WEIGHT_ATOL = 1e-9


@dataclass(frozen=True)
class EMConfig:
    """Constants of the per-class EM.

    ``epsilon`` is an absolute bound on the observed-data log-likelihood
    gain between iterations; a run stops once a step gains no more than it.
    """

    n_min: int = 3
    epsilon: float = 1e-6
    max_iter: int = 500
    n_starts: int = 10
    seed: int = 0
    perturb_sd: float = 0.5
    workers: int = 1

    def __post_init__(self):
        if self.n_min < 1 or self.n_starts < 1 or self.max_iter < 1:
            raise ValidationError("n_min, n_starts and max_iter must be positive")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")


@dataclass(frozen=True, eq=False)
class InnerMixture:
    """J weighted Dirichlet components."""

    weights: np.ndarray
    alphas: np.ndarray  # (J, D)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).ravel()
        a = np.array(self.alphas, dtype=np.float64)
        if a.ndim == 1:
            a = a[None, :]
        if a.shape[0] != w.size:
            raise ValidationError("one weight per component is required")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > WEIGHT_ATOL:
            raise ValidationError(f"mixture weights must be positive and sum to 1: {w}")
        if a.ndim != 2 or a.shape[1] < 2 or not np.all(np.isfinite(a)) or np.any(a <= 0):
            raise ValidationError("component concentrations must be positive and finite")
        w.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "alphas", a)

    @classmethod
    def _trusted(cls, weights: np.ndarray, alphas: np.ndarray) -> "InnerMixture":
        # internal fast path for EM iterates; skips validation
        obj = object.__new__(cls)
        object.__setattr__(obj, "weights", weights)
        object.__setattr__(obj, "alphas", alphas)
        return obj

    @property
    def J(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.alphas.shape[1]

    @property
    def components(self) -> list[DirichletParams]:
        return [DirichletParams(a) for a in self.alphas]

    def component_log_pdf(self, logy: np.ndarray) -> np.ndarray:
        return kernels.component_log_pdf(logy, self.alphas)

    def log_density_log(self, logy: np.ndarray) -> np.ndarray:
        """Mixture log density from precomputed ``log y``."""
        _, lse = kernels.log_normalize_rows(self.component_log_pdf(logy) + np.log(self.weights))
        return lse

    def log_density(self, y):
        single = np.ndim(y) == 1
        pts = as_simplex(y, self.dim)
        out = self.log_density_log(np.log(pts))
        return float(out[0]) if single else out

    def permuted(self, order) -> "InnerMixture":
        order = np.asarray(order)
        return InnerMixture(self.weights[order], self.alphas[order])

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "alphas": self.alphas.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "InnerMixture":
        return cls(np.array(d["weights"], dtype=np.float64), np.array(d["alphas"], dtype=np.float64))


@dataclass
class FitReport:
    J: int
    n: int
    final_log_likelihood: float
    bic: float
    iterations: int
    n_starts_tried: int
    n_starts_kept: int
    min_occupancy: float
    converged: bool
    log_likelihood_trace: list[float] = field(default_factory=list)
    candidate_bics: dict[int, float | None] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "J": self.J,
            "n": self.n,
            "final_log_likelihood": self.final_log_likelihood,
            "bic": self.bic,
            "iterations": self.iterations,
            "n_starts_tried": self.n_starts_tried,
            "n_starts_kept": self.n_starts_kept,
            "min_occupancy": _finite_or_none(self.min_occupancy),
            "converged": self.converged,
            "log_likelihood_trace": list(self.log_likelihood_trace),
            "candidate_bics": {str(k): v for k, v in self.candidate_bics.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitReport":
        d = dict(d)
        d["candidate_bics"] = {int(k): v for k, v in d.get("candidate_bics", {}).items()}
        if d.get("min_occupancy") is None:
            d["min_occupancy"] = float("nan")
        return cls(**d)


def _finite_or_none(x):
    return x if math.isfinite(x) else None


def n_free_parameters(J: int, D: int) -> int:
    return J * D + (J - 1)


def bic(log_likelihood: float, n_params: int, n: int) -> float:
    return -2.0 * log_likelihood + n_params * math.log(n)


def e_step(m: InnerMixture, data) -> np.ndarray:
    """Responsibilities ``w_ij``; each row sums to one."""
    y = as_simplex(data, m.dim)
    resp, _ = _e_step_log(m, np.log(y))
    return resp


def _e_step_log(m: InnerMixture, logy: np.ndarray):
    return kernels.log_normalize_rows(m.component_log_pdf(logy) + np.log(m.weights))


def m_step(resp, data) -> InnerMixture:
    """Closed-form weights and per-component weighted Dirichlet MLE."""
    y = as_simplex(data)
    resp = np.asarray(resp, dtype=np.float64)
    return _m_step_log(resp, np.log(y), y)


def _m_step_log(resp: np.ndarray, logy: np.ndarray, y: np.ndarray, warm: np.ndarray | None = None) -> InnerMixture:
    weights = resp.sum(axis=0) / resp.shape[0]
    alphas = mle_weighted_columns(logy, resp, y, warm)
    return InnerMixture._trusted(weights / weights.sum(), alphas)


def hard_occupancy(resp: np.ndarray) -> np.ndarray:
    """Counts per column of the row-wise argmax (ties go to the lower index)."""
    return np.bincount(np.argmax(resp, axis=1), minlength=resp.shape[1])


def kmeans_init(y: np.ndarray, J: int, rng: np.random.Generator) -> InnerMixture:
    """Seeded k-means partition followed by per-cluster moment matching."""
    D = y.shape[1]
    if J == 1:
        return InnerMixture(np.ones(1), moment_match(y)[None, :])
    with warnings.catch_warnings(), np.errstate(invalid="ignore"):
        # empty clusters are handled below
        warnings.simplefilter("ignore")
        _, labels = kmeans2(y, J, minit="++", seed=rng)
    counts = np.bincount(labels, minlength=J).astype(float)
    overall = moment_match(y)
    alphas = np.empty((J, D))
    for j in range(J):
        members = y[labels == j]
        if members.shape[0] >= 2:
            alphas[j] = moment_match(members)
        else:
            alphas[j] = overall * np.exp(rng.normal(0.0, 0.5, D))
    weights = np.maximum(counts, 1.0)
    return InnerMixture(weights / weights.sum(), alphas)


@dataclass
class EMRun:
    mixture: InnerMixture | None
    log_likelihood: float
    trace: list[float]
    iterations: int
    converged: bool
    occupancy: np.ndarray | None
    failure: str | None = None


def run_em(logy: np.ndarray, y: np.ndarray, init: InnerMixture, config: EMConfig) -> EMRun:
    """Iterate E and M steps from ``init`` until the gain drops to ``epsilon``."""
    mix = init
    resp, lse = _e_step_log(mix, logy)
    ll = float(lse.sum())
    trace = [ll]
    converged = False
    it = 0
    try:
        for it in range(1, config.max_iter + 1):
            mix = _m_step_log(resp, logy, y, warm=mix.alphas)
            resp, lse = _e_step_log(mix, logy)
            ll_new = float(lse.sum())
            trace.append(ll_new)
            gain = ll_new - ll
            ll = ll_new
            if gain <= config.epsilon:
                converged = True
                break
    except (ConvergenceError, ValidationError) as exc:
        return EMRun(None, -np.inf, trace, it, False, None, failure=str(exc))
    return EMRun(mix, ll, trace, it, converged, hard_occupancy(resp))


def _start_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


def _one_start(args):
    logy, y, J, config, ss, index = args
    rng = np.random.default_rng(ss)
    init = kmeans_init(y, J, rng)
    if index > 0:
        noise = np.exp(rng.normal(0.0, config.perturb_sd, init.alphas.shape))
        init = replace(init, alphas=init.alphas * noise)
    return run_em(logy, y, init, config)


def _map(fn, items, workers: int):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


def fit_fixed_j(data, J: int, config: EMConfig = EMConfig()) -> tuple[InnerMixture, FitReport]:
    """Best of ``config.n_starts`` EM runs at a fixed number of components.

    Runs whose smallest hard-assigned component holds fewer than ``n_min``
    points are discarded; so are runs in which a component degenerates.
    """
    y = as_simplex(data)
    n, D = y.shape
    if J < 1:
        raise ValidationError("J must be >= 1")
    if n < J * config.n_min:
        raise ValidationError(f"n={n} is below J * n_min = {J * config.n_min}")
    logy = np.log(y)
    n_starts = 1 if J == 1 else config.n_starts
    seeds = _start_seeds(config.seed, n_starts)
    runs = _map(_one_start, [(logy, y, J, config, ss, i) for i, ss in enumerate(seeds)], config.workers)

    kept = [r for r in runs if r.mixture is not None and r.occupancy.min() >= config.n_min]
    if not kept:
        reasons = {r.failure for r in runs if r.failure}
        raise AllRunsDiscardedError(
            f"all {n_starts} EM runs at J={J} were discarded"
            + (f" ({'; '.join(sorted(reasons))})" if reasons else "")
        )
    best = max(kept, key=lambda r: r.log_likelihood)  # first maximum wins ties
    p = n_free_parameters(J, D)
    report = FitReport(
        J=J,
        n=n,
        final_log_likelihood=best.log_likelihood,
        bic=bic(best.log_likelihood, p, n),
        iterations=best.iterations,
        n_starts_tried=n_starts,
        n_starts_kept=len(kept),
        min_occupancy=float(best.occupancy.min()),
        converged=best.converged,
        log_likelihood_trace=best.trace,
    )
    return InnerMixture(best.mixture.weights, best.mixture.alphas), report


def select_j(data, j_range, config: EMConfig = EMConfig()) -> tuple[InnerMixture, FitReport]:
    """Fit every feasible J in ``j_range`` and keep the BIC minimiser."""
    y = as_simplex(data)
    candidates = sorted(set(int(j) for j in j_range))
    if not candidates:
        raise ValidationError("J range is empty")
    results: dict[int, tuple[InnerMixture, FitReport]] = {}
    bics: dict[int, float | None] = {}
    last_error: Exception | None = None
    for J in candidates:
        if y.shape[0] < J * config.n_min:
            bics[J] = None
            continue
        try:
            results[J] = fit_fixed_j(y, J, config)
            bics[J] = results[J][1].bic
        except AllRunsDiscardedError as exc:
            log.debug("J=%d discarded: %s", J, exc)
            bics[J] = None
            last_error = exc
    if not results:
        if last_error is not None:
            raise last_error
        raise ValidationError(
            f"no J in {candidates} is feasible for n={y.shape[0]} and n_min={config.n_min}"
        )
    best_j = min(results, key=lambda j: (results[j][1].bic, j))
    mix, report = results[best_j]
    report.candidate_bics = bics
    return mix, report
