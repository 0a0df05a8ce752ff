"""Fixed-background estimation of a new-class Dirichlet mixture.

The background density of a fitted TSDM model is held fixed while EM
estimates the mixing weights ``lambda = (lambda_0, lambda_1..lambda_J)`` and
the new-class Dirichlet components from unlabelled data.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dirichlet import as_simplex, mle_weighted_columns
from .errors import ConvergenceError, ValidationError
from .inner_em import (
    EMRun,
    FitReport,
    InnerMixture,
    _map,
    _start_seeds,
    bic,
    hard_occupancy,
    kmeans_init,
)
from .tsdm import TSDMModel

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
LAMBDA_ATOL = 1e-9
DEFAULT_J_RANGE = range(1, 6)


@dataclass(frozen=True)
class FBConfig:
    """Constants of the fixed-background EM.

    ``include_null`` adds the pure-background model (J = 0, no free
    parameters) to the BIC comparison.
    """

    n_min: int = 3
    epsilon: float = 1e-6
    max_iter: int = 500
    n_starts: int = 10
    seed: int = 0
    perturb_sd: float = 0.5
    workers: int = 1
    init_quantile: float = 0.1
    lambda0_init: float = 0.9
    lambda_floor: float = 1e-10
    include_null: bool = True

    def __post_init__(self):
        if self.n_min < 1 or self.n_starts < 1 or self.max_iter < 1:
            raise ValidationError("n_min, n_starts and max_iter must be positive")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        if not 0 < self.init_quantile <= 1:
            raise ValidationError("init_quantile must lie in (0, 1]")
        if not 0 < self.lambda0_init < 1:
            raise ValidationError("lambda0_init must lie in (0, 1)")
        if not 0 <= self.lambda_floor < 1e-3:
            raise ValidationError("lambda_floor must lie in [0, 1e-3)")


@dataclass(frozen=True, eq=False)
class FBModel:
    """Frozen background plus a new-class mixture.

    ``lam[0]`` is the background weight and ``lam[1:]`` the weights of the
    new-class components.  A model with ``no_novelty`` set has ``lam ==
    (1,)`` and no new-class mixture.
    """

    background: TSDMModel
    lam: np.ndarray
    new_class: InnerMixture | None = None
    no_novelty: bool = False

    def __post_init__(self):
        lam = np.array(self.lam, dtype=np.float64).ravel()
        if np.any(lam < 0) or abs(lam.sum() - 1.0) > LAMBDA_ATOL:
            raise ValidationError(f"lambda must be non-negative and sum to 1: {lam}")
        J = 0 if self.new_class is None else self.new_class.J
        if lam.size != J + 1:
            raise ValidationError(f"lambda has {lam.size} entries for {J} new-class components")
        if self.new_class is not None and self.new_class.dim != self.background.dim:
            raise ValidationError("new-class and background dimensions differ")
        if self.no_novelty and J:
            raise ValidationError("a no-novelty model has no new-class components")
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)

    @property
    def J(self) -> int:
        return 0 if self.new_class is None else self.new_class.J

    @property
    def dim(self) -> int:
        return self.background.dim

    @property
    def novelty_rate(self) -> float:
        """``1 - lambda_0``, the estimated new-class proportion."""
        return float(1.0 - self.lam[0])

    def log_terms(self, logy: np.ndarray, log_fb: np.ndarray | None = None) -> np.ndarray:
        """(n, J+1) unnormalised log posterior terms."""
        if log_fb is None:
            log_fb = self.background.log_density_log(logy)
        with np.errstate(divide="ignore"):
            log_lam = np.log(self.lam)
        cols = [log_fb + log_lam[0]]
        if self.new_class is not None:
            cols.append(self.new_class.component_log_pdf(logy) + log_lam[1:])
        return np.column_stack(cols)

    def log_density_log(self, logy: np.ndarray, log_fb: np.ndarray | None = None) -> np.ndarray:
        _, lse = kernels.log_normalize_rows(self.log_terms(logy, log_fb))
        return lse

    def to_dict(self, background_doc: dict | None = None) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "fb",
            "background": self.background.to_dict() if background_doc is None else background_doc,
            "lambda": self.lam.tolist(),
            "new_class": None if self.new_class is None else self.new_class.to_dict(),
            "no_novelty": self.no_novelty,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FBModel":
        if d.get("kind") != "fb":
            raise ValidationError("not an FB model document")
        nc = d.get("new_class")
        return cls(
            background=TSDMModel.from_dict(d["background"]),
            lam=np.array(d["lambda"], dtype=np.float64),
            new_class=None if nc is None else InnerMixture.from_dict(nc),
            no_novelty=bool(d.get("no_novelty", False)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "FBModel":
        return cls.from_dict(json.loads(text))


def no_novelty_model(background: TSDMModel) -> FBModel:
    return FBModel(background, np.ones(1), None, no_novelty=True)


def e_step_fb(m: FBModel, data) -> np.ndarray:
    """Responsibilities; column 0 is the background, columns 1..J the new class."""
    y = as_simplex(data, m.dim)
    resp, _ = kernels.log_normalize_rows(m.log_terms(np.log(y)))
    return resp


def _floor_lambda(lam: np.ndarray, floor: float) -> np.ndarray:
    if floor > 0 and np.any(lam[1:] < floor):
        lam = lam.copy()
        lam[1:] = np.maximum(lam[1:], floor)
        lam /= lam.sum()
    return lam


def _m_step_log(resp, logy, y, warm=None, floor=0.0):
    lam = _floor_lambda(resp.mean(axis=0), floor)
    alphas = mle_weighted_columns(logy, resp[:, 1:], y, warm)
    kappa = lam[1:] / lam[1:].sum()
    return lam, InnerMixture._trusted(kappa, alphas)


def m_step_fb(resp, data, background: TSDMModel) -> tuple[np.ndarray, InnerMixture]:
    """Column means of ``resp`` for lambda, weighted Dirichlet MLE per new-class column.

    The background enters only through the responsibilities and is not
    modified.
    """
    y = as_simplex(data, background.dim)
    resp = np.asarray(resp, dtype=np.float64)
    if resp.ndim != 2 or resp.shape[0] != y.shape[0] or resp.shape[1] < 2:
        raise ValidationError("responsibilities must be an n x (J+1) matrix with J >= 1")
    lam, mix = _m_step_log(resp, np.log(y), y)
    return lam, InnerMixture(mix.weights, mix.alphas)


def _fb_terms(lam, mix, logy, log_fb):
    with np.errstate(divide="ignore"):
        log_lam = np.log(lam)
    out = np.empty((logy.shape[0], lam.size))
    out[:, 0] = log_fb + log_lam[0]
    out[:, 1:] = mix.component_log_pdf(logy) + log_lam[1:]
    return out


def run_em_fb(logy, y, log_fb, lam, mix, config: FBConfig) -> tuple[EMRun, np.ndarray | None]:
    """EM with the background column held fixed; returns the run and final lambda."""
    resp, lse = kernels.log_normalize_rows(_fb_terms(lam, mix, logy, log_fb))
    ll = float(lse.sum())
    trace = [ll]
    converged = False
    it = 0
    try:
        for it in range(1, config.max_iter + 1):
            lam, mix = _m_step_log(resp, logy, y, warm=mix.alphas, floor=config.lambda_floor)
            resp, lse = kernels.log_normalize_rows(_fb_terms(lam, mix, logy, log_fb))
            ll_new = float(lse.sum())
            trace.append(ll_new)
            gain = ll_new - ll
            ll = ll_new
            if gain <= config.epsilon:
                converged = True
                break
    except (ConvergenceError, ValidationError) as exc:
        return EMRun(None, -np.inf, trace, it, False, None, failure=str(exc)), None
    return EMRun(mix, ll, trace, it, converged, hard_occupancy(resp)), lam


def init_subset(y: np.ndarray, log_fb: np.ndarray, J: int, config: FBConfig) -> np.ndarray:
    """Points with the lowest background density, at least ``J * n_min`` of them."""
    n = y.shape[0]
    k = max(int(math.ceil(config.init_quantile * n)), J * config.n_min, 2 * J)
    k = min(k, n)
    order = np.argsort(log_fb, kind="stable")
    return y[np.sort(order[:k])]


def _one_start(args):
    logy, y, log_fb, subset, J, config, ss, index = args
    rng = np.random.default_rng(ss)
    init = kmeans_init(subset, J, rng)
    alphas = init.alphas
    if index > 0:
        alphas = alphas * np.exp(rng.normal(0.0, config.perturb_sd, alphas.shape))
    lam = np.concatenate([[config.lambda0_init], (1.0 - config.lambda0_init) * init.weights])
    return run_em_fb(logy, y, log_fb, lam, InnerMixture(init.weights, alphas), config)


def n_free_parameters(J: int, D: int) -> int:
    return J * D + J


@dataclass
class FBFitReport(FitReport):
    lam: list[float] = field(default_factory=list)
    no_novelty: bool = False
    reason: str = ""

    def to_dict(self) -> dict:
        d = super().to_dict()
        d.update(lam=list(self.lam), no_novelty=self.no_novelty, reason=self.reason)
        return d


def fit_fixed_j(background: TSDMModel, data, J: int, config: FBConfig = FBConfig(), log_fb=None):
    """Best kept multi-start FB run at a fixed number of new-class components.

    Returns ``(FBModel, FBFitReport)`` or ``None`` when every run was
    discarded (a failed fit, or a new-class component holding fewer than
    ``n_min`` hard-assigned points).
    """
    y = as_simplex(data, background.dim)
    n, D = y.shape
    logy = np.log(y)
    if log_fb is None:
        log_fb = background.log_density_log(logy)
    if n < J * config.n_min:
        return None
    subset = init_subset(y, log_fb, J, config)
    seeds = _start_seeds(config.seed, config.n_starts)
    args = [(logy, y, log_fb, subset, J, config, ss, i) for i, ss in enumerate(seeds)]
    runs = _map(_one_start, args, config.workers)
    kept = [
        (r, lam) for r, lam in runs
        if r.mixture is not None and r.occupancy[1:].min() >= config.n_min
    ]
    if not kept:
        return None
    best, lam = max(kept, key=lambda t: t[0].log_likelihood)
    model = FBModel(background, lam, InnerMixture(best.mixture.weights, best.mixture.alphas))
    report = FBFitReport(
        J=J,
        n=n,
        final_log_likelihood=best.log_likelihood,
        bic=bic(best.log_likelihood, n_free_parameters(J, D), n),
        iterations=best.iterations,
        n_starts_tried=config.n_starts,
        n_starts_kept=len(kept),
        min_occupancy=float(best.occupancy[1:].min()),
        converged=best.converged,
        log_likelihood_trace=best.trace,
        lam=lam.tolist(),
    )
    return model, report


def fit(
    background: TSDMModel,
    data,
    j_range=DEFAULT_J_RANGE,
    config: FBConfig = FBConfig(),
) -> tuple[FBModel, FBFitReport]:
    """Select the number of new-class components by BIC.

    When every candidate is discarded, or the pure-background model has the
    lowest BIC (``config.include_null``), the returned model has
    ``no_novelty`` set and ``lambda_0 = 1``.
    """
    y = as_simplex(data, background.dim)
    n = y.shape[0]
    if n < config.n_min:
        raise ValidationError(f"n={n} is below n_min={config.n_min}")
    candidates = sorted(set(int(j) for j in j_range))
    if not candidates or candidates[0] < 1:
        raise ValidationError("new-class J range must be a non-empty set of positive integers")
    log_fb = background.log_density_log(np.log(y))
    null_ll = float(log_fb.sum())
    null_bic = bic(null_ll, 0, n)

    results = {}
    bics: dict[int, float | None] = {}
    for J in candidates:
        res = fit_fixed_j(background, y, J, config, log_fb)
        bics[J] = None if res is None else res[1].bic
        if res is not None:
            results[J] = res
        else:
            log.debug("new-class J=%d: all runs discarded", J)
    if config.include_null:
        bics[0] = null_bic

    reason = ""
    if not results:
        reason = "all candidate runs discarded"
    else:
        best_j = min(results, key=lambda j: (results[j][1].bic, j))
        if config.include_null and null_bic <= results[best_j][1].bic:
            reason = "background-only model has the lowest BIC"
    if reason:
        report = FBFitReport(
            J=0,
            n=n,
            final_log_likelihood=null_ll,
            bic=null_bic,
            iterations=0,
            n_starts_tried=0,
            n_starts_kept=0,
            min_occupancy=float("nan"),
            converged=True,
            log_likelihood_trace=[null_ll],
            candidate_bics=bics,
            lam=[1.0],
            no_novelty=True,
            reason=reason,
        )
        return no_novelty_model(background), report
    model, report = results[best_j]
    report.candidate_bics = bics
    return model, report


def log_density_fb(m: FBModel, y):
    """``log(lambda_0 f_B(y) + sum_j lambda_j Dir(y; beta_j))``."""
    single = np.ndim(y) == 1
    pts = as_simplex(y, m.dim)
    out = m.log_density_log(np.log(pts))
    return float(out[0]) if single else out
