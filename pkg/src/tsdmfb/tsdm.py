"""Two-stage background model: per-class Dirichlet mixtures plus outer weights.

Stage 1 fits an inner mixture to each labelled class separately.  Stage 2
sets the outer weights to the mode of the Dirichlet posterior obtained by
updating a Dirichlet prior with the class counts.
"""
from __future__ import annotations

import json
import warnings
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .dirichlet import as_simplex
from .errors import InsufficientClassSizeError, UnknownLabelError, ValidationError
from .inner_em import EMConfig, FitReport, InnerMixture, _map, select_j

SCHEMA_VERSION = 1
DEFAULT_J_RANGE = range(1, 8)


class ModeUndefinedWarning(UserWarning):
    """The posterior mode of the outer weights does not exist; the mean is used."""


class RhoEstimate(NamedTuple):
    rho: np.ndarray
    mode_fallback: bool


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    points: np.ndarray
    labels: tuple

    def __post_init__(self):
        pts = as_simplex(self.points)
        labels = tuple(self.labels)
        if len(labels) != pts.shape[0]:
            raise ValidationError("points and labels must have equal length")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labels)

    @property
    def classes(self) -> list:
        return sorted(set(self.labels))

    def class_points(self, label) -> np.ndarray:
        mask = np.fromiter((lab == label for lab in self.labels), bool, len(self.labels))
        return self.points[mask]

    def counts(self, classes: Iterable) -> np.ndarray:
        classes = list(classes)
        index = {c: k for k, c in enumerate(classes)}
        out = np.zeros(len(classes), dtype=np.int64)
        for lab in self.labels:
            if lab not in index:
                raise UnknownLabelError(f"label {lab!r} is not in the class list")
            out[index[lab]] += 1
        return out


@dataclass(frozen=True, eq=False)
class TSDMModel:
    classes: tuple
    inner: tuple[InnerMixture, ...]
    rho: np.ndarray
    prior_e: np.ndarray
    mode_fallback: bool = False
    reports: tuple[FitReport, ...] = field(default=())

    def __post_init__(self):
        classes = tuple(self.classes)
        if len(set(classes)) != len(classes):
            raise ValidationError("class labels must be unique")
        rho = np.array(self.rho, dtype=np.float64)
        prior = np.array(self.prior_e, dtype=np.float64)
        if not (len(classes) == len(self.inner) == rho.size == prior.size):
            raise ValidationError("classes, inner mixtures, rho and prior must align")
        if np.any(rho <= 0) or abs(rho.sum() - 1.0) > 1e-9:
            raise ValidationError("rho must be positive and sum to 1")
        if np.any(prior <= 0):
            raise ValidationError("prior_e must be positive")
        if len({m.dim for m in self.inner}) != 1:
            raise ValidationError("inner mixtures disagree on the simplex dimension")
        rho.setflags(write=False)
        prior.setflags(write=False)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "inner", tuple(self.inner))
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "prior_e", prior)
        object.__setattr__(self, "reports", tuple(self.reports))

    @property
    def K(self) -> int:
        return len(self.classes)

    @property
    def dim(self) -> int:
        return self.inner[0].dim

    def class_log_densities(self, logy: np.ndarray) -> np.ndarray:
        """(n, K) matrix of ``log rho_k + log f_k(y)``."""
        return np.column_stack(
            [m.log_density_log(logy) for m in self.inner]
        ) + np.log(self.rho)

    def log_density_log(self, logy: np.ndarray) -> np.ndarray:
        _, lse = kernels.log_normalize_rows(self.class_log_densities(logy))
        return lse

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "tsdm",
            "classes": [str(c) for c in self.classes],
            "rho": self.rho.tolist(),
            "prior_e": self.prior_e.tolist(),
            "mode_fallback": self.mode_fallback,
            "inner": [m.to_dict() for m in self.inner],
            "reports": [r.to_dict() for r in self.reports],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TSDMModel":
        if d.get("kind") != "tsdm":
            raise ValidationError("not a TSDM model document")
        return cls(
            classes=tuple(d["classes"]),
            inner=tuple(InnerMixture.from_dict(m) for m in d["inner"]),
            rho=np.array(d["rho"], dtype=np.float64),
            prior_e=np.array(d["prior_e"], dtype=np.float64),
            mode_fallback=bool(d.get("mode_fallback", False)),
            reports=tuple(FitReport.from_dict(r) for r in d.get("reports", [])),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "TSDMModel":
        return cls.from_dict(json.loads(text))


def _class_j_range(j_range, label) -> Iterable[int]:
    if isinstance(j_range, Mapping):
        if label in j_range:
            return j_range[label]
        if str(label) in j_range:
            return j_range[str(label)]
        return j_range.get("default", DEFAULT_J_RANGE)
    return j_range


def fit_stage1(
    data: LabeledDataset,
    per_class_j_range=DEFAULT_J_RANGE,
    config: EMConfig = EMConfig(),
) -> list[tuple[InnerMixture, FitReport]]:
    """Select and fit an inner mixture for every class, in sorted label order.

    ``per_class_j_range`` is either one iterable of candidate J values or a
    mapping from label to iterable (key ``"default"`` covers the rest).
    Every class is fitted from the same seed, so a class's fit does not
    depend on the other classes.
    """
    classes = data.classes
    for label in classes:
        size = data.class_points(label).shape[0]
        if size < config.n_min:
            raise InsufficientClassSizeError(label, size, config.n_min)

    def work(label):
        return select_j(data.class_points(label), _class_j_range(per_class_j_range, label), config)

    return _map(work, classes, config.workers)


def posterior_rho(class_counts, prior_e) -> RhoEstimate:
    """Mode of the Dirichlet(e + n) posterior of the outer weights.

    ``(n_k + e_k - 1) / (n + sum(e) - K)``.  When some ``e_k + n_k <= 1``
    the mode is not interior and the posterior mean ``(n_k + e_k) / (n +
    sum(e))`` is returned instead, with ``mode_fallback`` set and a
    ``ModeUndefinedWarning`` emitted.
    """
    n_k = np.asarray(class_counts, dtype=np.float64)
    e = np.asarray(prior_e, dtype=np.float64)
    if n_k.shape != e.shape or n_k.ndim != 1:
        raise ValidationError("class counts and prior must be vectors of equal length")
    if np.any(e <= 0):
        raise ValidationError("prior concentrations must be positive")
    if np.any(n_k < 0) or n_k.sum() < 1:
        raise ValidationError("class counts must be non-negative with a positive total")
    post = n_k + e
    if np.any(post <= 1.0):
        warnings.warn(
            "posterior mode undefined (some e_k + n_k <= 1); using posterior mean",
            ModeUndefinedWarning,
            stacklevel=2,
        )
        return RhoEstimate(post / post.sum(), True)
    return RhoEstimate((post - 1.0) / (n_k.sum() + e.sum() - e.size), False)


def default_prior(K: int) -> np.ndarray:
    return np.full(K, 1.0 / K)


def fit(
    data: LabeledDataset,
    prior_e=None,
    config: EMConfig = EMConfig(),
    j_range=DEFAULT_J_RANGE,
) -> TSDMModel:
    """Stage 1 then Stage 2; the prior defaults to Dirichlet(1/K, ..., 1/K)."""
    classes = data.classes
    stage1 = fit_stage1(data, j_range, config)
    prior = default_prior(len(classes)) if prior_e is None else np.asarray(prior_e, dtype=np.float64)
    if prior.size != len(classes):
        raise ValidationError(f"prior has {prior.size} entries for {len(classes)} classes")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ModeUndefinedWarning)
        est = posterior_rho(data.counts(classes), prior)
    return TSDMModel(
        classes=tuple(classes),
        inner=tuple(m for m, _ in stage1),
        rho=est.rho,
        prior_e=prior,
        mode_fallback=est.mode_fallback,
        reports=tuple(r for _, r in stage1),
    )


def log_density_background(m: TSDMModel, y):
    """``log sum_k rho_k f_k(y)`` at one point or at every row."""
    single = np.ndim(y) == 1
    pts = as_simplex(y, m.dim)
    out = m.log_density_log(np.log(pts))
    return float(out[0]) if single else out
