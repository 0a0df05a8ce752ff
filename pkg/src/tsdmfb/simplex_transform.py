"""Margin-free mapping of raw attributes onto the simplex.

Each attribute is replaced by an interior empirical distribution function
(plotting positions ``rank / (n + 1)``, ties averaged).  A natural cubic
spline of ``logit(prob)`` against the raw value carries the map to values
not seen in training, with linear continuation on the logit scale beyond
the training range.  The ``D - 1`` probabilities plus the complement
``(D - 1) - sum(F)`` are divided by ``D - 1`` to land on the D-part simplex.

Values seen during fitting map to their stored plotting positions exactly,
so the training output depends on ranks only and is invariant to strictly
increasing rescaling of any attribute.  The spline, kept strictly
increasing, shapes the map between and beyond those positions.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline, PPoly, make_smoothing_spline
from scipy.special import expit, logit
from scipy.stats import rankdata

from .errors import ConstantAttributeError, ValidationError

SCHEMA_VERSION = 1
MAX_KNOTS = 200
PROB_CLAMP = 1e-6
MIN_ROWS = 10


@dataclass(frozen=True, eq=False)
class AttributeMap:
    """Fitted monotone map from one raw attribute to (0, 1)."""

    attribute_name: str
    support: np.ndarray  # sorted distinct training values
    support_prob: np.ndarray  # plotting-position probability of each
    knots: np.ndarray
    knot_prob: np.ndarray  # smoothed probability at each knot
    coefficients: np.ndarray  # (4, m - 1) piecewise cubic on the logit scale
    left_logit: float
    left_slope: float
    right_logit: float
    right_slope: float
    smoothing: float | str  # penalty actually used, or "gcv"
    clamp: float = PROB_CLAMP  # off-support outputs stay in [clamp, 1 - clamp]
    _ppoly: PPoly = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(
            self, "_ppoly", PPoly(self.coefficients, self.knots, extrapolate=False)
        )

    def logit_smooth(self, x) -> np.ndarray:
        """Smoothed logit probability, linear outside the knot range."""
        x = np.asarray(x, dtype=np.float64)
        out = np.empty_like(x)
        lo, hi = self.knots[0], self.knots[-1]
        left = x < lo
        right = x > hi
        mid = ~(left | right)
        out[left] = self.left_logit + self.left_slope * (x[left] - lo)
        out[right] = self.right_logit + self.right_slope * (x[right] - hi)
        if mid.any():
            out[mid] = self._ppoly(x[mid])
        return out

    def __call__(self, x) -> np.ndarray:
        """Probability of raw values ``x``.

        Training values return their plotting position.  Between two
        neighbouring training values the logit probability follows the
        spline's shape rescaled to join the two stored positions; beyond
        the range it continues linearly with the spline's end slope.
        """
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise ValidationError(f"non-finite value in attribute {self.attribute_name!r}")
        sup, lp = self.support, logit(self.support_prob)
        m = sup.size
        idx = np.searchsorted(sup, x)
        hit = (idx < m) & (sup[np.minimum(idx, m - 1)] == x)
        out = np.empty_like(x)
        below = (idx == 0) & ~hit
        above = idx == m
        gap = ~(hit | below | above)
        out[below] = lp[0] + self.left_slope * (x[below] - sup[0])
        out[above] = lp[-1] + self.right_slope * (x[above] - sup[-1])
        if gap.any():
            b = idx[gap]
            a = b - 1
            s_a = self.logit_smooth(sup[a])
            s_b = self.logit_smooth(sup[b])
            frac = (self.logit_smooth(x[gap]) - s_a) / (s_b - s_a)
            out[gap] = lp[a] + (lp[b] - lp[a]) * frac
        prob = np.clip(expit(out), self.clamp, 1.0 - self.clamp)
        prob[hit] = self.support_prob[idx[hit]]
        return prob

    def to_dict(self) -> dict:
        return {
            "name": self.attribute_name,
            "support": self.support.tolist(),
            "support_prob": self.support_prob.tolist(),
            "knots": self.knots.tolist(),
            "knot_prob": self.knot_prob.tolist(),
            "coefficients": self.coefficients.tolist(),
            "left_logit": self.left_logit,
            "left_slope": self.left_slope,
            "right_logit": self.right_logit,
            "right_slope": self.right_slope,
            "smoothing": self.smoothing,
            "clamp": self.clamp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttributeMap":
        coef = np.array(d["coefficients"], dtype=np.float64).reshape(4, -1)
        return cls(
            attribute_name=d["name"],
            support=np.array(d["support"], dtype=np.float64),
            support_prob=np.array(d["support_prob"], dtype=np.float64),
            knots=np.array(d["knots"], dtype=np.float64),
            knot_prob=np.array(d["knot_prob"], dtype=np.float64),
            coefficients=coef,
            left_logit=float(d["left_logit"]),
            left_slope=float(d["left_slope"]),
            right_logit=float(d["right_logit"]),
            right_slope=float(d["right_slope"]),
            smoothing=d["smoothing"] if d["smoothing"] == "gcv" else float(d["smoothing"]),
            clamp=float(d.get("clamp", PROB_CLAMP)),
        )


@dataclass(frozen=True, eq=False)
class SimplexTransform:
    maps: tuple[AttributeMap, ...]

    @property
    def d_minus_1(self) -> int:
        return len(self.maps)

    @property
    def dim(self) -> int:
        return len(self.maps) + 1

    @property
    def attribute_names(self) -> list[str]:
        return [m.attribute_name for m in self.maps]

    def probabilities(self, raw) -> np.ndarray:
        raw = _as_matrix(raw, self.d_minus_1)
        if raw.shape[0] == 0:
            return np.empty((0, self.d_minus_1))
        return np.column_stack([m(raw[:, j]) for j, m in enumerate(self.maps)])

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "simplex_transform",
            "D": self.dim,
            "attributes": [m.to_dict() for m in self.maps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimplexTransform":
        if d.get("kind") != "simplex_transform":
            raise ValidationError("not a simplex transform document")
        maps = tuple(AttributeMap.from_dict(a) for a in d["attributes"])
        if len(maps) + 1 != d["D"]:
            raise ValidationError("attribute count does not match D")
        return cls(maps)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SimplexTransform":
        return cls.from_dict(json.loads(text))


def _as_matrix(raw, width: int | None = None) -> np.ndarray:
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim == 1 and width is not None and arr.size == 0:
        arr = arr.reshape(0, width)
    if arr.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix of raw attributes, got shape {arr.shape}")
    if width is not None and arr.shape[1] != width:
        raise ValidationError(f"expected {width} attributes, got {arr.shape[1]}")
    return arr


def interior_ecdf(x) -> np.ndarray:
    """Plotting-position probabilities ``rank / (n + 1)`` with averaged ties."""
    x = np.asarray(x, dtype=np.float64)
    return rankdata(x, method="average") / (x.size + 1.0)


def to_simplex(prob: np.ndarray) -> np.ndarray:
    """Append the complement coordinate and renormalise rows onto the simplex."""
    prob = np.atleast_2d(prob)
    k = prob.shape[1]
    fake = k - prob.sum(axis=1, keepdims=True)
    return np.hstack([prob, fake]) / k


def _select_knots(x_sorted: np.ndarray, support: np.ndarray, max_knots: int) -> np.ndarray:
    if support.size <= max_knots:
        return support
    pos = np.round(np.linspace(0, x_sorted.size - 1, max_knots)).astype(int)
    return np.unique(x_sorted[pos])


def _min_derivative(coef: np.ndarray, knots: np.ndarray) -> float:
    a, b, c = coef[0], coef[1], coef[2]
    h = np.diff(knots)
    lo = c
    hi = 3 * a * h * h + 2 * b * h + c
    best = np.minimum(lo, hi)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t = -b / (3 * a)
        inside = (a != 0) & (t > 0) & (t < h)
        vertex = np.where(inside, 3 * a * t * t + 2 * b * t + c, np.inf)
    return float(np.min(np.minimum(best, vertex)))


def _fit_logit_spline(knots: np.ndarray, target: np.ndarray, smoothing) -> tuple[np.ndarray, float]:
    """Fitted logit values at the knots of a monotone natural cubic spline.

    ``smoothing`` is ``0`` (interpolate), a positive penalty, or ``"gcv"``.
    The penalty is raised until the spline is strictly increasing; the
    infinite-penalty limit is the least-squares line, which is increasing
    because the targets are.  Smoothing runs on knots rescaled to [0, 1]
    for conditioning; penalties are reported on the raw scale.
    """
    m = knots.size
    if m < 3:
        return target.copy(), 0.0
    if smoothing == "gcv":
        lam = None
    else:
        lam = float(smoothing)
        if lam < 0:
            raise ValidationError("smoothing must be >= 0 or 'gcv'")

    span = knots[-1] - knots[0]
    u = (knots - knots[0]) / span

    def fitted(lam_value):
        # lam_value None selects the penalty by GCV
        if lam_value == 0.0 or m < 5:
            return target.copy()
        try:
            spl = make_smoothing_spline(u, target, lam=None if lam_value is None else lam_value / span**3)
        except (ValueError, np.linalg.LinAlgError):
            return None
        return np.asarray(spl(u), dtype=np.float64)

    values = fitted(lam)

    def monotone(vals):
        if vals is None or not np.all(np.isfinite(vals)) or np.any(np.diff(vals) <= 0):
            return False
        cs = CubicSpline(knots, vals, bc_type="natural")
        return _min_derivative(cs.c, knots) > 0.0

    if monotone(values):
        return values, ("gcv" if lam is None else lam)
    trial = max(lam or 0.0, 1e-8 * m * span**3)
    if m >= 5:
        for _ in range(40):
            trial *= 10.0
            values = fitted(trial)
            if monotone(values):
                return values, trial
    slope, intercept = np.polyfit(knots, target, 1)
    return intercept + slope * knots, 1e300


def _fit_attribute(name: str, x: np.ndarray, smoothing, max_knots: int, clamp: float) -> AttributeMap:
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"attribute {name!r} contains non-finite values")
    prob = interior_ecdf(x)
    support, first = np.unique(x, return_index=True)
    if support.size < 2:
        raise ConstantAttributeError(f"attribute {name!r} has a single distinct value")
    support_prob = prob[first]
    x_sorted = np.sort(x)
    knots = _select_knots(x_sorted, support, max_knots)
    knot_target = logit(support_prob[np.searchsorted(support, knots)])
    values, lam = _fit_logit_spline(knots, knot_target, smoothing)
    cs = CubicSpline(knots, values, bc_type="natural")
    coef = np.ascontiguousarray(cs.c)
    h = knots[-1] - knots[-2]
    a, b, c = coef[0, -1], coef[1, -1], coef[2, -1]
    right_slope = 3 * a * h * h + 2 * b * h + c
    return AttributeMap(
        attribute_name=name,
        support=support,
        support_prob=support_prob,
        knots=knots,
        knot_prob=expit(values),
        coefficients=coef,
        left_logit=float(values[0]),
        left_slope=float(coef[2, 0]),
        right_logit=float(values[-1]),
        right_slope=float(right_slope),
        smoothing=lam if lam == "gcv" else float(lam),
        clamp=clamp,
    )


def fit(
    raw_training,
    attribute_names=None,
    smoothing="gcv",
    max_knots: int = MAX_KNOTS,
    clamp: float = PROB_CLAMP,
) -> SimplexTransform:
    """Fit one monotone probability map per column of ``raw_training``.

    Parameters
    ----------
    raw_training : array_like, shape (n, D - 1)
    attribute_names : sequence of str, optional
        Defaults to ``x1 .. x{D-1}``.
    smoothing : float or "gcv"
        Penalty of the natural cubic smoothing spline on the logit scale.
        ``0`` interpolates the knots; ``"gcv"`` picks the penalty by
        generalised cross-validation.
    max_knots : int
        Knot cap; beyond it knots sit at equispaced sample quantiles.
    clamp : float
        Probabilities of unseen values are clipped to ``[clamp, 1 - clamp]``.
    """
    raw = _as_matrix(raw_training)
    n, k = raw.shape
    if k < 1:
        raise ValidationError("need at least one attribute")
    if n < MIN_ROWS:
        warnings.warn(f"fitting a simplex transform on only {n} rows", stacklevel=2)
    if attribute_names is None:
        attribute_names = [f"x{j + 1}" for j in range(k)]
    if len(attribute_names) != k:
        raise ValidationError("one name per attribute column is required")
    maps = tuple(
        _fit_attribute(str(name), raw[:, j], smoothing, max_knots, clamp)
        for j, name in enumerate(attribute_names)
    )
    return SimplexTransform(maps)


def training_probabilities(raw_training) -> np.ndarray:
    """Interior ECDF columns of a training matrix (ranks only)."""
    raw = _as_matrix(raw_training)
    return np.column_stack([interior_ecdf(raw[:, j]) for j in range(raw.shape[1])])


def fit_transform(
    raw_training, attribute_names=None, smoothing="gcv", max_knots: int = MAX_KNOTS, clamp: float = PROB_CLAMP
):
    """Fit on ``raw_training`` and return ``(transform, simplex points)``."""
    t = fit(raw_training, attribute_names, smoothing, max_knots, clamp)
    return t, to_simplex(training_probabilities(raw_training))


def apply(t: SimplexTransform, raw_row) -> np.ndarray:
    row = np.asarray(raw_row, dtype=np.float64)
    if row.ndim != 1:
        raise ValidationError("apply expects a single raw row; use apply_batch for matrices")
    return to_simplex(t.probabilities(row[None, :]))[0]


def apply_batch(t: SimplexTransform, raw) -> np.ndarray:
    prob = t.probabilities(raw)
    if prob.shape[0] == 0:
        return np.empty((0, t.dim))
    return to_simplex(prob)
