"""MAP assignment to background classes or the new class, and evaluation.

A point is first assigned to the background or to the new class by
comparing ``lambda_0 f_B(y)`` with the total new-class mass
``sum_j lambda_j f_j(y)``.  Background points then go to the class with the
largest ``rho_k f_k(y)``.  Ties go to the background, then to the lower
class index.
"""
from __future__ import annotations

import csv
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dirichlet import as_simplex
from .errors import UnknownLabelError, ValidationError
from .fb import FBModel
from .inner_em import InnerMixture
from .synth import NEW_LABEL


@dataclass(frozen=True, eq=False)
class Assignment:
    point_index: int
    is_new_class: bool
    class_label: str | None
    posterior_background: float
    class_posteriors: np.ndarray

    def __post_init__(self):
        if self.is_new_class == (self.class_label is not None):
            raise ValidationError("class_label must be set exactly when the point is not new")

    @property
    def predicted(self) -> str:
        return NEW_LABEL if self.is_new_class else str(self.class_label)


def _decide(m: FBModel, logy: np.ndarray):
    terms = m.log_terms(logy)
    bg = terms[:, 0]
    if terms.shape[1] > 1:
        _, new = kernels.log_normalize_rows(terms[:, 1:])
    else:
        new = np.full(bg.shape, -np.inf)
    _, total = kernels.log_normalize_rows(np.column_stack([bg, new]))
    post_bg = np.exp(bg - total)
    is_new = new > bg  # equality stays with the background
    class_post, _ = kernels.log_normalize_rows(m.background.class_log_densities(logy))
    best = np.argmax(class_post, axis=1)  # first maximum = lower index
    return is_new, post_bg, class_post, best


def classify_batch(m: FBModel, data) -> list[Assignment]:
    y = as_simplex(data, m.dim)
    is_new, post_bg, class_post, best = _decide(m, np.log(y))
    classes = m.background.classes
    return [
        Assignment(
            point_index=i,
            is_new_class=bool(is_new[i]),
            class_label=None if is_new[i] else str(classes[best[i]]),
            posterior_background=float(post_bg[i]),
            class_posteriors=class_post[i],
        )
        for i in range(y.shape[0])
    ]


def classify(m: FBModel, y, point_index: int = 0) -> Assignment:
    """MAP assignment of a single simplex point."""
    a = classify_batch(m, np.atleast_2d(y))[0]
    return Assignment(point_index, a.is_new_class, a.class_label, a.posterior_background, a.class_posteriors)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    labels: tuple[str, ...]  # known classes in order, NEW_LABEL last
    counts: np.ndarray       # rows = truth, columns = prediction

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        labels = tuple(str(lab) for lab in self.labels)
        if counts.shape != (len(labels), len(labels)) or np.any(counts < 0):
            raise ValidationError("counts must be a square non-negative matrix matching labels")
        counts.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_rows(self) -> list[list]:
        rows = [["truth\\predicted", *self.labels]]
        rows += [[lab, *map(int, row)] for lab, row in zip(self.labels, self.counts)]
        return rows


@dataclass(frozen=True)
class Metrics:
    overall_accuracy: float
    per_class_accuracy: dict
    new_class_sensitivity: float
    new_class_specificity: float

    def to_dict(self) -> dict:
        def clean(x):
            return None if x is None or not math.isfinite(x) else x

        return {
            "overall_accuracy": clean(self.overall_accuracy),
            "per_class_accuracy": {k: clean(v) for k, v in self.per_class_accuracy.items()},
            "new_class_sensitivity": clean(self.new_class_sensitivity),
            "new_class_specificity": clean(self.new_class_specificity),
        }


def _ratio(num, den) -> float:
    return float(num) / float(den) if den else float("nan")


def metrics_from_confusion(cm: ConfusionMatrix) -> Metrics:
    """Accuracy, per-class accuracy, sensitivity and specificity of a matrix.

    Ratios with an empty denominator are NaN.
    """
    c = cm.counts
    new = cm.labels.index(NEW_LABEL)
    known = [i for i in range(len(cm.labels)) if i != new]
    return Metrics(
        overall_accuracy=_ratio(np.trace(c), c.sum()),
        per_class_accuracy={lab: _ratio(c[i, i], c[i].sum()) for i, lab in enumerate(cm.labels)},
        new_class_sensitivity=_ratio(c[new, new], c[new].sum()),
        new_class_specificity=_ratio(c[known].sum() - c[known, new].sum(), c[known].sum()),
    )


def evaluate(
    assignments: Sequence,
    truth_labels: Sequence,
    classes: Sequence | None = None,
) -> tuple[ConfusionMatrix, Metrics]:
    """Confusion matrix and metrics of predictions against true labels.

    ``assignments`` holds ``Assignment`` objects or predicted label strings
    (``NEW_LABEL`` for the new class).  ``classes`` lists the known class
    labels; when omitted it is taken from the predictions and the truth.
    """
    preds = [a.predicted if isinstance(a, Assignment) else str(a) for a in assignments]
    truth = [str(t) for t in truth_labels]
    if len(preds) != len(truth):
        raise ValidationError(f"{len(preds)} predictions for {len(truth)} truth labels")
    if classes is None:
        classes = sorted((set(preds) | set(truth)) - {NEW_LABEL})
    labels = [str(c) for c in classes if str(c) != NEW_LABEL] + [NEW_LABEL]
    index = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for p, t in zip(preds, truth):
        if t not in index:
            raise UnknownLabelError(f"truth label {t!r} is not a known class or {NEW_LABEL!r}")
        if p not in index:
            raise UnknownLabelError(f"predicted label {p!r} is not a known class or {NEW_LABEL!r}")
        counts[index[t], index[p]] += 1
    cm = ConfusionMatrix(tuple(labels), counts)
    return cm, metrics_from_confusion(cm)


def signatures(m: InnerMixture) -> list[np.ndarray]:
    """Normalised mean vector ``alpha / sum(alpha)`` of every component."""
    return [a / a.sum() for a in np.asarray(m.alphas, dtype=np.float64)]


# ---- CSV and SVG output ----

def write_assignments_csv(path, ids, assignments: Sequence[Assignment], classes: Sequence) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "predicted", "is_new", "posterior_background", *[f"p_{c}" for c in classes]])
        for id_, a in zip(ids, assignments):
            w.writerow([
                id_, a.predicted, int(a.is_new_class), repr(a.posterior_background),
                *map(repr, map(float, a.class_posteriors)),
            ])


def write_confusion_csv(path, cm: ConfusionMatrix) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(cm.to_rows())


def signature_rows(models: Sequence[tuple[str, InnerMixture]]) -> list[list]:
    """One row per component: group, component index, weight, then the mean vector."""
    if not models:
        return []
    D = models[0][1].dim
    rows = [["group", "component", "weight", *[f"y{d + 1}" for d in range(D)]]]
    for name, mix in models:
        for j, (w, s) in enumerate(zip(mix.weights, signatures(mix))):
            rows.append([name, j + 1, repr(float(w)), *map(repr, map(float, s))])
    return rows


def write_signatures_csv(path, models: Sequence[tuple[str, InnerMixture]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(signature_rows(models))


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "tsdmfb"  # stable element ids
    return plt


def plot_signatures_svg(path, models: Sequence[tuple[str, InnerMixture]]) -> None:
    """Broken-line plot of component means, one panel per group."""
    plt = _pyplot()
    fig, axes = plt.subplots(len(models), 1, figsize=(6, 2.2 * len(models)), squeeze=False)
    for ax, (name, mix) in zip(axes[:, 0], models):
        x = np.arange(1, mix.dim + 1)
        for j, s in enumerate(signatures(mix)):
            ax.plot(x, s, marker="o", label=f"{j + 1} ({mix.weights[j]:.2f})")
        ax.set_title(str(name))
        ax.set_xticks(x)
        ax.legend(fontsize="x-small")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_confusion_svg(path, cm: ConfusionMatrix) -> None:
    plt = _pyplot()
    n = len(cm.labels)
    fig, ax = plt.subplots(figsize=(1 + 0.5 * n, 1 + 0.5 * n))
    ax.imshow(cm.counts, cmap="Blues")
    ax.set_xticks(range(n), cm.labels, rotation=90)
    ax.set_yticks(range(n), cm.labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("truth")
    for i in range(n):
        for j in range(n):
            if cm.counts[i, j]:
                ax.text(j, i, str(cm.counts[i, j]), ha="center", va="center", fontsize="x-small")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
