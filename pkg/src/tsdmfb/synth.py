"""Synthetic labelled data drawn from known background and new-class mixtures.

Used as the ground truth for fitting, model selection and novelty detection
checks.  Generation is sequential and fully determined by the seed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .dirichlet import as_simplex
from .errors import ValidationError
from .inner_em import InnerMixture
from .tsdm import LabeledDataset

SCHEMA_VERSION = 1
NEW_LABEL = "NEW"


@dataclass(frozen=True, eq=False)
class ClassSpec:
    label: str
    mixture: InnerMixture
    size: int

    def __post_init__(self):
        if int(self.size) < 1:
            raise ValidationError(f"class {self.label!r}: size must be >= 1")
        if str(self.label) == NEW_LABEL:
            raise ValidationError(f"{NEW_LABEL!r} is reserved for the novel class")
        object.__setattr__(self, "label", str(self.label))
        object.__setattr__(self, "size", int(self.size))


@dataclass(frozen=True, eq=False)
class NoveltySpec:
    mixture: InnerMixture
    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValidationError("novelty rate must lie in [0, 1)")


@dataclass(frozen=True, eq=False)
class SynthSpec:
    """Generating model.

    Without novelty every class contributes exactly ``size`` points.  With
    novelty rate ``r``, the number of novel points is Binomial(N, r) for
    ``N = sum(sizes)`` and the remaining ``N - n_novel`` points are split
    among the classes multinomially in proportion to their sizes.
    """

    classes: tuple[ClassSpec, ...]
    novelty: NoveltySpec | None = None
    seed: int = 0

    def __post_init__(self):
        classes = tuple(self.classes)
        if not classes:
            raise ValidationError("at least one class is required")
        labels = [c.label for c in classes]
        if len(set(labels)) != len(labels):
            raise ValidationError("class labels must be unique")
        dims = {c.mixture.dim for c in classes}
        if self.novelty is not None:
            dims.add(self.novelty.mixture.dim)
        if len(dims) != 1:
            raise ValidationError("all mixtures must share one dimension")
        object.__setattr__(self, "classes", classes)

    @property
    def K(self) -> int:
        return len(self.classes)

    @property
    def dim(self) -> int:
        return self.classes[0].mixture.dim

    @property
    def sizes(self) -> np.ndarray:
        return np.array([c.size for c in self.classes])

    @property
    def rate(self) -> float:
        return 0.0 if self.novelty is None else float(self.novelty.rate)

    def with_seed(self, seed: int) -> "SynthSpec":
        return SynthSpec(self.classes, self.novelty, int(seed))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "synth_spec",
            "seed": self.seed,
            "classes": [
                {"label": c.label, "size": c.size, **c.mixture.to_dict()} for c in self.classes
            ],
            "novelty": None if self.novelty is None else {
                "rate": self.novelty.rate, **self.novelty.mixture.to_dict()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        if d.get("kind", "synth_spec") != "synth_spec":
            raise ValidationError("not a synth spec document")
        try:
            classes = tuple(
                ClassSpec(c["label"], InnerMixture.from_dict(c), c["size"]) for c in d["classes"]
            )
            nov = d.get("novelty")
            novelty = None if nov is None else NoveltySpec(InnerMixture.from_dict(nov), float(nov["rate"]))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed synth spec: {exc}") from exc
        return cls(classes, novelty, int(d.get("seed", 0)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        return cls.from_dict(json.loads(text))


class Hidden(NamedTuple):
    """Per-row generating labels kept apart from the public dataset."""

    labels: tuple          # true label, NEW_LABEL for novel rows
    components: np.ndarray  # component index inside the generating mixture
    is_novel: np.ndarray


class SynthData(NamedTuple):
    dataset: LabeledDataset
    hidden: Hidden


def _draw(mix: InnerMixture, n: int, rng: np.random.Generator):
    comp = rng.choice(mix.J, size=n, p=mix.weights)
    g = rng.standard_gamma(mix.alphas[comp])
    y = g / g.sum(axis=1, keepdims=True)
    return y, comp


def generate(spec: SynthSpec) -> SynthData:
    """Sample class, then component, then a Dirichlet draw; rows are shuffled.

    The public dataset carries the true label of every row, ``NEW_LABEL``
    for novel ones; callers decide what to hide from the fitting code.
    """
    rng = np.random.default_rng(spec.seed)
    sizes = spec.sizes
    n_novel = 0
    if spec.novelty is not None and spec.novelty.rate > 0:
        total = int(sizes.sum())
        n_novel = int(rng.binomial(total, spec.novelty.rate))
        sizes = rng.multinomial(total - n_novel, sizes / sizes.sum())

    pts, comps, labels = [], [], []
    for c, size in zip(spec.classes, sizes):
        y, comp = _draw(c.mixture, int(size), rng)
        pts.append(y)
        comps.append(comp)
        labels.extend([c.label] * int(size))
    if n_novel:
        y, comp = _draw(spec.novelty.mixture, n_novel, rng)
        pts.append(y)
        comps.append(comp)
        labels.extend([NEW_LABEL] * n_novel)

    y = np.concatenate(pts)
    comp = np.concatenate(comps)
    order = rng.permutation(y.shape[0])
    labels = tuple(labels[i] for i in order)
    y = np.clip(y[order], 1e-300, None)
    y /= y.sum(axis=1, keepdims=True)
    hidden = Hidden(labels, comp[order], np.array([lab == NEW_LABEL for lab in labels]))
    return SynthData(LabeledDataset(y, labels), hidden)


def true_log_likelihood(spec: SynthSpec, data) -> float:
    """Total log density of ``data`` under the generating mixture.

    Class weights are the size proportions scaled by ``1 - rate``; the novel
    mixture carries weight ``rate``.
    """
    if isinstance(data, LabeledDataset):
        data = data.points
    arr = np.asarray(data, dtype=np.float64)
    if arr.size == 0:
        return 0.0
    y = as_simplex(arr, spec.dim)
    logy = np.log(y)
    rho = spec.sizes / spec.sizes.sum() * (1.0 - spec.rate)
    cols = [m.log_density_log(logy) + np.log(r) for m, r in zip((c.mixture for c in spec.classes), rho)]
    if spec.rate > 0:
        cols.append(spec.novelty.mixture.log_density_log(logy) + np.log(spec.rate))
    _, lse = kernels.log_normalize_rows(np.column_stack(cols))
    return float(lse.sum())


def random_spec(
    n_classes: int,
    components: int | list[int],
    dim: int,
    sizes: int | list[int],
    *,
    precision: float = 60.0,
    min_separation: float = 0.25,
    novelty_rate: float = 0.0,
    novelty_components: int = 1,
    seed: int = 0,
    spec_seed: int | None = None,
) -> SynthSpec:
    """Random well-separated spec.

    Component means are drawn from the flat Dirichlet and rejected until
    every pair is at least ``min_separation`` apart in Euclidean distance;
    each concentration vector is ``precision`` times its mean.
    ``spec_seed`` drives the parameter draw (default: ``seed``), ``seed``
    the later data generation.
    """
    rng = np.random.default_rng(seed if spec_seed is None else spec_seed)
    comps = [components] * n_classes if np.isscalar(components) else list(components)
    sizes = [sizes] * n_classes if np.isscalar(sizes) else list(sizes)
    n_nov = novelty_components if novelty_rate > 0 else 0
    total = sum(comps) + n_nov
    means: list[np.ndarray] = []
    for _ in range(200000):
        if len(means) == total:
            break
        cand = rng.dirichlet(np.full(dim, 1.5))
        if cand.min() < 0.02:
            continue
        if all(np.linalg.norm(cand - m) >= min_separation for m in means):
            means.append(cand)
    else:  # pragma: no cover - only for absurd separations
        raise ValidationError("could not place well-separated component means")
    if len(means) < total:
        raise ValidationError("could not place well-separated component means")

    it = iter(means)
    classes = []
    for k in range(n_classes):
        J = comps[k]
        w = rng.dirichlet(np.full(J, 5.0)) if J > 1 else np.ones(1)
        alphas = np.array([precision * next(it) for _ in range(J)])
        classes.append(ClassSpec(f"C{k + 1}", InnerMixture(w, alphas), sizes[k]))
    novelty = None
    if n_nov:
        w = rng.dirichlet(np.full(n_nov, 5.0)) if n_nov > 1 else np.ones(1)
        novelty = NoveltySpec(InnerMixture(w, np.array([precision * next(it) for _ in range(n_nov)])), novelty_rate)
    return SynthSpec(tuple(classes), novelty, seed)
