"""Command-line pipeline: transform, fit-tsdm, fit-fb, classify, evaluate, simulate.

Every subcommand writes its artifacts into the ``--out`` directory.  Exit
codes: 0 success, 2 invalid input, 3 fitting failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import classify_eval, fb, simplex_transform, synth, tsdm
from .errors import ConvergenceError, ValidationError
from .inner_em import EMConfig
from .io import Table, ensure_dir, read_json, read_table, write_json, write_table, write_text

log = logging.getLogger("tsdmfb")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3
EXIT_IO = 4


@dataclass
class PipelineConfig:
    """Every tunable constant of the pipeline, loaded from one JSON file.

    ``j_range`` is a list of candidate J values or a mapping from class
    label to list (key ``"default"`` for the rest).  ``prior_e`` is a list in
    sorted class order, a mapping from label to value, or null for 1/K.
    ``split_fraction`` null trains on every labelled row.
    """

    seed: int = 0
    n_starts: int = 10
    epsilon: float = 1e-6
    max_iter: int = 500
    n_min: int = 3
    perturb_sd: float = 0.5
    workers: int = 1
    j_range: object = field(default_factory=lambda: list(range(1, 8)))
    new_class_j_range: list = field(default_factory=lambda: list(range(1, 6)))
    prior_e: object = None
    split_fraction: float | None = None
    init_quantile: float = 0.1
    lambda0_init: float = 0.9
    lambda_floor: float = 1e-10
    include_null: bool = True
    smoothing: object = "gcv"
    max_knots: int = simplex_transform.MAX_KNOTS
    prob_clamp: float = simplex_transform.PROB_CLAMP

    def __post_init__(self):
        for name in ("n_starts", "max_iter", "n_min", "workers", "max_knots"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                raise ValidationError(f"config: {name} must be a positive integer")
        for name in ("epsilon", "perturb_sd", "init_quantile", "lambda0_init", "prob_clamp"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"config: {name} must be positive")
        if self.seed < 0:
            raise ValidationError("config: seed must be non-negative")
        if self.split_fraction is not None and not 0 < self.split_fraction < 1:
            raise ValidationError("config: split_fraction must lie in (0, 1)")
        if not self.prob_clamp < 0.5:
            raise ValidationError("config: prob_clamp must be below 0.5")
        if self.smoothing != "gcv" and not (isinstance(self.smoothing, (int, float)) and self.smoothing >= 0):
            raise ValidationError("config: smoothing must be 'gcv' or a non-negative number")
        ranges = self.j_range.values() if isinstance(self.j_range, dict) else [self.j_range]
        for r in [*ranges, self.new_class_j_range]:
            if not r or any(int(j) < 1 for j in r):
                raise ValidationError("config: J ranges must be non-empty lists of positive integers")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = {k: v for k, v in d.items() if k != "schema_version"}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"config: unknown keys {unknown}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(f"config: {exc}") from exc

    def to_dict(self) -> dict:
        return {"schema_version": 1, **dataclasses.asdict(self)}

    def em(self) -> EMConfig:
        return EMConfig(
            n_min=self.n_min, epsilon=self.epsilon, max_iter=self.max_iter,
            n_starts=self.n_starts, seed=self.seed, perturb_sd=self.perturb_sd,
            workers=self.workers,
        )

    def fb(self) -> fb.FBConfig:
        return fb.FBConfig(
            n_min=self.n_min, epsilon=self.epsilon, max_iter=self.max_iter,
            n_starts=self.n_starts, seed=self.seed, perturb_sd=self.perturb_sd,
            workers=self.workers, init_quantile=self.init_quantile,
            lambda0_init=self.lambda0_init, lambda_floor=self.lambda_floor,
            include_null=self.include_null,
        )


def load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_dict(read_json(args.config)) if args.config else PipelineConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _simplex_names(D: int) -> list[str]:
    return [f"y{d + 1}" for d in range(D)]


def _simplex_points(table: Table) -> np.ndarray:
    if len(table.names) < 2:
        raise ValidationError("simplex data needs at least two coordinate columns")
    return table.values


# ---- subcommands ----

def cmd_transform(args, cfg: PipelineConfig) -> None:
    table = read_table(args.input)
    names = args.attributes.split(",") if args.attributes else table.names
    raw = table.select(names)
    out = ensure_dir(args.out)
    if args.transform:
        t = simplex_transform.SimplexTransform.from_dict(read_json(args.transform))
        missing = [c for c in t.attribute_names if c not in table.names]
        if missing:
            raise ValidationError(f"missing attribute columns: {', '.join(missing)}")
        y = simplex_transform.apply_batch(t, table.select(t.attribute_names))
    else:
        t, y = simplex_transform.fit_transform(raw, names, cfg.smoothing, cfg.max_knots, cfg.prob_clamp)
    write_text(os.path.join(out, "transform.json"), t.to_json())
    write_table(os.path.join(out, "simplex.csv"), table.ids, y, _simplex_names(t.dim), table.labels)
    log.info("transformed %d rows onto the %d-part simplex", len(table.ids), t.dim)


def _split(ids, labels, fraction: float, seed: int):
    # stratified by label so that every class keeps members on both sides
    rng = np.random.default_rng(seed)
    train = np.zeros(len(ids), dtype=bool)
    for lab in sorted(set(labels)):
        idx = np.array([i for i, l in enumerate(labels) if l == lab])
        k = int(round(fraction * idx.size))
        train[rng.permutation(idx)[:k]] = True
    return train


def _prior(cfg: PipelineConfig, classes):
    if cfg.prior_e is None:
        return None
    if isinstance(cfg.prior_e, dict):
        try:
            return np.array([float(cfg.prior_e[str(c)]) for c in classes])
        except KeyError as exc:
            raise ValidationError(f"config: prior_e has no entry for class {exc}") from exc
    return np.asarray(cfg.prior_e, dtype=np.float64)


def cmd_fit_tsdm(args, cfg: PipelineConfig) -> None:
    table = read_table(args.input, require_label=True)
    y = _simplex_points(table)
    labels = table.labels
    out = ensure_dir(args.out)
    if cfg.split_fraction is not None:
        train = _split(table.ids, labels, cfg.split_fraction, cfg.seed)
        with open(os.path.join(out, "split.csv"), "w", encoding="utf-8") as fh:
            fh.write("id,set\n")
            for id_, t in zip(table.ids, train):
                fh.write(f"{id_},{'train' if t else 'test'}\n")
        y = y[train]
        labels = [lab for lab, t in zip(labels, train) if t]
    data = tsdm.LabeledDataset(y, labels)
    model = tsdm.fit(data, _prior(cfg, data.classes), cfg.em(), cfg.j_range)
    write_text(os.path.join(out, "tsdm.json"), model.to_json())
    rows = ["class,J,bic,selected"]
    for label, rep in zip(model.classes, model.reports):
        for J, b in sorted(rep.candidate_bics.items()):
            rows.append(f"{label},{J},{'' if b is None else repr(b)},{int(J == rep.J)}")
    write_text(os.path.join(out, "bic_table.csv"), "\n".join(rows))
    log.info("fitted K=%d classes, J=%s", model.K, [m.J for m in model.inner])


def cmd_fit_fb(args, cfg: PipelineConfig) -> None:
    doc = read_json(args.model)
    background = tsdm.TSDMModel.from_dict(doc)
    table = read_table(args.input)
    model, report = fb.fit(background, _simplex_points(table), cfg.new_class_j_range, cfg.fb())
    out = ensure_dir(args.out)
    # the background document is embedded as read, untouched
    write_json(os.path.join(out, "fb.json"), model.to_dict(background_doc=doc))
    write_json(os.path.join(out, "fb_report.json"), {"schema_version": 1, **report.to_dict()})
    rows = ["J,bic,selected"]
    for J, b in sorted(report.candidate_bics.items()):
        rows.append(f"{J},{'' if b is None else repr(b)},{int(J == report.J)}")
    write_text(os.path.join(out, "fb_bic_table.csv"), "\n".join(rows))
    if model.no_novelty:
        log.info("no novelty detected (%s)", report.reason)
    else:
        log.info("new class: J=%d, lambda_hat=%.4f", model.J, model.novelty_rate)


def _signature_groups(model: fb.FBModel):
    groups = list(zip(model.background.classes, model.background.inner))
    if model.new_class is not None:
        groups.append((synth.NEW_LABEL, model.new_class))
    return groups


def cmd_classify(args, cfg: PipelineConfig) -> None:
    model = fb.FBModel.from_dict(read_json(args.model))
    table = read_table(args.input)
    assignments = classify_eval.classify_batch(model, _simplex_points(table))
    out = ensure_dir(args.out)
    classify_eval.write_assignments_csv(
        os.path.join(out, "assignments.csv"), table.ids, assignments, model.background.classes
    )
    groups = _signature_groups(model)
    classify_eval.write_signatures_csv(os.path.join(out, "signatures.csv"), groups)
    if args.svg:
        _svg(classify_eval.plot_signatures_svg, os.path.join(out, "signatures.svg"), groups)
    n_new = sum(a.is_new_class for a in assignments)
    log.info("classified %d points, %d flagged as new", len(assignments), n_new)


def _svg(fn, path, obj) -> None:
    try:
        fn(path, obj)
    except ImportError:
        log.warning("matplotlib is not installed; skipping %s", path)


def _read_assignments(path):
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["id", "predicted"]:
        raise ValidationError(f"{path}: not an assignments file")
    classes = [h[2:] for h in rows[0] if h.startswith("p_")]
    return {r[0]: r[1] for r in rows[1:] if r}, classes


def cmd_evaluate(args, cfg: PipelineConfig) -> None:
    preds, classes = _read_assignments(args.assignments)
    truth = read_table(args.truth, require_label=True)
    missing = [i for i in truth.ids if i not in preds]
    if missing:
        raise ValidationError(f"{len(missing)} truth ids have no assignment, e.g. {missing[0]!r}")
    cm, metrics = classify_eval.evaluate([preds[i] for i in truth.ids], truth.labels, classes)
    out = ensure_dir(args.out)
    classify_eval.write_confusion_csv(os.path.join(out, "confusion.csv"), cm)
    write_json(os.path.join(out, "metrics.json"), {"schema_version": 1, "n": cm.total, **metrics.to_dict()})
    if args.svg:
        _svg(classify_eval.plot_confusion_svg, os.path.join(out, "confusion.svg"), cm)
    log.info(
        "accuracy %.4f, sensitivity %s, specificity %s",
        metrics.overall_accuracy, metrics.new_class_sensitivity, metrics.new_class_specificity,
    )


def cmd_simulate(args, cfg: PipelineConfig) -> None:
    spec = synth.SynthSpec.from_dict(read_json(args.spec))
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    data, hidden = synth.generate(spec)
    ids = [f"s{i:06d}" for i in range(len(hidden.labels))]
    out = ensure_dir(args.out)
    labels = list(hidden.labels) if args.labeled else None
    write_table(os.path.join(out, "data.csv"), ids, data.points, _simplex_names(spec.dim), labels)
    with open(os.path.join(out, "hidden.csv"), "w", encoding="utf-8") as fh:
        fh.write("id,label,component,is_new\n")
        for id_, lab, comp, new in zip(ids, hidden.labels, hidden.components, hidden.is_novel):
            fh.write(f"{id_},{lab},{int(comp)},{int(new)}\n")
    write_text(os.path.join(out, "spec.json"), spec.to_json())
    log.info("simulated %d points", len(ids))


# ---- argument parsing ----

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline configuration JSON")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--workers", type=int, help="threads for multi-start fits")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tsdmfb", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("transform", parents=[common], help="map raw attributes onto the simplex")
    s.add_argument("input", help="raw CSV")
    s.add_argument("--attributes", help="comma-separated attribute columns (default: all)")
    s.add_argument("--transform", help="apply this saved transform instead of fitting one")
    s.set_defaults(func=cmd_transform)

    s = sub.add_parser("fit-tsdm", parents=[common], help="fit the background model")
    s.add_argument("input", help="labelled simplex CSV")
    s.set_defaults(func=cmd_fit_tsdm)

    s = sub.add_parser("fit-fb", parents=[common], help="fit the new class against a fixed background")
    s.add_argument("model", help="tsdm.json")
    s.add_argument("input", help="unlabelled simplex CSV")
    s.set_defaults(func=cmd_fit_fb)

    s = sub.add_parser("classify", parents=[common], help="MAP assignment of points")
    s.add_argument("model", help="fb.json")
    s.add_argument("input", help="simplex CSV")
    s.add_argument("--svg", action="store_true", help="also write signatures.svg")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("evaluate", parents=[common], help="confusion matrix and metrics")
    s.add_argument("assignments", help="assignments.csv from classify")
    s.add_argument("truth", help="CSV with id and label columns")
    s.add_argument("--svg", action="store_true", help="also write confusion.svg")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("simulate", parents=[common], help="draw a synthetic dataset from a spec")
    s.add_argument("spec", help="synth spec JSON")
    s.add_argument("--labeled", action="store_true", help="include the true label column in data.csv")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s", stream=sys.stderr)
    log.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    try:
        if args.workers is not None and args.workers < 1:
            raise ValidationError("--workers must be >= 1")
        cfg = load_config(args)
        args.func(args, cfg)
    except ValidationError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except ConvergenceError as exc:
        log.error("fit failed: %s", exc)
        return EXIT_CONVERGENCE
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
