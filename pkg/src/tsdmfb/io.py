"""CSV tables: first column ``id``, optional ``label`` column, numeric attributes."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

LABEL = "label"


@dataclass
class Table:
    ids: list[str]
    labels: list[str] | None
    names: list[str]
    values: np.ndarray  # (n, len(names))

    def select(self, names) -> np.ndarray:
        missing = [c for c in names if c not in self.names]
        if missing:
            raise ValidationError(f"missing attribute columns: {', '.join(missing)}")
        idx = [self.names.index(c) for c in names]
        return self.values[:, idx]


def read_table(path, require_label: bool = False) -> Table:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty file, a header row is required")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "id":
        raise ValidationError(f"{path}: first column must be 'id'")
    if len(set(header)) != len(header):
        raise ValidationError(f"{path}: duplicate column names")
    label_col = header.index(LABEL) if LABEL in header else None
    if require_label and label_col is None:
        raise ValidationError(f"{path}: a '{LABEL}' column is required")
    attr_cols = [j for j in range(1, len(header)) if j != label_col]
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    ids, labels, values = [], [], np.empty((len(body), len(attr_cols)))
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise ValidationError(f"{path}: row {i + 2} has {len(r)} fields, expected {len(header)}")
        ids.append(r[0].strip())
        if label_col is not None:
            labels.append(r[label_col].strip())
        try:
            values[i] = [float(r[j]) for j in attr_cols]
        except ValueError as exc:
            raise ValidationError(f"{path}: row {i + 2}: {exc}") from exc
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: ids must be unique")
    if not np.all(np.isfinite(values)):
        raise ValidationError(f"{path}: attribute values must be finite")
    return Table(ids, labels if label_col is not None else None, [header[j] for j in attr_cols], values)


def write_table(path, ids, values, names, labels=None) -> None:
    """Write with ``repr`` floats so that reading back is exact."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *([LABEL] if labels is not None else []), *names])
        for i, id_ in enumerate(ids):
            lab = [labels[i]] if labels is not None else []
            w.writerow([id_, *lab, *(repr(float(v)) for v in values[i])])


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc


def write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
        if not text.endswith("\n"):
            fh.write("\n")


def write_json(path, doc) -> None:
    write_text(path, json.dumps(doc, indent=1))


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path
