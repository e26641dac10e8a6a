"""Readers and writers for the on-disk formats.

Counts file: CSV with header ``input_id,label,c_0,...,c_{m-1}``.
Probability file: JSON lines ``{"input_id": ..., "label": ..., "rows": [[...], ...]}``.
CTA curve: CSV ``r,approx_acc,lcb_acc``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CTA_HEADER = ["r", "approx_acc", "lcb_acc"]
RECORD_KEYS = ("input_id", "method", "margin", "radius", "correct", "clipped")


class DataError(ValueError):
    """Malformed or empty input data."""


@dataclass
class InputItem:
    input_id: str
    label: int
    data: np.ndarray


def _id_key(input_id: str):
    return (0, int(input_id), "") if input_id.lstrip("-").isdigit() else (1, 0, input_id)


def read_counts_csv(path) -> list[InputItem]:
    path = Path(path)
    items = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty input file")
        header = [h.strip() for h in header]
        m = len(header) - 2
        expected = ["input_id", "label"] + [f"c_{j}" for j in range(m)]
        if m < 2 or header != expected:
            raise DataError(f"{path}:1: header must be input_id,label,c_0,...,c_(m-1) with m >= 2")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != m + 2:
                raise DataError(f"{path}:{line}: expected {m + 2} fields, got {len(row)}")
            try:
                label = int(row[1])
                counts = np.array([int(c) for c in row[2:]], dtype=np.int64)
            except ValueError as exc:
                raise DataError(f"{path}:{line}: {exc}") from None
            if np.any(counts < 0) or counts.sum() == 0:
                raise DataError(f"{path}:{line}: counts must be non-negative with a positive total")
            if not 0 <= label < m:
                raise DataError(f"{path}:{line}: label {label} outside [0, {m})")
            items.append(InputItem(row[0].strip(), label, counts))
    if not items:
        raise DataError(f"{path}: empty input file")
    return items


def read_prob_jsonl(path, atol: float = 1e-6) -> list[InputItem]:
    path = Path(path)
    items = []
    with path.open() as fh:
        for line, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                rec = json.loads(text)
                rows = np.asarray(rec["rows"], dtype=float)
                label = int(rec["label"])
                input_id = str(rec["input_id"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{line}: {exc}") from None
            if rows.ndim != 2 or rows.shape[0] == 0 or rows.shape[1] < 2:
                raise DataError(f"{path}:{line}: rows must be a non-empty n x m array with m >= 2")
            if np.any(rows < -atol) or np.any(np.abs(rows.sum(axis=1) - 1.0) > atol):
                raise DataError(f"{path}:{line}: rows are not on the probability simplex")
            if not 0 <= label < rows.shape[1]:
                raise DataError(f"{path}:{line}: label {label} outside [0, {rows.shape[1]})")
            items.append(InputItem(input_id, label, np.clip(rows, 0.0, 1.0)))
    if not items:
        raise DataError(f"{path}: empty input file")
    return items


def write_counts_csv(path, items) -> None:
    items = list(items)
    m = len(items[0].data)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["input_id", "label"] + [f"c_{j}" for j in range(m)])
        for it in items:
            w.writerow([it.input_id, it.label] + [int(c) for c in it.data])


def write_prob_jsonl(path, items) -> None:
    with Path(path).open("w") as fh:
        for it in items:
            rec = {"input_id": it.input_id, "label": int(it.label), "rows": np.asarray(it.data).tolist()}
            fh.write(json.dumps(rec) + "\n")


def write_records(path, records) -> None:
    with Path(path).open("w") as fh:
        for rec in records:
            fh.write(json.dumps({k: rec[k] for k in RECORD_KEYS}, allow_nan=False) + "\n")


def read_records(path) -> list[dict]:
    out = []
    with Path(path).open() as fh:
        for line, text in enumerate(fh, start=1):
            if text.strip():
                try:
                    out.append(json.loads(text))
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{line}: {exc}") from None
    return out


def write_cta_csv(path, curve) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CTA_HEADER)
        for r, a, l in curve.rows():
            w.writerow([_fmt(r), _fmt(a), _fmt(l)])


def read_cta_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CTA_HEADER:
            raise DataError(f"{path}:1: header must be {','.join(CTA_HEADER)}")
        rows = []
        for row in reader:
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataError(f"{path}:{reader.line_num}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no curve rows")
    arr = np.array(rows)
    return arr[:, 0], arr[:, 1], arr[:, 2]


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))
