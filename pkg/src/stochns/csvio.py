"""CSV emission with a fixed column order and round-trip exact floats."""
from __future__ import annotations

import csv
import io
import math

import numpy as np

RATES_SCHEMA = ("level", "tau", "h", "mean_E", "q50", "q90", "N")
FIT_SCHEMA = ("statistic", "slope", "intercept", "r2")
DIAGNOSTICS_SCHEMA = ("m", "t", "energy", "enstrophy", "div_residual",
                      "energy_identity_residual", "transform_gap",
                      "stokes_norm", "pressure_grad", "noise_w22")
STOPPING_SCHEMA = ("R", "frequency", "ci_low", "ci_high")
TAIL_SCHEMA = ("level", "threshold", "frequency", "ci_low", "ci_high")
INFSUP_SCHEMA = ("n", "h", "pair", "beta")


def format_cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        text = format(v, ".17g")
        # keep integral floats (and -0.0) from reading back as ints
        return text if any(c in text for c in ".ein") else text + ".0"
    return str(v)


def csv_text(records, schema):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(schema)
    for rec in records:
        missing = [c for c in schema if c not in rec]
        if missing:
            raise ValueError(f"record lacks columns {missing}")
        w.writerow([format_cell(rec[c]) for c in schema])
    return buf.getvalue()


def emit_csv(path, records, schema):
    text = csv_text(records, schema)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def parse_cell(text):
    try:
        return int(text, 10)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_csv(path, schema=None):
    """Rows as dicts with numeric cells converted; checks the header against ``schema``."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ValueError(f"{path}: empty file, expected a header row")
    header = rows[0]
    if schema is not None and tuple(header[: len(schema)]) != tuple(schema):
        raise ValueError(f"{path}: header {header} does not match {list(schema)}")
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}: line {i} has {len(row)} cells, expected {len(header)}")
        out.append({k: parse_cell(v) for k, v in zip(header, row)})
    return out
