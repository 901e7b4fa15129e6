"""CSV ingestion with row-level validation, and serialization of estimate reports."""
import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .data import MISSING, PA_COLUMNS, TrialDataset
from .estimators import EstimateReport

REQUIRED = ("t", "s", "a")
OUTCOME = "o"
TRUTH = "o_true"
FLAG_KEYS = ("positivity_violation", "equal_impact", "clipped_to_bounds", "smoothed")
REPORT_KEYS = ("estimand", "estimator", "point", "lower", "upper", "ci_low", "ci_high",
               "bound_range", "n", "adjustment", "association_z")


@dataclass
class RowError:
    row: int
    column: str
    message: str

    def __str__(self):
        where = f"row {self.row}" if self.row >= 0 else "header"
        return f"{where}, column {self.column}: {self.message}"


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)
    n_rows: int = 0
    covariate_names: tuple = ()
    pa_arity: Optional[int] = None
    missing_rate: dict = field(default_factory=dict)
    strata_occupancy: dict = field(default_factory=dict)

    @property
    def ok(self):
        return not self.errors

    def summary(self):
        lines = [f"rows: {self.n_rows}", f"covariates: {', '.join(self.covariate_names) or '(none)'}",
                 f"propensity arity: {self.pa_arity or 'none'}"]
        for t, rate in sorted(self.missing_rate.items()):
            lines.append(f"missing outcome rate, arm {t}: {_fmt_num(rate)}")
        if self.strata_occupancy:
            hist = ", ".join(f"{size}: {count}" for size, count in sorted(self.strata_occupancy.items()))
            lines.append(f"covariate strata by size (size: count): {hist}")
        for err in self.errors:
            lines.append(f"error: {err}")
        return "\n".join(lines)


class DatasetError(ValueError):
    """Raised by :func:`read_dataset` when the file does not validate."""

    def __init__(self, report: ValidationReport):
        self.report = report
        first = "; ".join(str(e) for e in report.errors[:5])
        more = f" (+{len(report.errors) - 5} more)" if len(report.errors) > 5 else ""
        super().__init__(f"{len(report.errors)} validation error(s): {first}{more}")


def _natural_key(label):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def _binary(value, row, column, errors, allow_empty=False):
    value = value.strip()
    if value == "" and allow_empty:
        return None
    if value in ("0", "1"):
        return int(value)
    errors.append(RowError(row, column, f"expected 0 or 1, got {value!r}"))
    return None


def load_csv(path: Union[str, Path]):
    """Parse a trial CSV.

    Returns ``(dataset, report)``. ``dataset`` is None when any row fails
    validation, in which case ``report.errors`` lists every problem found.
    """
    report = ValidationReport()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            report.errors.append(RowError(-1, "", "empty file"))
            return None, report
        rows = list(reader)
    errors = report.errors
    for col in REQUIRED + (OUTCOME,):
        if col not in header:
            errors.append(RowError(-1, col, "required column missing"))
    dupes = [c for c, k in Counter(header).items() if k > 1]
    for c in dupes:
        errors.append(RowError(-1, c, "duplicate column"))
    known = set(REQUIRED) | {OUTCOME, TRUTH}
    cov_cols = [c for c in header if c.startswith("x_")]
    pa_cols = [c for c in header if c.startswith("pa_")]
    for c in header:
        if c not in known and c not in cov_cols and c not in pa_cols:
            errors.append(RowError(-1, c, "unknown column"))
    pa_arity = None
    if pa_cols:
        matches = [k for k, names in PA_COLUMNS.items() if sorted(names) == sorted(pa_cols)]
        if not matches:
            errors.append(RowError(-1, ",".join(pa_cols),
                                   "propensity columns must be pa_0,pa_1 or pa_00,pa_10,pa_01,pa_11"))
        else:
            pa_arity = matches[0]
    if errors:
        return None, report

    idx = {c: i for i, c in enumerate(header)}
    n = len(rows)
    t = np.zeros(n, dtype=np.int8)
    s = np.zeros(n, dtype=np.int8)
    a = np.zeros(n, dtype=np.int8)
    o = np.full(n, MISSING, dtype=np.int8)
    has_truth = TRUTH in idx
    o_true = np.zeros(n, dtype=np.int8) if has_truth else None
    labels = [[""] * n for _ in cov_cols]
    pa = np.zeros((n, pa_arity), dtype=np.float64) if pa_arity else None
    pa_order = PA_COLUMNS[pa_arity] if pa_arity else ()

    for i, row in enumerate(rows):
        if len(row) != len(header):
            errors.append(RowError(i, "", f"expected {len(header)} fields, got {len(row)}"))
            continue
        vals = {}
        for col in REQUIRED:
            vals[col] = _binary(row[idx[col]], i, col, errors)
        out = _binary(row[idx[OUTCOME]], i, OUTCOME, errors, allow_empty=True)
        if vals["a"] == 0 and out is not None:
            errors.append(RowError(i, OUTCOME, "outcome present while unavailable"))
        if vals["a"] == 1 and out is None and row[idx[OUTCOME]].strip() == "":
            errors.append(RowError(i, OUTCOME, "outcome absent while available"))
        truth = None
        if has_truth:
            truth = _binary(row[idx[TRUTH]], i, TRUTH, errors)
            if vals["a"] == 1 and out is not None and truth is not None and truth != out:
                errors.append(RowError(i, TRUTH, "ground truth disagrees with the observed outcome"))
        for j, col in enumerate(cov_cols):
            label = row[idx[col]].strip()
            if label == "":
                errors.append(RowError(i, col, "covariate value missing"))
            labels[j][i] = label
        for j, col in enumerate(pa_order):
            raw = row[idx[col]].strip()
            try:
                value = float(raw)
            except ValueError:
                errors.append(RowError(i, col, f"expected a number, got {raw!r}"))
                continue
            if not 0.0 <= value <= 1.0:
                errors.append(RowError(i, col, f"propensity {raw} outside [0, 1]"))
            pa[i, j] = value
        t[i] = vals["t"] or 0
        s[i] = vals["s"] or 0
        a[i] = vals["a"] or 0
        if out is not None:
            o[i] = out
        if has_truth and truth is not None:
            o_true[i] = truth

    report.n_rows = n
    report.covariate_names = tuple(c[2:] for c in cov_cols)
    report.pa_arity = pa_arity
    if errors:
        return None, report
    if n == 0:
        errors.append(RowError(-1, "", "no data rows"))
        return None, report

    levels = [tuple(sorted(set(col), key=_natural_key)) for col in labels]
    x = np.zeros((n, len(cov_cols)), dtype=np.int64)
    for j, col in enumerate(labels):
        code = {lv: c for c, lv in enumerate(levels[j])}
        x[:, j] = [code[v] for v in col]
    data = TrialDataset(t, s, a, o, x, report.covariate_names, levels, pa, o_true)
    report.missing_rate = {tv: data.missing_rate(tv) for tv in (0, 1)}
    if cov_cols:
        sizes = Counter(Counter(map(tuple, x.tolist())).values())
        report.strata_occupancy = dict(sizes)
    return data, report


def read_dataset(path) -> TrialDataset:
    data, report = load_csv(path)
    if data is None:
        raise DatasetError(report)
    return data


def write_csv(data: TrialDataset, path: Union[str, Path], include_truth=True):
    """Write ``data`` in the format read by :func:`load_csv`."""
    header = ["t", "s", "a", "o"] + [f"x_{c}" for c in data.covariate_names] + list(data.pa_columns)
    truth = include_truth and data.o_true is not None
    if truth:
        header.append(TRUTH)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(data)):
            row = [int(data.t[i]), int(data.s[i]), int(data.a[i]),
                   "" if data.o_star[i] == MISSING else int(data.o_star[i])]
            row += [data.covariate_levels[j][data.x[i, j]] for j in range(len(data.covariate_names))]
            if data.pa is not None:
                row += [repr(float(v)) for v in data.pa[i]]
            if truth:
                row.append(int(data.o_true[i]))
            w.writerow(row)


def _fmt_num(value):
    if value is None:
        return None
    if isinstance(value, Fraction):
        value = float(value)
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    value = float(value)
    if math.isnan(value) or math.isinf(value):
        return None
    return float(format(value, ".12g"))


def report_dict(report: EstimateReport) -> dict:
    """Fixed-key dictionary view of a report, floats rounded to 12 significant digits."""
    ci = report.ci or (None, None)
    out = {
        "estimand": report.estimand,
        "estimator": report.estimator,
        "point": _fmt_num(report.point),
        "lower": _fmt_num(report.lower),
        "upper": _fmt_num(report.upper),
        "ci_low": _fmt_num(ci[0]),
        "ci_high": _fmt_num(ci[1]),
        "bound_range": _fmt_num(report.bound_range),
        "n": int(report.n),
        "adjustment": list(report.adjustment),
        "association_z": _fmt_num(report.association_z),
        "flags": {k: _fmt_num(report.flags.get(k)) if k == "smoothed" else bool(report.flags.get(k, False))
                  for k in FLAG_KEYS},
        "warnings": list(report.warnings),
        "strata": [
            {"key": [str(v) for v in s.key], "value": _fmt_num(s.value), "weight": _fmt_num(s.weight),
             "flag": s.flag, "lb": _fmt_num(s.lb), "ub": _fmt_num(s.ub)}
            for s in report.strata
        ],
    }
    return out


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".12g")
    if isinstance(value, list):
        return ";".join(str(v) for v in value)
    return str(value)


CSV_COLUMNS = REPORT_KEYS + tuple(f"flag_{k}" for k in FLAG_KEYS) + ("warnings",)


def emit_reports(reports, fmt="json") -> bytes:
    """Serialize one or more reports; identical inputs give identical bytes."""
    if isinstance(reports, EstimateReport):
        reports = [reports]
    dicts = [report_dict(r) for r in reports]
    if fmt == "json":
        payload = dicts[0] if len(dicts) == 1 else dicts
        return (json.dumps(payload, indent=2, ensure_ascii=False) + "\n").encode()
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for d in dicts:
            row = [_cell(d[k]) for k in REPORT_KEYS]
            row += [_cell(d["flags"][k]) for k in FLAG_KEYS]
            row.append(_cell(d["warnings"]))
            w.writerow(row)
        return buf.getvalue().encode()
    if fmt == "text":
        blocks = []
        for d in dicts:
            lines = [f"{d['estimator']} estimate of {d['estimand']}"]
            for k in REPORT_KEYS[2:]:
                value = d[k]
                lines.append(f"  {k}: {'null' if value is None else _cell(value)}")
            for k in FLAG_KEYS:
                value = d["flags"][k]
                lines.append(f"  flag {k}: {'null' if value is None else _cell(value)}")
            for warning in d["warnings"]:
                lines.append(f"  warning: {warning}")
            blocks.append("\n".join(lines))
        return ("\n\n".join(blocks) + "\n").encode()
    raise ValueError(f"unknown report format {fmt!r}; expected json, csv or text")


def emit_report(report: EstimateReport, fmt="json") -> bytes:
    return emit_reports([report], fmt)
