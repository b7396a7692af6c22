"""Reading and writing datasets, pairs files and reports.

All text outputs are deterministic: no timestamps, fixed column order,
floats in pairs files written with 17 significant digits so they read
back bit-for-bit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DataError, MatchedPair, PairData, Unit

MISSING_TOKENS = frozenset({"", "na", "nan", "null"})
MISSING_LEVEL = "missing"
NUMERIC = "numeric"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Schema:
    """Column roles in an input CSV.

    ``covariates`` maps a column name to ``"numeric"`` or ``"categorical"``.
    """

    instrument: str
    treatment: str
    response: str
    covariates: dict = field(default_factory=dict)
    id_column: str | None = None

    def __post_init__(self):
        for name, kind in self.covariates.items():
            if kind not in (NUMERIC, CATEGORICAL):
                raise ValueError(f"covariate {name!r}: type must be numeric or categorical, got {kind!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        cov = d.get("covariates", {})
        if isinstance(cov, list):
            cov = {name: NUMERIC for name in cov}
        for name in d.get("categorical", []):
            cov[name] = CATEGORICAL
        return cls(d["instrument"], d["treatment"], d["response"], dict(cov), d.get("id_column"))


@dataclass(eq=False)
class Dataset:
    schema: Schema
    units: list[Unit]
    covariate_names: tuple[str, ...]
    categorical: dict  # column index -> tuple of level names
    rejected_rows: int = 0
    missing_counts: dict = field(default_factory=dict)

    @property
    def n_units(self) -> int:
        return len(self.units)

    def covariate_matrix(self) -> np.ndarray:
        return np.array([u.x for u in self.units], dtype=float).reshape(len(self.units), -1)


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in MISSING_TOKENS


def _binary(cell: str, column: str, row: int) -> int:
    s = cell.strip()
    try:
        v = float(s)
    except ValueError:
        v = None
    if v not in (0.0, 1.0):
        raise DataError(f"row {row}: column {column!r} must be 0 or 1, got {cell!r}")
    return int(v)


def ingest_csv(path, schema: Schema) -> Dataset:
    """Parse a unit-level CSV into typed records.

    Missing covariate cells are imputed (column median for numeric
    columns, a ``missing`` level for categorical ones) and, for each
    column with at least one gap, an indicator column ``<name>_missing``
    is appended. Rows with a missing response are dropped and counted.
    Row numbers in errors count the header as row 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [schema.instrument, schema.treatment, schema.response, *schema.covariates]
        if schema.id_column:
            needed.append(schema.id_column)
        absent = [c for c in needed if c not in header]
        if absent:
            raise DataError(f"{path}: missing columns {', '.join(absent)}")
        records, rejected = [], 0
        for row_no, row in enumerate(reader, start=2):
            if _is_missing(row[schema.response] or ""):
                rejected += 1
                continue
            try:
                r = float(row[schema.response])
            except ValueError:
                raise DataError(f"row {row_no}: response {row[schema.response]!r} is not a number") from None
            if not math.isfinite(r):
                raise DataError(f"row {row_no}: response is not finite")
            z = _binary(row[schema.instrument] or "", schema.instrument, row_no)
            d = _binary(row[schema.treatment] or "", schema.treatment, row_no)
            uid = row[schema.id_column] if schema.id_column else str(row_no - 1)
            records.append((row_no, uid, z, d, r, {c: (row[c] or "") for c in schema.covariates}))

    columns, names, categorical, missing_counts = [], [], {}, {}
    indicators = []
    for name, kind in schema.covariates.items():
        cells = [rec[5][name] for rec in records]
        miss = np.array([_is_missing(c) for c in cells], dtype=bool)
        if kind == NUMERIC:
            vals = np.full(len(cells), np.nan)
            for k, (c, m) in enumerate(zip(cells, miss)):
                if m:
                    continue
                try:
                    vals[k] = float(c)
                except ValueError:
                    raise DataError(f"row {records[k][0]}: column {name!r} value {c!r} is not a number") from None
            if miss.any():
                if miss.all():
                    raise DataError(f"column {name!r} has no observed values")
                vals[miss] = float(np.median(vals[~miss]))
        else:
            labels = [MISSING_LEVEL if m else c.strip() for c, m in zip(cells, miss)]
            levels = tuple(sorted(set(labels)))
            code = {lv: i for i, lv in enumerate(levels)}
            vals = np.array([code[lb] for lb in labels], dtype=float)
            categorical[len(names)] = levels
        columns.append(vals)
        names.append(name)
        if miss.any():
            missing_counts[name] = int(miss.sum())
            indicators.append((f"{name}_missing", miss.astype(float)))
    for name, col in indicators:
        columns.append(col)
        names.append(name)

    x = np.column_stack(columns) if columns else np.zeros((len(records), 0))
    units = [Unit(uid, z, d, r, tuple(float(v) for v in x[k]))
             for k, (_, uid, z, d, r, _) in enumerate(records)]
    return Dataset(schema, units, tuple(names), categorical, rejected, missing_counts)


def fmt17(v: float) -> str:
    return format(float(v), ".17g")


def _cell(v: float, col: int, categorical: dict) -> str:
    levels = categorical.get(col)
    if levels:
        return str(levels[int(v)])
    return fmt17(v)


def write_pairs_csv(path, pairs: Sequence[MatchedPair], covariate_names: Sequence[str],
                    categorical: dict | None = None) -> None:
    """One row per pair: treated unit fields ``t_*``, control ``c_*``, pair covariates ``x_*``.

    Categorical covariates are written as their level labels.
    """
    categorical = categorical or {}
    names = list(covariate_names)
    header = (["pair", "t_id", "t_d", "t_r", "c_id", "c_d", "c_r"]
              + [f"t_{n}" for n in names] + [f"c_{n}" for n in names] + [f"x_{n}" for n in names])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for pr in pairs:
            t, c = pr.treated, pr.control
            w.writerow([pr.index, t.id, t.d, fmt17(t.r), c.id, c.d, fmt17(c.r)]
                       + [_cell(v, j, categorical) for j, v in enumerate(t.x)]
                       + [_cell(v, j, categorical) for j, v in enumerate(c.x)]
                       + [_cell(v, j, categorical) for j, v in enumerate(pr.pair_covariates)])


def _encode_columns(raw: list[list[str]], names: list[str], categorical_names) -> tuple[np.ndarray, dict]:
    """Turn string columns into floats; non-numeric or declared columns become level codes."""
    cols, categorical = [], {}
    for j, name in enumerate(names):
        cells = raw[j]
        numeric = name not in categorical_names
        if numeric:
            try:
                cols.append(np.array([float(c) for c in cells]))
                continue
            except ValueError:
                pass
        levels = tuple(sorted(set(c.strip() for c in cells)))
        code = {lv: i for i, lv in enumerate(levels)}
        cols.append(np.array([code[c.strip()] for c in cells], dtype=float))
        categorical[j] = levels
    x = np.column_stack(cols) if cols else np.zeros((len(raw[0]) if raw else 0, 0))
    return x, categorical


def read_pairs_csv(path, categorical_names: Sequence[str] = ()) -> PairData:
    """Read a pairs file written by :func:`write_pairs_csv` into :class:`PairData`."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty pairs file") from None
        rows = list(reader)
    required = ["t_d", "t_r", "c_d", "c_r"]
    absent = [c for c in required if c not in header]
    if absent:
        raise DataError(f"{path}: missing columns {', '.join(absent)}")
    if not rows:
        raise DataError(f"{path}: no pairs")
    pos = {h: k for k, h in enumerate(header)}
    for k, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {k} has {len(row)} fields, expected {len(header)}")

    def numeric(col):
        out = np.empty(len(rows))
        for k, row in enumerate(rows):
            try:
                out[k] = float(row[pos[col]])
            except ValueError:
                raise DataError(f"{path}: row {k + 2}: column {col!r} is not a number") from None
        return out

    names = [h[2:] for h in header if h.startswith("x_")]
    raw = [[row[pos[f"x_{n}"]] for row in rows] for n in names]
    x, categorical = _encode_columns(raw, names, set(categorical_names))
    return PairData(numeric("t_r"), numeric("t_d"), numeric("c_r"), numeric("c_d"),
                    x, tuple(names), categorical)


def write_balance_csv(path, balance) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["covariate", "std_diff_before", "std_diff_after", "degenerate", "flagged"])
        for name, before, after, degen in balance.rows():
            w.writerow([name, fmt17(before), fmt17(after), int(degen), int(name in balance.flagged)])


def json_safe(obj):
    """Replace non-finite floats (invalid JSON) by None or signed ``"inf"`` strings."""
    if isinstance(obj, dict):
        return {str(k): json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return json_safe(obj.tolist())
    return obj


def from_json_number(v) -> float:
    if v is None:
        return float("nan")
    if isinstance(v, str):
        return float(v)
    return float(v)


def write_json(path, obj) -> None:
    text = json.dumps(json_safe(obj), indent=2, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def analysis_to_dict(analysis) -> dict:
    """Structured summary of an :class:`~hcace.analysis.Analysis`."""
    tree = analysis.tree
    nodes = []
    for s in analysis.nodes:
        est = s.estimate
        nodes.append({
            "node": s.node_id,
            "description": s.description,
            "leaves": [k + 1 for k in s.leaves],
            "is_leaf": len(s.leaves) == 1 and tree_node_is_leaf(tree, s.node_id),
            "n_pairs": s.n_pairs,
            "compliance": s.compliance,
            "estimate": None if est is None else est.point,
            "ci_low": None if est is None else est.ci_low,
            "ci_high": None if est is None else est.ci_high,
            "ci_shape": None if est is None else est.ci_shape,
            "decision": s.decision,
        })
    report = analysis.report
    subsets = [{"leaves": [k + 1 for k in h.leaves], "n_pairs": int(h.pairs.size),
                "decision": h.decision, "z": h.z, "p_value": h.p_value}
               for h in report.hypotheses()]
    cfg = tree.config
    return {
        "lambda0": analysis.lambda0,
        "alpha": analysis.alpha,
        "n_pairs": analysis.pairs.n,
        "tree_config": {"complexity_parameter": cfg.complexity_parameter, "min_split": cfg.min_split,
                        "min_bucket": cfg.min_bucket, "max_depth": cfg.max_depth},
        "n_leaves": analysis.grouping.n_leaves,
        "n_tests": report.n_tests,
        "global_rejected": bool(report.is_rejected(range(analysis.grouping.n_leaves))),
        "rejected_leaves": [k + 1 for k in range(analysis.grouping.n_leaves) if report.leaf_rejected[k]],
        "nodes": nodes,
        "subsets": subsets,
    }


def tree_node_is_leaf(tree, node_id: int) -> bool:
    return any(nd.id == node_id and nd.is_leaf for nd in tree.nodes())


NODE_COLUMNS = ("node", "description", "leaves", "is_leaf", "n_pairs", "compliance",
                "estimate", "ci_low", "ci_high", "ci_shape", "decision")


def _table_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    if isinstance(v, list):
        return " ".join(str(k) for k in v)
    return str(v)


def write_table_csv(path, rows: Sequence[dict], columns: Sequence[str]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_table_cell(row.get(c)) for c in columns])


def read_table_csv(path) -> tuple[list[str], list[dict]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        return list(reader.fieldnames or []), rows


def render_text_table(rows: Sequence[dict], columns: Sequence[str], digits: int = 4) -> str:
    """Fixed-width plain-text table for terminal display."""
    def show(v):
        if isinstance(v, float):
            return "nan" if math.isnan(v) else f"{v:.{digits}g}"
        if v is None:
            return ""
        return _table_cell(v)

    cells = [[str(c) for c in columns]] + [[show(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(row[k]) for row in cells) for k in range(len(columns))]
    lines = ["  ".join(row[k].ljust(widths[k]) for k in range(len(columns))).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
