"""Expansion of survey records into the numeric design matrix.

Column order is fixed: main effects in variable order, then the products
of every pair of main columns that come from distinct variables (pairs in
lexicographic order of main-column position), then one indicator per
territorial unit (LHU).  LHU indicators never enter interactions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np
import pandas as pd

SCALING_MODES = ("none", "standardize", "minmax")


class SchemaError(ValueError):
    pass


class DegenerateColumnError(ValueError):
    def __init__(self, column: str):
        super().__init__(f"column {column!r} has zero spread and cannot be scaled")
        self.column = column


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str  # "binary" | "categorical" | "numeric"
    levels: tuple = ()
    scaling: str = "standardize"

    def __post_init__(self):
        if self.kind not in ("binary", "categorical", "numeric"):
            raise SchemaError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and len(self.levels) < 2:
            raise SchemaError(f"{self.name}: categorical variables need at least 2 levels")
        if self.kind == "binary" and self.levels and len(self.levels) != 2:
            raise SchemaError(f"{self.name}: binary variables have exactly 2 levels")
        if self.scaling not in SCALING_MODES:
            raise SchemaError(f"{self.name}: unknown scaling {self.scaling!r}")

    @property
    def binary_levels(self) -> tuple:
        return tuple(self.levels) if self.levels else (0, 1)

    @property
    def n_columns(self) -> int:
        return len(self.levels) - 1 if self.kind == "categorical" else 1


@dataclass(frozen=True)
class Column:
    name: str
    sources: tuple  # names of the source variable(s)
    kind: str  # "main" | "interaction" | "lhu"
    parents: tuple = ()  # main-column positions of interaction parents
    numeric: bool = False

    @property
    def is_interaction(self) -> bool:
        return self.kind == "interaction"

    @property
    def is_lhu(self) -> bool:
        return self.kind == "lhu"


@dataclass
class DesignMatrix:
    values: np.ndarray
    columns: list
    scaling: dict = field(default_factory=dict)  # main-column name -> (loc, scale)
    scaling_mode: str = "none"
    flags: list = field(default_factory=list)
    lhu_levels: tuple = ()

    @property
    def shape(self):
        return self.values.shape

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def block(self, kind: str) -> np.ndarray:
        """Column positions of ``"lhu"`` indicators or ``"main"`` (main + interactions)."""
        if kind == "lhu":
            return np.array([i for i, c in enumerate(self.columns) if c.is_lhu], dtype=int)
        return np.array([i for i, c in enumerate(self.columns) if not c.is_lhu], dtype=int)

    def metadata(self) -> dict:
        return {
            "columns": [
                {"name": c.name, "sources": list(c.sources), "kind": c.kind,
                 "parents": list(c.parents), "numeric": c.numeric}
                for c in self.columns
            ],
            "scaling_mode": self.scaling_mode,
            "scaling": {k: list(v) for k, v in self.scaling.items()},
            "lhu_levels": list(self.lhu_levels),
        }


@dataclass
class DesignSpec:
    """Everything needed to rebuild a design on any subset of records."""

    variables: list
    include_lhu: bool = True
    lhu_column: str = "lhu"
    lhu_levels: tuple = ()
    scaling: str = "standardize"
    interactions: bool = True

    def with_group(self, column: str, levels: Sequence) -> "DesignSpec":
        return DesignSpec(self.variables, True, column, tuple(levels), self.scaling, self.interactions)


def _encode_variable(spec: VariableSpec, series: pd.Series):
    if series.isna().any():
        bad = int(np.flatnonzero(series.isna().to_numpy())[0])
        raise SchemaError(f"{spec.name}: missing value in row {bad}")
    if spec.kind == "numeric":
        try:
            vals = series.astype(float).to_numpy()
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{spec.name}: non-numeric value ({exc})") from None
        return vals[:, None], [spec.name]
    levels = spec.binary_levels if spec.kind == "binary" else tuple(spec.levels)
    idx = _level_index(series, levels, spec.name)
    if spec.kind == "binary":
        return idx[:, None].astype(float), [spec.name]
    # reference coding, first level is the reference
    cols = np.zeros((idx.size, len(levels) - 1))
    for j in range(1, len(levels)):
        cols[:, j - 1] = idx == j
    return cols, [f"{spec.name}[{lv}]" for lv in levels[1:]]


def _level_index(series: pd.Series, levels: Sequence, name: str) -> np.ndarray:
    keyed = {str(lv): i for i, lv in enumerate(levels)}
    raw = series.astype(str)
    idx = raw.map(keyed).astype(object)
    missing = idx.isna().to_numpy()
    if missing.any():
        # numeric-looking codes written as 0.0/1.0
        def _as_int(v):
            try:
                return keyed.get(str(int(float(v))))
            except ValueError:
                return None
        idx[missing] = raw[missing].map(_as_int)
        still = idx.isna().to_numpy()
        if still.any():
            r = int(np.flatnonzero(still)[0])
            raise SchemaError(f"{name}: unknown level {raw.iloc[r]!r} in row {r}")
    return idx.to_numpy(dtype=int)


def _main_block(records: pd.DataFrame, specs: Sequence[VariableSpec]):
    blocks, columns = [], []
    for spec in specs:
        if spec.name not in records.columns:
            raise SchemaError(f"missing column {spec.name!r}")
        vals, names = _encode_variable(spec, records[spec.name])
        blocks.append(vals)
        for nm in names:
            columns.append(Column(nm, (spec.name,), "main", numeric=spec.kind == "numeric"))
    n = len(records)
    main = np.hstack(blocks) if blocks else np.zeros((n, 0))
    return main, columns


def _interaction_columns(main_cols: list) -> list:
    out = []
    for a, b in combinations(range(len(main_cols)), 2):
        ca, cb = main_cols[a], main_cols[b]
        if ca.sources[0] == cb.sources[0]:
            continue
        out.append(Column(f"{ca.name}:{cb.name}", (ca.sources[0], cb.sources[0]),
                          "interaction", parents=(a, b), numeric=ca.numeric or cb.numeric))
    return out


def _assemble(main: np.ndarray, main_cols, inter_cols, lhu: np.ndarray, lhu_cols):
    inter = np.empty((main.shape[0], len(inter_cols)))
    for k, col in enumerate(inter_cols):
        a, b = col.parents
        inter[:, k] = main[:, a] * main[:, b]
    return np.hstack([main, inter, lhu]), main_cols + inter_cols + lhu_cols


def _lhu_block(records: pd.DataFrame, column: str, levels: Sequence):
    if column not in records.columns:
        raise SchemaError(f"missing column {column!r}")
    labels = records[column]
    if labels.isna().any():
        raise SchemaError(f"{column}: missing label")
    if not levels:
        levels = sorted(set(labels.astype(str)))
    idx = _level_index(labels, levels, column)
    block = np.zeros((idx.size, len(levels)))
    block[np.arange(idx.size), idx] = 1.0
    cols = [Column(f"{column}[{lv}]", (column,), "lhu") for lv in levels]
    return block, cols, tuple(str(lv) for lv in levels)


def build_design(records: pd.DataFrame, specs: Sequence[VariableSpec], include_lhu: bool = True,
                 lhu_column: str = "lhu", lhu_levels: Sequence = (), interactions: bool = True) -> DesignMatrix:
    """Unscaled design: main effects, pairwise interactions, LHU indicators."""
    main, main_cols = _main_block(records, specs)
    inter_cols = _interaction_columns(main_cols) if interactions else []
    if include_lhu:
        lhu, lhu_cols, levels = _lhu_block(records, lhu_column, lhu_levels)
    else:
        lhu, lhu_cols, levels = np.zeros((len(records), 0)), [], ()
    values, columns = _assemble(main, main_cols, inter_cols, lhu, lhu_cols)
    return DesignMatrix(values, columns, lhu_levels=levels)


def _recompute(matrix: DesignMatrix, stats: dict, mode: str) -> DesignMatrix:
    cols = matrix.columns
    main_idx = [i for i, c in enumerate(cols) if c.kind == "main"]
    main = matrix.values[:, main_idx].copy()
    flags = []
    for k, i in enumerate(main_idx):
        c = cols[i]
        if c.name in stats:
            loc, scale = stats[c.name]
            main[:, k] = (main[:, k] - loc) / scale
            if mode == "minmax" and main.shape[0] and (main[:, k].min() < 0 or main[:, k].max() > 1):
                flags.append(f"{c.name}: values outside the training range")
    main_cols = [cols[i] for i in main_idx]
    inter_cols = [c for c in cols if c.is_interaction]
    lhu_idx = [i for i, c in enumerate(cols) if c.is_lhu]
    values, columns = _assemble(main, main_cols, inter_cols, matrix.values[:, lhu_idx], [cols[i] for i in lhu_idx])
    return DesignMatrix(values, columns, dict(stats), mode, flags, matrix.lhu_levels)


def apply_scaling(matrix: DesignMatrix, mode: str = "standardize") -> DesignMatrix:
    """Scale numeric main-effect columns and rebuild interactions from them.

    Binary and dummy columns stay 0/1.  The location/scale pairs are kept in
    ``scaling`` so that held-out rows can be transformed identically.
    """
    if mode not in SCALING_MODES:
        raise ValueError(f"unknown scaling mode {mode!r}")
    if matrix.scaling_mode != "none":
        raise ValueError("design is already scaled")
    stats = {}
    if mode != "none":
        for i, c in enumerate(matrix.columns):
            if c.kind != "main" or not c.numeric:
                continue
            x = matrix.values[:, i]
            if mode == "standardize":
                loc, scale = float(x.mean()), float(x.std(ddof=1)) if x.size > 1 else 0.0
            else:
                loc, scale = float(x.min()), float(x.max() - x.min())
            if not scale > 0:
                raise DegenerateColumnError(c.name)
            stats[c.name] = (loc, scale)
    return _recompute(matrix, stats, mode)


def transfer_scaling(new_records: pd.DataFrame, specs: Sequence[VariableSpec], scaling_metadata: DesignMatrix | dict,
                     include_lhu: bool = True, lhu_column: str = "lhu", lhu_levels: Sequence = (),
                     interactions: bool = True) -> DesignMatrix:
    """Build the design for new rows using previously fitted scaling statistics."""
    if isinstance(scaling_metadata, DesignMatrix):
        stats, mode = scaling_metadata.scaling, scaling_metadata.scaling_mode
        if include_lhu and not lhu_levels:
            lhu_levels = scaling_metadata.lhu_levels
    else:
        stats, mode = scaling_metadata["scaling"], scaling_metadata["mode"]
    raw = build_design(new_records, specs, include_lhu, lhu_column, lhu_levels, interactions)
    numeric = {c.name for c in raw.columns if c.kind == "main" and c.numeric}
    if mode != "none" and set(stats) != numeric:
        raise SchemaError(f"scaling metadata covers {sorted(stats)}, design has numeric columns {sorted(numeric)}")
    return _recompute(raw, {k: tuple(v) for k, v in stats.items()}, mode)


def design_from_spec(records: pd.DataFrame, spec: DesignSpec) -> DesignMatrix:
    raw = build_design(records, spec.variables, spec.include_lhu, spec.lhu_column, spec.lhu_levels, spec.interactions)
    return apply_scaling(raw, spec.scaling)


def transfer_from_spec(records: pd.DataFrame, spec: DesignSpec, fitted: DesignMatrix) -> DesignMatrix:
    return transfer_scaling(records, spec.variables, {"scaling": fitted.scaling, "mode": fitted.scaling_mode},
                            spec.include_lhu, spec.lhu_column, spec.lhu_levels or fitted.lhu_levels, spec.interactions)


def expected_width(specs: Sequence[VariableSpec], n_lhu: int = 0) -> int:
    """Column count ``M + C(M,2) - sum_v C(d_v,2) + L``."""
    d = [s.n_columns for s in specs]
    M = sum(d)
    return M + M * (M - 1) // 2 - sum(k * (k - 1) // 2 for k in d) + n_lhu
