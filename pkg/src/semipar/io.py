"""Delimited-file loading and writing, run configuration, manifests and plot data."""

from __future__ import annotations

import csv
import hashlib
import importlib.resources
import io
import json
import math
import os
import platform
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .core import OrdinalDataset
from .design import DesignSpec, SchemaError, VariableSpec


class LoadError(ValueError):
    pass


@dataclass
class RecordSchema:
    """Column roles of an input file.

    ``categories`` lists the kept response codes in order; rows carrying any
    other code are dropped and counted.
    """

    response: str
    categories: tuple
    variables: list
    lhu: str | None = "lhu"
    region: str | None = None
    weight: str | None = None
    strata: tuple = ()
    scaling: str = "standardize"
    note: str = ""

    def __post_init__(self):
        self.categories = tuple(self.categories)
        self.strata = tuple(self.strata)
        if len(self.categories) < 3:
            raise SchemaError("the response needs at least 3 ordered codes")
        if len({str(c) for c in self.categories}) != len(self.categories):
            raise SchemaError("duplicate response codes")

    @property
    def columns(self) -> list[str]:
        cols = [self.response]
        for extra in (self.lhu, self.region, self.weight):
            if extra:
                cols.append(extra)
        cols += [v.name for v in self.variables]
        cols += [s for s in self.strata if s not in cols]
        return cols

    def design_spec(self, interactions: bool = True) -> DesignSpec:
        return DesignSpec(list(self.variables), self.lhu is not None, self.lhu or "lhu", (), self.scaling,
                          interactions)

    def to_dict(self) -> dict:
        return {
            "note": self.note,
            "response": self.response,
            "categories": list(self.categories),
            "lhu": self.lhu,
            "region": self.region,
            "weight": self.weight,
            "strata": list(self.strata),
            "scaling": self.scaling,
            "variables": [
                {"name": v.name, "kind": v.kind, **({"levels": list(v.levels)} if v.levels else {})}
                for v in self.variables
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RecordSchema":
        try:
            variables = [VariableSpec(v["name"], v["kind"], tuple(v.get("levels", ())),
                                      v.get("scaling", doc.get("scaling", "standardize")))
                         for v in doc["variables"]]
            return cls(doc["response"], tuple(doc["categories"]), variables, doc.get("lhu"), doc.get("region"),
                       doc.get("weight"), tuple(doc.get("strata", ())), doc.get("scaling", "standardize"),
                       doc.get("note", ""))
        except KeyError as exc:
            raise SchemaError(f"schema is missing the {exc.args[0]!r} entry") from None

    @classmethod
    def load(cls, path) -> "RecordSchema":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def default_schema() -> RecordSchema:
    """The bundled reconstruction of the survey extract's variable table."""
    text = importlib.resources.files("semipar").joinpath("data/table1_schema.json").read_text(encoding="utf-8")
    return RecordSchema.from_dict(json.loads(text))


def _code_lookup(categories) -> dict:
    return {str(c): k for k, c in enumerate(categories)}


def _match_code(raw: str, lookup: dict):
    if raw in lookup:
        return lookup[raw]
    try:
        as_float = float(raw)
    except ValueError:
        return None
    if as_float.is_integer():
        return lookup.get(str(int(as_float)))
    return None


def load_dataset(path, schema: RecordSchema) -> OrdinalDataset:
    """Read a comma-separated file with a header row.

    Lines starting with ``#`` are ignored.  Returns a dataset whose ``info``
    records ``rows_in``, ``rows_used`` and ``rows_dropped``.
    """
    path = Path(path)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from None
    with handle:
        current = [0]

        def lines():
            for number, text in enumerate(handle, start=1):
                if not text.startswith("#"):
                    current[0] = number
                    yield text

        reader = csv.reader(lines())
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in schema.columns:
            if col not in header:
                raise SchemaError(f"{path}: missing declared column {col!r}")
        pos = {h: i for i, h in enumerate(header)}
        lookup = _code_lookup(schema.categories)
        level_sets = {v.name: {str(lv) for lv in (v.binary_levels if v.kind == "binary" else v.levels)}
                      for v in schema.variables if v.kind != "numeric"}
        numeric = [v.name for v in schema.variables if v.kind == "numeric"]
        y, weights, rows = [], [], []
        rows_in = dropped = 0
        for fields in reader:
            rows_in += 1
            line = current[0]
            if len(fields) != len(header):
                raise LoadError(f"{path}: line {line}: expected {len(header)} fields, got {len(fields)}")
            code = _match_code(fields[pos[schema.response]].strip(), lookup)
            if code is None:
                dropped += 1
                continue
            record = {h: fields[i].strip() for h, i in pos.items()}
            for name, allowed in level_sets.items():
                value = record[name]
                if value not in allowed and _normalize_level(value) not in allowed:
                    raise SchemaError(f"{path}: line {line}: unknown level {value!r} for {name!r}")
                record[name] = value if value in allowed else _normalize_level(value)
            for name in numeric:
                try:
                    record[name] = float(record[name])
                except ValueError:
                    raise LoadError(f"{path}: line {line}: {name!r} is not a number: {record[name]!r}") from None
                if not math.isfinite(record[name]):
                    raise LoadError(f"{path}: line {line}: {name!r} is not finite")
            if schema.weight:
                try:
                    wt = float(record[schema.weight])
                except ValueError:
                    raise LoadError(f"{path}: line {line}: weight is not a number") from None
                if not (math.isfinite(wt) and wt >= 0):
                    raise LoadError(f"{path}: line {line}: weight must be finite and nonnegative")
                weights.append(wt)
            y.append(code)
            rows.append(record)
    kept = [h for h in header if h not in (schema.response, schema.weight)]
    records = pd.DataFrame(rows, columns=header)[kept]
    data = OrdinalDataset(np.array(y, dtype=np.int64), schema.categories, records,
                          np.array(weights) if schema.weight else None)
    data.info.update({"source": str(path), "rows_in": rows_in, "rows_used": len(y), "rows_dropped": dropped})
    return data


def _normalize_level(value: str) -> str:
    try:
        f = float(value)
    except ValueError:
        return value
    return str(int(f)) if f.is_integer() else value


def _format(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def dataset_csv(data: OrdinalDataset, schema: RecordSchema) -> str:
    """Text of :func:`write_dataset`; raw weights are written so reloading is exact."""
    if data.records is None:
        raise ValueError("dataset has no covariate records")
    missing = [c for c in schema.columns if c not in (schema.response, schema.weight) and c not in data.records]
    if missing:
        raise SchemaError(f"records lack declared columns {missing}")
    cols = [c for c in data.records.columns if c not in (schema.response, schema.weight)]
    header = [schema.response] + cols + ([schema.weight] if schema.weight else [])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    codes = data.codes
    recs = data.records
    for i in range(data.n):
        row = [_format(codes[i])] + [_format(recs[c].iat[i]) for c in cols]
        if schema.weight:
            row.append(_format(data.raw_weights[i]))
        writer.writerow(row)
    return buf.getvalue()


def write_dataset(data: OrdinalDataset, path, schema: RecordSchema):
    write_atomic(path, dataset_csv(data, schema))


def write_atomic(path, text: str):
    """Write via a temporary file in the target directory and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def parse_config(path) -> dict:
    """Plain ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for number, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise LoadError(f"{path}: line {number}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def versions() -> dict:
    return {"semipar": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "pandas": pd.__version__, "python": platform.python_version()}


def manifest_hash(config: dict) -> str:
    """Hash of the effective configuration and library versions (not the wall time)."""
    doc = json.dumps({"config": config, "versions": versions()}, sort_keys=True, default=str)
    return hashlib.sha256(doc.encode("utf-8")).hexdigest()


@dataclass
class Manifest:
    command: str
    config: dict
    wall_time: float = 0.0
    outputs: list = field(default_factory=list)

    @property
    def digest(self) -> str:
        return manifest_hash({"command": self.command, **self.config})

    def to_dict(self) -> dict:
        return {"command": self.command, "config": self.config, "seed": self.config.get("seed"),
                "versions": versions(), "manifest_hash": self.digest, "wall_time_seconds": self.wall_time,
                "outputs": list(self.outputs)}


def stamp_csv(frame: pd.DataFrame, digest: str, notes=()) -> str:
    """CSV text preceded by ``#`` lines carrying the manifest hash and any notes."""
    buf = io.StringIO()
    buf.write(f"# manifest: {digest}\n")
    for note in notes:
        buf.write(f"# {note}\n")
    frame.to_csv(buf, index=False, float_format="%.10g", lineterminator="\n")
    return buf.getvalue()


def read_stamped_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


PLOT_KINDS = ("regional", "quartiles", "plane", "lhu-ranking", "covariate-ranking")


def regional_proportions(data: OrdinalDataset, region_column: str) -> pd.DataFrame:
    """Response shares per region, plus the overall row (unweighted)."""
    labels = data.records[region_column].astype(str).to_numpy()
    rows = []
    K = data.n_categories
    for reg in sorted(set(labels)) + ["(all)"]:
        mask = np.ones(data.n, dtype=bool) if reg == "(all)" else labels == reg
        counts = np.bincount(data.y[mask], minlength=K)
        for k, code in enumerate(data.categories):
            rows.append({"region": reg, "response": code, "count": int(counts[k]),
                         "proportion": counts[k] / mask.sum()})
    return pd.DataFrame(rows)


def quartile_proportions(data: OrdinalDataset, columns) -> pd.DataFrame:
    """Response shares by quartile class of each numeric column."""
    K = data.n_categories
    rows = []
    for col in columns:
        vals = data.records[col].astype(float)
        classes = pd.qcut(vals, 4, labels=["Q1", "Q2", "Q3", "Q4"], duplicates="drop")
        for q in classes.cat.categories:
            mask = (classes == q).to_numpy()
            counts = np.bincount(data.y[mask], minlength=K)
            for k, code in enumerate(data.categories):
                rows.append({"variable": col, "quartile": q, "response": code, "count": int(counts[k]),
                             "proportion": counts[k] / max(mask.sum(), 1)})
    return pd.DataFrame(rows)


def plane_table(rotation: pd.DataFrame, regions: dict | None = None) -> pd.DataFrame:
    """Coefficient plane and rotated plane coordinates, one row per column."""
    cols = ["label", "kind", "b_neg", "b_zero", "positivity", "neutrality", "quadrant"]
    out = rotation[cols].copy()
    if regions:
        out["region"] = [regions.get(_lhu_level(lab), "") for lab in out["label"]]
    return out


def _lhu_level(label: str) -> str:
    return label.split("[", 1)[1].rstrip("]") if "[" in label else label


def emit_plot_data(kind: str, source, digest: str = "", schema: RecordSchema | None = None,
                   regions: dict | None = None) -> str:
    """CSV text for one figure-like view.

    ``source`` is an :class:`OrdinalDataset` for ``regional`` and
    ``quartiles`` and a rotation table for the other kinds.
    """
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; choose from {', '.join(PLOT_KINDS)}")
    if source is None:
        raise LoadError(f"{kind}: missing input")
    notes = []
    if kind == "regional":
        if schema is None or not schema.region:
            raise SchemaError("regional proportions need a schema with a region column")
        frame = regional_proportions(source, schema.region)
    elif kind == "quartiles":
        numeric = [v.name for v in schema.variables if v.kind == "numeric"] if schema else []
        if not numeric:
            raise SchemaError("quartile classes need numeric variables in the schema")
        frame = quartile_proportions(source, numeric)
    elif kind == "plane":
        frame = plane_table(source, regions)
    else:
        from .rotation import ranking_table

        frame = ranking_table(source, "lhu" if kind == "lhu-ranking" else "covariate")
        if "lo" not in frame.columns:
            notes.append("bands: none (no bootstrap ensemble supplied)")
    return stamp_csv(frame, digest, notes)
