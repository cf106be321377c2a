"""Positivity-neutrality coordinates for two-margin coefficient pairs.

A pair ``(b_neg, b_zero)`` holds a covariate's effect on the logit of
``Pr(y <= lowest)`` and of ``Pr(y <= middle)``.  Flipping the second
coordinate and rotating by 135 degrees (row-vector convention) gives

    positivity = -(b_neg + b_zero) / sqrt(2)
    neutrality =  (b_zero - b_neg) / sqrt(2)

so an equal downward shift of both cumulative logits reads as pure
positivity, and spreading them apart reads as pure neutrality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

THETA = math.radians(135.0)
FLIP = np.array([[1.0, 0.0], [0.0, -1.0]])
ROTATE = np.array([[math.cos(THETA), -math.sin(THETA)], [math.sin(THETA), math.cos(THETA)]])
TRANSFORM = FLIP @ ROTATE

HARMFUL = "harmful-or-irrelevant"  # (+, +)
NEUTRALITY = "increased-neutrality"  # (-, +)
POLARIZATION = "polarization"  # (+, -)
BENEFICIAL = "beneficial"  # (-, -)
BORDERLINE = "axis-borderline"

QUADRANT_NUMBER = {HARMFUL: "I", NEUTRALITY: "II", BENEFICIAL: "III", POLARIZATION: "IV", BORDERLINE: "-"}


class UnsupportedShapeError(ValueError):
    pass


@dataclass(frozen=True)
class CoefficientPair:
    b_neg: float
    b_zero: float
    label: str = ""


@dataclass(frozen=True)
class RotatedPair:
    positivity: float
    neutrality: float
    label: str = ""


def _exact(pair: np.ndarray) -> np.ndarray:
    # closed form keeps the anchor cases exact instead of inheriting cos/sin rounding
    s = math.sqrt(0.5)
    b_neg, b_zero = pair[..., 0], pair[..., 1]
    return np.stack([-(b_neg + b_zero) * s, (b_zero - b_neg) * s], axis=-1)


def rotate_matrix(B) -> np.ndarray:
    """Rotate an m x 2 coefficient matrix (columns: lowest margin, middle margin)."""
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[1] != 2:
        raise UnsupportedShapeError(f"positivity-neutrality needs exactly two margins, got shape {B.shape}")
    return _exact(B)


def unrotate_matrix(D) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[1] != 2:
        raise UnsupportedShapeError(f"expected an m x 2 matrix, got shape {D.shape}")
    s = math.sqrt(0.5)
    pos, neu = D[:, 0], D[:, 1]
    return np.stack([-(pos + neu) * s, (neu - pos) * s], axis=1)


def to_positivity_neutrality(pair: CoefficientPair) -> RotatedPair:
    pos, neu = _exact(np.array([pair.b_neg, pair.b_zero]))
    return RotatedPair(float(pos), float(neu), pair.label)


def from_positivity_neutrality(rot: RotatedPair) -> CoefficientPair:
    b_neg, b_zero = unrotate_matrix([[rot.positivity, rot.neutrality]])[0]
    return CoefficientPair(float(b_neg), float(b_zero), rot.label)


def classify_quadrant(pair: CoefficientPair, tolerance: float = 1e-8) -> str:
    """Sign-grid reading of a pair; components within ``tolerance`` of 0 are borderline."""
    if abs(pair.b_neg) <= tolerance or abs(pair.b_zero) <= tolerance:
        return BORDERLINE
    if pair.b_neg > 0:
        return HARMFUL if pair.b_zero > 0 else POLARIZATION
    return NEUTRALITY if pair.b_zero > 0 else BENEFICIAL


@dataclass
class RankedEffect:
    label: str
    value: float
    rank: int
    lo: float | None = None
    hi: float | None = None


def rank_effects(rotated: Sequence[RotatedPair], axis: str = "positivity", descending: bool = True,
                 bands: dict | None = None) -> list[RankedEffect]:
    """Stable ordering on one axis; ``bands`` maps label -> (lo, hi) on that axis."""
    if axis not in ("positivity", "neutrality"):
        raise ValueError(f"unknown axis {axis!r}")
    values = [getattr(r, axis) for r in rotated]
    order = sorted(range(len(values)), key=lambda i: -values[i] if descending else values[i])
    out = []
    for rank, i in enumerate(order, start=1):
        lo = hi = None
        if bands and rotated[i].label in bands:
            lo, hi = bands[rotated[i].label]
        out.append(RankedEffect(rotated[i].label, values[i], rank, lo, hi))
    return out


def rotation_table(fit, ensemble=None, level: float = 0.95) -> pd.DataFrame:
    """One row per design column: per-margin effects, rotated coordinates, quadrant.

    Effects are the per-margin totals ``beta_p + B_pj``.  With an ensemble
    of at least 20 successful replicates, percentile bands are added for
    both rotated coordinates.
    """
    from .inference import MIN_REPLICATES, percentile_interval

    gamma = fit.coefs.effective()
    if gamma.shape[1] != 2:
        raise UnsupportedShapeError(f"positivity-neutrality needs exactly two margins, got {gamma.shape[1]}")
    names = fit.column_names()
    kinds = [c["kind"] for c in fit.design["columns"]] if fit.design else ["main"] * len(names)
    rot = rotate_matrix(gamma)
    frame = pd.DataFrame({
        "label": names,
        "kind": kinds,
        "b_neg": gamma[:, 0],
        "b_zero": gamma[:, 1],
        "positivity": rot[:, 0],
        "neutrality": rot[:, 1],
        "quadrant": [classify_quadrant(CoefficientPair(b0, b1)) for b0, b1 in gamma],
    })
    frame["quadrant_number"] = frame["quadrant"].map(QUADRANT_NUMBER)
    if ensemble is not None and len(ensemble.successes) >= MIN_REPLICATES:
        draws = np.stack([rotate_matrix(g) for g in ensemble.effective_draws()])  # S x P x 2
        for a, axis in enumerate(("positivity", "neutrality")):
            bands = [percentile_interval(draws[:, p, a], level=level) for p in range(len(names))]
            frame[f"{axis}_lo"] = [b[0] for b in bands]
            frame[f"{axis}_hi"] = [b[1] for b in bands]
    return frame


def ranking_table(table: pd.DataFrame, kind: str | None = None, descending: bool = True) -> pd.DataFrame:
    """Long-format rankings on both axes, optionally restricted to ``"lhu"`` or fixed covariates."""
    if kind == "lhu":
        table = table[table["kind"] == "lhu"]
    elif kind is not None:
        table = table[table["kind"] != "lhu"]
    if table.empty:
        raise ValueError("nothing to rank")
    has_bands = "positivity_lo" in table.columns
    frames = []
    for axis in ("positivity", "neutrality"):
        pairs = [RotatedPair(p, q, lab) for p, q, lab in zip(table["positivity"], table["neutrality"], table["label"])]
        bands = None
        if has_bands:
            bands = dict(zip(table["label"], zip(table[f"{axis}_lo"], table[f"{axis}_hi"])))
        ranked = rank_effects(pairs, axis, descending, bands)
        rows = {"axis": axis, "rank": [r.rank for r in ranked], "label": [r.label for r in ranked],
                "value": [r.value for r in ranked]}
        if has_bands:
            rows["lo"] = [r.lo for r in ranked]
            rows["hi"] = [r.hi for r in ranked]
        frames.append(pd.DataFrame(rows))
    return pd.concat(frames, ignore_index=True)
