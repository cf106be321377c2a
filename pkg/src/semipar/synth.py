"""Synthetic survey populations with known cumulative-logit coefficients.

Units are spread over LHU x sex x age-class strata, every LHU belongs to a
region, and responses are drawn from the semi-parallel model evaluated at a
stored ground truth.  The truth is kept as a :class:`ModelFit` so recovery
checks can compare it with a fitted model column by column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .core import CoefficientSet, OrdinalDataset, linear_predictor_matrix, rearranged_probabilities
from .design import DesignMatrix, DesignSpec, VariableSpec, design_from_spec
from .optimizer import HyperParams, ModelFit

SEXES = ("M", "F")
AGE_CLASSES = ("18-34", "35-49", "50-69")
MAX_INVALID_FRACTION = 1e-3


class GenerationError(ValueError):
    pass


@dataclass
class PopulationConfig:
    """Knobs for :func:`generate`.

    Coefficient scales refer to the linear predictor rather than single
    coefficients: a block with ``m`` columns draws each coefficient with
    standard deviation ``scale / sqrt(m)``.  LHU indicators are one-hot, so
    their scales apply per coefficient.
    """

    n: int = 2000
    L: int = 10
    n_regions: int = 3
    binaries: tuple = ("chronic", "shared_living", "employed")
    numerics: tuple = ("fragility", "pm25")
    stratum_covariates: bool = True  # sex and age class enter the design
    include_lhu: bool = True
    interactions: bool = True
    scaling: str = "standardize"
    categories: tuple = (-1, 0, 1)
    thresholds: tuple = (-1.0, 1.0)
    shared_scale: float = 1.0
    interaction_scale: float = 0.3
    lhu_scale: float = 0.4
    specific_scale: float = 0.3
    lhu_specific_scale: float = 0.25
    truth: CoefficientSet | None = None
    seed: int = 0

    def __post_init__(self):
        c = np.asarray(self.thresholds, dtype=float)
        if c.size != len(self.categories) - 1:
            raise GenerationError(f"need {len(self.categories) - 1} thresholds, got {c.size}")
        if np.any(np.diff(c) <= 0):
            raise GenerationError("thresholds must be strictly increasing")
        if self.n < 1 or self.L < 1 or self.n_regions < 1:
            raise GenerationError("n, L and n_regions must be positive")

    def variables(self) -> list:
        specs = []
        if self.stratum_covariates:
            specs += [VariableSpec("sex", "binary", SEXES), VariableSpec("age", "categorical", AGE_CLASSES)]
        specs += [VariableSpec(b, "binary") for b in self.binaries]
        specs += [VariableSpec(z, "numeric") for z in self.numerics]
        return specs

    def design_spec(self) -> DesignSpec:
        return DesignSpec(self.variables(), self.include_lhu, "lhu", lhu_labels(self.L), self.scaling,
                          self.interactions)


@dataclass
class SyntheticPopulation:
    dataset: OrdinalDataset
    design: DesignMatrix
    spec: DesignSpec
    truth: ModelFit
    probabilities: np.ndarray
    info: dict = field(default_factory=dict)


def lhu_labels(L: int) -> tuple:
    width = max(3, len(str(L)))
    return tuple(f"LHU{i + 1:0{width}d}" for i in range(L))


def region_of(L: int, n_regions: int) -> dict:
    """Contiguous blocks of LHUs per region, like administrative nesting."""
    labels = lhu_labels(L)
    return {lab: f"R{1 + i * n_regions // L}" for i, lab in enumerate(labels)}


def _strata_cells(config: PopulationConfig, rng: np.random.Generator) -> np.ndarray:
    """Stratum index per unit; every stratum gets one unit first when n allows it."""
    S = config.L * len(SEXES) * len(AGE_CLASSES)
    if config.n >= S:
        cells = np.concatenate([np.arange(S), rng.integers(0, S, size=config.n - S)])
    else:
        cells = rng.integers(0, S, size=config.n)
    return rng.permutation(cells)


def sample_records(config: PopulationConfig, rng: np.random.Generator) -> pd.DataFrame:
    cells = _strata_cells(config, rng)
    n_age = len(AGE_CLASSES)
    lhu_idx, rest = np.divmod(cells, len(SEXES) * n_age)
    sex_idx, age_idx = np.divmod(rest, n_age)
    labels = np.array(lhu_labels(config.L))[lhu_idx]
    regions = region_of(config.L, config.n_regions)
    records = {
        "lhu": labels,
        "region": [regions[lab] for lab in labels],
        "sex": np.array(SEXES)[sex_idx],
        "age": np.array(AGE_CLASSES)[age_idx],
    }
    for b in config.binaries:
        records[b] = rng.integers(0, 2, size=config.n)
    for z in config.numerics:
        records[z] = rng.standard_normal(config.n)
    return pd.DataFrame(records)


def random_truth(config: PopulationConfig, design: DesignMatrix, rng: np.random.Generator) -> CoefficientSet:
    J = len(config.categories) - 1
    kinds = np.array([c.kind for c in design.columns])
    P = kinds.size
    shared = np.zeros(P)
    specific = np.zeros((P, J))
    n_main = max(int((kinds == "main").sum()), 1)
    n_inter = max(int((kinds == "interaction").sum()), 1)
    n_fixed = max(int((kinds != "lhu").sum()), 1)
    for kind, shared_sd, specific_sd in (
        ("main", config.shared_scale / math.sqrt(n_main), config.specific_scale / math.sqrt(n_fixed)),
        ("interaction", config.interaction_scale / math.sqrt(n_inter), config.specific_scale / math.sqrt(n_fixed)),
        ("lhu", config.lhu_scale, config.lhu_specific_scale),
    ):
        m = kinds == kind
        shared[m] = rng.normal(0.0, shared_sd, size=m.sum())
        specific[m] = rng.normal(0.0, specific_sd, size=(m.sum(), J))
    return CoefficientSet(np.asarray(config.thresholds, dtype=float), shared, specific)


def _offending_scale(design: DesignMatrix, coefs: CoefficientSet, bad: np.ndarray) -> str:
    # the block whose margin differences move the most on the crossing rows names the culprit
    dB = np.diff(coefs.specific, axis=1)
    X = design.values[bad]
    lhu = np.array([c.is_lhu for c in design.columns], dtype=bool)
    spread_fixed = np.abs(X[:, ~lhu] @ dB[~lhu]).mean() if (~lhu).any() else 0.0
    spread_lhu = np.abs(X[:, lhu] @ dB[lhu]).mean() if lhu.any() else 0.0
    return "lhu_specific_scale" if spread_lhu > spread_fixed else "specific_scale"


def generate(config: PopulationConfig) -> SyntheticPopulation:
    """Draw one population; identical configs give identical populations."""
    rng = np.random.default_rng(config.seed)
    records = sample_records(config, rng)
    spec = config.design_spec()
    design = design_from_spec(records, spec)
    truth = config.truth if config.truth is not None else random_truth(config, design, rng)
    if truth.n_features != design.shape[1] or truth.n_margins != len(config.categories) - 1:
        raise GenerationError(
            f"truth has shape ({truth.n_features}, {truth.n_margins}), design needs "
            f"({design.shape[1]}, {len(config.categories) - 1})"
        )
    eta = linear_predictor_matrix(design.values, truth)
    probs, crossed = rearranged_probabilities(eta)
    frac = float(crossed.mean()) if crossed.size else 0.0
    if frac > MAX_INVALID_FRACTION:
        scale = _offending_scale(design, truth, crossed)
        raise GenerationError(
            f"{100 * frac:.2f}% of units fall outside the valid-probability region; reduce {scale}"
        )
    cdf = np.cumsum(probs, axis=1)[:, :-1]
    u = rng.random(config.n)
    y = (u[:, None] > cdf).sum(axis=1)
    data = OrdinalDataset(y, config.categories, records)
    fit = ModelFit(truth.copy(), HyperParams(0.0), [], True, 0, "none", categories=tuple(config.categories),
                   design=design.metadata())
    info = {"crossed_units": int(crossed.sum()), "seed": config.seed}
    data.info.update(info)
    return SyntheticPopulation(data, design, spec, fit, probs, info)


def empirical_probabilities(dataset: OrdinalDataset, cell_key=(), cell=None):
    """Observed class proportions per covariate cell.

    With ``cell`` given, returns the proportions of that cell as an array;
    otherwise a frame with one row per nonempty cell and a ``count`` column.
    """
    K = dataset.n_categories
    if dataset.n == 0:
        raise GenerationError("empty dataset")
    labels = dataset.stratum_labels(tuple(cell_key)) if cell_key else np.full(dataset.n, "all", dtype=object)
    if cell is not None:
        target = cell if isinstance(cell, str) else ":".join(str(c) for c in np.atleast_1d(cell))
        mask = labels == target
        if not mask.any():
            raise GenerationError(f"cell {target!r} is empty")
        return np.bincount(dataset.y[mask], minlength=K) / mask.sum()
    frame = pd.crosstab(pd.Series(labels, name="cell"), pd.Series(dataset.y, name="y"))
    frame = frame.reindex(columns=range(K), fill_value=0)
    counts = frame.sum(axis=1)
    out = frame.div(counts, axis=0)
    out.columns = [f"p[{c}]" for c in dataset.categories]
    out["count"] = counts
    return out.reset_index()
