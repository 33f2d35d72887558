"""Spatial autocorrelation, what-if re-rating, and risk-resilience labels.

Queen contiguity joins lattice cells sharing an edge or a vertex. Global
autocorrelation of a cell field follows the standard row-standardized
statistic with significance from a seeded permutation test (the analytic
normal approximation is deliberately not used).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import DataError, substream_rng
from .features import FeatureMatrix, align_directions, feature_index
from .geodata import Grid

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# spatial weights

@dataclass
class SpatialWeights:
    n: int
    neighbors: list[list[int]]    # per cell, sorted neighbor ids
    weights: list[list[float]]    # row-standardized, parallel to neighbors

    def nonempty_rows(self) -> list[int]:
        return [i for i in range(self.n) if self.neighbors[i]]


def queen_weights(grid: Grid, exclude: set[int] | None = None) -> SpatialWeights:
    """8-neighborhood on the cell lattice, restricted to unmasked cells,
    row-standardized. Excluded cells get empty rows."""
    exclude = exclude or set()
    n = len(grid.cells)
    n_rows, n_cols = grid.n_rows, grid.n_cols
    neighbors: list[list[int]] = [[] for _ in range(n)]
    for cell in grid.cells:
        if cell.id in exclude:
            continue
        found = []
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                r, c = cell.row + dr, cell.col + dc
                if 0 <= r < n_rows and 0 <= c < n_cols:
                    j = r * n_cols + c
                    if j not in exclude:
                        found.append(j)
        neighbors[cell.id] = sorted(found)
    weights = []
    for ids in neighbors:
        if ids:
            w = 1.0 / len(ids)
            weights.append([w] * len(ids))
        else:
            weights.append([])
    isolated = [i for i in range(n) if not neighbors[i] and i not in exclude]
    if isolated:
        logger.warning("queen_weights: cells %s have no unmasked neighbors "
                       "and are excluded from spatial statistics", isolated)
    return SpatialWeights(n, neighbors, weights)


# ---------------------------------------------------------------------------
# global spatial autocorrelation

@dataclass
class MoranResult:
    i: float
    p_value: float
    n: int
    permutations: int


def morans_i(values, w: SpatialWeights, permutations: int = 999,
             seed: int = 0) -> MoranResult:
    """Row-standardized global statistic with a one-sided (greater)
    permutation p-value. Cells with empty weight rows are dropped from all
    sums; a constant field is rejected."""
    values = np.asarray(values, dtype=float)
    if len(values) != w.n:
        raise DataError(f"value count {len(values)} != weight rows {w.n}")
    included = w.nonempty_rows()
    if len(included) < 2:
        raise DataError("need at least 2 cells with neighbors")
    pos = {cell: idx for idx, cell in enumerate(included)}
    x = values[included]
    if np.all(x == x[0]):
        raise DataError("constant field has zero variance; statistic undefined")

    pairs = []  # (i_idx, j_idx, weight), both endpoints included
    for cell in included:
        for j, wij in zip(w.neighbors[cell], w.weights[cell]):
            if j in pos:
                pairs.append((pos[cell], pos[j], wij))
    rows = np.array([p[0] for p in pairs])
    cols = np.array([p[1] for p in pairs])
    wij = np.array([p[2] for p in pairs])
    s0 = wij.sum()
    n = len(included)

    def statistic(vec: np.ndarray) -> float:
        dev = vec - vec.mean()
        num = float((wij * dev[rows] * dev[cols]).sum())
        den = float((dev ** 2).sum())
        return (n / s0) * num / den

    observed = statistic(x)
    rng = substream_rng(seed, "moran-permutations")
    hits = 0
    for _ in range(permutations):
        if statistic(rng.permutation(x)) >= observed:
            hits += 1
    p_value = (1.0 + hits) / (1.0 + permutations)
    return MoranResult(observed, p_value, n, permutations)


# ---------------------------------------------------------------------------
# urban-development scenarios

@dataclass
class ScenarioSpec:
    levels: set[int] = field(default_factory=lambda: {1})
    multipliers: dict[str, float] = field(default_factory=dict)
    seed_policy: str = "reuse"  # "reuse" keeps the baseline seed for reruns

    def __post_init__(self):
        for name, mult in self.multipliers.items():
            feature_index(name)  # raises on unknown feature
            if mult <= 0:
                raise DataError(f"scenario multiplier for {name!r} must be > 0, "
                                f"got {mult}")
        if self.seed_policy not in ("reuse", "substream"):
            raise DataError(f"unknown seed_policy {self.seed_policy!r}")


def apply_scenario(rf: FeatureMatrix, cell_levels, spec: ScenarioSpec) -> FeatureMatrix:
    """Multiply raw feature values of cells in the targeted levels; the
    aligned matrix is rebuilt from the modified raw values."""
    cell_levels = np.asarray(cell_levels)
    if len(cell_levels) != rf.m:
        raise DataError("level vector length does not match feature matrix")
    raw = rf.raw.copy()
    targeted = np.isin(cell_levels, sorted(spec.levels))
    for name, mult in spec.multipliers.items():
        raw[targeted, feature_index(name)] *= mult
    out = align_directions(raw)
    out.cell_ids = rf.cell_ids.copy()
    out.imputed = rf.imputed.copy()  # raw was already imputed upstream
    return out


def rerate_and_compare(rf_before: FeatureMatrix, rf_after: FeatureMatrix,
                       rate_fn) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Re-run the full rating pipeline on both matrices with identical
    config + seed and difference the per-cell levels.

    ``rate_fn(rf) -> per-cell levels`` must encapsulate scale -> encode ->
    cluster -> rate with a fixed seed so deltas reflect the data change,
    not stochastic drift. Returns (delta, levels_before, levels_after).
    """
    if rf_before.m != rf_after.m or not np.array_equal(rf_before.cell_ids,
                                                       rf_after.cell_ids):
        raise DataError("scenario comparison requires the same grid")
    levels_before = np.asarray(rate_fn(rf_before))
    levels_after = np.asarray(rate_fn(rf_after))
    return levels_after - levels_before, levels_before, levels_after


# ---------------------------------------------------------------------------
# combined resilience-risk categories

RISK_BINS = {1: "low", 2: "low", 3: "medium", 4: "medium", 5: "high", 6: "high"}
RESILIENCE_BINS = {1: "poor", 2: "poor", 3: "medium", 4: "good", 5: "good"}
SPECIAL_ATTENTION = frozenset({"high-poor", "high-medium", "medium-poor"})


@dataclass(frozen=True)
class RiskResilienceLabel:
    risk_bin: str
    resilience_bin: str

    @property
    def label(self) -> str:
        return f"{self.risk_bin}-{self.resilience_bin}"

    @property
    def special_attention(self) -> bool:
        return self.label in SPECIAL_ATTENTION


def combine_risk_resilience(risk_levels, resilience_levels) -> list[RiskResilienceLabel]:
    """Map (flood risk 1-6, resilience 1-5) to the nine combined categories;
    high-poor, high-medium and medium-poor carry the special-attention flag."""
    risk_levels = list(risk_levels)
    resilience_levels = list(resilience_levels)
    if len(risk_levels) != len(resilience_levels):
        raise DataError("risk and resilience level vectors differ in length")
    out = []
    for i, (risk, res) in enumerate(zip(risk_levels, resilience_levels)):
        risk, res = int(risk), int(res)
        if risk not in RISK_BINS:
            raise DataError(f"cell {i}: flood risk level {risk} outside 1..6")
        if res not in RESILIENCE_BINS:
            raise DataError(f"cell {i}: resilience level {res} outside 1..5")
        out.append(RiskResilienceLabel(RISK_BINS[risk], RESILIENCE_BINS[res]))
    return out
