"""
Distribution of a normalized duration conditioned on the duration before it.

Successive pairs ``(g0, g)`` are formed per stock inside one session and then
pooled. The pooled predecessors ``g0`` are split by rank into five groups of
near-equal size, and the density of the follower ``g`` is estimated per group
on one shared bin grid. Log ratios of the top group against the others
(``z`` curves) and the binned mean follower ``<g|g0>`` show whether long
durations follow long durations.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from durascale.densities import (
    DEFAULT_BINS_PER_DECADE,
    EmpiricalDensity,
    NormalizedSeries,
    estimate_density,
    log_edges,
)
from durascale.errors import EmptyGroup, EmptyInput, ParamError, TooFewSamples

logger = logging.getLogger(__name__)

GROUPS = 5
MIN_PAIRS = 1000
DEFAULT_G0_BINS = 20
LOW_CONFIDENCE = 50


@dataclass(frozen=True, eq=False)
class Pairs:
    """Successive normalized durations: ``g`` follows ``g0``."""

    g0: np.ndarray
    g: np.ndarray

    def __len__(self) -> int:
        return len(self.g0)

    @classmethod
    def of(cls, g0, g) -> "Pairs":
        g0, g = np.asarray(g0, dtype=float), np.asarray(g, dtype=float)
        if g0.shape != g.shape:
            raise ParamError(
                "g0 and g must have the same length", parameter="g", value=len(g)
            )
        return cls(g0, g)

    @classmethod
    def concat(cls, pairs: Sequence["Pairs"]) -> "Pairs":
        if not pairs:
            return cls(np.zeros(0), np.zeros(0))
        return cls(
            np.concatenate([p.g0 for p in pairs]), np.concatenate([p.g for p in pairs])
        )


def successive_pairs(series: NormalizedSeries) -> Pairs:
    """
    Pairs of neighbouring durations of one stock that share a session.

    A pair is dropped when a vanishing duration sat between its members in
    the raw series, so zeros never enter a pair.

    >>> from durascale.densities import normalize
    >>> from durascale.tape import ClassFilter, DurationSeries
    >>> s = DurationSeries.from_centis("1", ClassFilter.ALL, [100, 200, 0, 300, 400], [0, 0, 0, 0, 1])
    >>> p = successive_pairs(normalize(s))
    >>> (p.g0 * normalize(s).sigma).round(6).tolist(), (p.g * normalize(s).sigma).round(6).tolist()
    ([1.0], [2.0])
    """
    values = series.values
    adjacent = np.ones(max(len(values) - 1, 0), dtype=bool)
    if series.positions is not None:
        adjacent &= np.diff(series.positions) == 1
    if series.session_ids is not None:
        adjacent &= series.session_ids[1:] == series.session_ids[:-1]
    return Pairs(values[:-1][adjacent], values[1:][adjacent])


def partition_quintiles(values, min_samples: int = MIN_PAIRS) -> List[np.ndarray]:
    """
    Five index groups of near-equal size in increasing order of ``values``.

    Ranks come from a stable sort, so equal values may fall in neighbouring
    groups. When the size does not divide by five the extra elements go to
    the lowest groups.

    >>> [g.tolist() for g in partition_quintiles(list(range(11)), min_samples=1)]
    [[0, 1, 2], [3, 4], [5, 6], [7, 8], [9, 10]]
    """
    values = np.asarray(values, dtype=float)
    if len(values) < min_samples:
        raise TooFewSamples(
            f"{len(values)} values are too few to partition (need {min_samples})",
            count=len(values),
            required=min_samples,
        )
    order = np.argsort(values, kind="stable")
    return [group for group in np.array_split(order, GROUPS)]


def quintile_edges(values, partition: Sequence[np.ndarray]) -> np.ndarray:
    """The smallest value of each group above the first."""
    values = np.asarray(values, dtype=float)
    return np.array([values[group].min() for group in partition[1:]])


def conditional_densities(
    pairs: Pairs,
    partition: Sequence[np.ndarray],
    bins_per_decade: int = DEFAULT_BINS_PER_DECADE,
) -> List[EmpiricalDensity]:
    """
    Density of the follower ``g`` within each group of predecessors, all on
    the grid spanning the pooled followers.
    """
    if not len(pairs):
        raise EmptyInput("no pairs")
    edges = log_edges(float(pairs.g.min()), float(pairs.g.max()), bins_per_decade)
    densities = []
    for i, group in enumerate(partition, start=1):
        if not len(group):
            raise EmptyGroup(f"group Q{i} holds no pairs", group=i)
        densities.append(estimate_density(pairs.g[group], edges=edges))
    return densities


@dataclass(frozen=True, eq=False)
class ZCurve:
    """``z = ln[p(g|Q5) / p(g|Qi)]`` on the bins occupied in both groups."""

    group: int
    centers: np.ndarray
    z: np.ndarray
    counts: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"bin_center": self.centers, "z": self.z, "count": self.counts}
        )


def z_curves(densities: Sequence[EmpiricalDensity]) -> List[ZCurve]:
    """
    >>> d = estimate_density([1.0, 2.0, 4.0], bins_per_decade=5)
    >>> [float(np.abs(c.z).max()) for c in z_curves([d] * 5)]
    [0.0, 0.0, 0.0, 0.0]
    """
    top = densities[-1]
    curves = []
    for i, density in enumerate(densities[:-1], start=1):
        both = (top.counts > 0) & (density.counts > 0)
        curves.append(
            ZCurve(
                group=i,
                centers=top.centers[both],
                z=np.log(top.density[both] / density.density[both]),
                counts=np.minimum(top.counts[both], density.counts[both]),
            )
        )
    return curves


@dataclass(frozen=True, eq=False)
class MeanConditional:
    """Mean follower per logarithmic bin of the predecessor."""

    centers: np.ndarray
    mean: np.ndarray
    standard_error: np.ndarray
    count: np.ndarray
    low_confidence: np.ndarray
    grand_mean: float

    def spearman(self) -> Tuple[float, float]:
        """Rank correlation of bin center against mean follower and its p-value."""
        result = stats.spearmanr(self.centers, self.mean)
        return float(result.correlation), float(result.pvalue)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "g0": self.centers,
                "mean_g": self.mean,
                "standard_error": self.standard_error,
                "count": self.count,
                "low_confidence": self.low_confidence,
            }
        )


def mean_conditional(pairs: Pairs, g0_bins: int = DEFAULT_G0_BINS) -> MeanConditional:
    """
    ``<g|g0>`` on ``g0_bins`` logarithmic bins of ``g0``; empty bins are left
    out and bins with fewer than 50 pairs are flagged.

    >>> p = Pairs.of([1.0, 1.0, 10.0, 10.0], [2.0, 4.0, 5.0, 5.0])
    >>> m = mean_conditional(p, g0_bins=5)
    >>> m.mean.tolist(), m.grand_mean
    ([3.0, 5.0], 4.0)
    """
    if not len(pairs):
        raise EmptyInput("no pairs")
    if g0_bins < 5:
        raise ParamError("need at least 5 g0 bins", parameter="g0_bins", value=g0_bins)
    lo, hi = float(pairs.g0.min()), float(pairs.g0.max())
    if lo == hi:
        edges = log_edges(lo, hi, 1)
    else:
        edges = np.geomspace(lo, hi, g0_bins + 1)
        edges[0], edges[-1] = lo, hi
    index = np.clip(np.searchsorted(edges, pairs.g0, side="right") - 1, 0, len(edges) - 2)
    bins = len(edges) - 1
    count = np.bincount(index, minlength=bins)
    total = np.bincount(index, weights=pairs.g, minlength=bins)
    squares = np.bincount(index, weights=pairs.g**2, minlength=bins)
    keep = count > 0
    n = count[keep]
    mean = total[keep] / n
    with np.errstate(invalid="ignore", divide="ignore"):
        variance = np.where(n > 1, (squares[keep] - n * mean**2) / (n - 1), np.nan)
        standard_error = np.sqrt(np.maximum(variance, 0) / n)
    low = n < LOW_CONFIDENCE
    if low.any():
        logger.warning("%d g0 bins hold fewer than %d pairs", int(low.sum()), LOW_CONFIDENCE)
    return MeanConditional(
        centers=np.sqrt(edges[:-1] * edges[1:])[keep],
        mean=mean,
        standard_error=standard_error,
        count=n,
        low_confidence=low,
        grand_mean=float(pairs.g.mean()),
    )


@dataclass(frozen=True, eq=False)
class ConditionalProfile:
    quintile_edges: np.ndarray
    group_sizes: Tuple[int, ...]
    conditional_densities: List[EmpiricalDensity]
    z_curves: List[ZCurve]
    mean_conditional: MeanConditional

    @property
    def grand_mean(self) -> float:
        return self.mean_conditional.grand_mean

    def to_dict(self):
        rho, p = self.mean_conditional.spearman()
        return {
            "quintile_edges": self.quintile_edges.tolist(),
            "group_sizes": list(self.group_sizes),
            "grand_mean": self.grand_mean,
            "spearman": {"correlation": rho, "pvalue": p},
        }

    def density_frame(self) -> pd.DataFrame:
        return pd.concat(
            [
                d.to_frame().assign(group=i)
                for i, d in enumerate(self.conditional_densities, start=1)
            ],
            ignore_index=True,
        )[["group", "bin_center", "density", "count"]]

    def z_frame(self) -> pd.DataFrame:
        return pd.concat(
            [c.to_frame().assign(group=c.group) for c in self.z_curves], ignore_index=True
        )[["group", "bin_center", "z", "count"]]


def conditional_profile(
    pairs: Pairs,
    bins_per_decade: int = DEFAULT_BINS_PER_DECADE,
    g0_bins: int = DEFAULT_G0_BINS,
    min_samples: int = MIN_PAIRS,
    partition: Optional[Sequence[np.ndarray]] = None,
) -> ConditionalProfile:
    partition = partition or partition_quintiles(pairs.g0, min_samples)
    densities = conditional_densities(pairs, partition, bins_per_decade)
    profile = ConditionalProfile(
        quintile_edges=quintile_edges(pairs.g0, partition),
        group_sizes=tuple(len(g) for g in partition),
        conditional_densities=densities,
        z_curves=z_curves(densities),
        mean_conditional=mean_conditional(pairs, g0_bins),
    )
    logger.info(
        "conditional profile over %d pairs, group sizes %s", len(pairs), profile.group_sizes
    )
    return profile
