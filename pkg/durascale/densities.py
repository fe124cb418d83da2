"""
Normalized durations, log-binned densities, empirical survival functions and
the cross-stock collapse statistic.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from durascale.errors import (
    DegenerateSeries,
    DomainError,
    EmptyInput,
    ParamError,
    TooFewEnsembles,
    TooFewSamples,
)
from durascale.synth import rng
from durascale.tape import DurationSeries

logger = logging.getLogger(__name__)

DEFAULT_BINS_PER_DECADE = 25
MIN_COLLAPSE_SAMPLES = 100
BULK_THRESHOLD = 4.0
CALIBRATION_REPLICATES = 500
CALIBRATION_SIZE = 500


@dataclass(frozen=True, eq=False)
class NormalizedSeries:
    """
    Positive durations divided by their sample standard deviation.

    ``positions`` index each value in the source series (zeros removed) and
    ``session_ids`` carry the source sessions, so adjacency survives the
    removal of vanishing durations. Pooled series have ``sigma=None``.
    """

    values: np.ndarray
    sigma: Optional[float]
    source: Tuple[str, str]
    positions: Optional[np.ndarray] = None
    session_ids: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.values)

    @property
    def label(self) -> str:
        return "/".join(self.source)


def normalize(
    series: Union[DurationSeries, Sequence[float], np.ndarray],
    source: Optional[Tuple[str, str]] = None,
) -> NormalizedSeries:
    """
    Divides the positive durations by their sample (n-1) standard deviation.

    Raw arrays of durations in seconds are accepted as well as
    :py:class:`~durascale.tape.DurationSeries`.

    >>> s = normalize([1.0, 2.0, 3.0])
    >>> s.sigma, s.values.tolist()
    (1.0, [1.0, 2.0, 3.0])
    >>> normalize([0.0, 2.0])
    Traceback (most recent call last):
    ...
    durascale.errors.DegenerateSeries: need at least 2 positive durations, got 1
    """
    if isinstance(series, DurationSeries):
        tau = series.durations
        session_ids = series.session_ids
        source = source or (series.stock_code, series.trade_class_filter.value)
    else:
        tau = np.asarray(series, dtype=float)
        session_ids = None
        source = source or ("sample", "all")
    if np.any(tau < 0):
        raise DomainError("durations must be non-negative", value=float(tau.min()))
    positions = np.flatnonzero(tau > 0)
    if len(positions) < 2:
        raise DegenerateSeries(
            f"need at least 2 positive durations, got {len(positions)}", source=source
        )
    positive = tau[positions]
    sigma = float(np.std(positive, ddof=1))
    if sigma == 0:
        raise DegenerateSeries("all positive durations are equal", source=source)
    return NormalizedSeries(
        values=positive / sigma,
        sigma=sigma,
        source=source,
        positions=positions,
        session_ids=None if session_ids is None else session_ids[positions],
    )


def pool(ensembles: Sequence[NormalizedSeries]) -> NormalizedSeries:
    """
    Concatenates normalized series into one ensemble.

    >>> a = normalize([1.0, 2.0, 3.0])
    >>> len(pool([a, a]))
    6
    """
    if not ensembles:
        raise TooFewEnsembles("nothing to pool", count=0)
    classes = {e.source[1] for e in ensembles}
    return NormalizedSeries(
        values=np.concatenate([e.values for e in ensembles]),
        sigma=None,
        source=("pooled", classes.pop() if len(classes) == 1 else "mixed"),
    )


def bulk_fraction(values, threshold: float = BULK_THRESHOLD) -> float:
    """
    Fraction of normalized durations below ``threshold``.

    >>> bulk_fraction([1.0, 2.0, 5.0, 0.5])
    0.75
    """
    values = np.asarray(values, dtype=float)
    if not len(values):
        raise EmptyInput("no values")
    return float(np.mean(values < threshold))


def log_edges(lo: float, hi: float, bins_per_decade: int = DEFAULT_BINS_PER_DECADE) -> np.ndarray:
    """
    Logarithmic bin edges running exactly from ``lo`` to ``hi``.

    A point mass (``lo == hi``) gets a single bin one step wide, centred
    geometrically on the value.

    >>> [round(e, 6) for e in log_edges(1.0, 100.0, 2).tolist()]
    [1.0, 3.162278, 10.0, 31.622777, 100.0]
    >>> edges = log_edges(2.0, 2.0, 10)
    >>> len(edges), bool(edges[0] < 2.0 < edges[1])
    (2, True)
    """
    if bins_per_decade < 1:
        raise ParamError(
            "bins_per_decade must be at least 1",
            parameter="bins_per_decade",
            value=bins_per_decade,
        )
    if not 0 < lo <= hi:
        raise DomainError("bin edges need 0 < lo <= hi", value=float(lo))
    if lo == hi:
        step = 10 ** (0.5 / bins_per_decade)
        return np.array([lo / step, lo * step])
    bins = max(1, math.ceil(math.log10(hi / lo) * bins_per_decade - 1e-9))
    edges = np.logspace(math.log10(lo), math.log10(hi), bins + 1)
    edges[0], edges[-1] = lo, hi
    return edges


@dataclass(frozen=True, eq=False)
class EmpiricalDensity:
    bin_edges: np.ndarray
    centers: np.ndarray
    density: np.ndarray
    counts: np.ndarray
    total_n: int

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def occupied(self) -> np.ndarray:
        return self.counts > 0

    @property
    def out_of_range(self) -> float:
        """Mass of the sample that fell outside the edges."""
        return 1 - int(self.counts.sum()) / self.total_n

    def mass(self) -> float:
        return float(np.sum(self.density * self.widths))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"bin_center": self.centers, "density": self.density, "count": self.counts}
        )


def estimate_density(
    values,
    bins_per_decade: int = DEFAULT_BINS_PER_DECADE,
    edges: Optional[np.ndarray] = None,
) -> EmpiricalDensity:
    """
    Histogram on logarithmic bins, normalized by the whole sample.

    Parameters
    ----------
    values : array_like
        Positive values.
    bins_per_decade : int
        Bin density used when ``edges`` is not given.
    edges : numpy.ndarray, optional
        Explicit ascending edges; values outside them count towards
        :py:attr:`EmpiricalDensity.out_of_range`.

    Examples
    --------
    >>> d = estimate_density([3.0] * 5, bins_per_decade=10)
    >>> d.counts.tolist(), round(d.mass(), 12)
    ([5], 1.0)
    """
    values = np.asarray(values, dtype=float)
    if not len(values):
        raise EmptyInput("cannot estimate a density from no values")
    if np.any(values <= 0):
        raise DomainError(
            "log-binned densities need positive values", value=float(values.min())
        )
    if edges is None:
        edges = log_edges(float(values.min()), float(values.max()), bins_per_decade)
    edges = np.asarray(edges, dtype=float)
    counts, _ = np.histogram(values, bins=edges)
    n = len(values)
    return EmpiricalDensity(
        bin_edges=edges,
        centers=np.sqrt(edges[:-1] * edges[1:]),
        density=counts / (n * np.diff(edges)),
        counts=counts,
        total_n=n,
    )


def rescale_density(density: EmpiricalDensity, sigma: float) -> EmpiricalDensity:
    """
    Change of variables ``ρ(g) = σ f(gσ)`` from a density of raw durations to
    the density of normalized durations ``g = τ/σ``.
    """
    edges = density.bin_edges / sigma
    return EmpiricalDensity(
        bin_edges=edges,
        centers=density.centers / sigma,
        density=density.density * sigma,
        counts=density.counts,
        total_n=density.total_n,
    )


@dataclass(frozen=True, eq=False)
class EmpiricalCCDF:
    """
    Right-continuous empirical survival function ``C(x) = #(values > x) / n``.

    >>> c = estimate_ccdf([1.0, 2.0, 3.0])
    >>> c(0.0), round(c(1.5), 6), c(3.0)
    (1.0, 0.666667, 0.0)
    """

    sorted_values: np.ndarray

    def __call__(self, x):
        n = len(self.sorted_values)
        above = n - np.searchsorted(self.sorted_values, x, side="right")
        out = above / n
        return float(out) if np.ndim(x) == 0 else out

    def to_frame(self) -> pd.DataFrame:
        x = np.unique(self.sorted_values)
        return pd.DataFrame({"x": x, "ccdf": self(x)})


def estimate_ccdf(values) -> EmpiricalCCDF:
    values = np.asarray(values, dtype=float)
    if not len(values):
        raise EmptyInput("cannot estimate a survival function from no values")
    return EmpiricalCCDF(np.sort(values, kind="stable"))


def ks_critical_value(n1: int, n2: int, alpha: float = 0.01, comparisons: int = 1) -> float:
    """
    Asymptotic two-sample Kolmogorov-Smirnov critical value at level
    ``alpha``, Bonferroni-adjusted for ``comparisons`` simultaneous tests.

    >>> round(ks_critical_value(100, 100), 4)
    0.2302
    """
    level = alpha / comparisons
    c = math.sqrt(-math.log(level / 2) / 2)
    return c * math.sqrt((n1 + n2) / (n1 * n2))


def _largest_spread(samples: np.ndarray) -> float:
    # max over g of max_i F_i(g) - min_i F_i(g) for the rows of ``samples``
    k, m = samples.shape
    flat = samples.ravel()
    order = np.argsort(flat, kind="stable")
    ordered = flat[order]
    groups = np.repeat(np.arange(k), m)[order]
    cdf = np.cumsum(groups[None, :] == np.arange(k)[:, None], axis=1) / m
    # evaluate only after the last of a run of ties
    last = np.r_[ordered[1:] != ordered[:-1], True]
    cdf = cdf[:, last]
    return float((cdf.max(axis=0) - cdf.min(axis=0)).max())


def calibrate_collapse(
    ensembles: Sequence[NormalizedSeries],
    alpha: float = 0.01,
    replicates: int = CALIBRATION_REPLICATES,
    seed: int = 0,
    size: int = CALIBRATION_SIZE,
) -> float:
    """
    Family-wise critical value of the scaled pairwise KS distance
    ``sqrt(n_i n_j / (n_i + n_j)) D_ij`` under the hypothesis that every
    ensemble is drawn from the pooled one.

    Each replicate resamples ``len(ensembles)`` ensembles of equal size
    ``min(size, smallest ensemble)`` with replacement from the pooled values
    and records their largest scaled pairwise distance. When the inputs were
    normalized, every resampled ensemble is divided by its own sample
    standard deviation first. The result is the ``1 - alpha`` quantile of
    those maxima, which covers the dependence between pairs and the noise of
    each ensemble's own ``σ``. The pooled values are sorted before
    resampling, so the result does not depend on the order of ``ensembles``.
    """
    if replicates < 1:
        raise ParamError("replicates must be positive", parameter="replicates", value=replicates)
    if not 0 < alpha < 1:
        raise ParamError("alpha must lie in (0, 1)", parameter="alpha", value=alpha)
    pooled = np.sort(np.concatenate([e.values for e in ensembles]), kind="stable")
    renormalize = all(e.sigma is not None for e in ensembles)
    k = len(ensembles)
    m = min(size, min(len(e) for e in ensembles))
    generator = rng(seed)
    maxima = np.empty(replicates)
    for r in range(replicates):
        samples = pooled[generator.integers(0, len(pooled), size=(k, m))]
        if renormalize:
            samples = samples / np.std(samples, axis=1, ddof=1, keepdims=True)
        maxima[r] = math.sqrt(m / 2) * _largest_spread(samples)
    critical = float(np.quantile(maxima, 1 - alpha))
    logger.debug(
        "collapse critical value %.4g from %d replicates of %d x %d", critical, replicates, k, m
    )
    return critical


@dataclass(frozen=True, eq=False)
class CollapseReport:
    """
    Pairwise KS distances with one critical value per pair,
    ``scaled_critical_value * sqrt((n_i + n_j) / (n_i n_j))``.

    ``replicates`` is 0 when the critical values are Bonferroni bounds rather
    than resampled; ``seed`` is then ``None``.
    """

    labels: Tuple[str, ...]
    pairwise_ks: np.ndarray
    pooled_deviation: np.ndarray
    critical_values: np.ndarray
    alpha: float
    scaled_critical_value: float
    replicates: int
    seed: Optional[int]

    @property
    def max_ks(self) -> float:
        return float(self.pairwise_ks.max())

    @property
    def collapsed(self) -> bool:
        """Every pair stays below its own critical value."""
        off_diagonal = ~np.eye(len(self.labels), dtype=bool)
        return bool(np.all(self.pairwise_ks[off_diagonal] < self.critical_values[off_diagonal]))

    def to_dict(self):
        return {
            "labels": list(self.labels),
            "pairwise_ks": self.pairwise_ks.tolist(),
            "max_ks": self.max_ks,
            "pooled_deviation": dict(zip(self.labels, self.pooled_deviation.tolist())),
            "critical_values": self.critical_values.tolist(),
            "scaled_critical_value": self.scaled_critical_value,
            "alpha": self.alpha,
            "replicates": self.replicates,
            "seed": self.seed,
            "collapsed": self.collapsed,
        }


def collapse_report(
    ensembles: Sequence[NormalizedSeries],
    alpha: float = 0.01,
    min_samples: int = MIN_COLLAPSE_SAMPLES,
    replicates: int = CALIBRATION_REPLICATES,
    seed: int = 0,
) -> CollapseReport:
    """
    Pairwise two-sample KS distances between normalized series and the
    distance of each series to the pooled ensemble.

    The series collapse when every pair stays below its critical value. The
    critical values come from :py:func:`calibrate_collapse`, which holds the
    chance of rejecting ensembles drawn from one law at ``alpha`` for the
    whole family of pairs. With ``replicates=0`` they are Bonferroni-adjusted
    asymptotic bounds instead, which ignore the estimation of each ``σ``.
    """
    if len(ensembles) < 2:
        raise TooFewEnsembles(
            f"a collapse needs at least 2 ensembles, got {len(ensembles)}",
            count=len(ensembles),
        )
    for e in ensembles:
        if len(e) < min_samples:
            raise TooFewSamples(
                f"{e.label} holds {len(e)} values, fewer than {min_samples}",
                count=len(e),
                required=min_samples,
            )
    if replicates < 0:
        raise ParamError(
            "replicates must not be negative", parameter="replicates", value=replicates
        )
    k = len(ensembles)
    comparisons = k * (k - 1) // 2
    if replicates:
        scaled = calibrate_collapse(ensembles, alpha, replicates, seed)
    else:
        scaled = ks_critical_value(1, 1, alpha, comparisons) / math.sqrt(2)
        seed = None
    distances = np.zeros((k, k))
    critical = np.zeros((k, k))
    for i, j in itertools.combinations(range(k), 2):
        a, b = ensembles[i].values, ensembles[j].values
        d = stats.ks_2samp(a, b, method="asymp").statistic
        distances[i, j] = distances[j, i] = d
        critical[i, j] = critical[j, i] = scaled * math.sqrt((len(a) + len(b)) / (len(a) * len(b)))
    pooled = pool(ensembles).values
    deviation = np.array(
        [stats.ks_2samp(e.values, pooled, method="asymp").statistic for e in ensembles]
    )
    report = CollapseReport(
        labels=tuple(e.label for e in ensembles),
        pairwise_ks=distances,
        pooled_deviation=deviation,
        critical_values=critical,
        alpha=alpha,
        scaled_critical_value=scaled,
        replicates=replicates,
        seed=seed,
    )
    logger.info(
        "collapse over %d ensembles: max KS %.4g, collapsed=%s",
        k,
        report.max_ks,
        report.collapsed,
    )
    return report
