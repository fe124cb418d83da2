"""
Seeded synthetic durations and tapes.

All randomness flows through :py:func:`rng`, a ``numpy`` PCG64 generator
seeded explicitly; the algorithm identifier :py:data:`PRNG_ALGORITHM` is
recorded in run manifests. Uniform variates are drawn from the open interval
``(0, 1)`` so that the inversion formulas never hit an endpoint.
"""
from __future__ import annotations

import datetime as dt
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd
from scipy import special

from durascale.errors import ParamError
from durascale.models import QExpParams, WeibullParams
from durascale.tape import (
    ClassFilter,
    DurationSeries,
    SessionCalendar,
    TradeClass,
    format_clock,
)

logger = logging.getLogger(__name__)

PRNG_ALGORITHM = "numpy.PCG64"
BURN_IN = 1000


class GeneratorModel(Enum):
    WEIBULL = "weibull"
    QEXPONENTIAL = "qexp"
    ACD = "acd"


class Innovation(Enum):
    EXPONENTIAL = "exponential"
    WEIBULL = "weibull"


@dataclass(frozen=True)
class ACDConfig:
    """
    Parameters of the ACD(1,1) recursion ``ψ_i = ω + a τ_(i-1) + b ψ_(i-1)``,
    ``τ_i = ψ_i ε_i`` with unit-mean innovations ``ε``. ``shape`` is the
    Weibull shape of the innovations when ``innovation`` is Weibull.

    >>> ACDConfig(omega=1.0, a=0.5, b=0.5)
    Traceback (most recent call last):
    ...
    durascale.errors.ParamError: ACD requires a + b < 1 for stationarity, got 1.0
    """

    omega: float
    a: float
    b: float
    innovation: Innovation = Innovation.EXPONENTIAL
    shape: float = 1.0

    def __post_init__(self):
        if not self.omega > 0:
            raise ParamError("ACD requires omega > 0", parameter="omega", value=self.omega)
        for name in ("a", "b"):
            if not getattr(self, name) >= 0:
                raise ParamError(
                    f"ACD requires {name} >= 0", parameter=name, value=getattr(self, name)
                )
        if not self.a + self.b < 1:
            raise ParamError(
                f"ACD requires a + b < 1 for stationarity, got {self.a + self.b}",
                parameter="a+b",
                value=self.a + self.b,
            )
        if not self.shape > 0:
            raise ParamError("innovation shape must be positive", "shape", self.shape)

    @property
    def stationary_mean(self) -> float:
        return self.omega / (1 - self.a - self.b)


@dataclass(frozen=True)
class GeneratorConfig:
    model: GeneratorModel
    n: int
    seed: int
    params: Optional[Union[WeibullParams, QExpParams]] = None
    acd: Optional[ACDConfig] = None

    def __post_init__(self):
        if self.n < 1:
            raise ParamError("a sample needs n >= 1", parameter="n", value=self.n)
        expected = {
            GeneratorModel.WEIBULL: WeibullParams,
            GeneratorModel.QEXPONENTIAL: QExpParams,
        }.get(self.model)
        if expected is not None and not isinstance(self.params, expected):
            raise ParamError(
                f"{self.model.value} needs {expected.__name__}",
                parameter="params",
                value=self.params,
            )
        if self.model is GeneratorModel.ACD and self.acd is None:
            raise ParamError("acd needs an ACDConfig", parameter="acd", value=None)


def rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def uniforms(generator: np.random.Generator, n: int) -> np.ndarray:
    return generator.uniform(np.nextafter(0.0, 1.0), 1.0, size=n)


def weibull_quantile(params: WeibullParams, u):
    """
    Inverse of the Weibull survival: ``g = (-ln u / α)^(1/β)``.

    >>> round(weibull_quantile(WeibullParams(alpha=1.0, beta=1.0), 0.5), 6)
    0.693147
    """
    u = np.asarray(u, dtype=float)
    g = np.power(-np.log(u) / params.alpha, 1 / params.beta)
    return float(g) if g.ndim == 0 else g


def qexp_quantile(params: QExpParams, u):
    """
    Inverse of the q-exponential survival: ``g = (u^(-(q-1)) - 1) / ((q-1) μ)``.

    >>> qexp_quantile(QExpParams(mu=1.0, q=1.5), 1.0)
    0.0
    >>> round(qexp_quantile(QExpParams(mu=1.0, q=1.5), 0.5), 6)
    0.828427
    """
    u = np.asarray(u, dtype=float)
    shape = params.q - 1
    g = np.expm1(-shape * np.log(u)) / (shape * params.mu)
    return float(g) if g.ndim == 0 else g


def sample_weibull(params: WeibullParams, n: int, seed: int) -> np.ndarray:
    return weibull_quantile(params, uniforms(rng(seed), n))


def sample_qexp(params: QExpParams, n: int, seed: int) -> np.ndarray:
    if not isinstance(params, QExpParams):
        raise ParamError("sample_qexp needs QExpParams", parameter="params", value=params)
    return qexp_quantile(params, uniforms(rng(seed), n))


def _innovations(generator: np.random.Generator, acd: ACDConfig, n: int) -> np.ndarray:
    exponential = -np.log(uniforms(generator, n))
    if acd.innovation is Innovation.EXPONENTIAL:
        return exponential
    return np.power(exponential, 1 / acd.shape) / special.gamma(1 + 1 / acd.shape)


def sample_acd(config: GeneratorConfig) -> np.ndarray:
    """
    Durations from the ACD(1,1) recursion, started at the stationary mean with
    the first 1000 steps discarded.

    >>> config = GeneratorConfig(
    ...     GeneratorModel.ACD, n=5, seed=0, acd=ACDConfig(omega=2.0, a=0.0, b=0.0)
    ... )
    >>> bool(np.all(sample_acd(config) > 0))
    True
    """
    acd = config.acd
    if acd is None:
        raise ParamError("sample_acd needs an ACDConfig", parameter="acd", value=None)
    total = config.n + BURN_IN
    eps = _innovations(rng(config.seed), acd, total)
    tau = np.empty(total)
    omega, a, b = acd.omega, acd.a, acd.b
    psi = previous = acd.stationary_mean
    for i in range(total):
        psi = omega + a * previous + b * psi
        previous = tau[i] = psi * eps[i]
    return tau[BURN_IN:]


def generate(config: GeneratorConfig) -> np.ndarray:
    if config.model is GeneratorModel.WEIBULL:
        return sample_weibull(config.params, config.n, config.seed)
    if config.model is GeneratorModel.QEXPONENTIAL:
        return sample_qexp(config.params, config.n, config.seed)
    return sample_acd(config)


def _place(
    series: DurationSeries, calendar: SessionCalendar
) -> tuple:
    """Session slot and centisecond offset of every fabricated trade."""
    longest = max(calendar.length(i) for i in range(len(calendar)))
    slots: List[np.ndarray] = []
    offsets: List[np.ndarray] = []
    slot = -1
    dropped = 0
    if not len(series):
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    breaks = np.flatnonzero(np.diff(series.session_ids)) + 1
    for group in np.split(series.centis, breaks):
        slot += 1
        stamps = np.concatenate([[0], np.cumsum(group)])
        if stamps[-1] <= calendar.length(slot):
            slots.append(np.full(len(stamps), slot))
            offsets.append(stamps)
            continue
        group_slots, group_offsets = [slot], [0]
        t = 0
        for d in group.tolist():
            if t + d <= calendar.length(slot):
                t += d
            else:
                slot += 1
                if d > longest:
                    dropped += 1
                    t = 0
                else:
                    while calendar.length(slot) < d:
                        slot += 1
                    group_slots.append(slot)
                    group_offsets.append(0)
                    t = d
            group_slots.append(slot)
            group_offsets.append(t)
        slots.append(np.array(group_slots))
        offsets.append(np.array(group_offsets))
    if dropped:
        logger.warning(
            "%s: %d durations longer than any session were dropped", series.stock_code, dropped
        )
    return np.concatenate(slots).astype(np.int64), np.concatenate(offsets).astype(np.int64)


def fabricate_tape(
    series: Iterable[DurationSeries],
    calendar: Optional[SessionCalendar] = None,
    start: dt.date = dt.date(2003, 1, 2),
    partial_fill_rate: float = 0.0,
    seed: Optional[int] = None,
) -> str:
    """
    Writes a CSV tape whose extraction gives back ``series``.

    Each group of durations sharing a session id opens a new session; sessions
    fill the calendar from ``start`` over business days. A duration that does
    not fit in the rest of its session starts the next one, so no duration is
    ever measured across a session boundary. Trades of a filled series are
    ``F``, of a partially filled series ``P``; trades of an all-trades series
    are ``P`` with probability ``partial_fill_rate`` (which needs ``seed``).

    Only durations are written, so a session that held a single trade, and
    with it no duration, leaves no trace: the extracted series has the same
    durations but an ``n_trades`` smaller by the number of such sessions.

    >>> s = DurationSeries.from_centis("000001", ClassFilter.ALL, [150, 250])
    >>> print(fabricate_tape([s]), end="")
    stock,date,time,class
    000001,2003-01-02,09:30:00.00,F
    000001,2003-01-02,09:30:01.50,F
    000001,2003-01-02,09:30:04.00,F
    """
    calendar = calendar or SessionCalendar.default()
    generator = None
    if partial_fill_rate > 0:
        if seed is None:
            raise ParamError("random trade classes need a seed", parameter="seed", value=None)
        generator = rng(seed)
    opens = np.array([o for o, _ in calendar.sessions], dtype=np.int64)
    frames = []
    for s in series:
        slots, offsets = _place(s, calendar)
        days = np.busday_offset(
            np.datetime64(start, "D"), slots // len(calendar), roll="forward"
        )
        stamps = opens[slots % len(calendar)] + offsets
        trade_class = s.trade_class_filter.trade_class or TradeClass.FILLED
        classes = np.full(len(slots), trade_class.value, dtype=object)
        if generator is not None and s.trade_class_filter is ClassFilter.ALL:
            partial = generator.random(len(slots)) < partial_fill_rate
            classes[partial] = TradeClass.PARTIALLY_FILLED.value
        frames.append(
            pd.DataFrame(
                {
                    "stock": s.stock_code,
                    "date": days.astype(str),
                    "time": _clock_column(stamps),
                    "class": classes,
                }
            )
        )
    if not frames:
        return "stock,date,time,class\n"
    return pd.concat(frames, ignore_index=True).to_csv(index=False, lineterminator="\n")


def _clock_column(stamps: np.ndarray) -> List[str]:
    if len(stamps) < 64:
        return [format_clock(c) for c in stamps]
    seconds, cc = np.divmod(stamps, 100)
    minutes, ss = np.divmod(seconds, 60)
    hh, mm = np.divmod(minutes, 60)
    frame = pd.DataFrame({"h": hh, "m": mm, "s": ss, "c": cc}).astype(str)
    return (
        frame["h"].str.zfill(2)
        + ":"
        + frame["m"].str.zfill(2)
        + ":"
        + frame["s"].str.zfill(2)
        + "."
        + frame["c"].str.zfill(2)
    ).tolist()


def series_with_statistics(
    stock_code: str,
    n_trades: int,
    zero_count: int,
    mean_duration: float,
    seed: int,
    calendar: Optional[SessionCalendar] = None,
    beta: float = 0.68,
) -> DurationSeries:
    """
    An all-trades series whose fabricated tape holds exactly ``n_trades``
    trades and ``zero_count`` vanishing durations, with mean duration
    ``mean_duration`` to the centisecond. Positive durations follow a Weibull
    law of shape ``beta``.
    """
    calendar = calendar or SessionCalendar.default()
    generator = rng(seed)
    shortest = min(calendar.length(i) for i in range(len(calendar)))
    sessions = max(1, math.ceil(n_trades * mean_duration * 100 / (0.8 * shortest)))
    while True:
        count = n_trades - sessions
        positive = count - zero_count
        if positive < 1:
            raise ParamError(
                "too few trades for the requested sessions and zero durations",
                parameter="n_trades",
                value=n_trades,
            )
        total = int(round(mean_duration * 100 * count))
        weights = weibull_quantile(
            WeibullParams(alpha=1.0, beta=beta), uniforms(generator, positive)
        )
        centis = _integer_partition(weights, total)
        durations = np.zeros(count, dtype=np.int64)
        zeros = generator.choice(count, size=zero_count, replace=False)
        mask = np.ones(count, dtype=bool)
        mask[zeros] = False
        durations[mask] = centis
        chunks = np.array_split(durations, sessions)
        if all(c.sum() <= calendar.length(i) for i, c in enumerate(chunks)):
            break
        sessions += max(1, sessions // 20)
        logger.debug("%s: widening to %d sessions", stock_code, sessions)
    session_ids = np.repeat(np.arange(sessions), [len(c) for c in chunks])
    return DurationSeries.from_centis(
        stock_code, ClassFilter.ALL, durations, session_ids, n_trades=n_trades
    )


def _integer_partition(weights: np.ndarray, total: int) -> np.ndarray:
    """Positive integers proportional to ``weights`` that sum to ``total``."""
    if total < len(weights):
        raise ParamError(
            "mean duration too small for the requested positive durations",
            parameter="mean_duration",
            value=total,
        )
    scaled = weights * (total / weights.sum())
    parts = np.maximum(1, np.floor(scaled)).astype(np.int64)
    remainder = total - int(parts.sum())
    if remainder > 0:
        order = np.argsort(parts - scaled, kind="stable")
        parts[order[:remainder]] += 1
    while remainder < 0:
        order = np.argsort(-parts, kind="stable")
        take = order[: min(-remainder, int(np.count_nonzero(parts > 1)))]
        parts[take] -= 1
        remainder += len(take)
    return parts


def stock_codes(count: int) -> List[str]:
    """
    >>> stock_codes(3)
    ['000001', '000002', '000003']
    """
    return [f"{i + 1:06d}" for i in range(count)]


def per_stock_seeds(seed: int, count: int) -> List[int]:
    """Independent child seeds, one stream per stock."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


def acd_panel(
    seed: int,
    means: Iterable[float],
    n: int,
    config: ACDConfig,
) -> Dict[str, np.ndarray]:
    """
    ACD durations for several stocks, each rescaled to its mean duration (in
    seconds) and drawn from its own seed stream.
    """
    means = list(means)
    codes = stock_codes(len(means))
    panel = {}
    for code, mean, child in zip(codes, means, per_stock_seeds(seed, len(means))):
        sample = sample_acd(GeneratorConfig(GeneratorModel.ACD, n=n, seed=child, acd=config))
        panel[code] = sample * (mean / config.stationary_mean)
    return panel
