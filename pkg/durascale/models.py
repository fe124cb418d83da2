"""
Closed-form survival laws for normalized durations.

The Weibull pair is written in the rate form ``ρ_w(g) = αβ g^(β-1) exp(-α g^β)``
with survival ``C_w(g) = exp(-α g^β)``. The conventional scale ``λ`` relates to
it by ``α = λ^(-β)`` (see :py:meth:`WeibullParams.from_scale`).

The q-exponential pair ``ρ_q(g) = μ [1 + (q-1) μ g]^(q/(1-q))`` and
``C_q(g) = [1 + (q-1) μ g]^(1/(1-q))`` is supported for ``q > 1`` only. It is a
generalized Pareto law with shape ``k = q - 1`` and scale ``s = 1/μ``
(see :py:meth:`QExpParams.to_pareto`).

Every function accepts a scalar or a numpy array and returns a float or an
array of the same shape.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, fields
from typing import Tuple, Union

import mpmath
import numpy as np
import pandas as pd
from scipy import integrate, special

from durascale.errors import ConvergenceError, DomainError, ParamError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

SERIES_LIMIT = 5.0
ASYMPTOTIC_LIMIT = 50.0
TOLERANCE = 1e-12
QUADRATURE_CUTOFF = 60.0


def _like(g: ArrayLike, values: np.ndarray) -> ArrayLike:
    if np.ndim(g) == 0:
        return float(values)
    return values


def _check_positive(obj, *names: str) -> None:
    for name in names:
        value = float(getattr(obj, name))
        if not (math.isfinite(value) and value > 0):
            raise ParamError(
                f"{type(obj).__name__}.{name} must be positive, got {value}",
                parameter=name,
                value=value,
            )
        object.__setattr__(obj, name, value)


@dataclass(frozen=True)
class WeibullParams:
    """
    >>> WeibullParams(alpha=1.85, beta=0.68)
    WeibullParams(alpha=1.85, beta=0.68)
    >>> round(WeibullParams.from_scale(2.0, 0.5).alpha, 6)
    0.707107
    """

    alpha: float
    beta: float

    def __post_init__(self):
        _check_positive(self, "alpha", "beta")

    @classmethod
    def from_scale(cls, scale: float, beta: float) -> "WeibullParams":
        return cls(alpha=scale ** (-beta), beta=beta)

    @property
    def scale(self) -> float:
        return self.alpha ** (-1 / self.beta)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class QExpParams:
    """
    >>> QExpParams(mu=1.0, q=1.0)
    Traceback (most recent call last):
    ...
    durascale.errors.ParamError: the q-exponential requires q > 1, got q=1.0
    """

    mu: float
    q: float

    def __post_init__(self):
        _check_positive(self, "mu")
        q = float(self.q)
        if not (math.isfinite(q) and q > 1):
            raise ParamError(
                f"the q-exponential requires q > 1, got q={q}", parameter="q", value=q
            )
        object.__setattr__(self, "q", q)

    def to_pareto(self) -> Tuple[float, float]:
        """
        Returns the generalized Pareto ``(shape, scale)`` with ``shape = q - 1``
        and ``scale = 1/μ``.
        """
        return self.q - 1, 1 / self.mu

    @classmethod
    def from_pareto(cls, shape: float, scale: float) -> "QExpParams":
        return cls(mu=1 / scale, q=1 + shape)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class MittagLefflerParams:
    beta_ml: float
    tau0: float

    def __post_init__(self):
        _check_positive(self, "tau0")
        beta = float(self.beta_ml)
        if not 0 < beta <= 1:
            raise ParamError(
                f"the Mittag-Leffler order must lie in (0, 1], got {beta}",
                parameter="beta_ml",
                value=beta,
            )
        object.__setattr__(self, "beta_ml", beta)


def _nonnegative(g: ArrayLike) -> np.ndarray:
    values = np.asarray(g, dtype=float)
    if np.any(values < 0) or np.any(np.isnan(values)):
        raise DomainError(
            "durations must be non-negative", value=float(np.min(values))
        )
    return values


def _weibull_support(p: WeibullParams, g: ArrayLike) -> np.ndarray:
    values = _nonnegative(g)
    if p.beta < 1 and np.any(values == 0):
        raise DomainError(
            "the Weibull density diverges at g = 0 when beta < 1", value=0.0
        )
    return values


def weibull_logpdf(p: WeibullParams, g: ArrayLike) -> ArrayLike:
    values = _weibull_support(p, g)
    with np.errstate(divide="ignore", invalid="ignore"):
        shape_term = 0.0 if p.beta == 1 else (p.beta - 1) * np.log(values)
    out = (
        math.log(p.alpha)
        + math.log(p.beta)
        + shape_term
        - p.alpha * np.power(values, p.beta)
    )
    return _like(g, np.asarray(out, dtype=float))


def weibull_pdf(p: WeibullParams, g: ArrayLike) -> ArrayLike:
    """
    Parameters
    ----------
    p : WeibullParams
    g : float or numpy.ndarray
        Normalized durations. Must be positive when ``beta < 1``.

    Examples
    --------
    >>> round(weibull_pdf(WeibullParams(alpha=1.0, beta=1.0), 0.5), 6)
    0.606531
    >>> weibull_pdf(WeibullParams(alpha=3.0, beta=1.0), 0.0)
    3.0
    """
    values = _weibull_support(p, g)
    with np.errstate(divide="ignore"):
        power = 1.0 if p.beta == 1 else np.power(values, p.beta - 1)
    out = p.alpha * p.beta * power * np.exp(-p.alpha * np.power(values, p.beta))
    return _like(g, np.asarray(out, dtype=float))


def weibull_ccdf(p: WeibullParams, g: ArrayLike) -> ArrayLike:
    """
    >>> weibull_ccdf(WeibullParams(alpha=1.85, beta=0.68), 0.0)
    1.0
    >>> round(weibull_ccdf(WeibullParams(alpha=2.24, beta=0.46), 1.0), 6)
    0.106459
    """
    values = _nonnegative(g)
    return _like(g, np.exp(-p.alpha * np.power(values, p.beta)))


def qexp_logpdf(p: QExpParams, g: ArrayLike) -> ArrayLike:
    values = _nonnegative(g)
    shape = p.q - 1
    out = math.log(p.mu) - (p.q / shape) * np.log1p(shape * p.mu * values)
    return _like(g, out)


def qexp_pdf(p: QExpParams, g: ArrayLike) -> ArrayLike:
    """
    >>> qexp_pdf(QExpParams(mu=4.17, q=1.65), 0.0)
    4.17
    """
    values = _nonnegative(g)
    shape = p.q - 1
    return _like(g, p.mu * np.exp(-(p.q / shape) * np.log1p(shape * p.mu * values)))


def qexp_ccdf(p: QExpParams, g: ArrayLike) -> ArrayLike:
    """
    >>> qexp_ccdf(QExpParams(mu=1.99, q=1.25), 0.0)
    1.0
    """
    values = _nonnegative(g)
    shape = p.q - 1
    return _like(g, np.exp(-np.log1p(shape * p.mu * values) / shape))


def tail_exponent(p: Union[QExpParams, float]) -> float:
    """
    Asymptotic power-law exponent ``1/(q-1)`` of the q-exponential survival.

    >>> tail_exponent(QExpParams(mu=1.99, q=1.25))
    4.0
    >>> round(tail_exponent(1.30), 2)
    3.33
    >>> tail_exponent(2.0)
    1.0
    """
    q = p.q if isinstance(p, QExpParams) else float(p)
    if not q > 1:
        raise ParamError(
            f"the tail exponent requires q > 1, got q={q}", parameter="q", value=q
        )
    return 1 / (q - 1)


def model_curve(params: Union[WeibullParams, QExpParams], g: np.ndarray) -> pd.DataFrame:
    """
    Tabulates ``(g, pdf, ccdf)`` for export.
    """
    g = np.asarray(g, dtype=float)
    if isinstance(params, WeibullParams):
        pdf, ccdf = weibull_pdf(params, g), weibull_ccdf(params, g)
    else:
        pdf, ccdf = qexp_pdf(params, g), qexp_ccdf(params, g)
    return pd.DataFrame({"g": g, "pdf": pdf, "ccdf": ccdf})


# Mittag-Leffler survival E_β(-(τ/τ0)^β)


def _ml_series(beta: float, x: float) -> float:
    # the alternating series cancels badly, so the working precision grows
    # with the largest term
    n = np.arange(0, 4000)
    log_terms = n * math.log(x) - special.gammaln(beta * n + 1)
    peak = int(np.argmax(log_terms))
    if log_terms[-1] > math.log(TOLERANCE * 1e-4) - 40:
        raise ConvergenceError(
            f"Mittag-Leffler series needs more than {len(n)} terms at x={x}",
            value=x,
            tolerance=TOLERANCE,
        )
    digits = max(0.0, float(log_terms[peak]) / math.log(10))
    dps = int(20 + digits)
    logger.debug("series for x=%g with beta=%g at %d digits", x, beta, dps)
    with mpmath.workdps(dps):
        mx = mpmath.mpf(x)
        mbeta = mpmath.mpf(beta)
        total = mpmath.mpf(0)
        for k in range(len(n)):
            term = (-mx) ** k / mpmath.gamma(mbeta * k + 1)
            total += term
            if k > peak and abs(term) <= TOLERANCE * 1e-4 * abs(total):
                return float(total)
    raise ConvergenceError(
        f"Mittag-Leffler series did not converge at x={x}", value=x, tolerance=TOLERANCE
    )


def _ml_quadrature(beta: float, x: float) -> Tuple[float, float]:
    cos = math.cos(beta * math.pi)

    def f(u: float) -> float:
        y = u**beta / x
        return math.exp(-u) / (y * y + 2 * y * cos + 1)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        integral, error = integrate.quad(
            f,
            0.0,
            QUADRATURE_CUTOFF,
            weight="alg",
            wvar=(beta - 1, 0.0),
            epsabs=0.0,
            epsrel=1e-12,
            limit=400,
        )
    factor = math.sin(beta * math.pi) / (math.pi * x)
    return factor * integral, factor * error


def _ml_asymptotic(beta: float, x: float) -> Tuple[float, float]:
    total = 0.0
    previous = math.inf
    for k in range(1, 200):
        term = (-1) ** (k + 1) * x ** (-k) * float(special.rgamma(1 - beta * k))
        if term != 0 and abs(term) > previous:
            # optimal truncation: the series has started to diverge
            return total, previous
        total += term
        if term != 0:
            previous = abs(term)
        if previous <= TOLERANCE * abs(total):
            return total, previous
    return total, previous


def _ml_scalar(beta: float, x: float) -> float:
    if x == 0:
        return 1.0
    if beta == 1:
        return math.exp(-x)
    if x <= SERIES_LIMIT:
        try:
            return _ml_series(beta, x)
        except ConvergenceError:
            logger.debug("series out of reach at x=%g, using quadrature", x)
    elif x >= ASYMPTOTIC_LIMIT:
        value, error = _ml_asymptotic(beta, x)
        if error <= 1e-10 * abs(value):
            return value
        logger.debug("asymptotic branch too coarse at x=%g, using quadrature", x)
    value, error = _ml_quadrature(beta, x)
    if error <= 1e-10 * abs(value):
        return value
    logger.debug("quadrature error %g at x=%g, falling back to the series", error, x)
    try:
        return _ml_series(beta, x)
    except ConvergenceError:
        raise ConvergenceError(
            f"no Mittag-Leffler branch reached tolerance at x={x}",
            value=x,
            tolerance=TOLERANCE,
        )


def mittag_leffler_survival(p: MittagLefflerParams, tau: ArrayLike) -> ArrayLike:
    """
    Evaluates ``E_β(-(τ/τ0)^β)``.

    The alternating power series is summed at extended precision for
    ``x = (τ/τ0)^β <= 5``, the large-argument expansion is used for ``x >= 50``
    and a real-axis integral representation covers the range between.

    Examples
    --------
    >>> round(mittag_leffler_survival(MittagLefflerParams(beta_ml=1.0, tau0=1.0), 1.0), 6)
    0.367879
    >>> round(mittag_leffler_survival(MittagLefflerParams(beta_ml=0.5, tau0=1.0), 1.0), 6)
    0.427584
    >>> mittag_leffler_survival(MittagLefflerParams(beta_ml=0.3, tau0=2.0), 0.0)
    1.0
    """
    values = _nonnegative(tau)
    x = np.power(values / p.tau0, p.beta_ml)
    out = np.array([_ml_scalar(p.beta_ml, float(v)) for v in x.ravel()]).reshape(
        x.shape
    )
    return _like(tau, out)


def ml_stretched_exponential(p: MittagLefflerParams, tau: ArrayLike) -> ArrayLike:
    """Short-time branch ``exp[-(τ/τ0)^β / Γ(1+β)]``."""
    x = np.power(_nonnegative(tau) / p.tau0, p.beta_ml)
    return _like(tau, np.exp(-x / special.gamma(1 + p.beta_ml)))


def ml_power_law(p: MittagLefflerParams, tau: ArrayLike) -> ArrayLike:
    """Long-time branch ``(τ/τ0)^(-β) / Γ(1-β)``; zero at ``β = 1``."""
    values = _nonnegative(tau)
    with np.errstate(divide="ignore"):
        out = np.power(values / p.tau0, -p.beta_ml) * special.rgamma(1 - p.beta_ml)
    return _like(tau, out)
