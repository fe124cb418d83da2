"""
Calibration of the Weibull and q-exponential laws.

Two estimators are provided. Maximum likelihood works on the raw sample:
the Weibull shape solves a one-dimensional profile score equation and the
q-exponential is fitted as a generalized Pareto law with the shape profiled
out. Nonlinear least squares works on a log-binned density and minimizes the
unweighted squared log-density residuals.

The r.m.s. residual ``chi`` is measured on the binned density in both cases:
on linear densities for maximum likelihood and on log densities for least
squares. Comparing a Weibull ``chi`` against a q-exponential ``chi`` is only
meaningful within one estimator.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize, special, stats

from durascale.densities import DEFAULT_BINS_PER_DECADE, EmpiricalDensity, estimate_density
from durascale.errors import (
    DegenerateSample,
    DomainError,
    FitError,
    InsufficientBins,
    MixedEstimators,
    NonConvergence,
    ParamError,
    TailTooLight,
    TooFewSamples,
)
from durascale.models import (
    QExpParams,
    WeibullParams,
    qexp_logpdf,
    qexp_pdf,
    weibull_logpdf,
    weibull_pdf,
)

logger = logging.getLogger(__name__)

MIN_SAMPLES = 100
MIN_BINS = 10
MAX_ITER = 10_000
LIKELIHOOD_RATIO_THRESHOLD = float(stats.chi2.ppf(0.99, df=1))
# log of the rescaled q-exponential rate (q-1) μ ⟨g⟩ searched by the profile
PROFILE_GRID = np.linspace(-12.0, 8.0, 81)
PROFILE_STEP = 0.25
# upper end of the widened profile grid; samples with q >= 2 have no mean
# and their profile peaks above PROFILE_GRID
PROFILE_LIMIT = 60.0

Params = Union[WeibullParams, QExpParams]


class Model(Enum):
    WEIBULL = "weibull"
    QEXPONENTIAL = "qexp"


class Estimator(Enum):
    MLE = "mle"
    NLSE = "nlse"


RESIDUAL_DEFINITIONS = {
    Estimator.MLE: "rms of (empirical density - model density) over occupied log bins",
    Estimator.NLSE: "rms of (ln model density - ln empirical density) over occupied log bins",
}


@dataclass(frozen=True)
class FitResult:
    model: Model
    estimator: Estimator
    params: Params
    chi: float
    n_samples: int
    converged: bool
    bins_used: Optional[int] = None
    skipped_bins: Optional[int] = None
    log_likelihood: Optional[float] = None
    bins_per_decade: Optional[int] = None

    @property
    def tail_exponent(self) -> Optional[float]:
        if isinstance(self.params, QExpParams):
            return 1 / (self.params.q - 1)
        return None

    @property
    def residual_definition(self) -> str:
        return RESIDUAL_DEFINITIONS[self.estimator]

    def to_dict(self):
        return {
            "model": self.model.value,
            "estimator": self.estimator.value,
            "params": self.params.to_dict(),
            "chi": self.chi,
            "n_samples": self.n_samples,
            "bins_used": self.bins_used,
            "skipped_bins": self.skipped_bins,
            "converged": self.converged,
            "log_likelihood": self.log_likelihood,
            "bins_per_decade": self.bins_per_decade,
            "tail_exponent": self.tail_exponent,
            "residual_definition": self.residual_definition,
        }

    @classmethod
    def from_dict(cls, d) -> "FitResult":
        model = Model(d["model"])
        kind = WeibullParams if model is Model.WEIBULL else QExpParams
        return cls(
            model=model,
            estimator=Estimator(d["estimator"]),
            params=kind(**d["params"]),
            chi=d["chi"],
            n_samples=d["n_samples"],
            converged=d["converged"],
            bins_used=d.get("bins_used"),
            skipped_bins=d.get("skipped_bins"),
            log_likelihood=d.get("log_likelihood"),
            bins_per_decade=d.get("bins_per_decade"),
        )


def model_of(params: Params) -> Model:
    return Model.WEIBULL if isinstance(params, WeibullParams) else Model.QEXPONENTIAL


def _pdf(params: Params, g: np.ndarray) -> np.ndarray:
    if isinstance(params, WeibullParams):
        return weibull_pdf(params, g)
    return qexp_pdf(params, g)


def log_likelihood(params: Params, values) -> float:
    """
    >>> round(log_likelihood(WeibullParams(alpha=1.0, beta=1.0), [1.0, 2.0]), 6)
    -3.0
    """
    values = np.asarray(values, dtype=float)
    if isinstance(params, WeibullParams):
        return float(np.sum(weibull_logpdf(params, values)))
    return float(np.sum(qexp_logpdf(params, values)))


def density_chi(params: Params, density: EmpiricalDensity) -> float:
    """r.m.s. of linear density residuals over occupied bins."""
    occupied = density.occupied
    residuals = density.density[occupied] - _pdf(params, density.centers[occupied])
    return float(np.sqrt(np.mean(residuals**2)))


def _sample(values) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x <= 0):
        raise DomainError(
            "maximum likelihood needs positive finite values", value=float(np.min(x))
        )
    if len(x) < MIN_SAMPLES:
        raise TooFewSamples(
            f"{len(x)} values are too few for a fit (need {MIN_SAMPLES})",
            count=len(x),
            required=MIN_SAMPLES,
        )
    if np.ptp(x) == 0:
        raise DegenerateSample("all values are equal")
    return x


def _weibull_score(k: float, y: np.ndarray) -> Tuple[float, float]:
    # profile score for the shape and its derivative, y = centred log sample
    ky = k * y
    w = np.exp(ky - ky.max())
    w /= w.sum()
    mean = float(np.dot(w, y))
    var = float(np.dot(w, y * y)) - mean * mean
    return mean - 1 / k, max(var, 0.0) + 1 / (k * k)


def fit_weibull_mle(
    values, *, bins_per_decade: int = DEFAULT_BINS_PER_DECADE, max_iter: int = 200
) -> FitResult:
    """
    Maximum likelihood Weibull fit.

    Given the shape ``β`` the rate has the closed form ``α = n / Σ g^β``; the
    shape solves the profile score equation by Newton steps kept inside a
    bisection bracket.

    Parameters
    ----------
    values : array_like
        At least 100 positive values, not all equal.
    bins_per_decade : int
        Binning of the density on which ``chi`` is measured.
    max_iter : int
        Iteration budget of the shape solver.
    """
    x = _sample(values)
    log_x = np.log(x)
    y = log_x - log_x.mean()

    lo, hi = 0.5, 2.0
    while _weibull_score(lo, y)[0] > 0:
        lo /= 2
    while _weibull_score(hi, y)[0] < 0:
        hi *= 2
    k = 1.0 if lo < 1.0 < hi else math.sqrt(lo * hi)
    converged = False
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        f, df = _weibull_score(k, y)
        if f > 0:
            hi = k
        else:
            lo = k
        step = k - f / df
        if not lo < step < hi:
            step = (lo + hi) / 2
        if abs(step - k) <= 1e-13 * k:
            k = step
            converged = True
            break
        k = step
    logger.debug("weibull shape %.10g after %d iterations", k, iterations)

    log_alpha = math.log(len(x)) - float(special.logsumexp(k * log_x))
    params = WeibullParams(alpha=math.exp(log_alpha), beta=k)
    result = FitResult(
        model=Model.WEIBULL,
        estimator=Estimator.MLE,
        params=params,
        chi=density_chi(params, estimate_density(x, bins_per_decade)),
        n_samples=len(x),
        converged=converged,
        log_likelihood=log_likelihood(params, x),
        bins_per_decade=bins_per_decade,
    )
    if not converged:
        raise NonConvergence(
            f"Weibull shape did not converge in {max_iter} iterations", partial=result
        )
    return result


def _qexp_profile(u: float, z: np.ndarray) -> Tuple[float, float]:
    # profile log likelihood of rescaled data z at rate θ = exp(u); returns
    # (ℓ, shape) with the shape k = mean log1p(θ z) maximizing over q at fixed θ
    theta = math.exp(u)
    k = float(np.mean(np.log1p(theta * z)))
    return len(z) * (math.log(theta / k) - k - 1), k


def fit_qexp_mle(values, *, bins_per_decade: int = DEFAULT_BINS_PER_DECADE) -> FitResult:
    """
    Maximum likelihood q-exponential fit as a generalized Pareto law.

    With ``θ = (q-1) μ`` and shape ``k = q-1`` the log likelihood is
    ``n log(θ/k) - (1 + 1/k) Σ log(1 + θ g)``; for fixed ``θ`` it is maximized
    by ``k = mean log(1 + θ g)``, which leaves a one-dimensional profile in
    ``θ``. The sample is first rescaled by its mean, so the profile does not
    depend on units. Then ``q = 1 + k`` and ``μ = θ / k``.

    Raises :py:class:`~durascale.errors.TailTooLight` when the likelihood
    peaks at the exponential boundary ``q -> 1`` or does not beat the
    exponential law at the 1 % likelihood-ratio level; the error carries the
    exponential fit as a ``β = 1`` Weibull.
    """
    x = _sample(values)
    scale = float(x.mean())
    z = x / scale
    n = len(x)
    exponential = -n * (1 + math.log(scale))

    grid = PROFILE_GRID
    profile = np.array([_qexp_profile(u, z)[0] for u in grid])
    best = int(np.argmax(profile))
    while best == len(grid) - 1 and grid[-1] < PROFILE_LIMIT:
        extension = grid[-1] + PROFILE_STEP * np.arange(1, 33)
        grid = np.concatenate([grid, extension])
        profile = np.concatenate([profile, [_qexp_profile(u, z)[0] for u in extension]])
        best = int(np.argmax(profile))
        logger.debug("q-exponential profile grid widened to log rate %.4g", grid[-1])
    fallback = WeibullParams(alpha=1 / scale, beta=1.0)
    if best == len(grid) - 1:
        raise NonConvergence(
            f"q-exponential profile peaks beyond the search grid (log rate {grid[-1]:.4g})"
        )
    if best > 0:
        solution = optimize.minimize_scalar(
            lambda u: -_qexp_profile(u, z)[0],
            bounds=(grid[best - 1], grid[best + 1]),
            method="bounded",
            options={"xatol": 1e-10, "maxiter": 500},
        )
        u, converged = float(solution.x), bool(solution.success)
        peak, k = _qexp_profile(u, z)
        peak -= n * math.log(scale)
    if best == 0 or 2 * (peak - exponential) < LIKELIHOOD_RATIO_THRESHOLD:
        logger.warning("q-exponential tail too light, falling back to the exponential")
        raise TailTooLight(
            "the q-exponential likelihood peaks at the exponential boundary q -> 1",
            fallback=fallback,
            log_likelihood=exponential,
        )
    theta = math.exp(u) / scale
    params = QExpParams(mu=theta / k, q=1 + k)
    result = FitResult(
        model=Model.QEXPONENTIAL,
        estimator=Estimator.MLE,
        params=params,
        chi=density_chi(params, estimate_density(x, bins_per_decade)),
        n_samples=n,
        converged=converged,
        log_likelihood=log_likelihood(params, x),
        bins_per_decade=bins_per_decade,
    )
    if not converged:
        raise NonConvergence("q-exponential profile did not converge", partial=result)
    return result


def _log_model(model: Model, theta: np.ndarray, g: np.ndarray) -> np.ndarray:
    a, b = np.exp(theta)
    if model is Model.WEIBULL:
        # a = α, b = β
        return np.log(a) + np.log(b) + (b - 1) * np.log(g) - a * np.power(g, b)
    # a = μ, b = q - 1
    return np.log(a) - (1 + 1 / b) * np.log1p(b * a * g)


def _to_theta(params: Params) -> np.ndarray:
    if isinstance(params, WeibullParams):
        return np.log([params.alpha, params.beta])
    return np.log([params.mu, params.q - 1])


def _from_theta(model: Model, theta: np.ndarray) -> Params:
    a, b = (float(v) for v in np.exp(theta))
    if model is Model.WEIBULL:
        return WeibullParams(alpha=a, beta=b)
    return QExpParams(mu=a, q=1 + b)


def _mle(model: Model, values) -> Optional[Params]:
    fit = fit_weibull_mle if model is Model.WEIBULL else fit_qexp_mle
    try:
        return fit(values).params
    except NonConvergence as e:
        return e.partial.params if e.partial is not None else None
    except TailTooLight:
        return None


def fit_nlse(
    density: EmpiricalDensity,
    model: Model,
    init: Optional[Params] = None,
    *,
    values=None,
    max_iter: int = MAX_ITER,
    min_count: int = 1,
) -> FitResult:
    """
    Least squares fit of the log density on occupied bins.

    The objective is ``Σ [ln ρ_model(center) - ln ρ̂(center)]²`` over bins with
    at least ``min_count`` counts (empty bins are always skipped). Each start
    runs a Nelder-Mead simplex followed by a Levenberg-Marquardt polish, in
    log parameters so every iterate is a valid parameter set. Starts are
    ``init``, the maximum likelihood estimate when ``values`` are given and
    two perturbations of the first start; the best optimum is kept.

    Parameters
    ----------
    density : EmpiricalDensity
        Needs at least 10 usable bins.
    model : Model
    init : WeibullParams or QExpParams, optional
    values : array_like, optional
        The sample behind ``density``, used for the maximum likelihood start.
    max_iter : int
        Iteration budget of each optimizer.
    min_count : int
        Bins holding fewer counts are skipped.
    """
    usable = density.counts >= max(1, min_count)
    if np.count_nonzero(usable) < MIN_BINS:
        raise InsufficientBins(
            f"{np.count_nonzero(usable)} usable bins, need {MIN_BINS}",
            occupied=int(np.count_nonzero(usable)),
            required=MIN_BINS,
        )
    skipped = int(len(usable) - np.count_nonzero(usable))
    if skipped:
        logger.debug("skipping %d empty or sparse bins", skipped)
    g = density.centers[usable]
    target = np.log(density.density[usable])

    def residuals(theta: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            r = _log_model(model, theta, g) - target
        return np.nan_to_num(r, nan=1e6, posinf=1e6, neginf=-1e6)

    def objective(theta: np.ndarray) -> float:
        return float(np.sum(residuals(theta) ** 2))

    starts = []
    if init is not None:
        if model_of(init) is not model:
            raise ParamError(
                f"initial parameters do not belong to {model.value}",
                parameter="init",
                value=init,
            )
        starts.append(_to_theta(init))
    if values is not None:
        mle = _mle(model, values)
        if mle is not None:
            starts.append(_to_theta(mle))
    if not starts:
        starts.append(np.log([1.0, 1.0]) if model is Model.WEIBULL else np.log([1.0, 0.2]))
    starts += [starts[0] + [0.3, -0.3], starts[0] + [-0.3, 0.3]]

    best = None
    for start in starts:
        simplex = optimize.minimize(
            objective,
            start,
            method="Nelder-Mead",
            options={"maxiter": max_iter, "xatol": 1e-9, "fatol": 1e-12},
        )
        polish = optimize.least_squares(
            residuals,
            simplex.x,
            method="lm",
            xtol=1e-10,
            ftol=1e-12,
            gtol=1e-12,
            max_nfev=max_iter,
        )
        cost = float(np.sum(polish.fun**2))
        converged = polish.status > 0
        logger.debug(
            "start %s: cost %.6g, status %d", np.exp(start), cost, polish.status
        )
        if best is None or (converged, -cost) > (best[2], -best[1]):
            best = (polish.x, cost, converged)

    theta, cost, converged = best
    result = FitResult(
        model=model,
        estimator=Estimator.NLSE,
        params=_from_theta(model, theta),
        chi=math.sqrt(cost / len(g)),
        n_samples=density.total_n,
        converged=converged,
        bins_used=len(g),
        skipped_bins=skipped,
        bins_per_decade=None,
    )
    if not converged:
        raise NonConvergence(
            f"{model.value} least squares hit the iteration cap {max_iter}",
            partial=result,
        )
    return result


@dataclass(frozen=True)
class PreferenceTally:
    weibull: int
    qexponential: int
    ties: int = 0

    @property
    def total(self) -> int:
        return self.weibull + self.qexponential + self.ties

    def share(self, model: Model) -> str:
        """
        >>> PreferenceTally(weibull=19, qexponential=4).share(Model.WEIBULL)
        '(19/23)'
        """
        count = self.weibull if model is Model.WEIBULL else self.qexponential
        return f"({count}/{self.total})"


@dataclass(frozen=True)
class ComparisonVerdict:
    preferred: Optional[Model]
    chi_w: float
    chi_q: float
    per_stock_preference: Optional[PreferenceTally] = None

    @property
    def tie(self) -> bool:
        return self.preferred is None


def _preferred(chi_w: float, chi_q: float) -> Optional[Model]:
    if chi_w < chi_q:
        return Model.WEIBULL
    if chi_q < chi_w:
        return Model.QEXPONENTIAL
    return None


def tally_preferences(pairs: Iterable[Tuple[FitResult, FitResult]]) -> PreferenceTally:
    counts = {Model.WEIBULL: 0, Model.QEXPONENTIAL: 0, None: 0}
    for first, second in pairs:
        counts[compare_models(first, second).preferred] += 1
    return PreferenceTally(
        weibull=counts[Model.WEIBULL],
        qexponential=counts[Model.QEXPONENTIAL],
        ties=counts[None],
    )


def compare_models(
    fit_w: FitResult,
    fit_q: FitResult,
    per_stock: Optional[Sequence[Tuple[FitResult, FitResult]]] = None,
) -> ComparisonVerdict:
    """
    Prefers the model with the strictly smaller ``chi``; equal values are a tie.

    The two fits may be given in either order.

    >>> w = FitResult(Model.WEIBULL, Estimator.MLE, WeibullParams(1.85, 0.68), 0.71, 100, True)
    >>> q = FitResult(Model.QEXPONENTIAL, Estimator.MLE, QExpParams(4.17, 1.65), 1.35, 100, True)
    >>> compare_models(w, q).preferred
    <Model.WEIBULL: 'weibull'>
    >>> compare_models(q, w) == compare_models(w, q)
    True
    """
    if fit_w.estimator is not fit_q.estimator:
        raise MixedEstimators(
            f"cannot compare a {fit_w.estimator.value} chi with a {fit_q.estimator.value} chi",
            first=fit_w.estimator.value,
            second=fit_q.estimator.value,
        )
    fits = {fit_w.model: fit_w, fit_q.model: fit_q}
    if set(fits) != set(Model):
        raise ParamError(
            "a comparison needs one Weibull and one q-exponential fit",
            parameter="model",
            value=fit_w.model.value,
        )
    for fit in fits.values():
        if not fit.converged:
            raise NonConvergence(
                f"cannot compare an unconverged {fit.model.value} fit", partial=fit
            )
    chi_w, chi_q = fits[Model.WEIBULL].chi, fits[Model.QEXPONENTIAL].chi
    return ComparisonVerdict(
        preferred=_preferred(chi_w, chi_q),
        chi_w=chi_w,
        chi_q=chi_q,
        per_stock_preference=None if per_stock is None else tally_preferences(per_stock),
    )


FitOutcome = Union[FitResult, FitError]


def fit_all(
    values,
    models: Sequence[Model] = tuple(Model),
    estimators: Sequence[Estimator] = tuple(Estimator),
    *,
    bins_per_decade: int = DEFAULT_BINS_PER_DECADE,
    max_iter: int = MAX_ITER,
) -> Dict[Tuple[Model, Estimator], FitOutcome]:
    """
    Runs every requested (model, estimator) fit on one sample.

    Fit failures are returned in place of results so one failing fit does not
    hide the others. Least squares starts from the maximum likelihood estimate
    when it is available.
    """
    x = np.asarray(values, dtype=float)
    outcomes: Dict[Tuple[Model, Estimator], FitOutcome] = {}
    density = None
    for model in models:
        mle: Optional[FitOutcome] = None
        if Estimator.MLE in estimators or Estimator.NLSE in estimators:
            try:
                mle = (fit_weibull_mle if model is Model.WEIBULL else fit_qexp_mle)(
                    x, bins_per_decade=bins_per_decade
                )
            except FitError as e:
                mle = e
            if Estimator.MLE in estimators:
                outcomes[model, Estimator.MLE] = mle
        if Estimator.NLSE in estimators:
            if density is None:
                density = estimate_density(x, bins_per_decade)
            init = None
            if isinstance(mle, FitResult):
                init = mle.params
            elif isinstance(mle, NonConvergence) and mle.partial is not None:
                init = mle.partial.params
            try:
                nlse = fit_nlse(density, model, init, max_iter=max_iter)
                outcomes[model, Estimator.NLSE] = replace(
                    nlse, bins_per_decade=bins_per_decade
                )
            except NonConvergence as e:
                if e.partial is not None:
                    e.partial = replace(e.partial, bins_per_decade=bins_per_decade)
                outcomes[model, Estimator.NLSE] = e
            except FitError as e:
                outcomes[model, Estimator.NLSE] = e
    return outcomes
