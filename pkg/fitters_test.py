import math
import os
import unittest

import numpy as np

from durascale.densities import EmpiricalDensity, estimate_density, log_edges
from durascale.errors import (
    DegenerateSample,
    DomainError,
    InsufficientBins,
    MixedEstimators,
    NonConvergence,
    ParamError,
    TailTooLight,
    TooFewSamples,
)
from durascale.fitters import (
    Estimator,
    FitResult,
    RESIDUAL_DEFINITIONS,
    Model,
    PreferenceTally,
    compare_models,
    fit_all,
    fit_nlse,
    fit_qexp_mle,
    fit_weibull_mle,
    log_likelihood,
    tally_preferences,
)
from durascale.models import QExpParams, WeibullParams, qexp_pdf, weibull_pdf
from durascale.synth import sample_qexp, sample_weibull

SEEDS = int(os.environ.get("DURASCALE_TEST_SEEDS", 20))
N = 1_000_000


def exact_density(params, bins_per_decade: int = 25) -> EmpiricalDensity:
    """A density table holding the model values at the bin centers."""
    edges = log_edges(1e-3, 1e2, bins_per_decade)
    centers = np.sqrt(edges[:-1] * edges[1:])
    pdf = weibull_pdf if isinstance(params, WeibullParams) else qexp_pdf
    counts = np.full(len(centers), 1000)
    return EmpiricalDensity(edges, centers, pdf(params, centers), counts, int(counts.sum()))


def fit(model, estimator, chi, converged=True):
    params = WeibullParams(1.0, 1.0) if model is Model.WEIBULL else QExpParams(1.0, 1.5)
    return FitResult(model, estimator, params, chi, 1000, converged)


class MaximumLikelihoodTest(unittest.TestCase):
    def test_weibull_recovery(self):
        truth = WeibullParams(alpha=1.85, beta=0.68)
        for seed in range(SEEDS):
            with self.subTest(seed=seed):
                result = fit_weibull_mle(sample_weibull(truth, N, seed=seed))
                self.assertTrue(result.converged)
                self.assertLess(abs(result.params.beta - truth.beta), 0.005)
                self.assertLess(abs(result.params.alpha - truth.alpha), 0.02)
                self.assertEqual(result.n_samples, N)

    def test_qexp_recovery(self):
        truth = QExpParams(mu=4.17, q=1.65)
        for seed in range(SEEDS):
            with self.subTest(seed=seed):
                result = fit_qexp_mle(sample_qexp(truth, N, seed=seed))
                self.assertTrue(result.converged)
                self.assertLess(abs(result.params.mu - truth.mu), 0.05)
                self.assertLess(abs(result.params.q - truth.q), 0.01)

    def test_tail_exponent(self):
        truth = QExpParams(mu=2.0, q=1.25)
        for seed in range(SEEDS):
            with self.subTest(seed=seed):
                result = fit_qexp_mle(sample_qexp(truth, N, seed=1000 + seed))
                self.assertLess(abs(result.tail_exponent - 4.0), 0.10)

    def test_estimates_tighten_with_sample_size(self):
        truth = WeibullParams(alpha=1.85, beta=0.68)
        medians = []
        for n in (10_000, 100_000, 1_000_000):
            errors = np.array(
                [
                    fit_weibull_mle(sample_weibull(truth, n, seed=5000 + seed)).params.beta
                    - truth.beta
                    for seed in range(SEEDS)
                ]
            )
            medians.append(float(np.median(np.abs(errors))))
        self.assertLess(medians[1], medians[0])
        self.assertLess(medians[2], medians[1])
        self.assertLess(medians[2], 0.002)

    def test_scale_equivariance(self):
        c = 7.5
        weibull = sample_weibull(WeibullParams(alpha=1.85, beta=0.68), 100_000, seed=6)
        base, scaled = fit_weibull_mle(weibull).params, fit_weibull_mle(c * weibull).params
        self.assertAlmostEqual(scaled.beta / base.beta, 1.0, places=10)
        self.assertAlmostEqual(scaled.alpha / (base.alpha * c ** -base.beta), 1.0, places=8)
        qexp = sample_qexp(QExpParams(mu=4.17, q=1.65), 100_000, seed=6)
        base, scaled = fit_qexp_mle(qexp).params, fit_qexp_mle(c * qexp).params
        self.assertAlmostEqual(scaled.q / base.q, 1.0, places=6)
        self.assertAlmostEqual(scaled.mu * c / base.mu, 1.0, places=6)

    def test_exponential_sample(self):
        fallbacks = 0
        for seed in range(SEEDS):
            with self.subTest(seed=seed):
                values = sample_weibull(WeibullParams(alpha=3.0, beta=1.0), N, seed=7000 + seed)
                self.assertLess(abs(fit_weibull_mle(values).params.beta - 1.0), 0.01)
                try:
                    fit_qexp_mle(values)
                except TailTooLight:
                    fallbacks += 1
        self.assertGreaterEqual(fallbacks, SEEDS - max(1, SEEDS // 20))

    def test_tail_heavier_than_the_initial_grid(self):
        for q in (2.5, 3.0):
            for seed in range(SEEDS):
                with self.subTest(q=q, seed=seed):
                    truth = QExpParams(mu=1.0, q=q)
                    result = fit_qexp_mle(sample_qexp(truth, 100_000, seed=8000 + seed))
                    self.assertTrue(result.converged)
                    self.assertLess(abs(result.params.q - q), 0.05)
                    self.assertLess(abs(result.params.mu - 1.0), 0.05)

    def test_no_shape_iterations(self):
        values = sample_weibull(WeibullParams(alpha=1.0, beta=0.7), 1000, seed=0)
        with self.assertRaises(NonConvergence) as context:
            fit_weibull_mle(values, max_iter=0)
        partial = context.exception.partial
        self.assertFalse(partial.converged)
        self.assertEqual(partial.n_samples, 1000)

    def test_light_tail_falls_back_to_exponential(self):
        values = sample_weibull(WeibullParams(alpha=1.0, beta=2.0), 100_000, seed=0)
        with self.assertRaises(TailTooLight) as context:
            fit_qexp_mle(values)
        fallback = context.exception.fallback
        self.assertEqual(fallback.beta, 1.0)
        self.assertAlmostEqual(fallback.alpha, 1 / values.mean())

    def test_likelihood_is_maximal(self):
        values = sample_weibull(WeibullParams(alpha=1.0, beta=0.7), 10_000, seed=5)
        result = fit_weibull_mle(values)
        p = result.params
        for alpha, beta in [(1.01, 1), (0.99, 1), (1, 1.01), (1, 0.99)]:
            with self.subTest(alpha=alpha, beta=beta):
                other = log_likelihood(WeibullParams(p.alpha * alpha, p.beta * beta), values)
                self.assertLess(other, result.log_likelihood)

    def test_sample_errors(self):
        with self.assertRaises(TooFewSamples):
            fit_weibull_mle(np.ones(50) + np.arange(50))
        with self.assertRaises(DegenerateSample):
            fit_qexp_mle(np.full(200, 2.0))
        with self.assertRaises(DomainError):
            fit_weibull_mle(np.r_[np.arange(1.0, 200.0), 0.0])


class LeastSquaresTest(unittest.TestCase):
    def test_exact_tables_are_fixed_points(self):
        for truth in (
            WeibullParams(1.85, 0.68),
            WeibullParams(2.24, 0.46),
            QExpParams(4.17, 1.65),
            QExpParams(1.99, 1.25),
        ):
            with self.subTest(params=truth):
                model = Model.WEIBULL if isinstance(truth, WeibullParams) else Model.QEXPONENTIAL
                names = ("alpha", "beta") if model is Model.WEIBULL else ("mu", "q")
                init = type(truth)(*(getattr(truth, n) * 1.2 for n in names))
                result = fit_nlse(exact_density(truth), model, init)
                self.assertLess(result.chi, 1e-6)
                for name in names:
                    self.assertAlmostEqual(
                        getattr(result.params, name) / getattr(truth, name), 1.0, places=6
                    )
                self.assertEqual(result.skipped_bins, 0)

    def test_tail_exponent(self):
        truth = QExpParams(mu=2.0, q=1.25)
        for seed in range(SEEDS):
            with self.subTest(seed=seed):
                values = sample_qexp(truth, N, seed=2000 + seed)
                result = fit_nlse(
                    estimate_density(values), Model.QEXPONENTIAL, values=values, min_count=10
                )
                self.assertLess(abs(result.tail_exponent - 4.0), 0.15)
                self.assertGreater(result.skipped_bins, 0)

    def test_iteration_cap(self):
        density = exact_density(WeibullParams(1.85, 0.68))
        with self.assertRaises(NonConvergence) as context:
            fit_nlse(density, Model.WEIBULL, WeibullParams(10.0, 3.0), max_iter=1)
        self.assertFalse(context.exception.partial.converged)

    def test_too_few_bins(self):
        density = estimate_density([1.0, 2.0, 3.0, 4.0, 5.0], bins_per_decade=5)
        with self.assertRaises(InsufficientBins):
            fit_nlse(density, Model.WEIBULL)

    def test_wrong_init(self):
        with self.assertRaises(ParamError):
            fit_nlse(exact_density(QExpParams(1.0, 1.5)), Model.WEIBULL, QExpParams(1.0, 1.5))


class ModelSelectionTest(unittest.TestCase):
    cases = {
        Model.WEIBULL: lambda seed: sample_weibull(WeibullParams(1.85, 0.68), N, seed=seed),
        Model.QEXPONENTIAL: lambda seed: sample_qexp(QExpParams(4.17, 1.65), N, seed=seed),
    }

    def test_maximum_likelihood_prefers_the_generating_law(self):
        for truth, draw in self.cases.items():
            for seed in range(SEEDS):
                with self.subTest(truth=truth, seed=seed):
                    values = draw(3000 + seed)
                    verdict = compare_models(fit_weibull_mle(values), fit_qexp_mle(values))
                    self.assertIs(verdict.preferred, truth)

    def test_least_squares_prefers_the_generating_law(self):
        for truth, draw in self.cases.items():
            for seed in range(SEEDS):
                with self.subTest(truth=truth, seed=seed):
                    outcomes = fit_all(draw(4000 + seed), estimators=[Estimator.NLSE])
                    self.assertEqual(
                        set(outcomes), {(m, Estimator.NLSE) for m in Model}
                    )
                    verdict = compare_models(
                        outcomes[Model.WEIBULL, Estimator.NLSE],
                        outcomes[Model.QEXPONENTIAL, Estimator.NLSE],
                    )
                    self.assertIs(verdict.preferred, truth)

    def test_likelihood_at_the_maximum_beats_least_squares(self):
        for truth, draw in self.cases.items():
            for seed in range(SEEDS):
                with self.subTest(truth=truth, seed=seed):
                    values = draw(4500 + seed)
                    outcomes = fit_all(values, models=[truth])
                    mle = outcomes[truth, Estimator.MLE]
                    nlse = outcomes[truth, Estimator.NLSE]
                    self.assertGreaterEqual(
                        mle.log_likelihood, log_likelihood(nlse.params, values) - 1e-6
                    )

    def test_fit_all_keeps_failures(self):
        values = sample_weibull(WeibullParams(alpha=1.0, beta=2.0), 100_000, seed=1)
        outcomes = fit_all(values)
        self.assertEqual(len(outcomes), 4)
        self.assertIsInstance(outcomes[Model.QEXPONENTIAL, Estimator.MLE], TailTooLight)
        self.assertIsInstance(outcomes[Model.WEIBULL, Estimator.MLE], FitResult)
        nlse = outcomes[Model.WEIBULL, Estimator.NLSE]
        self.assertEqual(nlse.bins_per_decade, 25)
        self.assertAlmostEqual(nlse.params.beta, 2.0, delta=0.1)


class CompareTest(unittest.TestCase):
    def test_ties_and_order(self):
        w = fit(Model.WEIBULL, Estimator.NLSE, 0.5)
        q = fit(Model.QEXPONENTIAL, Estimator.NLSE, 0.5)
        self.assertTrue(compare_models(w, q).tie)
        self.assertTrue(compare_models(q, w).tie)

    def test_mixed_estimators(self):
        with self.assertRaises(MixedEstimators):
            compare_models(fit(Model.WEIBULL, Estimator.MLE, 0.1), fit(Model.QEXPONENTIAL, Estimator.NLSE, 0.2))

    def test_same_model(self):
        with self.assertRaises(ParamError):
            compare_models(fit(Model.WEIBULL, Estimator.MLE, 0.1), fit(Model.WEIBULL, Estimator.MLE, 0.2))

    def test_unconverged(self):
        with self.assertRaises(NonConvergence):
            compare_models(
                fit(Model.WEIBULL, Estimator.MLE, 0.1, converged=False),
                fit(Model.QEXPONENTIAL, Estimator.MLE, 0.2),
            )

    def test_tally(self):
        pairs = [
            (fit(Model.WEIBULL, Estimator.MLE, w), fit(Model.QEXPONENTIAL, Estimator.MLE, q))
            for w, q in [(0.1, 0.2), (0.3, 0.2), (0.1, 0.3), (0.2, 0.2)]
        ]
        tally = tally_preferences(pairs)
        self.assertEqual(tally, PreferenceTally(weibull=2, qexponential=1, ties=1))
        self.assertEqual(tally.share(Model.QEXPONENTIAL), "(1/4)")
        verdict = compare_models(*pairs[0], per_stock=pairs)
        self.assertEqual(verdict.per_stock_preference, tally)

    def test_serialized_result(self):
        result = fit_weibull_mle(sample_weibull(WeibullParams(1.0, 0.8), 1000, seed=0))
        d = result.to_dict()
        self.assertIsNone(d["tail_exponent"])
        self.assertEqual(d["residual_definition"], RESIDUAL_DEFINITIONS[Estimator.MLE])
        self.assertEqual(FitResult.from_dict(d), result)
        self.assertTrue(math.isfinite(d["log_likelihood"]))


if __name__ == "__main__":
    unittest.main()
