import io
import math
import unittest

import numpy as np
from scipy import stats

from durascale.errors import ParamError
from durascale.models import QExpParams, WeibullParams, qexp_ccdf, weibull_ccdf
from durascale.synth import (
    ACDConfig,
    GeneratorConfig,
    GeneratorModel,
    Innovation,
    acd_panel,
    fabricate_tape,
    generate,
    per_stock_seeds,
    qexp_quantile,
    sample_acd,
    sample_qexp,
    sample_weibull,
    series_with_statistics,
    stock_codes,
    weibull_quantile,
)
from durascale.tape import (
    ClassFilter,
    DurationSeries,
    SessionCalendar,
    extract_all,
    parse_tape,
)

N = 1_000_000
# two-sided Kolmogorov-Smirnov quantile at level 0.001
KS_001 = 1.95


def lag_one(x: np.ndarray) -> float:
    return float(np.corrcoef(x[:-1], x[1:])[0, 1])


class QuantileTest(unittest.TestCase):
    def test_inverts_the_survival(self):
        u = np.linspace(0.01, 0.99, 50)
        w = WeibullParams(1.85, 0.68)
        q = QExpParams(4.17, 1.65)
        np.testing.assert_allclose(weibull_ccdf(w, weibull_quantile(w, u)), u, rtol=1e-12)
        np.testing.assert_allclose(qexp_ccdf(q, qexp_quantile(q, u)), u, rtol=1e-12)

    def test_examples(self):
        self.assertAlmostEqual(weibull_quantile(WeibullParams(1.0, 1.0), 0.5), math.log(2))
        self.assertAlmostEqual(
            qexp_quantile(QExpParams(1.0, 1.5), 0.5), 2 * (math.sqrt(2) - 1), places=12
        )

    def test_samples_follow_the_law(self):
        cases = [
            (WeibullParams(1.85, 0.68), sample_weibull, weibull_ccdf),
            (QExpParams(1.99, 1.25), sample_qexp, qexp_ccdf),
        ]
        for params, sample, ccdf in cases:
            with self.subTest(params=params):
                values = sample(params, N, seed=7)
                result = stats.kstest(values, lambda g: 1 - ccdf(params, g))
                self.assertLess(result.statistic, KS_001 / math.sqrt(N))
                self.assertTrue(np.all(values > 0))

    def test_tail_occupancy(self):
        params = QExpParams(mu=1.99, q=1.25)
        values = sample_qexp(params, N, seed=8)
        for g in (1.0, 3.0, 10.0):
            with self.subTest(g=g):
                p = qexp_ccdf(params, g)
                self.assertLess(abs(np.mean(values > g) - p), 5 * math.sqrt(p * (1 - p) / N))

    def test_seeded(self):
        p = WeibullParams(1.0, 0.7)
        np.testing.assert_array_equal(sample_weibull(p, 100, seed=1), sample_weibull(p, 100, seed=1))
        self.assertFalse(np.array_equal(sample_weibull(p, 100, seed=1), sample_weibull(p, 100, seed=2)))
        self.assertEqual(per_stock_seeds(5, 3), per_stock_seeds(5, 3))
        self.assertEqual(len(set(per_stock_seeds(5, 23))), 23)

    def test_config_errors(self):
        with self.assertRaises(ParamError):
            GeneratorConfig(GeneratorModel.WEIBULL, n=10, seed=0, params=QExpParams(1.0, 1.5))
        with self.assertRaises(ParamError):
            GeneratorConfig(GeneratorModel.ACD, n=10, seed=0)
        with self.assertRaises(ParamError):
            GeneratorConfig(GeneratorModel.QEXPONENTIAL, n=0, seed=0, params=QExpParams(1.0, 1.5))
        with self.assertRaises(ParamError):
            ACDConfig(omega=0.0, a=0.1, b=0.1)
        with self.assertRaises(ParamError):
            ACDConfig(omega=1.0, a=-0.1, b=0.1)


class ACDTest(unittest.TestCase):
    def test_without_memory_is_exponential(self):
        config = GeneratorConfig(
            GeneratorModel.ACD, n=100_000, seed=0, acd=ACDConfig(omega=2.0, a=0.0, b=0.0)
        )
        values = generate(config)
        result = stats.kstest(values, stats.expon(scale=2.0).cdf)
        self.assertLess(result.statistic, KS_001 / math.sqrt(len(values)))
        self.assertLess(abs(lag_one(values)), 0.02)

    def test_stationary_mean_and_clustering(self):
        acd = ACDConfig(omega=0.1, a=0.2, b=0.7, innovation=Innovation.WEIBULL, shape=0.7)
        values = sample_acd(GeneratorConfig(GeneratorModel.ACD, n=N, seed=1, acd=acd))
        self.assertEqual(len(values), N)
        self.assertAlmostEqual(acd.stationary_mean, 1.0)
        self.assertLess(abs(values.mean() - 1.0), 0.05)
        self.assertGreater(lag_one(values), 0.1)
        halves = np.array_split(values, 2)
        self.assertLess(abs(halves[0].mean() - halves[1].mean()), 0.1)

    def test_panel(self):
        acd = ACDConfig(omega=0.1, a=0.2, b=0.7)
        means = [3.81, 49.35]
        panel = acd_panel(0, means, 200_000, acd)
        self.assertEqual(list(panel), stock_codes(2))
        for code, mean in zip(panel, means):
            with self.subTest(stock=code):
                self.assertLess(abs(panel[code].mean() / mean - 1), 0.1)
        again = acd_panel(0, means, 200_000, acd)
        np.testing.assert_array_equal(panel["000002"], again["000002"])


class FabricateTest(unittest.TestCase):
    def test_trade_classes(self):
        s = series_with_statistics("000001", 2000, 10, 5.0, seed=0)
        text = fabricate_tape([s], partial_fill_rate=0.3, seed=4)
        self.assertEqual(text, fabricate_tape([s], partial_fill_rate=0.3, seed=4))
        series = extract_all(parse_tape(io.StringIO(text)), SessionCalendar.default())
        filled = series[ClassFilter.FILLED]["000001"].n_trades
        partial = series[ClassFilter.PARTIALLY_FILLED]["000001"].n_trades
        self.assertEqual(filled + partial, 2000)
        self.assertLess(abs(partial / 2000 - 0.3), 0.05)
        self.assertEqual(sorted(series[ClassFilter.ALL]["000001"].centis), sorted(s.centis))

    def test_single_trade_sessions_are_not_written(self):
        s = DurationSeries.from_centis("000001", ClassFilter.ALL, [100, 200], [0, 0], n_trades=5)
        text = fabricate_tape([s])
        again = extract_all(parse_tape(io.StringIO(text)), SessionCalendar.default())
        extracted = again[ClassFilter.ALL]["000001"]
        self.assertEqual(extracted.centis.tolist(), [100, 200])
        self.assertEqual(extracted.n_trades, 3)

    def test_random_classes_need_a_seed(self):
        s = series_with_statistics("000001", 200, 0, 5.0, seed=0)
        with self.assertRaises(ParamError):
            fabricate_tape([s], partial_fill_rate=0.3)

    def test_too_long_durations_are_dropped(self):
        s = DurationSeries.from_centis("000001", ClassFilter.ALL, [100, 900000, 200])
        with self.assertLogs("durascale.synth", "WARNING"):
            text = fabricate_tape([s])
        series = extract_all(parse_tape(io.StringIO(text)), SessionCalendar.default())
        self.assertEqual(series[ClassFilter.ALL]["000001"].centis.tolist(), [100, 200])

    def test_empty(self):
        self.assertEqual(fabricate_tape([]), "stock,date,time,class\n")


if __name__ == "__main__":
    unittest.main()
