#! /usr/bin/env python
import doctest
import os
import unittest

import durascale
from durascale import (
    artifacts,
    cli,
    conditional,
    densities,
    errors,
    fitters,
    models,
    report,
    synth,
    tape,
)

SEEDS = int(os.environ.get("DURASCALE_TEST_SEEDS", 20))


def load_tests(_, tests, __):

    cli.PRINTING = False
    for mod in [
        tape,
        densities,
        models,
        fitters,
        conditional,
        synth,
        artifacts,
        report,
        cli,
        errors,
        durascale,
    ]:
        tests.addTests(doctest.DocTestSuite(mod))
    return tests


class ErrorFamilyTest(unittest.TestCase):
    def test_families(self):
        data = [
            errors.MalformedRow("m", row=2, column="time", value="x"),
            errors.EmptyTape("m"),
            errors.DegenerateSeries("m", source=("000001", "all")),
            errors.TooFewSamples("m", count=1, required=100),
            errors.LineageMismatch("m", expected="a", found="b"),
            errors.ParamError("m", parameter="q", value=1.0),
        ]
        fits = [
            errors.ConvergenceError("m", value=1.0, tolerance=1e-12),
            errors.NonConvergence("m"),
            errors.TailTooLight("m", fallback=None, log_likelihood=0.0),
        ]
        for e in data:
            self.assertIsInstance(e, errors.DataError)
            self.assertNotIsInstance(e, errors.FitError)
        for e in fits:
            self.assertIsInstance(e, errors.FitError)
            self.assertNotIsInstance(e, errors.DataError)

    def test_message(self):
        e = errors.TooFewSamples("only 3 values", count=3, required=100)
        self.assertEqual(str(e), "only 3 values")
        with self.assertRaises(errors.DurascaleError):
            raise e


if __name__ == "__main__":
    unittest.main()
