"""
The ``durascale`` command line.

Each subcommand is an :py:class:`~dollar_lambda.Args` dataclass whose parser
is prefixed with :py:func:`~dollar_lambda.matches` on the subcommand name.
:py:func:`run` returns the exit status instead of exiting: 0 on success, 1 on
a usage error, 2 on a data error and 3 when a fit did not converge (the
partial results are still written and flagged).
"""
from __future__ import annotations

import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from dollar_lambda import Args, Parser, field, matches, option
from dollar_lambda.data_structures import Sequence as ArgSequence
from dollar_lambda.errors import ArgumentError, HelpError

from durascale import __version__, artifacts
from durascale.conditional import Pairs, conditional_profile, successive_pairs
from durascale.densities import (
    CALIBRATION_REPLICATES,
    DEFAULT_BINS_PER_DECADE,
    NormalizedSeries,
    bulk_fraction,
    collapse_report,
    estimate_ccdf,
    estimate_density,
    normalize,
    pool,
)
from durascale.errors import (
    DataError,
    DegenerateSeries,
    FitError,
    NonConvergence,
    TailTooLight,
    UsageError,
)
from durascale.fitters import (
    MAX_ITER,
    RESIDUAL_DEFINITIONS,
    Estimator,
    FitOutcome,
    Model,
    fit_all,
)
from durascale.models import QExpParams, WeibullParams, model_curve
from durascale.report import ENSEMBLE, FitSet, report
from durascale.synth import (
    PRNG_ALGORITHM,
    ACDConfig,
    GeneratorConfig,
    GeneratorModel,
    Innovation,
    acd_panel,
    fabricate_tape,
    generate,
)
from durascale.tape import (
    ClassFilter,
    DurationSeries,
    SessionCalendar,
    extract_all,
    parse_tape,
    summarize,
)

logger = logging.getLogger(__name__)

TOOL = "durascale"
PRINTING = os.environ.get("DURASCALE_PRINTING", "1") not in ("0", "false", "")
THREADS = int(os.environ.get("DURASCALE_THREADS", os.cpu_count() or 1))
LOG_LEVEL = os.environ.get("DURASCALE_LOG_LEVEL", "WARNING")

EVERY = "every"
TradeClassChoice = Literal["every", "all", "filled", "partially_filled"]


def _print(*args, **kwargs):
    if PRINTING:
        print(*args, **kwargs)


@dataclass
class IngestArgs(Args):
    tape: str = field(help="trade tape CSV (stock,date,time,class)")
    out: str = field(help="output directory (series.csv, manifest.json)")
    calendar: str = field(
        default="default", help="session calendar JSON or 'default' (9:30-11:30, 13:00-15:00)"
    )


@dataclass
class SummarizeArgs(Args):
    series: str = field(help="series file or directory")
    out: str = field(help="output directory (summary.csv, manifest.json)")


@dataclass
class CollapseArgs(Args):
    series: str = field(help="series file or directory")
    out: str = field(
        help="output directory (collapse.json, density and ccdf CSVs, manifest.json)"
    )
    trade_class: TradeClassChoice = field(default=EVERY, help="class to analyse")
    bins_per_decade: int = field(default=DEFAULT_BINS_PER_DECADE, help="log bins per decade")
    alpha: float = field(default=0.01, help="KS significance level")
    min_samples: int = field(default=100, help="minimum normalized durations per stock")
    replicates: int = field(
        default=CALIBRATION_REPLICATES,
        help="resamples calibrating the critical value; 0 for Bonferroni bounds",
    )
    seed: int = field(default=0, help="seed of the calibration resamples")


@dataclass
class FitArgs(Args):
    series: str = field(help="series file or directory")
    out: str = field(help="output directory (fits.json, manifest.json)")
    model: Literal["both", "weibull", "qexp"] = field(default="both", help="models to fit")
    estimator: Literal["both", "mle", "nlse"] = field(default="both", help="estimators")
    trade_class: TradeClassChoice = field(default=EVERY, help="class to analyse")
    bins_per_decade: int = field(default=DEFAULT_BINS_PER_DECADE, help="log bins per decade")
    max_iter: int = field(default=MAX_ITER, help="least squares iteration cap")


@dataclass
class ConditionalArgs(Args):
    series: str = field(help="series file or directory")
    out: str = field(help="output directory (profile.json, conditional CSVs, manifest.json)")
    trade_class: TradeClassChoice = field(default=EVERY, help="class to analyse")
    bins_per_decade: int = field(default=DEFAULT_BINS_PER_DECADE, help="log bins per decade")
    g0_bins: int = field(default=20, help="log bins of the preceding duration")
    min_samples: int = field(default=1000, help="minimum number of pairs")


@dataclass
class SynthArgs(Args):
    seed: int = field(help="generator seed")
    out: str = field(help="output file")
    model: Literal["weibull", "qexp", "acd"] = field(default="weibull", help="generator")
    params: str = field(
        default="",
        help="k=v list: alpha,beta | mu,q | omega,a,b,innovation,shape",
    )
    n: int = field(
        default=100_000,
        help="number of durations",
        parser=option("n", flag="--n", type=int, help="number of durations"),
    )
    scale: float = field(default=1.0, help="seconds per unit of g")
    stock: str = field(default="000001", help="stock code")
    as_tape: bool = field(default=False, help="write a trade tape instead of a series")


@dataclass
class ReportArgs(Args):
    fits: str = field(help="fits.json")
    out: str = field(help="output directory (report.csv, report.txt, manifest.json)")
    collapse: Optional[str] = field(default=None, help="collapse.json")
    conditional: Optional[str] = field(default=None, help="profile.json")


@dataclass
class CurveArgs(Args):
    params: str = field(help="k=v list: alpha,beta | mu,q")
    out: str = field(help="output CSV")
    model: Literal["weibull", "qexp"] = field(default="weibull", help="model")
    g_min: float = field(default=1e-3, help="smallest g")
    g_max: float = field(default=1e2, help="largest g")
    points_per_decade: int = field(default=20, help="grid density")


@dataclass
class ReproduceArgs(Args):
    seed: int = field(help="master seed")
    out: str = field(help="output directory, one subdirectory per stage")
    stocks: int = field(default=23, help="number of synthetic stocks")
    n: int = field(
        default=20_000,
        help="durations per stock",
        parser=option("n", flag="--n", type=int, help="durations per stock"),
    )
    partial_fill_rate: float = field(default=0.3, help="share of partially filled trades")


def _parse_params(text: str, allowed: Sequence[str]) -> Dict[str, str]:
    """
    >>> _parse_params("alpha=1.85, beta=0.68", ["alpha", "beta"])
    {'alpha': '1.85', 'beta': '0.68'}
    """
    params = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in allowed:
            raise UsageError(f"bad --params entry {item!r}; expected k=v with k in {list(allowed)}")
        params[key] = value.strip()
    return params


def _floats(params: Dict[str, str], *names: str) -> Dict[str, float]:
    missing = [n for n in names if n not in params]
    if missing:
        raise UsageError(f"--params is missing {', '.join(missing)}")
    try:
        return {n: float(params[n]) for n in names}
    except ValueError as e:
        raise UsageError(f"--params: {e}")


def _model_params(model: str, text: str):
    if model == "weibull":
        return WeibullParams(**_floats(_parse_params(text, ["alpha", "beta"]), "alpha", "beta"))
    return QExpParams(**_floats(_parse_params(text, ["mu", "q"]), "mu", "q"))


def _classes(choice: str) -> List[ClassFilter]:
    return list(ClassFilter) if choice == EVERY else [ClassFilter(choice)]


def _load(series: str):
    path = artifacts.series_path(series)
    return artifacts.read_series(path), path, artifacts.digest(path)


def _normalized(series: Dict[str, DurationSeries]) -> List[NormalizedSeries]:
    normalized = []
    for s in series.values():
        try:
            normalized.append(normalize(s))
        except DegenerateSeries as e:
            logger.warning("skipping %s: %s", "/".join(e.source), e)
    return normalized


def _finish(
    command: str,
    argv: Sequence[str],
    out: Path,
    config: Dict[str, Any],
    inputs: Dict[str, str],
    lineage: Optional[str],
    **extra,
) -> None:
    manifest = artifacts.RunManifest.load(out, TOOL, __version__)
    manifest.record(command, list(argv), config, inputs, lineage, **extra)
    manifest.write(out)


def ingest(args: Dict[str, Any], argv: Sequence[str]) -> int:
    out = Path(args["out"])
    calendar = (
        SessionCalendar.default()
        if args["calendar"] == "default"
        else SessionCalendar.from_json(args["calendar"])
    )
    tape = parse_tape(args["tape"])
    series = extract_all(tape, calendar)
    path = artifacts.write_series(
        out / artifacts.SERIES, [s for by_stock in series.values() for s in by_stock.values()]
    )
    lineage = artifacts.digest(path)
    _finish(
        "ingest",
        argv,
        out,
        {**args, "calendar": calendar.to_dict()},
        {args["tape"]: artifacts.digest(args["tape"])},
        lineage,
    )
    return 0


def summarize_command(args: Dict[str, Any], argv: Sequence[str]) -> int:
    series, path, lineage = _load(args["series"])
    out = Path(args["out"])
    summary = summarize(s for by_stock in series.values() for s in by_stock.values())
    artifacts.write_csv(out / "summary.csv", summary.to_table())
    _print(summary.to_table().to_string(index=False))
    _finish("summarize", argv, out, args, {str(path): lineage}, lineage)
    return 0


def collapse(args: Dict[str, Any], argv: Sequence[str]) -> int:
    series, path, lineage = _load(args["series"])
    out = Path(args["out"])
    bins = args["bins_per_decade"]
    classes = {}
    for class_filter in _classes(args["trade_class"]):
        if class_filter not in series:
            continue
        normalized = _normalized(series[class_filter])
        result = collapse_report(
            normalized, args["alpha"], args["min_samples"], args["replicates"], args["seed"]
        )
        pooled = pool(normalized)
        for s in [*normalized, pooled]:
            name = f"{class_filter.value}-{s.source[0]}"
            artifacts.write_csv(
                out / f"density-{name}.csv", estimate_density(s.values, bins).to_frame()
            )
            artifacts.write_csv(out / f"ccdf-{name}.csv", estimate_ccdf(s.values).to_frame())
        raw = [series[class_filter][s.source[0]].durations for s in normalized]
        raw_result = collapse_report(
            [NormalizedSeries(r[r > 0], None, s.source) for r, s in zip(raw, normalized)],
            args["alpha"],
            args["min_samples"],
            args["replicates"],
            args["seed"],
        )
        classes[class_filter.value] = {
            **result.to_dict(),
            "unnormalized_max_ks": raw_result.max_ks,
            "bulk_fraction": {s.label: bulk_fraction(s.values) for s in normalized},
            "pooled_bulk_fraction": bulk_fraction(pooled.values),
            "sigma": {s.label: s.sigma for s in normalized},
        }
        _print(
            f"{class_filter.value}: max KS {result.max_ks:.4g}"
            f" (unnormalized {raw_result.max_ks:.4g}), collapsed={result.collapsed}"
        )
    artifacts.write_json(
        out / "collapse.json",
        {"lineage": lineage, "alpha": args["alpha"], "bins_per_decade": bins, "classes": classes},
    )
    _finish(
        "collapse",
        argv,
        out,
        args,
        {str(path): lineage},
        lineage,
        bins_per_decade=bins,
        seeds=[args["seed"]] if args["replicates"] else [],
        prng=PRNG_ALGORITHM,
    )
    return 0


def _entry(class_filter: ClassFilter, scope: str, key: Tuple[Model, Estimator], outcome: FitOutcome):
    base = {"class": class_filter.value, "scope": scope}
    if isinstance(outcome, FitError):
        model, estimator = key
        entry = {
            **base,
            "model": model.value,
            "estimator": estimator.value,
            "converged": False,
            "error": type(outcome).__name__,
            "message": outcome.message,
        }
        if isinstance(outcome, NonConvergence) and outcome.partial is not None:
            entry.update(outcome.partial.to_dict())
        if isinstance(outcome, TailTooLight):
            entry["fallback"] = outcome.fallback.to_dict()
            entry["fallback_log_likelihood"] = outcome.log_likelihood
        return entry
    return {**base, **outcome.to_dict()}


def fit(args: Dict[str, Any], argv: Sequence[str]) -> int:
    series, path, lineage = _load(args["series"])
    out = Path(args["out"])
    models = list(Model) if args["model"] == "both" else [Model(args["model"])]
    estimators = list(Estimator) if args["estimator"] == "both" else [Estimator(args["estimator"])]
    bins = args["bins_per_decade"]

    def fit_one(values: np.ndarray):
        return fit_all(values, models, estimators, bins_per_decade=bins, max_iter=args["max_iter"])

    entries = []
    for class_filter in _classes(args["trade_class"]):
        if class_filter not in series:
            continue
        normalized = _normalized(series[class_filter])
        if not normalized:
            continue
        scopes = [(ENSEMBLE, pool(normalized).values)]
        if len(normalized) > 1:
            scopes += [(s.source[0], s.values) for s in normalized]
        with ThreadPoolExecutor(max_workers=max(1, THREADS)) as executor:
            outcomes = list(executor.map(fit_one, [values for _, values in scopes]))
        for (scope, _), by_key in zip(scopes, outcomes):
            for key, outcome in by_key.items():
                entries.append(_entry(class_filter, scope, key, outcome))
    artifacts.write_json(
        out / "fits.json",
        {
            "lineage": lineage,
            "bins_per_decade": bins,
            "residual_definitions": {e.value: d for e, d in RESIDUAL_DEFINITIONS.items()},
            "fits": entries,
        },
    )
    failed = [e for e in entries if e.get("error") == NonConvergence.__name__]
    for e in failed:
        logger.warning("%s/%s %s %s: %s", e["class"], e["scope"], e["model"], e["estimator"], e["message"])
    _finish(
        "fit",
        argv,
        out,
        args,
        {str(path): lineage},
        lineage,
        bins_per_decade=bins,
        residual_definitions={e.value: d for e, d in RESIDUAL_DEFINITIONS.items()},
    )
    _print(f"{len(entries)} fits, {len(failed)} not converged")
    return 3 if failed else 0


def conditional(args: Dict[str, Any], argv: Sequence[str]) -> int:
    series, path, lineage = _load(args["series"])
    out = Path(args["out"])
    classes = {}
    for class_filter in _classes(args["trade_class"]):
        if class_filter not in series:
            continue
        pairs = Pairs.concat([successive_pairs(s) for s in _normalized(series[class_filter])])
        profile = conditional_profile(
            pairs,
            bins_per_decade=args["bins_per_decade"],
            g0_bins=args["g0_bins"],
            min_samples=args["min_samples"],
        )
        name = class_filter.value
        artifacts.write_csv(out / f"conditional-density-{name}.csv", profile.density_frame())
        artifacts.write_csv(out / f"z-{name}.csv", profile.z_frame())
        artifacts.write_csv(
            out / f"mean-conditional-{name}.csv", profile.mean_conditional.to_frame()
        )
        classes[name] = {**profile.to_dict(), "pairs": len(pairs)}
        rho, p = profile.mean_conditional.spearman()
        _print(f"{name}: {len(pairs)} pairs, <g|g0> spearman {rho:.3g} (p={p:.2g})")
    artifacts.write_json(out / "profile.json", {"lineage": lineage, "classes": classes})
    _finish(
        "conditional",
        argv,
        out,
        args,
        {str(path): lineage},
        lineage,
        bins_per_decade=args["bins_per_decade"],
    )
    return 0


def synth(args: Dict[str, Any], argv: Sequence[str]) -> int:
    model = GeneratorModel(args["model"])
    if model is GeneratorModel.ACD:
        params = _parse_params(args["params"], ["omega", "a", "b", "innovation", "shape"])
        try:
            acd = ACDConfig(
                **_floats(params, "omega", "a", "b"),
                innovation=Innovation(params.get("innovation", "exponential")),
                shape=float(params.get("shape", 1.0)),
            )
        except ValueError as e:
            raise UsageError(f"--params: {e}")
        config = GeneratorConfig(model, n=args["n"], seed=args["seed"], acd=acd)
    else:
        config = GeneratorConfig(
            model,
            n=args["n"],
            seed=args["seed"],
            params=_model_params(args["model"], args["params"]),
        )
    durations = generate(config) * args["scale"]
    series = DurationSeries.from_seconds(args["stock"], ClassFilter.ALL, durations)
    out = Path(args["out"])
    if args["as_tape"]:
        artifacts.write_text(out, fabricate_tape([series]))
    else:
        artifacts.write_series(out, [series])
    _finish(
        "synth",
        argv,
        out.parent,
        args,
        {},
        artifacts.digest(out),
        seeds=[args["seed"]],
        prng=PRNG_ALGORITHM,
    )
    return 0


def report_command(args: Dict[str, Any], argv: Sequence[str]) -> int:
    out = Path(args["out"])
    inputs = {args["fits"]: artifacts.digest(args["fits"])}
    optional = {}
    for name in ("collapse", "conditional"):
        if args[name] is not None:
            optional[name] = artifacts.read_json(args[name])
            inputs[args[name]] = artifacts.digest(args[name])
    fits = artifacts.read_json(args["fits"])
    result = report(FitSet.from_artifact(fits), **optional)
    artifacts.write_csv(out / "report.csv", result.to_frame())
    text = result.to_text()
    artifacts.write_text(out / "report.txt", text)
    _print(text, end="")
    _finish("report", argv, out, args, inputs, result.lineage)
    return 0


def curve(args: Dict[str, Any], argv: Sequence[str]) -> int:
    params = _model_params(args["model"], args["params"])
    if not 0 < args["g_min"] < args["g_max"]:
        raise UsageError("need 0 < --g-min < --g-max")
    decades = np.log10(args["g_max"] / args["g_min"])
    g = np.geomspace(
        args["g_min"], args["g_max"], max(2, int(round(decades * args["points_per_decade"])) + 1)
    )
    out = Path(args["out"])
    artifacts.write_csv(out, model_curve(params, g))
    _finish("curve", argv, out.parent, args, {}, None)
    return 0


def reproduce(args: Dict[str, Any], argv: Sequence[str]) -> int:
    """
    The full pipeline on a synthetic panel: ACD(1,1) durations with Weibull
    innovations whose mean durations span 3.81 s to 49.35 s.
    """
    out = Path(args["out"])
    seed = args["seed"]
    acd = ACDConfig(omega=0.1, a=0.2, b=0.7, innovation=Innovation.WEIBULL, shape=0.7)
    panel = acd_panel(seed, np.geomspace(3.81, 49.35, args["stocks"]), args["n"], acd)
    series = [DurationSeries.from_seconds(code, ClassFilter.ALL, d) for code, d in panel.items()]
    tape = out / "tape.csv"
    artifacts.write_text(
        tape,
        fabricate_tape(series, partial_fill_rate=args["partial_fill_rate"], seed=seed),
    )
    _finish("reproduce", argv, out, args, {}, artifacts.digest(tape), seeds=[seed], prng=PRNG_ALGORITHM)
    data = str(out / "series")
    stages = [
        ["ingest", "--tape", str(tape), "--out", data],
        ["summarize", "--series", data, "--out", data],
        ["collapse", "--series", data, "--out", str(out / "collapse")],
        ["fit", "--series", data, "--out", str(out / "fit")],
        ["conditional", "--series", data, "--out", str(out / "conditional")],
        [
            "report",
            "--fits", str(out / "fit" / "fits.json"),
            "--collapse", str(out / "collapse" / "collapse.json"),
            "--conditional", str(out / "conditional" / "profile.json"),
            "--out", str(out / "report"),
        ],
    ]  # fmt: skip
    status = 0
    for stage in stages:
        code = run(stage)
        if code not in (0, 3):
            return code
        status = max(status, code)
    return status


Command = Callable[[Dict[str, Any], Sequence[str]], int]

COMMANDS: Dict[str, Tuple[type, Command]] = {
    "ingest": (IngestArgs, ingest),
    "summarize": (SummarizeArgs, summarize_command),
    "collapse": (CollapseArgs, collapse),
    "fit": (FitArgs, fit),
    "conditional": (ConditionalArgs, conditional),
    "synth": (SynthArgs, synth),
    "report": (ReportArgs, report_command),
    "curve": (CurveArgs, curve),
    "reproduce": (ReproduceArgs, reproduce),
}


def _parser(name: str) -> Parser:
    args_type, _ = COMMANDS[name]
    return (matches(name, regex=False) >> args_type.parser().wrap_help()) >> Parser.done()


def _usage() -> str:
    return "usage: durascale [" + " | ".join(COMMANDS) + "] ..."


def _parse(argv: Sequence[str]):
    """
    Parses ``argv`` into a subcommand and its arguments, or returns an exit
    status after printing usage.
    """
    if not argv or argv[0] in ("-h", "--help"):
        _print(_usage())
        return 0 if argv else 1
    name = argv[0]
    if name not in COMMANDS:
        _print(_usage())
        _print(f"Unknown command: {name}")
        return 1
    parser = _parser(name)
    result = parser.parse(ArgSequence(list(argv))).get
    if isinstance(result, ArgumentError):
        _print(f"usage: durascale {parser.usage}")
        for key, help_ in parser.helps.items():
            _print(f"{key}: {help_}")
        if not isinstance(result, HelpError):
            _print(result.usage)
            return 1
        return 0
    parsed = result.head.parsed.get.to_dict()
    parsed.pop(name)
    return name, parsed


def run(argv: Sequence[str]) -> int:
    """
    Runs one subcommand and returns its exit status.
    """
    parsed = _parse(argv)
    if isinstance(parsed, int):
        return parsed
    name, args = parsed
    _, command = COMMANDS[name]
    logger.info("running %s", name)
    try:
        return command(args, argv)
    except UsageError as e:
        _print(f"usage error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        _print(f"data error: {e}", file=sys.stderr)
        return 2
    except FitError as e:
        _print(f"fit error: {e}", file=sys.stderr)
        return 3
    except FileNotFoundError as e:
        _print(f"data error: {e}", file=sys.stderr)
        return 2


def main():
    logging.basicConfig(
        level=LOG_LEVEL.upper(), format="%(levelname)s %(name)s: %(message)s"
    )
    sys.exit(run(sys.argv[1:]))
