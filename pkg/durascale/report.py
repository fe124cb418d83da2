"""
Parameter tables assembled from fit artifacts.

For each estimator and trade class a table holds the fit to the pooled
ensemble and the mean and population standard deviation of the per-stock
fits, with the number of stocks preferring each model next to the ``chi``
columns.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tabulate import tabulate

from durascale.errors import LineageMismatch
from durascale.fitters import Estimator, FitResult, Model, tally_preferences

logger = logging.getLogger(__name__)

ENSEMBLE = "ensemble"
MEAN_STD = "mean ± std"
PARAMETERS = {Model.WEIBULL: ("alpha", "beta"), Model.QEXPONENTIAL: ("mu", "q")}
CHI = {Model.WEIBULL: "chi_w", Model.QEXPONENTIAL: "chi_q"}
COLUMNS = ["alpha", "beta", "chi_w", "mu", "q", "chi_q", "tail_exponent"]

FitKey = Tuple[Model, Estimator]


@dataclass(frozen=True)
class FitSet:
    """Fits of one trade class from one series lineage."""

    lineage: Optional[str]
    trade_class: str
    ensemble: Mapping[FitKey, FitResult]
    per_stock: Mapping[str, Mapping[FitKey, FitResult]] = field(default_factory=dict)

    @classmethod
    def from_artifact(cls, artifact: Dict[str, Any]) -> List["FitSet"]:
        """Splits a ``fits.json`` document into one set per class."""
        ensemble: Dict[str, Dict[FitKey, FitResult]] = {}
        per_stock: Dict[str, Dict[str, Dict[FitKey, FitResult]]] = {}
        for entry in artifact["fits"]:
            if "params" not in entry or not entry["converged"]:
                continue
            fit = FitResult.from_dict(entry)
            key = (fit.model, fit.estimator)
            if entry["scope"] == ENSEMBLE:
                ensemble.setdefault(entry["class"], {})[key] = fit
            else:
                per_stock.setdefault(entry["class"], {}).setdefault(entry["scope"], {})[
                    key
                ] = fit
        classes = list(dict.fromkeys([*ensemble, *per_stock]))
        return [
            cls(
                lineage=artifact.get("lineage"),
                trade_class=c,
                ensemble=ensemble.get(c, {}),
                per_stock=per_stock.get(c, {}),
            )
            for c in classes
        ]


def _tail(q: float) -> float:
    return 1 / (q - 1) if q > 1 else math.nan


def _ensemble_row(fits: Mapping[FitKey, FitResult], estimator: Estimator) -> Dict[str, Any]:
    row: Dict[str, Any] = {}
    for model, names in PARAMETERS.items():
        fit = fits.get((model, estimator))
        for name in names:
            row[name] = getattr(fit.params, name) if fit else math.nan
        row[CHI[model]] = fit.chi if fit else math.nan
    row["tail_exponent"] = _tail(row["q"])
    return row


def _mean_std_row(
    per_stock: Mapping[str, Mapping[FitKey, FitResult]], estimator: Estimator
) -> Dict[str, Any]:
    row: Dict[str, Any] = {}
    for model, names in PARAMETERS.items():
        fits = [f[model, estimator] for f in per_stock.values() if (model, estimator) in f]
        columns = {name: [getattr(f.params, name) for f in fits] for name in names}
        columns[CHI[model]] = [f.chi for f in fits]
        for name, values in columns.items():
            row[name] = float(np.mean(values)) if values else math.nan
            row[f"{name}_std"] = float(np.std(values)) if values else math.nan
    row["tail_exponent"] = _tail(row["q"])
    pairs = [
        (f[Model.WEIBULL, estimator], f[Model.QEXPONENTIAL, estimator])
        for f in per_stock.values()
        if (Model.WEIBULL, estimator) in f and (Model.QEXPONENTIAL, estimator) in f
    ]
    tally = tally_preferences(pairs)
    row["stocks"] = len(per_stock)
    row["preferred_w"] = tally.weibull
    row["preferred_q"] = tally.qexponential
    row["ties"] = tally.ties
    return row


@dataclass(frozen=True, eq=False)
class Report:
    lineage: Optional[str]
    rows: List[Dict[str, Any]]
    collapse: Optional[Dict[str, Any]] = None
    conditional: Optional[Dict[str, Any]] = None

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.rows)
        leading = ["estimator", "class", "scope"]
        return frame[leading + [c for c in frame.columns if c not in leading]]

    def _cell(self, row: Mapping[str, Any], name: str) -> str:
        value = row.get(name, math.nan)
        if value is None or (isinstance(value, float) and math.isnan(value)):
            return "-"
        text = f"{value:.3g}" if name.startswith("chi") else f"{value:.4g}"
        if row["scope"] == MEAN_STD and name != "tail_exponent":
            text += f" ± {row[f'{name}_std']:.2g}"
        if row["scope"] == MEAN_STD and name in CHI.values():
            preferred = row["preferred_w"] if name == "chi_w" else row["preferred_q"]
            total = row["preferred_w"] + row["preferred_q"] + row["ties"]
            text += f" ({preferred}/{total})"
        return text

    def to_text(self) -> str:
        blocks = []
        for estimator in Estimator:
            rows = [r for r in self.rows if r["estimator"] == estimator.value]
            if not rows:
                continue
            table = [
                [r["class"], r["scope"], *(self._cell(r, c) for c in COLUMNS)] for r in rows
            ]
            blocks.append(
                f"{estimator.value.upper()}\n"
                + tabulate(table, headers=["class", "", *COLUMNS], tablefmt="simple")
            )
        if self.collapse is not None:
            blocks.append(
                "collapse: "
                + ", ".join(
                    f"{c} max KS {d['max_ks']:.4g} collapsed={d['collapsed']}"
                    for c, d in sorted(self.collapse.items())
                )
            )
        if self.conditional is not None:
            blocks.append(
                "conditional: "
                + ", ".join(
                    f"{c} <g|g0> spearman {d['spearman']['correlation']:.3g} "
                    f"(p={d['spearman']['pvalue']:.2g})"
                    for c, d in sorted(self.conditional.items())
                )
            )
        return "\n\n".join(blocks) + "\n"


def _check_lineage(expected: Optional[str], found: Optional[str]) -> None:
    if expected != found:
        raise LineageMismatch(
            f"artifacts derive from different series ({expected} vs {found})",
            expected=str(expected),
            found=str(found),
        )


def report(
    fit_sets: Sequence[FitSet],
    collapse: Optional[Dict[str, Any]] = None,
    conditional: Optional[Dict[str, Any]] = None,
) -> Report:
    """
    Builds the parameter tables.

    ``collapse`` and ``conditional`` are the ``collapse.json`` and
    ``profile.json`` documents; every input must carry the same lineage.

    Examples
    --------
    >>> from durascale.models import QExpParams
    >>> fits = {
    ...     s: {(Model.QEXPONENTIAL, Estimator.MLE): FitResult(
    ...         Model.QEXPONENTIAL, Estimator.MLE, QExpParams(mu=2.0, q=1.25), 0.1, 100, True)}
    ...     for s in ("000001", "000002")
    ... }
    >>> rows = report([FitSet("abc", "all", {}, fits)]).rows
    >>> mean = rows[1]
    >>> mean["q"], mean["q_std"], round(mean["tail_exponent"], 2)
    (1.25, 0.0, 4.0)
    """
    lineage = fit_sets[0].lineage if fit_sets else None
    for fit_set in fit_sets:
        _check_lineage(lineage, fit_set.lineage)
    for artifact in (collapse, conditional):
        if artifact is not None:
            _check_lineage(lineage, artifact.get("lineage"))
    rows = []
    for estimator in Estimator:
        for fit_set in fit_sets:
            keys = set(fit_set.ensemble) | {k for f in fit_set.per_stock.values() for k in f}
            if not any(e is estimator for _, e in keys):
                continue
            base = {"estimator": estimator.value, "class": fit_set.trade_class}
            rows.append(
                {**base, "scope": ENSEMBLE, **_ensemble_row(fit_set.ensemble, estimator)}
            )
            if fit_set.per_stock:
                rows.append(
                    {**base, "scope": MEAN_STD, **_mean_std_row(fit_set.per_stock, estimator)}
                )
    logger.info("report with %d rows", len(rows))
    return Report(
        lineage=lineage,
        rows=rows,
        collapse=None if collapse is None else collapse["classes"],
        conditional=None if conditional is None else conditional["classes"],
    )
