"""
Reading and writing of pipeline artifacts.

Every file is written to a temporary sibling first and moved into place, so a
reader never sees a partial artifact. JSON is written with sorted keys and
CSV with shortest round-trip floats, so the same inputs always give the same
bytes.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd

from durascale.errors import EmptyInput, MalformedRow
from durascale.tape import CENTIS_PER_SECOND, ClassFilter, DurationSeries

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
SERIES = "series.csv"
SERIES_COUNTS = "series-counts.csv"
SERIES_COLUMNS = ["stock", "class", "session", "duration"]

PathLike = Union[str, Path]


def write_text(path: PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise
    logger.info("wrote %s", path)
    return path


def write_json(path: PathLike, obj: Any) -> Path:
    return write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def read_json(path: PathLike) -> Any:
    with open(path) as f:
        return json.load(f)


def write_csv(path: PathLike, frame: pd.DataFrame, float_format: Optional[str] = None) -> Path:
    return write_text(
        path, frame.to_csv(index=False, lineterminator="\n", float_format=float_format)
    )


def digest(path: PathLike) -> str:
    """SHA-256 of a file's bytes."""
    sha = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            sha.update(chunk)
    return sha.hexdigest()


def series_path(path: PathLike) -> Path:
    """A directory stands for the series file inside it."""
    path = Path(path)
    return path / SERIES if path.is_dir() else path


def write_series(path: PathLike, series: Iterable[DurationSeries]) -> Path:
    """
    Writes ``stock,class,session,duration`` rows (seconds, two decimals) and
    the trade counts to a ``series-counts.csv`` sidecar.
    """
    path = series_path(path)
    series = list(series)
    frame = pd.concat(
        [
            pd.DataFrame(
                {
                    "stock": s.stock_code,
                    "class": s.trade_class_filter.value,
                    "session": s.session_ids,
                    "duration": s.durations,
                }
            )
            for s in series
        ]
        or [pd.DataFrame(columns=SERIES_COLUMNS)],
        ignore_index=True,
    )
    counts = pd.DataFrame(
        {
            "stock": [s.stock_code for s in series],
            "class": [s.trade_class_filter.value for s in series],
            "n_trades": [s.n_trades for s in series],
        }
    )
    write_csv(path.with_name(SERIES_COUNTS), counts)
    return write_csv(path, frame, float_format="%.2f")


def read_series(path: PathLike) -> Dict[ClassFilter, Dict[str, DurationSeries]]:
    """
    Reads a series file back, grouped by class and stock.

    Trade counts come from the ``series-counts.csv`` sidecar when present and
    are otherwise rebuilt from the session ids.
    """
    path = series_path(path)
    frame = pd.read_csv(path, dtype={"stock": str, "class": str})
    missing = [c for c in SERIES_COLUMNS if c not in frame.columns]
    if missing:
        raise MalformedRow(
            f"{path}: missing column {missing[0]!r}", row=1, column=missing[0], value=""
        )
    unknown = ~frame["class"].isin([f.value for f in ClassFilter])
    if unknown.any():
        row = int(np.flatnonzero(unknown)[0])
        raise MalformedRow(
            f"{path}:{row + 2}: unknown class {frame['class'][row]!r}",
            row=row + 2,
            column="class",
            value=str(frame["class"][row]),
        )
    durations = pd.to_numeric(frame["duration"], errors="coerce")
    bad = durations.isna() | (durations < 0)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise MalformedRow(
            f"{path}:{row + 2}: bad duration {frame['duration'][row]!r}",
            row=row + 2,
            column="duration",
            value=str(frame["duration"][row]),
        )
    counts: Dict[tuple, int] = {}
    sidecar = path.with_name(SERIES_COUNTS)
    if sidecar.exists():
        table = pd.read_csv(sidecar, dtype={"stock": str, "class": str})
        counts = {
            (r.stock, r["class"]): int(r.n_trades) for _, r in table.iterrows()
        }
    centis = np.rint(durations.to_numpy() * CENTIS_PER_SECOND).astype(np.int64)
    result: Dict[ClassFilter, Dict[str, DurationSeries]] = {}
    for (stock, cls), index in frame.groupby(["stock", "class"], sort=False).indices.items():
        class_filter = ClassFilter(cls)
        result.setdefault(class_filter, {})[stock] = DurationSeries.from_centis(
            stock,
            class_filter,
            centis[index],
            frame["session"].to_numpy()[index],
            n_trades=counts.get((stock, cls)),
        )
    if not result:
        raise EmptyInput(f"{path} holds no durations")
    logger.info("read %d durations from %s", len(frame), path)
    return result


@dataclass
class RunManifest:
    """
    One ``manifest.json`` per output directory, one entry per command run
    into it. Entries hold no wall-clock data.
    """

    tool: str
    version: str
    entries: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    @classmethod
    def load(cls, directory: PathLike, tool: str, version: str) -> "RunManifest":
        path = Path(directory) / MANIFEST
        if not path.exists():
            return cls(tool, version)
        stored = read_json(path)
        return cls(tool, version, dict(stored.get("entries", {})))

    def record(
        self,
        command: str,
        argv: List[str],
        config: Dict[str, Any],
        inputs: Dict[str, str],
        lineage: Optional[str] = None,
        seeds: Optional[List[int]] = None,
        **extra,
    ) -> None:
        self.entries[command] = {
            "argv": list(argv),
            "config": config,
            "inputs": inputs,
            "lineage": lineage,
            "seeds": seeds or [],
            **extra,
        }

    def to_dict(self):
        return {"tool": self.tool, "version": self.version, "entries": self.entries}

    def write(self, directory: PathLike) -> Path:
        return write_json(Path(directory) / MANIFEST, self.to_dict())
