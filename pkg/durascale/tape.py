"""
Trade tapes, the exchange session calendar and intertrade duration extraction.

Timestamps are held as integer centiseconds since midnight, so every duration
is an exact integer number of centiseconds. Durations are taken between
consecutive trades of one stock inside one continuous-auction session;
nothing is measured across the noon break or overnight.
"""
from __future__ import annotations

import datetime as dt
import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, TextIO, Tuple, Union

import numpy as np
import pandas as pd

from durascale.errors import DomainError, EmptyTape, MalformedRow, ParamError

logger = logging.getLogger(__name__)

CENTIS_PER_SECOND = 100
CENTIS_PER_DAY = 24 * 3600 * CENTIS_PER_SECOND
EPOCH = np.datetime64("1970-01-01", "D")

_CLOCK = r"^\s*(\d{1,2}):(\d{2}):(\d{2})(?:\.(\d+))?\s*$"


class TradeClass(Enum):
    FILLED = "F"
    PARTIALLY_FILLED = "P"


class ClassFilter(Enum):
    ALL = "all"
    FILLED = "filled"
    PARTIALLY_FILLED = "partially_filled"

    def matches(self, trade_class: TradeClass) -> bool:
        """
        >>> ClassFilter.ALL.matches(TradeClass.PARTIALLY_FILLED)
        True
        >>> ClassFilter.FILLED.matches(TradeClass.PARTIALLY_FILLED)
        False
        """
        if self is ClassFilter.ALL:
            return True
        return self.trade_class is trade_class

    @property
    def trade_class(self) -> Optional[TradeClass]:
        return {
            ClassFilter.ALL: None,
            ClassFilter.FILLED: TradeClass.FILLED,
            ClassFilter.PARTIALLY_FILLED: TradeClass.PARTIALLY_FILLED,
        }[self]

    def mask(self, classes: np.ndarray) -> np.ndarray:
        if self is ClassFilter.ALL:
            return np.ones(len(classes), dtype=bool)
        return classes == self.trade_class.value


def format_clock(centis: int) -> str:
    """
    >>> format_clock(3420000)
    '09:30:00.00'
    """
    seconds, cc = divmod(int(centis), CENTIS_PER_SECOND)
    minutes, ss = divmod(seconds, 60)
    hh, mm = divmod(minutes, 60)
    return f"{hh:02d}:{mm:02d}:{ss:02d}.{cc:02d}"


def parse_clock(text: str) -> int:
    """
    Parses ``HH:MM:SS`` with up to two fractional digits into centiseconds.

    >>> parse_clock("9:30:01.5")
    3420150
    >>> parse_clock("09:30:00.005")
    Traceback (most recent call last):
    ...
    durascale.errors.DomainError: '09:30:00.005' is not a clock time with 0.01 s resolution
    """
    centis = _clock_to_centis(pd.Series([text]))[0]
    if centis < 0:
        raise DomainError(
            f"{text!r} is not a clock time with 0.01 s resolution", value=float("nan")
        )
    return int(centis)


def _clock_to_centis(times: pd.Series) -> np.ndarray:
    """Vectorized clock parser; malformed entries map to -1."""
    parts = times.astype(str).str.extract(_CLOCK)
    valid = parts[0].notna()
    fraction = parts[3].fillna("")
    valid &= fraction.str.len() <= 2
    hh = pd.to_numeric(parts[0], errors="coerce").fillna(-1).astype(np.int64)
    mm = pd.to_numeric(parts[1], errors="coerce").fillna(-1).astype(np.int64)
    ss = pd.to_numeric(parts[2], errors="coerce").fillna(-1).astype(np.int64)
    cc = pd.to_numeric(fraction.str.ljust(2, "0"), errors="coerce").fillna(0)
    valid &= (hh < 24) & (mm < 60) & (ss < 60)
    centis = ((hh * 60 + mm) * 60 + ss) * CENTIS_PER_SECOND + cc.astype(np.int64)
    return np.where(valid.to_numpy(), centis.to_numpy(), -1)


@dataclass(frozen=True)
class TradeRecord:
    stock_code: str
    trade_date: dt.date
    centis: int
    trade_class: TradeClass

    def __post_init__(self):
        if self.centis < 0 or self.centis >= CENTIS_PER_DAY:
            raise DomainError(
                f"timestamp {self.centis} cs lies outside the trading day",
                value=float(self.centis),
            )

    @property
    def timestamp(self) -> float:
        """Seconds since midnight."""
        return self.centis / CENTIS_PER_SECOND


@dataclass(frozen=True, eq=False)
class TradeTape:
    """
    Columnar trade records, always sorted by (stock, date, timestamp).

    Ties keep their input order.
    """

    stock: np.ndarray
    day: np.ndarray
    centis: np.ndarray
    trade_class: np.ndarray

    def __post_init__(self):
        frame = pd.DataFrame(
            {
                "stock": np.asarray(self.stock, dtype=object),
                "day": np.asarray(self.day, dtype=np.int64),
                "centis": np.asarray(self.centis, dtype=np.int64),
                "trade_class": np.asarray(self.trade_class, dtype=object),
            }
        )
        frame = frame.sort_values(["stock", "day", "centis"], kind="mergesort")
        for name in frame.columns:
            object.__setattr__(self, name, frame[name].to_numpy())

    @classmethod
    def from_records(cls, records: Iterable[TradeRecord]) -> "TradeTape":
        records = list(records)
        return cls(
            stock=np.array([r.stock_code for r in records], dtype=object),
            day=np.array(
                [(np.datetime64(r.trade_date, "D") - EPOCH).astype(np.int64) for r in records],
                dtype=np.int64,
            ),
            centis=np.array([r.centis for r in records], dtype=np.int64),
            trade_class=np.array([r.trade_class.value for r in records], dtype=object),
        )

    def __len__(self) -> int:
        return len(self.centis)

    def records(self) -> Iterator[TradeRecord]:
        for stock, day, centis, trade_class in zip(
            self.stock, self.day, self.centis, self.trade_class
        ):
            yield TradeRecord(
                stock_code=str(stock),
                trade_date=(EPOCH + np.timedelta64(int(day), "D")).astype(dt.date),
                centis=int(centis),
                trade_class=TradeClass(trade_class),
            )

    def stocks(self) -> List[str]:
        return sorted({str(s) for s in self.stock})


@dataclass(frozen=True)
class TapeFormat:
    delimiter: str = ","
    stock_column: str = "stock"
    date_column: str = "date"
    time_column: str = "time"
    class_column: str = "class"
    date_format: str = "%Y-%m-%d"
    filled_token: str = TradeClass.FILLED.value
    partial_token: str = TradeClass.PARTIALLY_FILLED.value

    @property
    def columns(self) -> Tuple[str, str, str, str]:
        return (self.stock_column, self.date_column, self.time_column, self.class_column)


def _first_bad(bad: np.ndarray, column: str, values: pd.Series, reason: str) -> None:
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        # the header is line 1
        line = i + 2
        raise MalformedRow(
            f"line {line}: {reason} in column {column!r}: {values.iloc[i]!r}"
            f" ({int(bad.sum())} malformed rows in total)",
            row=line,
            column=column,
            value=str(values.iloc[i]),
        )


def parse_tape(
    source: Union[str, Path, TextIO], format: TapeFormat = TapeFormat()
) -> TradeTape:
    """
    Reads a header-bearing delimited tape with columns (stock, date, time, class).

    Parameters
    ----------
    source : str, pathlib.Path or text stream
        A path or an open text stream.
    format : TapeFormat
        Column names, delimiter, date format and class tokens.

    Examples
    --------
    >>> import io
    >>> tape = parse_tape(io.StringIO(
    ...     "stock,date,time,class\\n"
    ...     "000001,2003-01-02,09:30:04.00,F\\n"
    ...     "000001,2003-01-02,09:30:00.00,P\\n"
    ... ))
    >>> [format_clock(r.centis) for r in tape.records()]
    ['09:30:00.00', '09:30:04.00']
    """
    try:
        frame = pd.read_csv(
            source,
            sep=format.delimiter,
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
        )
    except pd.errors.EmptyDataError:
        raise EmptyTape("the tape is empty")
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise MalformedRow(
            f"unreadable tape: {e}",
            row=int(match.group(1)) if match else -1,
            column="",
            value="",
        )
    frame = frame.fillna("")
    frame.columns = [c.strip() for c in frame.columns]
    for column in format.columns:
        if column not in frame.columns:
            raise MalformedRow(
                f"missing column {column!r}", row=1, column=column, value=""
            )
    if frame.empty:
        raise EmptyTape("the tape holds no trades")

    stock = frame[format.stock_column].str.strip()
    _first_bad((stock == "").to_numpy(), format.stock_column, stock, "empty stock code")

    times = frame[format.time_column]
    centis = _clock_to_centis(times)
    _first_bad(centis < 0, format.time_column, times, "bad timestamp")

    dates = frame[format.date_column]
    parsed = pd.to_datetime(dates.str.strip(), format=format.date_format, errors="coerce")
    _first_bad(parsed.isna().to_numpy(), format.date_column, dates, "bad date")
    day = (parsed.to_numpy().astype("datetime64[D]") - EPOCH).astype(np.int64)

    tokens = frame[format.class_column]
    classes = tokens.str.strip().map(
        {
            format.filled_token: TradeClass.FILLED.value,
            format.partial_token: TradeClass.PARTIALLY_FILLED.value,
        }
    )
    _first_bad(classes.isna().to_numpy(), format.class_column, tokens, "bad class token")

    tape = TradeTape(
        stock=stock.to_numpy(dtype=object),
        day=day,
        centis=centis,
        trade_class=classes.to_numpy(dtype=object),
    )
    logger.info("parsed %d trades for %d stocks", len(tape), len(tape.stocks()))
    return tape


@dataclass(frozen=True)
class SessionCalendar:
    """
    Ordered, disjoint trading sessions as closed ``[open, close]`` intervals of
    centiseconds since midnight.

    >>> calendar = SessionCalendar.default()
    >>> [format_clock(c) for session in calendar.sessions for c in session]
    ['09:30:00.00', '11:30:00.00', '13:00:00.00', '15:00:00.00']
    >>> calendar.session_index(np.array([parse_clock("11:30:00"), parse_clock("12:00:00")]))
    array([ 0, -1])
    """

    sessions: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        sessions = tuple((int(o), int(c)) for o, c in self.sessions)
        if not sessions:
            raise ParamError("a calendar needs at least one session", "sessions", sessions)
        previous = -1
        for open_, close in sessions:
            if not previous < open_ < close <= CENTIS_PER_DAY:
                raise ParamError(
                    "sessions must be ordered, disjoint and inside one day",
                    parameter="sessions",
                    value=sessions,
                )
            previous = close
        object.__setattr__(self, "sessions", sessions)

    @classmethod
    def default(cls) -> "SessionCalendar":
        return cls.from_clock([("09:30:00", "11:30:00"), ("13:00:00", "15:00:00")])

    @classmethod
    def from_clock(cls, sessions: Iterable[Tuple[str, str]]) -> "SessionCalendar":
        return cls(tuple((parse_clock(o), parse_clock(c)) for o, c in sessions))

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "SessionCalendar":
        """Reads ``{"sessions": [["09:30:00", "11:30:00"], ...]}``."""
        with open(path) as f:
            config = json.load(f)
        try:
            return cls.from_clock(tuple(pair) for pair in config["sessions"])
        except (KeyError, TypeError, ValueError) as e:
            raise ParamError(
                f"{path}: expected a 'sessions' list of [open, close] pairs",
                parameter="sessions",
                value=str(e),
            )

    def to_dict(self):
        return {"sessions": [[format_clock(o), format_clock(c)] for o, c in self.sessions]}

    def __len__(self) -> int:
        return len(self.sessions)

    def length(self, i: int) -> int:
        open_, close = self.sessions[i % len(self.sessions)]
        return close - open_

    def session_index(self, centis: np.ndarray) -> np.ndarray:
        """Index of the session holding each timestamp, -1 outside every session."""
        centis = np.asarray(centis, dtype=np.int64)
        opens = np.array([o for o, _ in self.sessions], dtype=np.int64)
        closes = np.array([c for _, c in self.sessions], dtype=np.int64)
        index = np.searchsorted(opens, centis, side="right") - 1
        inside = (index >= 0) & (centis <= closes[np.clip(index, 0, None)])
        return np.where(inside, index, -1)


@dataclass(frozen=True, eq=False)
class DurationSeries:
    """
    Intertrade durations of one stock and one trade class.

    ``centis`` is the exact store; ``session_ids`` labels the stock-day-session
    each duration belongs to.

    >>> s = DurationSeries.from_centis("000001", ClassFilter.ALL, [150, 250, 0])
    >>> s.durations.tolist(), s.zero_count, s.n_trades
    ([1.5, 2.5, 0.0], 1, 4)
    """

    stock_code: str
    trade_class_filter: ClassFilter
    centis: np.ndarray
    session_ids: np.ndarray
    zero_count: int
    n_trades: int

    def __post_init__(self):
        centis = np.asarray(self.centis, dtype=np.int64)
        if np.any(centis < 0):
            raise DomainError("durations must be non-negative", value=float(centis.min()))
        object.__setattr__(self, "centis", centis)
        object.__setattr__(self, "session_ids", np.asarray(self.session_ids, dtype=np.int64))

    @classmethod
    def from_centis(
        cls,
        stock_code: str,
        trade_class_filter: ClassFilter,
        centis,
        session_ids=None,
        n_trades: Optional[int] = None,
    ) -> "DurationSeries":
        centis = np.asarray(centis, dtype=np.int64)
        if session_ids is None:
            session_ids = np.zeros(len(centis), dtype=np.int64)
        session_ids = np.asarray(session_ids, dtype=np.int64)
        if n_trades is None:
            n_trades = len(centis) + len(np.unique(session_ids)) if len(centis) else 0
        return cls(
            stock_code=stock_code,
            trade_class_filter=trade_class_filter,
            centis=centis,
            session_ids=session_ids,
            zero_count=int(np.count_nonzero(centis == 0)),
            n_trades=int(n_trades),
        )

    @classmethod
    def from_seconds(
        cls,
        stock_code: str,
        trade_class_filter: ClassFilter,
        durations,
        session_ids=None,
        n_trades: Optional[int] = None,
    ) -> "DurationSeries":
        """Rounds durations in seconds to the nearest centisecond."""
        centis = np.rint(np.asarray(durations, dtype=float) * CENTIS_PER_SECOND)
        return cls.from_centis(
            stock_code, trade_class_filter, centis.astype(np.int64), session_ids, n_trades
        )

    @property
    def durations(self) -> np.ndarray:
        return self.centis / CENTIS_PER_SECOND

    def __len__(self) -> int:
        return len(self.centis)


def extract_durations(
    tape: TradeTape, class_filter: ClassFilter, calendar: SessionCalendar
) -> Dict[str, DurationSeries]:
    """
    Extracts one :py:class:`DurationSeries` per stock.

    >>> import io
    >>> tape = parse_tape(io.StringIO(
    ...     "stock,date,time,class\\n"
    ...     "000001,2003-01-02,09:30:00.00,F\\n"
    ...     "000001,2003-01-02,09:30:01.50,P\\n"
    ...     "000001,2003-01-02,09:30:04.00,F\\n"
    ...     "000001,2003-01-02,11:29:59.00,F\\n"
    ...     "000001,2003-01-02,13:00:01.00,F\\n"
    ... ))
    >>> calendar = SessionCalendar.default()
    >>> extract_durations(tape, ClassFilter.ALL, calendar)["000001"].durations.tolist()
    [1.5, 2.5, 7195.0]
    >>> extract_durations(tape, ClassFilter.PARTIALLY_FILLED, calendar)["000001"].n_trades
    1
    """
    session = calendar.session_index(tape.centis)
    outside = int(np.count_nonzero(session < 0))
    if outside:
        logger.debug("dropping %d trades outside the session calendar", outside)
    keep = (session >= 0) & class_filter.mask(tape.trade_class)
    codes, stocks = pd.factorize(pd.Series(tape.stock, dtype=object), sort=True)
    result = {}
    for k, stock in enumerate(stocks):
        selected = np.flatnonzero((codes == k) & keep)
        stamps = tape.centis[selected]
        key = tape.day[selected] * len(calendar) + session[selected]
        _, ranks = np.unique(key, return_inverse=True)
        same = key[1:] == key[:-1]
        result[str(stock)] = DurationSeries.from_centis(
            stock_code=str(stock),
            trade_class_filter=class_filter,
            centis=(stamps[1:] - stamps[:-1])[same],
            session_ids=ranks.reshape(-1)[1:][same],
            n_trades=len(selected),
        )
    logger.info(
        "extracted %s durations for %d stocks", class_filter.value, len(result)
    )
    return result


def extract_all(
    tape: TradeTape, calendar: SessionCalendar
) -> Dict[ClassFilter, Dict[str, DurationSeries]]:
    """The all, filled and partially filled series of every stock."""
    return {f: extract_durations(tape, f, calendar) for f in ClassFilter}


@dataclass(frozen=True)
class SummaryRow:
    stock_code: str
    trade_class_filter: ClassFilter
    n_trades: int
    zero_count: int
    mean_duration: Optional[float]


@dataclass(frozen=True)
class TapeSummary:
    rows: Tuple[SummaryRow, ...] = field(default_factory=tuple)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "stock": [r.stock_code for r in self.rows],
                "class": [r.trade_class_filter.value for r in self.rows],
                "n_trades": [r.n_trades for r in self.rows],
                "zero_count": [r.zero_count for r in self.rows],
                "mean_duration": [
                    np.nan if r.mean_duration is None else r.mean_duration for r in self.rows
                ],
            }
        )

    def to_table(self) -> pd.DataFrame:
        """One row per stock with (N, N⁰, ⟨τ⟩) column groups per class."""
        frame = self.to_frame()
        if frame.empty:
            return frame
        table = frame.pivot(index="stock", columns="class")
        order = [f.value for f in ClassFilter if f.value in set(frame["class"])]
        table = table.reindex(
            columns=[
                (name, c)
                for c in order
                for name in ("n_trades", "zero_count", "mean_duration")
            ]
        )
        table.columns = [f"{name}_{c}" for name, c in table.columns]
        return table.reset_index()


def summarize(series: Iterable[DurationSeries]) -> TapeSummary:
    """
    >>> s = DurationSeries.from_centis("000001", ClassFilter.ALL, [150, 250, 0])
    >>> row, = summarize([s]).rows
    >>> row.n_trades, row.zero_count, round(row.mean_duration, 3)
    (4, 1, 1.333)
    >>> summarize([DurationSeries.from_centis("x", ClassFilter.ALL, [])]).rows[0].mean_duration
    """
    rows = []
    for s in series:
        mean = None
        if len(s):
            mean = int(s.centis.sum()) / len(s) / CENTIS_PER_SECOND
        rows.append(
            SummaryRow(
                stock_code=s.stock_code,
                trade_class_filter=s.trade_class_filter,
                n_trades=s.n_trades,
                zero_count=s.zero_count,
                mean_duration=mean,
            )
        )
    return TapeSummary(tuple(rows))
