import io
import math
import os
import sys
import tempfile
from random import Random
from typing import List, NamedTuple

import numpy as np
from hypothesis import given, register_random, settings
from hypothesis import strategies as st

from durascale import cli
from durascale.conditional import partition_quintiles
from durascale.densities import log_edges, normalize
from durascale.synth import fabricate_tape
from durascale.tape import (
    ClassFilter,
    DurationSeries,
    SessionCalendar,
    extract_durations,
    parse_tape,
)

MAX_DURATIONS = 200
MAX_SESSIONS = 4
MAX_ARGV = 6
SESSION_LENGTH = SessionCalendar.default().length(1)

st_positive = st.floats(min_value=1e-6, max_value=1e6, allow_nan=False, allow_infinity=False)


class StSeries(NamedTuple):
    series: DurationSeries
    repr: str


@st.composite
def st_series(draw) -> StSeries:
    stock = draw(st.sampled_from(["000001", "000002", "600000"]))
    sessions = draw(st.integers(min_value=1, max_value=MAX_SESSIONS))
    centis: List[int] = []
    session_ids: List[int] = []
    for session in range(sessions):
        n = draw(st.integers(min_value=0, max_value=MAX_DURATIONS // sessions))
        durations = draw(
            st.lists(st.integers(min_value=0, max_value=SESSION_LENGTH), min_size=n, max_size=n)
        )
        centis += durations
        session_ids += [session] * len(durations)
    return StSeries(
        series=DurationSeries.from_centis(stock, ClassFilter.ALL, centis, session_ids),
        repr=f"DurationSeries.from_centis({stock!r}, ALL, {centis}, {session_ids})",
    )


@st.composite
def st_argv(draw) -> List[str]:
    command = draw(st.sampled_from([*cli.COMMANDS, "", "-h"]))
    tokens = draw(
        st.lists(
            st.one_of(
                st.text(max_size=8),
                st.sampled_from(["--trade-class", "--model", "--n", "--seed", "-h"]),
            ),
            max_size=MAX_ARGV,
        )
    )
    return [command, *tokens]


@settings(deadline=None)
@given(st.lists(st_positive, min_size=1, max_size=2000))
def partition(values):
    groups = partition_quintiles(values, min_samples=1)
    sizes = [len(g) for g in groups]
    assert sum(sizes) == len(values)
    assert max(sizes) - min(sizes) <= 1
    assert sorted(np.concatenate(groups).tolist()) == list(range(len(values)))
    x = np.asarray(values)
    for lower, upper in zip(groups, groups[1:]):
        if len(lower) and len(upper):
            assert x[lower].max() <= x[upper].min()


@settings(deadline=None)
@given(st_series())
def round_trip(drawn: StSeries):
    print(drawn.repr)
    series = drawn.series
    if not len(series):
        return
    calendar = SessionCalendar.default()
    text = fabricate_tape([series], calendar)
    back = extract_durations(parse_tape(io.StringIO(text)), ClassFilter.ALL, calendar)
    back_series = back[series.stock_code]
    assert back_series.centis.tolist() == series.centis.tolist()
    assert back_series.zero_count == series.zero_count


@settings(deadline=None)
@given(st.lists(st_positive, min_size=2, max_size=500))
def normalized(values):
    if np.std(values, ddof=1) <= 1e-6 * np.mean(values):
        return
    g = normalize(values)
    assert math.isclose(float(np.std(g.values, ddof=1)), 1.0, rel_tol=1e-9)
    assert len(g) == len(values)


@settings(deadline=None)
@given(st_positive, st_positive, st.integers(min_value=1, max_value=50))
def edges(a, b, bins_per_decade):
    lo, hi = min(a, b), max(a, b)
    e = log_edges(lo, hi, bins_per_decade)
    assert np.all(np.diff(e) > 0)
    if lo < hi:
        assert e[0] == lo and e[-1] == hi
    else:
        assert e[0] < lo < e[-1]


def happy():
    partition()
    round_trip()
    normalized()
    edges()


@settings(deadline=None)
@given(st_argv())
def sad(argv):
    print(argv)
    assert cli.run(argv) in (0, 1, 2, 3)


if __name__ == "__main__":
    cli.PRINTING = False

    register_random(Random(0))

    with tempfile.TemporaryDirectory() as directory:
        os.chdir(directory)
        if sys.argv[1] == "happy":
            happy()
        elif sys.argv[1] == "sad":
            sad()
