import datetime as dt
import io
import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from durascale.errors import DomainError, EmptyTape, MalformedRow, ParamError
from durascale.synth import fabricate_tape, series_with_statistics
from durascale.tape import (
    ClassFilter,
    DurationSeries,
    SessionCalendar,
    TapeFormat,
    TradeClass,
    TradeRecord,
    TradeTape,
    extract_all,
    extract_durations,
    format_clock,
    parse_clock,
    parse_tape,
    summarize,
)

HEADER = "stock,date,time,class\n"


def tape_of(*rows: str):
    return parse_tape(io.StringIO(HEADER + "".join(f"{r}\n" for r in rows)))


class ParseTapeTest(unittest.TestCase):
    def test_sorted_by_stock_date_time(self):
        tape = tape_of(
            "000002,2003-01-02,09:31:00.00,F",
            "000001,2003-01-03,09:30:00.00,F",
            "000001,2003-01-02,10:00:00.00,P",
            "000001,2003-01-02,09:45:00.00,F",
        )
        records = list(tape.records())
        self.assertEqual(
            [(r.stock_code, r.trade_date, format_clock(r.centis)) for r in records],
            [
                ("000001", dt.date(2003, 1, 2), "09:45:00.00"),
                ("000001", dt.date(2003, 1, 2), "10:00:00.00"),
                ("000001", dt.date(2003, 1, 3), "09:30:00.00"),
                ("000002", dt.date(2003, 1, 2), "09:31:00.00"),
            ],
        )
        self.assertEqual(records[1].trade_class, TradeClass.PARTIALLY_FILLED)
        self.assertEqual(tape.stocks(), ["000001", "000002"])

    def test_record_round_trip(self):
        records = [
            TradeRecord("000001", dt.date(2003, 1, 2), parse_clock("09:30:00"), TradeClass.FILLED),
            TradeRecord("000001", dt.date(2003, 1, 2), parse_clock("09:30:00.5"), TradeClass.FILLED),
        ]
        self.assertEqual(list(TradeTape.from_records(records).records()), records)
        self.assertEqual(records[1].timestamp, 34200.5)

    def test_malformed_rows_report_line(self):
        cases = {
            "000001,2003-01-02,09:30:00.001,F": "time",
            "000001,2003-01-02,25:00:00,F": "time",
            "000001,2003-01-02,09:30:00,X": "class",
            "000001,2003-13-02,09:30:00,F": "date",
            ",2003-01-02,09:30:00,F": "stock",
        }
        for row, column in cases.items():
            with self.subTest(row=row):
                with self.assertRaises(MalformedRow) as context:
                    tape_of("000001,2003-01-02,09:30:00,F", row)
                self.assertEqual(context.exception.row, 3)
                self.assertEqual(context.exception.column, column)

    def test_missing_column(self):
        with self.assertRaises(MalformedRow) as context:
            parse_tape(io.StringIO("stock,date,time\n000001,2003-01-02,09:30:00\n"))
        self.assertEqual(context.exception.column, "class")

    def test_empty(self):
        with self.assertRaises(EmptyTape):
            parse_tape(io.StringIO(""))
        with self.assertRaises(EmptyTape):
            parse_tape(io.StringIO(HEADER))

    def test_custom_format(self):
        fmt = TapeFormat(
            delimiter=";",
            stock_column="code",
            date_format="%Y%m%d",
            filled_token="B",
            partial_token="S",
        )
        tape = parse_tape(
            io.StringIO("code;date;time;class\n000001;20030102;09:30:00;S\n"), fmt
        )
        (record,) = tape.records()
        self.assertEqual(record.trade_class, TradeClass.PARTIALLY_FILLED)


class SessionCalendarTest(unittest.TestCase):
    def test_closed_intervals(self):
        calendar = SessionCalendar.default()
        clock = ["09:29:59.99", "09:30:00", "11:30:00", "11:30:00.01"]
        clock += ["13:00:00", "15:00:00", "15:00:00.01"]
        stamps = np.array([parse_clock(t) for t in clock])
        self.assertEqual(calendar.session_index(stamps).tolist(), [-1, 0, 0, -1, 1, 1, -1])

    def test_invalid_sessions(self):
        with self.assertRaises(ParamError):
            SessionCalendar.from_clock([("13:00:00", "15:00:00"), ("09:30:00", "11:30:00")])
        with self.assertRaises(ParamError):
            SessionCalendar.from_clock([("09:30:00", "09:30:00")])
        with self.assertRaises(ParamError):
            SessionCalendar(())

    def test_from_json(self):
        with tempfile.TemporaryDirectory() as d:
            path = Path(d) / "calendar.json"
            path.write_text(json.dumps({"sessions": [["09:00:00", "12:00:00"]]}))
            calendar = SessionCalendar.from_json(path)
        self.assertEqual(calendar.to_dict(), {"sessions": [["09:00:00.00", "12:00:00.00"]]})
        self.assertEqual(calendar.length(0), 3 * 3600 * 100)

    def test_bad_clock(self):
        with self.assertRaises(DomainError):
            parse_clock("9h30")


class ExtractDurationsTest(unittest.TestCase):
    def test_noon_break_and_overnight_excluded(self):
        tape = tape_of(
            "000001,2003-01-02,11:29:58.00,F",
            "000001,2003-01-02,11:30:00.00,F",
            "000001,2003-01-02,12:00:00.00,F",  # lunch: dropped
            "000001,2003-01-02,13:00:00.00,F",
            "000001,2003-01-02,13:00:00.00,P",
            "000001,2003-01-02,14:59:59.99,F",
            "000001,2003-01-03,09:30:00.50,F",
        )
        s = extract_durations(tape, ClassFilter.ALL, SessionCalendar.default())["000001"]
        self.assertEqual(s.centis.tolist(), [200, 0, 719999])
        self.assertEqual(s.zero_count, 1)
        self.assertEqual(s.n_trades, 6)
        self.assertEqual(len(np.unique(s.session_ids)), 2)

    def test_class_filters(self):
        tape = tape_of(
            "000001,2003-01-02,09:30:00.00,F",
            "000001,2003-01-02,09:30:01.00,P",
            "000001,2003-01-02,09:30:03.00,F",
            "000001,2003-01-02,09:30:06.00,P",
        )
        series = extract_all(tape, SessionCalendar.default())
        self.assertEqual(series[ClassFilter.ALL]["000001"].centis.tolist(), [100, 200, 300])
        self.assertEqual(series[ClassFilter.FILLED]["000001"].centis.tolist(), [300])
        self.assertEqual(series[ClassFilter.PARTIALLY_FILLED]["000001"].centis.tolist(), [500])

    def test_stocks_never_mix(self):
        tape = tape_of(
            "000001,2003-01-02,09:30:00.00,F",
            "000002,2003-01-02,09:30:01.00,F",
            "000001,2003-01-02,09:30:02.00,F",
        )
        series = extract_durations(tape, ClassFilter.ALL, SessionCalendar.default())
        self.assertEqual(series["000001"].centis.tolist(), [200])
        self.assertEqual(len(series["000002"]), 0)
        self.assertEqual(series["000002"].n_trades, 1)


class SummaryTest(unittest.TestCase):
    def test_mean_includes_zeros(self):
        s = DurationSeries.from_centis("000001", ClassFilter.ALL, [0, 0, 300])
        (row,) = summarize([s]).rows
        self.assertEqual((row.n_trades, row.zero_count, row.mean_duration), (4, 2, 1.0))

    def test_table_shape(self):
        rows = [
            DurationSeries.from_centis("000001", f, [100, 300])
            for f in (ClassFilter.ALL, ClassFilter.FILLED)
        ]
        table = summarize(rows).to_table()
        self.assertEqual(
            list(table.columns),
            [
                "stock",
                "n_trades_all",
                "zero_count_all",
                "mean_duration_all",
                "n_trades_filled",
                "zero_count_filled",
                "mean_duration_filled",
            ],
        )


class RoundTripTest(unittest.TestCase):
    def assertRoundTrip(self, series, calendar=None):
        calendar = calendar or SessionCalendar.default()
        text = fabricate_tape(series, calendar)
        extracted = extract_durations(parse_tape(io.StringIO(text)), ClassFilter.ALL, calendar)
        for s in series:
            back = extracted[s.stock_code]
            self.assertEqual(sorted(back.centis.tolist()), sorted(s.centis.tolist()))
            self.assertEqual(back.zero_count, s.zero_count)
            self.assertEqual(back.n_trades, s.n_trades)
        return extracted

    def test_table_scale_statistics(self):
        s = series_with_statistics("000001", 889369, 17809, 3.81, seed=0)
        back = self.assertRoundTrip([s])["000001"]
        (row,) = summarize([back]).rows
        self.assertEqual(row.n_trades, 889369)
        self.assertEqual(row.zero_count, 17809)
        self.assertEqual(round(row.mean_duration, 2), 3.81)

    def test_durations_crossing_sessions(self):
        s = DurationSeries.from_centis(
            "000001", ClassFilter.ALL, [100, 719999, 719000, 0, 5], n_trades=None
        )
        calendar = SessionCalendar.default()
        text = fabricate_tape([s], calendar)
        back = extract_durations(parse_tape(io.StringIO(text)), ClassFilter.ALL, calendar)
        self.assertEqual(back["000001"].centis.tolist(), [100, 719999, 719000, 0, 5])

    def test_several_stocks(self):
        series = [
            series_with_statistics(code, 5000, 40, mean, seed=i)
            for i, (code, mean) in enumerate([("000001", 3.81), ("000002", 49.35)])
        ]
        self.assertRoundTrip(series)


if __name__ == "__main__":
    unittest.main()
