import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from growthtrials.inference import Dataset
from growthtrials.io import (FLOOR, EmptyInputError, ParseError, export, export_text, ingest,
                             ingest_text, read_dataset_csv)

HEADER = "experiment_id,sgrna_id,mouse_id,time_days,concentration\n"

EIGHT = HEADER + """\
E1,g1,m1,0,0.50
E1,g1,m2,0,0.48
E1,g1,m1,14,0.31
E1,g1,m2,14,0.00005
E1,g2,m3,0,0.52
E1,g2,m4,0,0.47
E1,g2,m3,40,0.20
E1,g2,m4,40,0.18
"""


class TestIngest:
    def test_eight_rows(self):
        data, report = ingest_text(EIGHT)
        d = data["E1"]
        assert report.rows == 8 and d.n == 8 and d.n_mice == 4
        assert report.floored == 1 and d.values.min() == FLOOR
        assert report.as_dict()["output_days"] == {"E1": [14.0, 40.0]}
        assert d.sgrna_ids[0] == "g1" and d.paired

    def test_duplicate_names_first_line(self):
        text = HEADER + "E,g,m1,0,0.5\nE,g,m1,14,0.3\nE,g,m1,14,0.2\n"
        with pytest.raises(ParseError, match="duplicate") as info:
            ingest_text(text)
        assert info.value.line == 4 and "line 3" in str(info.value)

    @pytest.mark.parametrize("row,line_no,what", [
        ("E,g,m,0,abc", 2, "not a number"),
        ("E,g,m,-1,0.5", 2, "negative"),
        ("E,g,m,0,nan", 2, "not finite"),
        ("E,g,m,0,1.5", 2, "above 1"),
    ])
    def test_bad_values(self, row, line_no, what):
        with pytest.raises(ParseError, match=what) as info:
            ingest_text(HEADER + row + "\n")
        assert info.value.line == line_no

    @pytest.mark.parametrize("text", ["", "   \n", HEADER])
    def test_empty(self, text):
        with pytest.raises(EmptyInputError):
            ingest_text(text)

    def test_bad_header(self):
        with pytest.raises(ParseError):
            ingest_text("a,b,c\n1,2,3\n")

    def test_unlabelled_mice(self):
        data, _ = ingest_text(HEADER + "E,,,0,0.5\nE,,,14,0.3\nE,,,14,0.2\n")
        assert data["E"].mouse_ids is None and data["E"].sgrna_ids is None

    def test_multiple_experiments(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text(EIGHT + "E2,g,m1,0,0.4\nE2,g,m1,7,0.3\n")
        data, report = ingest(p)
        assert sorted(data) == ["E1", "E2"] and report.experiments == {"E1": 8, "E2": 2}


class TestExport:
    def test_round_trip(self, tmp_path):
        data, _ = ingest_text(EIGHT)
        export(data, tmp_path / "out.csv")
        back, _ = ingest(tmp_path / "out.csv")
        assert back["E1"] == data["E1"]
        assert export_text(back) == export_text(data)

    def test_single_dataset(self, tmp_path):
        d = Dataset([0.0, 14.0], [0.5, 0.25], name="solo")
        export({"solo": d}, tmp_path / "s.csv")
        back = read_dataset_csv(tmp_path / "s.csv")
        np.testing.assert_array_equal(back.values, d.values)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(FLOOR, 1.0), min_size=2, max_size=20))
    def test_values_round_trip_exactly(self, values):
        t = [0.0] + [14.0] * (len(values) - 1)
        d = Dataset(t, values, name="x")
        back, _ = ingest_text(export_text({"x": d}))
        np.testing.assert_array_equal(back["x"].values, d.values)
