"""Tests for coco.dataset: validation, canonical CSV I/O and the event timeline."""

from datetime import date

import pandas as pd
import pytest

from coco.dataset import (
    Dataset,
    EventKind,
    Gender,
    GeoLevel,
    Strictness,
    event_timeline,
    load_dataset,
    parse_clock,
    tokenize_title,
    write_dataset,
)
from coco.errors import DatasetFileError, DatasetValidationError, UnknownEntityError
from tests.conftest import make_tables, toy_rows


def build(rows, strictness=Strictness.STRICT) -> Dataset:
    return Dataset.from_tables(make_tables(rows), strictness)


class TestToyDataset:

    def test_counts(self, toy_dataset):
        assert len(toy_dataset.farmers) == 7
        assert toy_dataset.village_ids() == ["V1", "V2", "V3"]
        assert len(toy_dataset.screenings) == 5
        assert len(toy_dataset.adoptions) == 5
        assert toy_dataset.attendance_count() == 10
        assert toy_dataset.report.dropped_total == 0

    def test_date_range_spans_screenings_and_adoptions(self, toy_dataset):
        assert toy_dataset.date_range == (date(2012, 1, 10), date(2012, 3, 10))

    def test_populations_include_every_level(self, toy_dataset):
        geo = toy_dataset.geography
        assert geo.population(GeoLevel.GROUP, "G1") == 2
        assert geo.population(GeoLevel.VILLAGE, "V1") == 3
        assert geo.population(GeoLevel.BLOCK, "B1") == 5
        assert geo.population(GeoLevel.DISTRICT, "D2") == 2
        assert geo.population(GeoLevel.STATE, "S1") == 5
        assert geo.states() == ["S1", "S2"]

    def test_attendees_are_sorted(self, toy_dataset):
        assert toy_dataset.screenings["SC1"].attendees == ("F1", "F2", "F3")

    def test_viewed_and_adopted(self, toy_dataset):
        assert toy_dataset.videos_viewed("F3") == ["VID1", "VID2"]
        assert toy_dataset.videos_adopted("F3") == ["VID2"]
        assert toy_dataset.videos_adopted("F7") == []

    def test_unknown_entities(self, toy_dataset):
        with pytest.raises(UnknownEntityError):
            toy_dataset.farmer("F99")
        with pytest.raises(UnknownEntityError):
            toy_dataset.require_village("V99")

    def test_village_view(self, toy_dataset):
        view = toy_dataset.village_view("V1")
        assert sorted(view.farmers) == ["F1", "F2", "F3"]
        assert sorted(view.screenings) == ["SC1", "SC2", "SC5"]
        assert len(view.adoptions) == 3
        assert sorted(view.mediators) == ["M1"]


class TestValidation:

    def test_dangling_attendance_is_fatal_when_strict(self):
        rows = toy_rows()
        rows["attendance"].append(["SC9", "F1"])
        with pytest.raises(DatasetValidationError) as info:
            build(rows)
        assert info.value.issues[0].reason == "dangling_reference"
        assert info.value.issues[0].table == "attendance"

    def test_dangling_attendance_is_dropped_when_lenient(self):
        rows = toy_rows()
        rows["attendance"].append(["SC9", "F1"])
        dataset = build(rows, Strictness.LENIENT)
        assert dataset.report.dropped == {"dangling_reference": 1}
        assert dataset.report.row_counts["attendance"] == 11
        assert dataset.attendance_count() == 10

    def test_attendance_from_another_village(self):
        rows = toy_rows()
        rows["attendance"].append(["SC3", "F1"])
        dataset = build(rows, Strictness.LENIENT)
        assert dataset.report.dropped == {"village_mismatch": 1}
        assert "F1" not in dataset.screenings["SC3"].attendees

    def test_adoption_before_attendance(self):
        rows = toy_rows()
        rows["adoptions"].append(["F5", "VID1", "2012-01-10"])
        with pytest.raises(DatasetValidationError) as info:
            build(rows)
        assert info.value.issues[0].reason == "adoption_before_attendance"

        dataset = build(rows, Strictness.LENIENT)
        assert dataset.videos_adopted("F5") == []

    def test_adoption_on_day_of_attendance_is_accepted(self):
        rows = toy_rows()
        rows["adoptions"].append(["F5", "VID1", "2012-01-15"])
        assert build(rows).videos_adopted("F5") == ["VID1"]

    def test_adoption_of_unseen_video(self):
        rows = toy_rows()
        rows["adoptions"].append(["F7", "VID1", "2012-03-20"])
        dataset = build(rows, Strictness.LENIENT)
        assert dataset.report.dropped == {"adoption_before_attendance": 1}

    def test_group_spanning_two_villages(self):
        rows = toy_rows()
        rows["farmers"].append(["F8", "G1", "V2", "man", "2011-01-01"])
        dataset = build(rows, Strictness.LENIENT)
        assert dataset.report.dropped == {"group_village_conflict": 1}
        assert "F8" not in dataset.farmers

    def test_block_in_two_districts(self):
        rows = toy_rows()
        rows["geography"].append(["V4", "B1", "D2", "S2"])
        with pytest.raises(DatasetValidationError) as info:
            build(rows)
        assert info.value.issues[0].reason == "hierarchy_conflict"

    def test_duplicate_farmer(self):
        rows = toy_rows()
        rows["farmers"].append(["F1", "G1", "V1", "woman", "2011-01-01"])
        dataset = build(rows, Strictness.LENIENT)
        assert dataset.report.dropped == {"duplicate_key": 1}
        assert len(dataset.farmers) == 7

    def test_screening_without_attendees(self):
        rows = toy_rows()
        rows["screenings"].append(["SC6", "VID3", "M2", "V3", "2012-03-02", "08:00"])
        with pytest.raises(DatasetValidationError) as info:
            build(rows)
        assert info.value.issues[0].reason == "empty_attendance"

        dataset = build(rows, Strictness.LENIENT)
        assert "SC6" not in dataset.screenings

    def test_malformed_values(self):
        rows = toy_rows()
        rows["screenings"].append(["SC6", "VID3", "M2", "V3", "2012-13-02", "08:00"])
        rows["screenings"].append(["SC7", "VID3", "M2", "V3", "2012-03-02", "25:00"])
        rows["videos"].append(["VID4", "!!", "5.0", "L1"])
        rows["videos"].append(["VID5", "Mulching", "-1", "L1"])
        dataset = build(rows, Strictness.LENIENT)
        assert dataset.report.dropped == {"malformed_row": 4}
        assert sorted(dataset.videos) == ["VID1", "VID2", "VID3"]

    def test_missing_cell_is_malformed(self):
        tables = make_tables()
        tables["mediators"] = pd.concat(
            [tables["mediators"], pd.DataFrame([{"mediator_id": "M3", "gender": None}])],
            ignore_index=True)
        dataset = Dataset.from_tables(tables, Strictness.LENIENT)
        assert dataset.report.dropped == {"malformed_row": 1}

    def test_empty_gender_is_unspecified(self):
        rows = toy_rows()
        rows["mediators"].append(["M3", ""])
        assert build(rows).mediators["M3"].gender is Gender.UNSPECIFIED

    def test_report_to_dict(self):
        rows = toy_rows()
        rows["attendance"].append(["SC9", "F1"])
        report = build(rows, Strictness.LENIENT).report.to_dict()
        assert report["strictness"] == "lenient"
        assert report["dropped_total"] == 1
        assert report["issues"][0]["table"] == "attendance"


class TestCsvIo:

    def test_write_then_load_gives_equal_dataset(self, toy_dataset, tmp_path):
        written = write_dataset(toy_dataset, tmp_path)
        assert sorted(written) == sorted(["geography", "farmers", "mediators", "videos",
                                          "screenings", "attendance", "adoptions"])
        assert load_dataset(tmp_path) == toy_dataset

    def test_written_files_are_byte_stable(self, toy_dataset, tmp_path):
        write_dataset(toy_dataset, tmp_path / "a")
        write_dataset(load_dataset(tmp_path / "a"), tmp_path / "b")
        for name in ("farmers", "screenings", "adoptions"):
            assert (tmp_path / "a" / f"{name}.csv").read_bytes() == (tmp_path / "b" / f"{name}.csv").read_bytes()

    def test_missing_file(self, toy_dataset, tmp_path):
        write_dataset(toy_dataset, tmp_path)
        (tmp_path / "mediators.csv").unlink()
        with pytest.raises(DatasetFileError):
            load_dataset(tmp_path)

    def test_strict_error_carries_line_number(self, toy_dataset, tmp_path):
        write_dataset(toy_dataset, tmp_path)
        path = tmp_path / "attendance.csv"
        lines = path.read_text(encoding="utf-8").splitlines()
        lines.insert(2, "SC1,F9")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(DatasetValidationError) as info:
            load_dataset(tmp_path)
        assert info.value.issues[0].line == 3
        assert "attendance.csv line 3" in str(info.value)


class TestHelpers:

    def test_tokenize_title(self):
        assert tokenize_title("Seed-treatment, with  NEEM!") == ["seed", "treatment", "with", "neem"]
        assert tokenize_title("A b c") == []
        assert tokenize_title("Use of a 2nd tray") == ["use", "of", "2nd", "tray"]

    def test_parse_clock(self):
        assert parse_clock("07:05") == (7, 5)
        for bad in ("24:00", "7:05", "12:60", "noon"):
            with pytest.raises(ValueError):
                parse_clock(bad)

    def test_timeline_puts_screenings_before_same_day_adoptions(self):
        rows = toy_rows()
        rows["screenings"].append(["SC6", "VID1", "M2", "V2", "2012-01-20", "08:00"])
        rows["attendance"].append(["SC6", "F5"])
        events = event_timeline(build(rows))
        same_day = [e for e in events if e.date == date(2012, 1, 20)]
        assert [e.kind for e in same_day] == [EventKind.SCREENING, EventKind.ADOPTION]
        assert [e.date for e in events] == sorted(e.date for e in events)
        assert len(events) == 11
