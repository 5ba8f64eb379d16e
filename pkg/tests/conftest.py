"""Shared fixtures: a hand-built seven-table dataset and a small synthetic one."""

from typing import Dict, List

import pandas as pd
import pytest

from coco.dataset import TABLE_SCHEMAS, Dataset
from coco.features import FeatureMatrix, build_matrix
from coco.synthgen import GenerationTrace, SynthConfig, simulate

TOY_ROWS: Dict[str, List[List[str]]] = {
    "geography": [
        ["V1", "B1", "D1", "S1"],
        ["V2", "B1", "D1", "S1"],
        ["V3", "B2", "D2", "S2"],
    ],
    "farmers": [
        ["F1", "G1", "V1", "woman", "2011-01-01"],
        ["F2", "G1", "V1", "man", "2011-01-01"],
        ["F3", "G2", "V1", "woman", "2011-06-01"],
        ["F4", "G3", "V2", "man", "2011-01-01"],
        ["F5", "G3", "V2", "woman", "2011-01-01"],
        ["F6", "G4", "V3", "man", "2011-01-01"],
        ["F7", "G4", "V3", "woman", "2011-01-01"],
    ],
    "mediators": [
        ["M1", "woman"],
        ["M2", "man"],
    ],
    "videos": [
        ["VID1", "Seed treatment with neem", "10.0", "L1"],
        ["VID2", "Neem spray for pests", "8.0", "L2"],
        ["VID3", "Compost pit basics", "12.0", "L1"],
    ],
    "screenings": [
        ["SC1", "VID1", "M1", "V1", "2012-01-10", "09:00"],
        ["SC2", "VID2", "M1", "V1", "2012-02-10", "18:30"],
        ["SC3", "VID1", "M2", "V2", "2012-01-15", "12:00"],
        ["SC4", "VID3", "M2", "V3", "2012-03-01", "07:00"],
        ["SC5", "VID2", "M1", "V1", "2012-03-05", "10:00"],
    ],
    "attendance": [
        ["SC1", "F1"], ["SC1", "F2"], ["SC1", "F3"],
        ["SC2", "F1"], ["SC2", "F2"],
        ["SC3", "F4"], ["SC3", "F5"],
        ["SC4", "F6"], ["SC4", "F7"],
        ["SC5", "F3"],
    ],
    "adoptions": [
        ["F1", "VID1", "2012-01-20"],
        ["F2", "VID1", "2012-01-25"],
        ["F3", "VID2", "2012-03-10"],
        ["F4", "VID1", "2012-01-30"],
        ["F6", "VID3", "2012-03-10"],
    ],
}


def make_tables(rows: Dict[str, List[List[str]]] = None) -> Dict[str, pd.DataFrame]:
    rows = TOY_ROWS if rows is None else rows
    return {name: pd.DataFrame(rows.get(name, []), columns=columns, dtype=str)
            for name, columns in TABLE_SCHEMAS.items()}


def toy_rows() -> Dict[str, List[List[str]]]:
    """A deep copy of TOY_ROWS that a test may edit."""
    return {name: [list(row) for row in table] for name, table in TOY_ROWS.items()}


@pytest.fixture
def toy_tables() -> Dict[str, pd.DataFrame]:
    return make_tables()


@pytest.fixture
def toy_dataset() -> Dataset:
    return Dataset.from_tables(make_tables())


def small_synth_config(**overrides) -> SynthConfig:
    """A generator config small enough for unit tests (a few seconds end to end)."""
    values = dict(
        seed=7, n_states=2, n_districts=2, n_blocks=3, n_villages=4, n_groups=12,
        n_farmers=160, n_mediators=4, n_videos=12, n_screenings=120, n_languages=3,
    )
    values.update(overrides)
    return SynthConfig(**values)


@pytest.fixture(scope="session")
def small_trace() -> GenerationTrace:
    return simulate(small_synth_config())


@pytest.fixture(scope="session")
def small_dataset(small_trace) -> Dataset:
    return small_trace.dataset


@pytest.fixture(scope="session")
def small_matrix(small_dataset) -> FeatureMatrix:
    return build_matrix(small_dataset)


ZERO_EFFECTS = dict(intercept=0.0, beta_pai_village=0.0, beta_pai_group=0.0, beta_ma=0.0,
                    beta_duration=0.0, beta_cs=0.0, beta_ta=0.0, beta_gender_gap=0.0,
                    beta_village_size=0.0, beta_group_size=0.0, beta_mediator_gender_gap=0.0)


def busy_config(**overrides) -> SynthConfig:
    """Few videos and many screenings, so co-adopter influence builds up; no planted effects."""
    values = dict(seed=11, n_states=2, n_districts=2, n_blocks=2, n_villages=4, n_groups=30,
                  n_farmers=400, n_mediators=4, n_videos=8, n_screenings=1500, n_languages=2)
    values.update(ZERO_EFFECTS)
    values.update(overrides)
    return SynthConfig(**values)
