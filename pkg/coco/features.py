"""
Feature computation and the labeled feature matrix.

One matrix row per attendance event (farmer, video, screening date d). Every
feature is computed as of d from events strictly before d; the label follows
the most-recent-screening attribution of adoptions. Graph features (PAI and
centralities) are computed per village, in parallel with joblib.
"""

import hashlib
import json
import logging
from collections import defaultdict
from dataclasses import dataclass
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from coco.centrality import SnapshotCache
from coco.dataset import Dataset, GeoLevel, Screening, parse_clock, tokenize_title
from coco.errors import FeatureError
from coco.temporal_graph import (
    DEFAULT_ATTENDEE_CAP,
    TemporalGraph,
    build_coadoption,
    build_coattendance,
)

logger = logging.getLogger(__name__)

MATRIX_VERSION = 1

TIME_BINS = ["early_morning", "morning", "noon", "evening", "night", "late_night"]
ID_COLUMNS = ["farmer_id", "video_id", "screening_id", "village_id", "state_id", "date"]
LABEL_COLUMN = "label"
CONTENT_COLUMNS = ["ma", "pai_group", "pai_village", "cs_village", "cs_block", "cs_district", "ta", "duration"]
GRAPH_COLUMNS = ["cc_g1", "bc_g1", "ec_g1", "cc_g2", "bc_g2", "ec_g2"]
DEMOGRAPHIC_COLUMNS = ["group_size", "village_size", "active_age"]
CS_LEVELS = {"cs_village": GeoLevel.VILLAGE, "cs_block": GeoLevel.BLOCK, "cs_district": GeoLevel.DISTRICT}


class CSReading(str, Enum):
    """How the content-specificity denominator counts screened content."""
    LITERAL = "literal"              # distinct videos screened in the unit
    SCREENING_SUM = "screening_sum"  # screenings held in the unit


def feature_columns(languages: Sequence[str]) -> List[str]:
    """Stable feature column order for a language catalogue."""
    return (CONTENT_COLUMNS
            + [f"lang_{lang}" for lang in languages]
            + [f"time_{name}" for name in TIME_BINS]
            + GRAPH_COLUMNS
            + DEMOGRAPHIC_COLUMNS)


# =============================================================================
# SINGLE FEATURES
# =============================================================================

def time_bin(start_time: str) -> str:
    """Four-hour local-time bin, the first starting at 04:00."""
    hour, _ = parse_clock(start_time)
    return TIME_BINS[((hour - 4) % 24) // 4]


def mediator_attention(screening: Screening) -> float:
    """Reciprocal of the screening's attendee count."""
    if not screening.attendees:
        raise FeatureError(f"screening {screening.screening_id!r} has no attendees")
    return 1.0 / len(screening.attendees)


def active_age(dataset: Dataset, farmer_id: str, when: date) -> int:
    """
    Days between the farmer's first attended screening and `when`.

    Raises:
        FeatureError: No attendance on or before `when`
    """
    attended = dataset.farmer_screenings.get(farmer_id, ())
    if not attended or dataset.screenings[attended[0]].date > when:
        raise FeatureError(f"farmer {farmer_id!r} attended no screening on or before {when}")
    return (when - dataset.screenings[attended[0]].date).days


def attribute_adoptions(dataset: Dataset) -> Dict[Tuple[str, str], str]:
    """
    Screening credited with each adoption: the latest screening of the video
    the farmer attended on or before the verification date; among same-date
    screenings the larger screening_id wins.
    """
    attributed = {}
    for record in dataset.adoptions:
        credited = None
        for sid in dataset.farmer_screenings.get(record.farmer_id, ()):
            screening = dataset.screenings[sid]
            if screening.date > record.verification_date:
                break
            if screening.video_id == record.video_id:
                credited = sid
        if credited is not None:
            attributed[(record.farmer_id, record.video_id)] = credited
    return attributed


class AdopterIndex:
    """Verification-date-ordered adopters per (video, level, unit) for groups and villages."""

    def __init__(self, dataset: Dataset):
        lists: Dict[Tuple[str, GeoLevel, str], List[Tuple[int, str]]] = defaultdict(list)
        for record in dataset.adoptions:
            farmer = dataset.farmers[record.farmer_id]
            day = record.verification_date.toordinal()
            lists[(record.video_id, GeoLevel.VILLAGE, farmer.village_id)].append((day, farmer.farmer_id))
            lists[(record.video_id, GeoLevel.GROUP, farmer.group_id)].append((day, farmer.farmer_id))
        self._days: Dict[Tuple[str, GeoLevel, str], np.ndarray] = {}
        self._farmers: Dict[Tuple[str, GeoLevel, str], Tuple[str, ...]] = {}
        for key, entries in lists.items():
            entries.sort()
            self._days[key] = np.array([d for d, _ in entries], dtype=np.int64)
            self._farmers[key] = tuple(f for _, f in entries)

    def adopters_before(self, video_id: str, level: GeoLevel, unit_id: str, when: date) -> FrozenSet[str]:
        key = (video_id, level, unit_id)
        days = self._days.get(key)
        if days is None:
            return frozenset()
        cut = int(np.searchsorted(days, when.toordinal(), side="left"))
        return frozenset(self._farmers[key][:cut])


def pai(g2: TemporalGraph, adopters: AdopterIndex, dataset: Dataset, farmer_id: str,
        video_id: str, when: date, level: GeoLevel) -> int:
    """
    Past co-adopter influence: G2 neighbors of the farmer before `when` who
    adopted the video before `when` and share the farmer's level unit.
    """
    farmer = dataset.farmer(farmer_id)
    if level is GeoLevel.GROUP:
        unit = farmer.group_id
    elif level is GeoLevel.VILLAGE:
        unit = farmer.village_id
    else:
        raise ValueError(f"co-adopter influence is defined for group and village, not {level.value}")
    neighbors = g2.neighbors_asof(farmer_id, when)
    if not neighbors:
        return 0
    return len(neighbors & adopters.adopters_before(video_id, level, unit, when))


class ContentIndex:
    """Per-unit first-screening dates of videos and screening dates, for as-of CS."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self._first_seen: Dict[Tuple[GeoLevel, str], Dict[str, int]] = defaultdict(dict)
        screening_days: Dict[Tuple[GeoLevel, str], List[int]] = defaultdict(list)
        for screening in dataset.screenings_in_order():
            day = screening.date.toordinal()
            for level in CS_LEVELS.values():
                unit = (level, dataset.geography.unit_of(screening.village_id, level))
                self._first_seen[unit].setdefault(screening.video_id, day)
                screening_days[unit].append(day)
        self._first_days = {unit: np.sort(np.fromiter(seen.values(), dtype=np.int64))
                            for unit, seen in self._first_seen.items()}
        self._screening_days = {unit: np.array(days, dtype=np.int64) for unit, days in screening_days.items()}
        self.undefined_count = 0

    def content_count(self, level: GeoLevel, unit_id: str, as_of: Optional[date],
                      video_id: Optional[str], reading: CSReading) -> int:
        unit = (level, unit_id)
        if reading is CSReading.SCREENING_SUM:
            days = self._screening_days.get(unit, np.empty(0, dtype=np.int64))
            if as_of is None:
                return len(days)
            return int(np.searchsorted(days, as_of.toordinal(), side="left")) + (1 if video_id else 0)

        seen = self._first_seen.get(unit, {})
        if as_of is None:
            return len(seen) + (1 if video_id is not None and video_id not in seen else 0)
        firsts = self._first_days.get(unit, np.empty(0, dtype=np.int64))
        count = int(np.searchsorted(firsts, as_of.toordinal(), side="left"))
        if video_id is not None:
            first = seen.get(video_id)
            if first is None or first >= as_of.toordinal():
                count += 1
        return count

    def specificity(self, village_id: str, level: GeoLevel, as_of: Optional[date] = None,
                    video_id: Optional[str] = None, reading: CSReading = CSReading.LITERAL) -> float:
        if level not in CS_LEVELS.values():
            raise ValueError(f"content specificity is defined for village, block and district, not {level.value}")
        unit_id = self.dataset.geography.unit_of(village_id, level)
        population = self.dataset.geography.population(level, unit_id)
        count = self.content_count(level, unit_id, as_of, video_id, CSReading(reading))
        if count == 0 or population == 0:
            self.undefined_count += 1
            logger.warning(f"Content specificity undefined for {level.value} {unit_id!r}; using 0")
            return 0.0
        return 1.0 / (count * population)


def content_specificity(dataset: Dataset, village_id: str, level: GeoLevel,
                        as_of: Optional[date] = None, video_id: Optional[str] = None,
                        reading: CSReading = CSReading.LITERAL,
                        index: Optional[ContentIndex] = None) -> float:
    """
    1 / (|VS(L)| * |L|) for the level-L unit containing the village.

    With as_of=None, VS(L) is every video ever screened in the unit; with a
    date, only videos screened strictly before it, united with `video_id`
    when given. An empty VS(L) yields 0 and bumps index.undefined_count.
    """
    index = index or ContentIndex(dataset)
    return index.specificity(village_id, level, as_of, video_id, reading)


class TitleIndex:
    """Per-state word adoption dates and video screening dates for title adoption."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self.video_words = {vid: sorted(set(tokenize_title(video.title))) for vid, video in dataset.videos.items()}
        word_days: Dict[Tuple[str, str], List[int]] = defaultdict(list)
        for record in dataset.adoptions:
            state = dataset.geography.state_of(dataset.farmers[record.farmer_id].village_id)
            for word in self.video_words[record.video_id]:
                word_days[(state, word)].append(record.verification_date.toordinal())
        screen_days: Dict[Tuple[str, str], List[int]] = defaultdict(list)
        for screening in dataset.screenings.values():
            state = dataset.geography.state_of(screening.village_id)
            screen_days[(state, screening.video_id)].append(screening.date.toordinal())
        self._word_days = {k: np.sort(np.array(v, dtype=np.int64)) for k, v in word_days.items()}
        self._screen_days = {k: np.sort(np.array(v, dtype=np.int64)) for k, v in screen_days.items()}

    @staticmethod
    def _count_before(days: Optional[np.ndarray], when: date) -> int:
        if days is None:
            return 0
        return int(np.searchsorted(days, when.toordinal(), side="left"))

    def title_adoption(self, video_id: str, when: date, state_id: str) -> float:
        screened = self._count_before(self._screen_days.get((state_id, video_id)), when)
        if screened == 0:
            return 0.0
        mass = sum(self._count_before(self._word_days.get((state_id, word)), when)
                   for word in self.video_words[video_id])
        return mass / screened


def title_adoption(dataset: Dataset, video_id: str, when: date, state_id: str,
                   index: Optional[TitleIndex] = None) -> float:
    """
    Title adoption in a state: summed prior adoptions of each distinct title
    word, over the video's prior screenings in the state (0 if none).
    """
    index = index or TitleIndex(dataset)
    return index.title_adoption(video_id, when, state_id)


# =============================================================================
# FEATURE MATRIX
# =============================================================================

@dataclass
class FeatureOptions:
    cs_reading: CSReading = CSReading.LITERAL
    attendee_cap: int = DEFAULT_ATTENDEE_CAP

    @classmethod
    def from_dict(cls, data: Dict) -> "FeatureOptions":
        data = dict(data or {})
        if "cs_reading" in data:
            data["cs_reading"] = CSReading(data["cs_reading"])
        return cls(**data)


class FeatureMatrix:
    """Labeled feature rows plus the header that describes them."""

    def __init__(self, frame: pd.DataFrame, languages: Sequence[str],
                 cs_reading: CSReading = CSReading.LITERAL):
        self.languages = list(languages)
        self.cs_reading = CSReading(cs_reading)
        self.feature_names = feature_columns(self.languages)
        expected = ID_COLUMNS + self.feature_names + [LABEL_COLUMN]
        missing = [c for c in expected if c not in frame.columns]
        if missing:
            raise FeatureError(f"feature matrix is missing column(s): {', '.join(missing)}")
        self.frame = frame[expected].reset_index(drop=True)

    def __len__(self) -> int:
        return len(self.frame)

    def __repr__(self) -> str:
        return f"FeatureMatrix(rows={len(self)}, features={len(self.feature_names)})"

    @property
    def X(self) -> np.ndarray:
        return self.frame[self.feature_names].to_numpy(dtype=np.float64)

    @property
    def y(self) -> np.ndarray:
        return self.frame[LABEL_COLUMN].to_numpy(dtype=np.int64)

    @property
    def dates(self) -> np.ndarray:
        return self.frame["date"].to_numpy()

    def take(self, positions: Sequence[int]) -> "FeatureMatrix":
        return FeatureMatrix(self.frame.iloc[list(positions)], self.languages, self.cs_reading)

    def for_state(self, state_id: str) -> "FeatureMatrix":
        return FeatureMatrix(self.frame[self.frame["state_id"] == state_id], self.languages, self.cs_reading)

    def states(self) -> List[str]:
        return sorted(self.frame["state_id"].unique().tolist())

    def catalogue_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.feature_names).encode("utf-8")).hexdigest()

    def header(self) -> Dict:
        return {
            "version": MATRIX_VERSION,
            "columns": ID_COLUMNS + self.feature_names + [LABEL_COLUMN],
            "id_columns": ID_COLUMNS,
            "feature_columns": self.feature_names,
            "label_column": LABEL_COLUMN,
            "languages": self.languages,
            "time_bins": TIME_BINS,
            "cs_reading": self.cs_reading.value,
            "as_of": "features use only events dated strictly before the row date",
            "row_order": ["date", "screening_id", "farmer_id"],
            "catalogue_sha256": self.catalogue_hash(),
            "rows": len(self),
        }

    def write(self, directory: Union[str, Path]) -> Dict[str, Path]:
        """Write features.csv and its features.json header."""
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = root / "features.csv", root / "features.json"
        self.frame.to_csv(csv_path, index=False, encoding="utf-8", lineterminator="\n")
        with open(json_path, "w", encoding="utf-8") as handle:
            json.dump(self.header(), handle, indent=2, sort_keys=True)
            handle.write("\n")
        return {"features.csv": csv_path, "features.json": json_path}

    @classmethod
    def read(cls, directory: Union[str, Path]) -> "FeatureMatrix":
        root = Path(directory)
        with open(root / "features.json", "r", encoding="utf-8") as handle:
            header = json.load(handle)
        frame = pd.read_csv(root / "features.csv", dtype={c: str for c in ID_COLUMNS},
                            keep_default_na=False, float_precision="round_trip", encoding="utf-8")
        return cls(frame, header["languages"], CSReading(header["cs_reading"]))


def village_graph_features(dataset: Dataset, village_id: str,
                           attendee_cap: int = DEFAULT_ATTENDEE_CAP,
                           cache: Optional[SnapshotCache] = None) -> pd.DataFrame:
    """
    PAI and G1/G2 centralities for every attendance event in one village,
    keyed by (screening_id, farmer_id).
    """
    g1 = build_coattendance(dataset, village_id, attendee_cap)
    g2 = build_coadoption(dataset, village_id)
    adopters = AdopterIndex(dataset)
    cache = cache if cache is not None else SnapshotCache()

    rows = []
    for sid in dataset.village_screenings.get(village_id, ()):
        screening = dataset.screenings[sid]
        on_g1 = cache.table(g1, screening.date)
        on_g2 = cache.table(g2, screening.date)
        for fid in screening.attendees:
            c1, c2 = on_g1.get(fid), on_g2.get(fid)
            rows.append((
                sid, fid,
                pai(g2, adopters, dataset, fid, screening.video_id, screening.date, GeoLevel.GROUP),
                pai(g2, adopters, dataset, fid, screening.video_id, screening.date, GeoLevel.VILLAGE),
                c1.closeness if c1 else 0.0, c1.betweenness if c1 else 0.0, c1.eigenvector if c1 else 0.0,
                c2.closeness if c2 else 0.0, c2.betweenness if c2 else 0.0, c2.eigenvector if c2 else 0.0,
            ))
    logger.debug(f"Village {village_id}: {len(rows)} rows, cache hit rate {cache.hit_rate:.2f}")
    return pd.DataFrame(rows, columns=["screening_id", "farmer_id", "pai_group", "pai_village"] + GRAPH_COLUMNS)


def build_matrix(dataset: Dataset, cache: Optional[SnapshotCache] = None,
                 options: Optional[FeatureOptions] = None, n_jobs: int = 1) -> FeatureMatrix:
    """
    Assemble the labeled feature matrix, one row per attendance event.

    Args:
        dataset: Validated dataset
        cache: Centrality cache, used when running in-process (n_jobs == 1)
        options: CS reading and attendee cap
        n_jobs: joblib worker count for the per-village graph features

    Returns:
        FeatureMatrix: Rows ordered by (date, screening_id, farmer_id)
    """
    options = options or FeatureOptions()
    languages = sorted({video.language_id for video in dataset.videos.values()})
    lang_index = {lang: i for i, lang in enumerate(languages)}
    content = ContentIndex(dataset)
    titles = TitleIndex(dataset)
    attributed = attribute_adoptions(dataset)
    first_seen = {fid: dataset.screenings[sids[0]].date for fid, sids in dataset.farmer_screenings.items()}
    geography = dataset.geography

    records = []
    for screening in dataset.screenings_in_order():
        video = dataset.videos[screening.video_id]
        state = geography.state_of(screening.village_id)
        ma = mediator_attention(screening)
        cs = [content.specificity(screening.village_id, level, screening.date, screening.video_id,
                                  options.cs_reading) for level in CS_LEVELS.values()]
        ta = titles.title_adoption(screening.video_id, screening.date, state)
        language = [0] * len(languages)
        language[lang_index[video.language_id]] = 1
        bins = [0] * len(TIME_BINS)
        bins[TIME_BINS.index(time_bin(screening.start_time))] = 1
        village_size = geography.population(GeoLevel.VILLAGE, screening.village_id)
        for fid in screening.attendees:
            farmer = dataset.farmers[fid]
            records.append([
                fid, screening.video_id, screening.screening_id, screening.village_id, state,
                screening.date.isoformat(), ma, *cs, ta, video.duration_minutes, *language, *bins,
                geography.population(GeoLevel.GROUP, farmer.group_id), village_size,
                (screening.date - first_seen[fid]).days,
                int(attributed.get((fid, screening.video_id)) == screening.screening_id),
            ])
    base_columns = (ID_COLUMNS + ["ma", "cs_village", "cs_block", "cs_district", "ta", "duration"]
                    + [f"lang_{lang}" for lang in languages] + [f"time_{b}" for b in TIME_BINS]
                    + DEMOGRAPHIC_COLUMNS + [LABEL_COLUMN])
    base = pd.DataFrame(records, columns=base_columns)

    villages = [v for v in dataset.village_ids() if dataset.village_screenings.get(v)]
    logger.info(f"Computing graph features for {len(villages)} village(s) with n_jobs={n_jobs}")
    if n_jobs == 1:
        cache = cache if cache is not None else SnapshotCache()
        parts = [village_graph_features(dataset, v, options.attendee_cap, cache) for v in villages]
        logger.info(f"Snapshot cache: {len(cache)} tables, hit rate {cache.hit_rate:.2f}")
    else:
        parts = Parallel(n_jobs=n_jobs)(
            delayed(village_graph_features)(dataset.village_view(v), v, options.attendee_cap)
            for v in villages)
    graph_columns = ["screening_id", "farmer_id", "pai_group", "pai_village"] + GRAPH_COLUMNS
    graph = pd.concat(parts, ignore_index=True) if parts else pd.DataFrame(columns=graph_columns)

    frame = base.merge(graph, on=["screening_id", "farmer_id"], how="left", validate="one_to_one")
    if frame[GRAPH_COLUMNS].isna().any().any():
        raise FeatureError("graph features missing for some attendance events")
    frame["pai_group"] = frame["pai_group"].astype(np.int64)
    frame["pai_village"] = frame["pai_village"].astype(np.int64)
    frame = frame.sort_values(["date", "screening_id", "farmer_id"], kind="mergesort")
    if content.undefined_count:
        logger.warning(f"Content specificity undefined for {content.undefined_count} row(s)")
    matrix = FeatureMatrix(frame, languages, options.cs_reading)
    logger.info(f"Built {matrix!r}; {int(matrix.y.sum())} positive label(s)")
    return matrix
