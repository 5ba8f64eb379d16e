"""
Core domain model for CoCo event logs.

Typed records for farmers, geography, mediators, videos, screenings and
adoptions; CSV ingestion with referential validation (strict or lenient);
canonical CSV output; and the deterministic event timeline that every
downstream module consumes.
"""

import logging
import re
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Tuple, Union

import pandas as pd

from coco.errors import (
    DatasetFileError,
    DatasetValidationError,
    UnknownEntityError,
    ValidationIssue,
)

logger = logging.getLogger(__name__)


TABLE_SCHEMAS: Dict[str, List[str]] = {
    "geography": ["village_id", "block_id", "district_id", "state_id"],
    "farmers": ["farmer_id", "group_id", "village_id", "gender", "registration_date"],
    "mediators": ["mediator_id", "gender"],
    "videos": ["video_id", "title", "duration_minutes", "language_id"],
    "screenings": ["screening_id", "video_id", "mediator_id", "village_id", "date", "start_time"],
    "attendance": ["screening_id", "farmer_id"],
    "adoptions": ["farmer_id", "video_id", "verification_date"],
}

_CLOCK_PATTERN = re.compile(r"^(\d{2}):(\d{2})$")
_TOKEN_SPLIT = re.compile(r"[\W_]+", re.UNICODE)


class Strictness(str, Enum):
    STRICT = "strict"
    LENIENT = "lenient"


class Gender(str, Enum):
    WOMAN = "woman"
    MAN = "man"
    UNSPECIFIED = "unspecified"

    @classmethod
    def parse(cls, value: str) -> "Gender":
        """Parse a gender cell; an empty cell means unspecified."""
        text = (value or "").strip().lower()
        if not text:
            return cls.UNSPECIFIED
        return cls(text)


class GeoLevel(str, Enum):
    GROUP = "group"
    VILLAGE = "village"
    BLOCK = "block"
    DISTRICT = "district"
    STATE = "state"


class EventKind(str, Enum):
    SCREENING = "screening"
    ADOPTION = "adoption"


# Drop/issue reasons shared by the loader and the validation report
MALFORMED_ROW = "malformed_row"
DUPLICATE_KEY = "duplicate_key"
DANGLING_REFERENCE = "dangling_reference"
HIERARCHY_CONFLICT = "hierarchy_conflict"
GROUP_VILLAGE_CONFLICT = "group_village_conflict"
VILLAGE_MISMATCH = "village_mismatch"
EMPTY_ATTENDANCE = "empty_attendance"
ADOPTION_BEFORE_ATTENDANCE = "adoption_before_attendance"


def tokenize_title(title: str) -> List[str]:
    """
    Tokenize a video title: lowercase, split on whitespace and punctuation,
    drop tokens shorter than two characters. Order is preserved.
    """
    return [tok for tok in _TOKEN_SPLIT.split(title.lower()) if len(tok) >= 2]


def parse_clock(value: str) -> Tuple[int, int]:
    """
    Parse a local wall-clock time "HH:MM".

    Raises:
        ValueError: If the value is not a valid 24h clock time
    """
    match = _CLOCK_PATTERN.match(value.strip())
    if not match:
        raise ValueError(f"invalid clock time {value!r}")
    hour, minute = int(match.group(1)), int(match.group(2))
    if hour > 23 or minute > 59:
        raise ValueError(f"invalid clock time {value!r}")
    return hour, minute


# =============================================================================
# DOMAIN RECORDS
# =============================================================================

@dataclass(frozen=True)
class Farmer:
    farmer_id: str
    group_id: str
    village_id: str
    gender: Gender
    registration_date: date


@dataclass(frozen=True)
class VillageLocation:
    village_id: str
    block_id: str
    district_id: str
    state_id: str


@dataclass(frozen=True)
class Mediator:
    mediator_id: str
    gender: Gender


@dataclass(frozen=True)
class Video:
    video_id: str
    title: str
    duration_minutes: float
    language_id: str


@dataclass(frozen=True)
class Screening:
    screening_id: str
    video_id: str
    mediator_id: str
    village_id: str
    date: date
    start_time: str
    attendees: Tuple[str, ...]


@dataclass(frozen=True)
class AdoptionRecord:
    farmer_id: str
    video_id: str
    verification_date: date


@dataclass(frozen=True)
class TimelineEvent:
    date: date
    kind: EventKind
    key: Tuple[str, ...]
    record: Union[Screening, AdoptionRecord]

    @property
    def sort_key(self) -> Tuple:
        return (self.date, 0 if self.kind is EventKind.SCREENING else 1, self.key)


class Geography:
    """
    Containment hierarchy village ⊂ block ⊂ district ⊂ state with farmer
    population counts per unit (groups included).
    """

    def __init__(self, villages: Mapping[str, VillageLocation], farmers: Iterable[Farmer]):
        self.villages: Dict[str, VillageLocation] = dict(villages)
        counts: Dict[Tuple[GeoLevel, str], int] = defaultdict(int)
        for farmer in farmers:
            location = self.villages[farmer.village_id]
            counts[(GeoLevel.GROUP, farmer.group_id)] += 1
            counts[(GeoLevel.VILLAGE, location.village_id)] += 1
            counts[(GeoLevel.BLOCK, location.block_id)] += 1
            counts[(GeoLevel.DISTRICT, location.district_id)] += 1
            counts[(GeoLevel.STATE, location.state_id)] += 1
        self._populations = dict(counts)

    def location(self, village_id: str) -> VillageLocation:
        try:
            return self.villages[village_id]
        except KeyError:
            raise UnknownEntityError(f"unknown village {village_id!r}") from None

    def unit_of(self, village_id: str, level: GeoLevel) -> str:
        """Identifier of the level-`level` unit containing a village."""
        location = self.location(village_id)
        if level is GeoLevel.VILLAGE:
            return location.village_id
        if level is GeoLevel.BLOCK:
            return location.block_id
        if level is GeoLevel.DISTRICT:
            return location.district_id
        if level is GeoLevel.STATE:
            return location.state_id
        raise ValueError("groups are resolved through farmers, not villages")

    def state_of(self, village_id: str) -> str:
        return self.location(village_id).state_id

    def population(self, level: GeoLevel, unit_id: str) -> int:
        return self._populations.get((level, unit_id), 0)

    def states(self) -> List[str]:
        return sorted({loc.state_id for loc in self.villages.values()})


@dataclass
class ValidationReport:
    """Outcome of an ingestion run: row counts, drops by reason and issues."""
    strictness: Strictness = Strictness.STRICT
    issues: List[ValidationIssue] = field(default_factory=list)
    dropped: Dict[str, int] = field(default_factory=dict)
    row_counts: Dict[str, int] = field(default_factory=dict)

    @property
    def dropped_total(self) -> int:
        return sum(self.dropped.values())

    def to_dict(self) -> Dict:
        return {
            "strictness": self.strictness.value,
            "row_counts": dict(sorted(self.row_counts.items())),
            "dropped": dict(sorted(self.dropped.items())),
            "dropped_total": self.dropped_total,
            "issues": [asdict(issue) for issue in self.issues],
        }


# =============================================================================
# DATASET
# =============================================================================

class Dataset:
    """
    Immutable, cross-linked CoCo dataset with derived indices.

    Construct through load_dataset() or Dataset.from_tables(); the plain
    constructor trusts its inputs and only builds indices.
    """

    def __init__(self,
                 farmers: Mapping[str, Farmer],
                 villages: Mapping[str, VillageLocation],
                 mediators: Mapping[str, Mediator],
                 videos: Mapping[str, Video],
                 screenings: Mapping[str, Screening],
                 adoptions: Iterable[AdoptionRecord],
                 report: Optional[ValidationReport] = None):
        self.farmers: Dict[str, Farmer] = dict(sorted(farmers.items()))
        self.geography = Geography(dict(sorted(villages.items())), self.farmers.values())
        self.mediators: Dict[str, Mediator] = dict(sorted(mediators.items()))
        self.videos: Dict[str, Video] = dict(sorted(videos.items()))
        self.screenings: Dict[str, Screening] = dict(sorted(screenings.items()))
        self.adoptions: Tuple[AdoptionRecord, ...] = tuple(sorted(
            adoptions, key=lambda a: (a.verification_date, a.farmer_id, a.video_id)))
        self.report = report or ValidationReport()
        self._build_indices()

    def _build_indices(self) -> None:
        by_date = sorted(self.screenings.values(), key=lambda s: (s.date, s.screening_id))

        farmer_screenings: Dict[str, List[str]] = defaultdict(list)
        village_screenings: Dict[str, List[str]] = defaultdict(list)
        for screening in by_date:
            village_screenings[screening.village_id].append(screening.screening_id)
            for farmer_id in screening.attendees:
                farmer_screenings[farmer_id].append(screening.screening_id)

        video_adopters: Dict[str, List[AdoptionRecord]] = defaultdict(list)
        farmer_adoptions: Dict[str, List[AdoptionRecord]] = defaultdict(list)
        for record in self.adoptions:
            video_adopters[record.video_id].append(record)
            farmer_adoptions[record.farmer_id].append(record)

        village_farmers: Dict[str, List[str]] = defaultdict(list)
        group_members: Dict[str, List[str]] = defaultdict(list)
        group_village: Dict[str, str] = {}
        for farmer in self.farmers.values():
            village_farmers[farmer.village_id].append(farmer.farmer_id)
            group_members[farmer.group_id].append(farmer.farmer_id)
            group_village[farmer.group_id] = farmer.village_id

        self.farmer_screenings = {k: tuple(v) for k, v in farmer_screenings.items()}
        self.village_screenings = {k: tuple(v) for k, v in village_screenings.items()}
        self.video_adopters = {k: tuple(v) for k, v in video_adopters.items()}
        self.farmer_adoptions = {k: tuple(v) for k, v in farmer_adoptions.items()}
        self.village_farmers = {k: tuple(v) for k, v in village_farmers.items()}
        self.group_members = {k: tuple(v) for k, v in group_members.items()}
        self.group_village = group_village

        dates = [s.date for s in self.screenings.values()]
        dates.extend(a.verification_date for a in self.adoptions)
        self.date_range: Optional[Tuple[date, date]] = (min(dates), max(dates)) if dates else None

    # -------------------------------------------------------------------------
    # Lookups
    # -------------------------------------------------------------------------

    def farmer(self, farmer_id: str) -> Farmer:
        try:
            return self.farmers[farmer_id]
        except KeyError:
            raise UnknownEntityError(f"unknown farmer {farmer_id!r}") from None

    def village_ids(self) -> List[str]:
        return list(self.geography.villages)

    def require_village(self, village_id: str) -> VillageLocation:
        return self.geography.location(village_id)

    def screenings_in_order(self) -> List[Screening]:
        return sorted(self.screenings.values(), key=lambda s: (s.date, s.screening_id))

    def attendance_count(self) -> int:
        return sum(len(s.attendees) for s in self.screenings.values())

    def videos_viewed(self, farmer_id: str) -> List[str]:
        return sorted({self.screenings[sid].video_id for sid in self.farmer_screenings.get(farmer_id, ())})

    def videos_adopted(self, farmer_id: str) -> List[str]:
        return sorted({a.video_id for a in self.farmer_adoptions.get(farmer_id, ())})

    # -------------------------------------------------------------------------
    # Derived datasets
    # -------------------------------------------------------------------------

    def village_view(self, village_id: str) -> "Dataset":
        """
        Self-contained sub-dataset for one village.

        Only village- and group-level populations are meaningful in the view;
        block, district and state populations collapse to the village's.
        """
        location = self.require_village(village_id)
        farmer_ids = set(self.village_farmers.get(village_id, ()))
        screenings = {sid: self.screenings[sid] for sid in self.village_screenings.get(village_id, ())}
        adoptions = [a for fid in sorted(farmer_ids) for a in self.farmer_adoptions.get(fid, ())]
        video_ids = {s.video_id for s in screenings.values()} | {a.video_id for a in adoptions}
        mediator_ids = {s.mediator_id for s in screenings.values()}
        return Dataset(
            farmers={fid: self.farmers[fid] for fid in farmer_ids},
            villages={village_id: location},
            mediators={mid: self.mediators[mid] for mid in mediator_ids},
            videos={vid: self.videos[vid] for vid in video_ids},
            screenings=screenings,
            adoptions=adoptions,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.farmers == other.farmers
                and self.geography.villages == other.geography.villages
                and self.mediators == other.mediators
                and self.videos == other.videos
                and self.screenings == other.screenings
                and self.adoptions == other.adoptions)

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return (f"Dataset(farmers={len(self.farmers)}, villages={len(self.geography.villages)}, "
                f"videos={len(self.videos)}, screenings={len(self.screenings)}, "
                f"adoptions={len(self.adoptions)})")

    # -------------------------------------------------------------------------
    # Validated construction
    # -------------------------------------------------------------------------

    @classmethod
    def from_tables(cls, tables: Mapping[str, pd.DataFrame],
                    strictness: Strictness = Strictness.STRICT) -> "Dataset":
        """
        Validate in-memory string tables and build a Dataset.

        Args:
            tables: One DataFrame per table name in TABLE_SCHEMAS, all cells as
                strings. An optional "__line__" column carries source line numbers.
            strictness: STRICT raises on the first table with violations;
                LENIENT drops offending rows and counts them.

        Returns:
            Dataset: Validated dataset with its ValidationReport attached

        Raises:
            DatasetValidationError: In strict mode, on any violation
        """
        return _TableValidator(strictness).build(tables)


def _line_numbers(frame: pd.DataFrame) -> List[Optional[int]]:
    if "__line__" in frame.columns:
        return [int(v) for v in frame["__line__"]]
    return [int(i) + 2 for i in range(len(frame))]


class _TableValidator:
    """Runs the referential checks table by table, in dependency order."""

    def __init__(self, strictness: Strictness):
        self.strictness = strictness
        self.report = ValidationReport(strictness=strictness)
        self._pending: List[ValidationIssue] = []

    def issue(self, table: str, reason: str, message: str, line: Optional[int] = None) -> None:
        self._pending.append(ValidationIssue(table=table, reason=reason, message=message, line=line))

    def checkpoint(self) -> None:
        """Commit pending issues; in strict mode any issue is fatal."""
        if not self._pending:
            return
        if self.strictness is Strictness.STRICT:
            self.report.issues.extend(self._pending)
            raise DatasetValidationError(self._pending)
        for issue in self._pending:
            self.report.dropped[issue.reason] = self.report.dropped.get(issue.reason, 0) + 1
            logger.debug(f"Dropped row: {issue}")
        self.report.issues.extend(self._pending)
        self._pending = []

    def _rows(self, tables: Mapping[str, pd.DataFrame], name: str) -> Iterator[Tuple[Optional[int], Dict[str, str]]]:
        frame = tables.get(name)
        if frame is None:
            raise DatasetFileError(f"missing table {name!r}")
        columns = TABLE_SCHEMAS[name]
        missing = [c for c in columns if c not in frame.columns]
        if missing:
            raise DatasetFileError(f"{name}.csv is missing column(s): {', '.join(missing)}")
        self.report.row_counts[name] = len(frame)
        short = frame[columns].isna().any(axis=1).tolist() if len(frame) else []
        values = frame[columns].fillna("").astype(str).to_dict("records")
        for line, row, is_short in zip(_line_numbers(frame), values, short):
            if is_short:
                self.issue(name, MALFORMED_ROW, f"expected {len(columns)} fields", line)
                continue
            yield line, {k: v.strip() for k, v in row.items()}

    def _require(self, name: str, row: Dict[str, str], line: Optional[int], *fields: str) -> bool:
        empty = [f for f in fields if not row[f]]
        if empty:
            self.issue(name, MALFORMED_ROW, f"empty field(s): {', '.join(empty)}", line)
            return False
        return True

    def _parse_date(self, name: str, value: str, line: Optional[int]) -> Optional[date]:
        try:
            return date.fromisoformat(value)
        except ValueError:
            self.issue(name, MALFORMED_ROW, f"invalid date {value!r}", line)
            return None

    def build(self, tables: Mapping[str, pd.DataFrame]) -> Dataset:
        villages = self._geography(tables)
        farmers = self._farmers(tables, villages)
        mediators = self._mediators(tables)
        videos = self._videos(tables)
        screenings = self._screenings(tables, videos, mediators, villages)
        attendees = self._attendance(tables, screenings, farmers)
        screenings = self._attach_attendees(screenings, attendees)
        adoptions = self._adoptions(tables, farmers, videos, screenings)
        dataset = Dataset(farmers, villages, mediators, videos, screenings, adoptions, report=self.report)
        logger.info(f"Loaded {dataset!r}; dropped {self.report.dropped_total} row(s)")
        return dataset

    def _geography(self, tables) -> Dict[str, VillageLocation]:
        villages: Dict[str, VillageLocation] = {}
        block_parent: Dict[str, str] = {}
        district_parent: Dict[str, str] = {}
        for line, row in self._rows(tables, "geography"):
            if not self._require("geography", row, line, *TABLE_SCHEMAS["geography"]):
                continue
            vid = row["village_id"]
            if vid in villages:
                self.issue("geography", DUPLICATE_KEY, f"duplicate village_id {vid!r}", line)
                continue
            if block_parent.get(row["block_id"], row["district_id"]) != row["district_id"]:
                self.issue("geography", HIERARCHY_CONFLICT,
                           f"block {row['block_id']!r} belongs to two districts", line)
                continue
            if district_parent.get(row["district_id"], row["state_id"]) != row["state_id"]:
                self.issue("geography", HIERARCHY_CONFLICT,
                           f"district {row['district_id']!r} belongs to two states", line)
                continue
            block_parent[row["block_id"]] = row["district_id"]
            district_parent[row["district_id"]] = row["state_id"]
            villages[vid] = VillageLocation(vid, row["block_id"], row["district_id"], row["state_id"])
        self.checkpoint()
        return villages

    def _farmers(self, tables, villages) -> Dict[str, Farmer]:
        farmers: Dict[str, Farmer] = {}
        group_village: Dict[str, str] = {}
        for line, row in self._rows(tables, "farmers"):
            if not self._require("farmers", row, line, "farmer_id", "group_id", "village_id", "registration_date"):
                continue
            try:
                gender = Gender.parse(row["gender"])
            except ValueError:
                self.issue("farmers", MALFORMED_ROW, f"invalid gender {row['gender']!r}", line)
                continue
            registered = self._parse_date("farmers", row["registration_date"], line)
            if registered is None:
                continue
            fid = row["farmer_id"]
            if fid in farmers:
                self.issue("farmers", DUPLICATE_KEY, f"duplicate farmer_id {fid!r}", line)
                continue
            if row["village_id"] not in villages:
                self.issue("farmers", DANGLING_REFERENCE, f"unknown village_id {row['village_id']!r}", line)
                continue
            if group_village.get(row["group_id"], row["village_id"]) != row["village_id"]:
                self.issue("farmers", GROUP_VILLAGE_CONFLICT,
                           f"group {row['group_id']!r} spans two villages", line)
                continue
            group_village[row["group_id"]] = row["village_id"]
            farmers[fid] = Farmer(fid, row["group_id"], row["village_id"], gender, registered)
        self.checkpoint()
        return farmers

    def _mediators(self, tables) -> Dict[str, Mediator]:
        mediators: Dict[str, Mediator] = {}
        for line, row in self._rows(tables, "mediators"):
            if not self._require("mediators", row, line, "mediator_id"):
                continue
            try:
                gender = Gender.parse(row["gender"])
            except ValueError:
                self.issue("mediators", MALFORMED_ROW, f"invalid gender {row['gender']!r}", line)
                continue
            if row["mediator_id"] in mediators:
                self.issue("mediators", DUPLICATE_KEY, f"duplicate mediator_id {row['mediator_id']!r}", line)
                continue
            mediators[row["mediator_id"]] = Mediator(row["mediator_id"], gender)
        self.checkpoint()
        return mediators

    def _videos(self, tables) -> Dict[str, Video]:
        videos: Dict[str, Video] = {}
        for line, row in self._rows(tables, "videos"):
            if not self._require("videos", row, line, *TABLE_SCHEMAS["videos"]):
                continue
            try:
                duration = float(row["duration_minutes"])
            except ValueError:
                self.issue("videos", MALFORMED_ROW, f"invalid duration {row['duration_minutes']!r}", line)
                continue
            if not duration > 0 or duration == float("inf"):
                self.issue("videos", MALFORMED_ROW, f"duration must be positive, got {duration}", line)
                continue
            if not tokenize_title(row["title"]):
                self.issue("videos", MALFORMED_ROW, "title is empty after tokenization", line)
                continue
            if row["video_id"] in videos:
                self.issue("videos", DUPLICATE_KEY, f"duplicate video_id {row['video_id']!r}", line)
                continue
            videos[row["video_id"]] = Video(row["video_id"], row["title"], duration, row["language_id"])
        self.checkpoint()
        return videos

    def _screenings(self, tables, videos, mediators, villages) -> Dict[str, Screening]:
        screenings: Dict[str, Screening] = {}
        for line, row in self._rows(tables, "screenings"):
            if not self._require("screenings", row, line, *TABLE_SCHEMAS["screenings"]):
                continue
            held_on = self._parse_date("screenings", row["date"], line)
            if held_on is None:
                continue
            try:
                hour, minute = parse_clock(row["start_time"])
            except ValueError as exc:
                self.issue("screenings", MALFORMED_ROW, str(exc), line)
                continue
            sid = row["screening_id"]
            if sid in screenings:
                self.issue("screenings", DUPLICATE_KEY, f"duplicate screening_id {sid!r}", line)
                continue
            dangling = [(col, row[col]) for col, known in
                        (("video_id", videos), ("mediator_id", mediators), ("village_id", villages))
                        if row[col] not in known]
            if dangling:
                col, value = dangling[0]
                self.issue("screenings", DANGLING_REFERENCE, f"unknown {col} {value!r}", line)
                continue
            screenings[sid] = Screening(sid, row["video_id"], row["mediator_id"], row["village_id"],
                                        held_on, f"{hour:02d}:{minute:02d}", ())
        self.checkpoint()
        return screenings

    def _attendance(self, tables, screenings, farmers) -> Dict[str, List[str]]:
        attendees: Dict[str, set] = defaultdict(set)
        for line, row in self._rows(tables, "attendance"):
            if not self._require("attendance", row, line, "screening_id", "farmer_id"):
                continue
            sid, fid = row["screening_id"], row["farmer_id"]
            if sid not in screenings:
                self.issue("attendance", DANGLING_REFERENCE, f"unknown screening_id {sid!r}", line)
                continue
            if fid not in farmers:
                self.issue("attendance", DANGLING_REFERENCE, f"unknown farmer_id {fid!r}", line)
                continue
            if farmers[fid].village_id != screenings[sid].village_id:
                self.issue("attendance", VILLAGE_MISMATCH,
                           f"farmer {fid!r} does not belong to the village of screening {sid!r}", line)
                continue
            if fid in attendees[sid]:
                self.issue("attendance", DUPLICATE_KEY, f"duplicate attendance ({sid!r}, {fid!r})", line)
                continue
            attendees[sid].add(fid)
        self.checkpoint()
        return {sid: sorted(fids) for sid, fids in attendees.items()}

    def _attach_attendees(self, screenings, attendees) -> Dict[str, Screening]:
        complete: Dict[str, Screening] = {}
        for sid, screening in screenings.items():
            members = attendees.get(sid)
            if not members:
                self.issue("screenings", EMPTY_ATTENDANCE, f"screening with empty attendee set: {sid!r}")
                continue
            complete[sid] = Screening(screening.screening_id, screening.video_id, screening.mediator_id,
                                      screening.village_id, screening.date, screening.start_time,
                                      tuple(members))
        self.checkpoint()
        return complete

    def _adoptions(self, tables, farmers, videos, screenings) -> List[AdoptionRecord]:
        first_view: Dict[Tuple[str, str], date] = {}
        for screening in screenings.values():
            for fid in screening.attendees:
                key = (fid, screening.video_id)
                if key not in first_view or screening.date < first_view[key]:
                    first_view[key] = screening.date

        adoptions: Dict[Tuple[str, str], AdoptionRecord] = {}
        for line, row in self._rows(tables, "adoptions"):
            if not self._require("adoptions", row, line, *TABLE_SCHEMAS["adoptions"]):
                continue
            verified = self._parse_date("adoptions", row["verification_date"], line)
            if verified is None:
                continue
            fid, vid = row["farmer_id"], row["video_id"]
            if fid not in farmers or vid not in videos:
                missing = ("farmer_id", fid) if fid not in farmers else ("video_id", vid)
                self.issue("adoptions", DANGLING_REFERENCE, f"unknown {missing[0]} {missing[1]!r}", line)
                continue
            if (fid, vid) in adoptions:
                self.issue("adoptions", DUPLICATE_KEY, f"duplicate adoption ({fid!r}, {vid!r})", line)
                continue
            seen = first_view.get((fid, vid))
            if seen is None or seen > verified:
                self.issue("adoptions", ADOPTION_BEFORE_ATTENDANCE,
                           f"adoption of {vid!r} by {fid!r} precedes any attendance of that video", line)
                continue
            adoptions[(fid, vid)] = AdoptionRecord(fid, vid, verified)
        self.checkpoint()
        return list(adoptions.values())


# =============================================================================
# CSV I/O
# =============================================================================

def _read_table(path: Path, name: str, strictness: Strictness) -> pd.DataFrame:
    if not path.exists():
        raise DatasetFileError(f"missing file: {path}")
    bad_lines: List[List[str]] = []

    def _on_bad_line(fields: List[str]) -> None:
        bad_lines.append(fields)
        return None

    try:
        if strictness is Strictness.STRICT:
            frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
        else:
            frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8",
                                engine="python", on_bad_lines=_on_bad_line)
    except pd.errors.EmptyDataError:
        raise DatasetFileError(f"{path} is empty (a header row is required)") from None
    except pd.errors.ParserError as exc:
        raise DatasetValidationError([ValidationIssue(name, MALFORMED_ROW, str(exc))]) from None

    frame = frame.copy()
    frame["__line__"] = range(2, len(frame) + 2)
    if bad_lines:
        logger.warning(f"{name}.csv: skipped {len(bad_lines)} line(s) with too many fields")
        frame.attrs["bad_lines"] = len(bad_lines)
    return frame


def _resolve_paths(table_paths: Union[str, Path, Mapping[str, Union[str, Path]]]) -> Dict[str, Path]:
    if isinstance(table_paths, (str, Path)):
        root = Path(table_paths)
        return {name: root / f"{name}.csv" for name in TABLE_SCHEMAS}
    resolved = {name: Path(path) for name, path in table_paths.items()}
    missing = [name for name in TABLE_SCHEMAS if name not in resolved]
    if missing:
        raise DatasetFileError(f"no path given for table(s): {', '.join(missing)}")
    return resolved


def load_dataset(table_paths: Union[str, Path, Mapping[str, Union[str, Path]]],
                 strictness: Strictness = Strictness.STRICT) -> Dataset:
    """
    Load and validate the seven CoCo tables.

    Args:
        table_paths: Directory containing <table>.csv files, or a mapping
            from table name to file path
        strictness: STRICT (any violation is fatal) or LENIENT (drop and count)

    Returns:
        Dataset: Fully cross-linked dataset; dataset.report holds drop counts

    Raises:
        DatasetFileError: Missing or unreadable file
        DatasetValidationError: Strict-mode violation (line numbers included)
    """
    strictness = Strictness(strictness)
    paths = _resolve_paths(table_paths)
    tables = {name: _read_table(paths[name], name, strictness) for name in TABLE_SCHEMAS}
    skipped = sum(int(frame.attrs.get("bad_lines", 0)) for frame in tables.values())
    dataset = Dataset.from_tables(tables, strictness)
    if skipped:
        dataset.report.dropped[MALFORMED_ROW] = dataset.report.dropped.get(MALFORMED_ROW, 0) + skipped
    return dataset


def dataset_tables(dataset: Dataset) -> Dict[str, pd.DataFrame]:
    """Canonically ordered string tables for a dataset."""
    def frame(name: str, rows: List[Tuple]) -> pd.DataFrame:
        return pd.DataFrame(rows, columns=TABLE_SCHEMAS[name])

    return {
        "geography": frame("geography", [
            (v.village_id, v.block_id, v.district_id, v.state_id)
            for v in dataset.geography.villages.values()]),
        "farmers": frame("farmers", [
            (f.farmer_id, f.group_id, f.village_id, f.gender.value, f.registration_date.isoformat())
            for f in dataset.farmers.values()]),
        "mediators": frame("mediators", [
            (m.mediator_id, m.gender.value) for m in dataset.mediators.values()]),
        "videos": frame("videos", [
            (v.video_id, v.title, repr(float(v.duration_minutes)), v.language_id)
            for v in dataset.videos.values()]),
        "screenings": frame("screenings", [
            (s.screening_id, s.video_id, s.mediator_id, s.village_id, s.date.isoformat(), s.start_time)
            for s in dataset.screenings.values()]),
        "attendance": frame("attendance", [
            (s.screening_id, fid) for s in dataset.screenings.values() for fid in s.attendees]),
        "adoptions": frame("adoptions", sorted(
            (a.farmer_id, a.video_id, a.verification_date.isoformat()) for a in dataset.adoptions)),
    }


def write_dataset(dataset: Dataset, directory: Union[str, Path]) -> Dict[str, Path]:
    """
    Write the seven tables as canonical CSV (sorted, UTF-8, "\\n" line ends).

    Returns:
        Dict[str, Path]: Table name to written path
    """
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    written = {}
    for name, frame in dataset_tables(dataset).items():
        path = root / f"{name}.csv"
        frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
        written[name] = path
    return written


# =============================================================================
# EVENT TIMELINE
# =============================================================================

def event_timeline(dataset: Dataset) -> List[TimelineEvent]:
    """
    Screenings and adoptions in a total, deterministic order: by date, then
    screenings before adoptions, then screening_id / (farmer_id, video_id).
    """
    events = [TimelineEvent(s.date, EventKind.SCREENING, (s.screening_id,), s)
              for s in dataset.screenings.values()]
    events.extend(TimelineEvent(a.verification_date, EventKind.ADOPTION, (a.farmer_id, a.video_id), a)
                  for a in dataset.adoptions)
    events.sort(key=lambda e: e.sort_key)
    return events
