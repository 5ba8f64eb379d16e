"""
Seeded generator of CoCo-schema datasets with planted adoption effects.

The generator lays out a geography, registers farmers in groups, schedules
screenings, then walks the screenings in date order and draws an adoption
decision for every attendance event from a logistic model over the features'
true current values. The values it plants are computed here with a
straightforward, self-contained bookkeeping of the event history so they can
serve as an oracle for coco.features.
"""

import heapq
import json
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields
from datetime import date, timedelta
from pathlib import Path
from typing import Any, Dict, List, Optional, Set, Tuple, Union

import numpy as np
import pandas as pd
from scipy import optimize, special, stats

from coco.dataset import (
    AdoptionRecord,
    Dataset,
    Farmer,
    Gender,
    Mediator,
    Screening,
    Video,
    VillageLocation,
)
from coco.errors import InfeasibleConfigError

logger = logging.getLogger(__name__)


TITLE_WORDS = [
    "paddy", "wheat", "maize", "seed", "sowing", "compost", "vermicompost", "irrigation",
    "drip", "mulching", "nursery", "transplanting", "weeding", "fertilizer", "urea", "pest",
    "neem", "spray", "organic", "soil", "testing", "line", "method", "bed", "raised",
    "storage", "grain", "harvest", "threshing", "potato", "onion", "tomato", "chilli",
    "brinjal", "okra", "mustard", "pulses", "lentil", "gram", "azolla", "fodder", "cattle",
    "goat", "poultry", "vaccination", "mushroom", "kitchen", "garden", "treatment", "disease",
    "management", "water", "harvesting", "intercropping", "rotation", "zero", "tillage",
    "trellis", "grafting", "mango",
]

LATENT_COLUMNS = [
    "farmer_id", "video_id", "screening_id", "date",
    "pai_village", "pai_group", "ma", "duration", "cs_village", "ta",
    "woman", "village_size", "group_size", "mediator_woman",
    "noise", "logit", "probability", "draw", "recorded",
]

SMALL_GROUP_RANGE = (2, 9)
LARGE_GROUP_RANGE = (10, 30)


@dataclass
class SynthConfig:
    """Scale, distribution and planted-effect parameters for generate()."""
    seed: int = 20201

    n_states: int = 5
    n_districts: int = 10
    n_blocks: int = 25
    n_villages: int = 50
    n_groups: int = 817
    n_farmers: int = 10000
    n_mediators: int = 100
    n_videos: int = 200
    n_screenings: int = 10000
    n_languages: int = 19

    start_date: date = date(2010, 1, 1)
    end_date: date = date(2019, 12, 31)

    # Group sizes: a share of small groups (2-9) and a truncated normal on
    # 10-30 for the rest; the overall mean is fixed by n_farmers / n_groups.
    group_size_sd: float = 6.05
    small_group_fraction: float = 0.1826
    village_size_sigma: float = 0.8

    attendance_probability: float = 0.8
    guest_probability: float = 0.02
    women_fraction: float = 0.6
    mediator_women_fraction: float = 0.35
    duration_min: float = 4.0
    duration_max: float = 16.0
    adoption_lag_min: int = 7
    adoption_lag_max: int = 21
    title_vocabulary: int = 60
    title_words_min: int = 3
    title_words_max: int = 6
    zipf_exponent: float = 1.1
    video_popularity_sigma: float = 1.0

    intercept: float = 1.0
    beta_pai_village: float = 0.4
    beta_pai_group: float = 0.0
    beta_ma: float = 0.0
    beta_duration: float = -0.12
    beta_cs: float = 0.0
    beta_ta: float = 0.0
    beta_gender_gap: float = 0.0
    beta_village_size: float = -0.005
    beta_group_size: float = 0.0
    beta_mediator_gender_gap: float = 0.0
    pai_saturation: int = 3
    noise_scale: float = 0.5

    @property
    def group_size_mean(self) -> float:
        return self.n_farmers / self.n_groups if self.n_groups else float("nan")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SynthConfig":
        """
        Build a config from a JSON-like mapping; dates may be ISO strings.

        Raises:
            InfeasibleConfigError: Unknown keys or unparsable dates
        """
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InfeasibleConfigError(f"unknown synth parameter(s): {', '.join(unknown)}")
        values = dict(data)
        for key in ("start_date", "end_date"):
            if isinstance(values.get(key), str):
                try:
                    values[key] = date.fromisoformat(values[key])
                except ValueError:
                    raise InfeasibleConfigError(f"{key} must be an ISO date, got {values[key]!r}") from None
        return cls(**values)

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "SynthConfig":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_dict(json.load(handle))

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["start_date"] = self.start_date.isoformat()
        data["end_date"] = self.end_date.isoformat()
        return data

    def validate(self) -> List[str]:
        """
        Check feasibility.

        Returns:
            List[str]: Human-readable problems (empty when the config is usable)
        """
        problems = []
        counts = ["n_states", "n_districts", "n_blocks", "n_villages", "n_groups",
                  "n_farmers", "n_mediators", "n_videos", "n_screenings", "n_languages"]
        for name in counts:
            if getattr(self, name) < 1:
                problems.append(f"{name} must be positive")
        if problems:
            return problems

        chain = [("n_districts", "n_states"), ("n_blocks", "n_districts"),
                 ("n_villages", "n_blocks"), ("n_groups", "n_villages")]
        for wide, narrow in chain:
            if getattr(self, wide) < getattr(self, narrow):
                problems.append(f"{wide} ({getattr(self, wide)}) must be >= {narrow} ({getattr(self, narrow)})")
        if self.n_farmers < SMALL_GROUP_RANGE[0] * self.n_groups:
            problems.append(f"n_farmers ({self.n_farmers}) must be >= 2 * n_groups ({self.n_groups})")
        if self.n_mediators < self.n_districts:
            problems.append("n_mediators must be >= n_districts (every district needs a mediator)")
        if self.n_videos < self.n_states:
            problems.append("n_videos must be >= n_states (every state needs a video)")
        if self.start_date > self.end_date:
            problems.append("start_date must not be after end_date")
        if not 0.0 < self.attendance_probability <= 1.0:
            problems.append("attendance_probability must be in (0, 1]")
        for name in ("guest_probability", "women_fraction", "mediator_women_fraction", "small_group_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must be in [0, 1]")
        if not 0.0 < self.duration_min <= self.duration_max:
            problems.append("durations must satisfy 0 < duration_min <= duration_max")
        if not 1 <= self.adoption_lag_min <= self.adoption_lag_max:
            problems.append("adoption lag must satisfy 1 <= adoption_lag_min <= adoption_lag_max")
        if not 1 <= self.title_vocabulary <= len(TITLE_WORDS):
            problems.append(f"title_vocabulary must be in [1, {len(TITLE_WORDS)}]")
        if not 1 <= self.title_words_min <= self.title_words_max <= self.title_vocabulary:
            problems.append("title word counts must satisfy 1 <= min <= max <= title_vocabulary")
        if self.group_size_sd <= 0 or self.village_size_sigma < 0 or self.video_popularity_sigma < 0:
            problems.append("distribution spreads must be non-negative (group_size_sd positive)")
        if self.noise_scale < 0:
            problems.append("noise_scale must be non-negative")
        if self.pai_saturation < 1:
            problems.append("pai_saturation must be >= 1")
        for name, value in self.coefficients().items():
            if not math.isfinite(value):
                problems.append(f"{name} must be finite")
        return problems

    def coefficients(self) -> Dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)
                if f.name.startswith("beta_") or f.name == "intercept"}


@dataclass
class GenerationTrace:
    """A generated dataset together with its per-attendance latent rows."""
    dataset: Dataset
    latents: pd.DataFrame
    config: SynthConfig = field(repr=False)


def planted_logit(config: SynthConfig, row: Dict[str, float]) -> float:
    """Logit of the planted adoption model for one latent row (noise included)."""
    cap = config.pai_saturation
    return (config.intercept
            + config.beta_pai_village * min(row["pai_village"], cap)
            + config.beta_pai_group * min(row["pai_group"], cap)
            + config.beta_ma * row["ma"]
            + config.beta_duration * row["duration"]
            + config.beta_cs * row["cs_village"]
            + config.beta_ta * row["ta"]
            + config.beta_gender_gap * row["woman"]
            + config.beta_village_size * row["village_size"]
            + config.beta_group_size * row["group_size"]
            + config.beta_mediator_gender_gap * row["mediator_woman"]
            + row["noise"])


# =============================================================================
# LAYOUT
# =============================================================================

def _ids(prefix: str, count: int) -> List[str]:
    width = max(len(str(count)), 2)
    return [f"{prefix}{i:0{width}d}" for i in range(1, count + 1)]


def _assign_parents(rng: np.random.Generator, n_children: int, n_parents: int,
                    weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Every parent receives at least one child; the rest are drawn by weight."""
    head = np.arange(min(n_children, n_parents))
    extra = n_children - len(head)
    if extra <= 0:
        return head
    p = None if weights is None else weights / weights.sum()
    return np.concatenate([head, rng.choice(n_parents, size=extra, p=p)])


def _large_group_loc(target_mean: float, sd: float) -> float:
    """Location of a normal truncated to the large band with the given mean."""
    low, high = LARGE_GROUP_RANGE
    target = min(max(target_mean, low + 0.05), high - 0.05)

    def gap(loc: float) -> float:
        a, b = (low - loc) / sd, (high - loc) / sd
        return stats.truncnorm.mean(a, b, loc=loc, scale=sd) - target

    return optimize.brentq(gap, low - 20 * sd, high + 20 * sd)


def draw_group_sizes(rng: np.random.Generator, config: SynthConfig) -> np.ndarray:
    """
    Group sizes summing exactly to n_farmers, each >= 2.

    A small_group_fraction share is uniform on 2-9, the rest a truncated
    normal on 10-30; an exact-sum correction then moves sizes by one
    while keeping each group inside its band when possible.
    """
    n = config.n_groups
    small = rng.random(n) < config.small_group_fraction
    sizes = np.empty(n, dtype=np.int64)
    sizes[small] = rng.integers(SMALL_GROUP_RANGE[0], SMALL_GROUP_RANGE[1] + 1, size=int(small.sum()))

    n_large = int((~small).sum())
    if n_large:
        small_mean = sum(SMALL_GROUP_RANGE) / 2.0
        large_mean = (config.n_farmers - small.sum() * small_mean) / n_large
        sd = config.group_size_sd
        loc = _large_group_loc(large_mean, sd)
        low, high = LARGE_GROUP_RANGE
        draws = stats.truncnorm.rvs((low - loc) / sd, (high - loc) / sd, loc=loc, scale=sd,
                                    size=n_large, random_state=rng)
        sizes[~small] = np.clip(np.rint(draws), low, high).astype(np.int64)

    diff = int(config.n_farmers - sizes.sum())
    while diff != 0:
        step = 1 if diff > 0 else -1
        if step > 0:
            eligible = np.flatnonzero((sizes != SMALL_GROUP_RANGE[1]) & (sizes < LARGE_GROUP_RANGE[1]))
            if eligible.size == 0:
                eligible = np.arange(n)
        else:
            eligible = np.flatnonzero((sizes != LARGE_GROUP_RANGE[0]) & (sizes > SMALL_GROUP_RANGE[0]))
            if eligible.size == 0:
                eligible = np.flatnonzero(sizes > SMALL_GROUP_RANGE[0])
        k = min(abs(diff), eligible.size)
        picked = rng.choice(eligible, size=k, replace=False)
        sizes[picked] += step
        diff -= step * k
    return sizes


def _draw_title(rng: np.random.Generator, config: SynthConfig, word_p: np.ndarray) -> Tuple[str, Tuple[str, ...]]:
    k = int(rng.integers(config.title_words_min, config.title_words_max + 1))
    picks = rng.choice(config.title_vocabulary, size=k, replace=False, p=word_p)
    words = tuple(TITLE_WORDS[i] for i in picks)
    title = " ".join(words)
    return title[0].upper() + title[1:], words


class _Layout:
    """Static part of a synthetic dataset: geography, people, videos, screenings."""

    def __init__(self, rng: np.random.Generator, config: SynthConfig):
        self.config = config
        state_ids = _ids("S", config.n_states)
        district_ids = _ids("D", config.n_districts)
        block_ids = _ids("B", config.n_blocks)
        village_ids = _ids("V", config.n_villages)

        district_state = _assign_parents(rng, config.n_districts, config.n_states)
        block_district = _assign_parents(rng, config.n_blocks, config.n_districts)
        village_block = _assign_parents(rng, config.n_villages, config.n_blocks)

        self.villages: Dict[str, VillageLocation] = {}
        for v, vid in enumerate(village_ids):
            b = village_block[v]
            d = block_district[b]
            self.villages[vid] = VillageLocation(vid, block_ids[b], district_ids[d], state_ids[district_state[d]])

        # Groups and farmers
        village_weights = rng.lognormal(0.0, config.village_size_sigma, size=config.n_villages)
        group_village = _assign_parents(rng, config.n_groups, config.n_villages, village_weights)
        group_sizes = draw_group_sizes(rng, config)
        group_ids = _ids("G", config.n_groups)
        farmer_ids = iter(_ids("F", config.n_farmers))

        genders = rng.random(config.n_farmers) < config.women_fraction
        registration_offsets = rng.integers(0, 731, size=config.n_farmers)
        self.farmers: Dict[str, Farmer] = {}
        self.group_members: Dict[str, List[str]] = {}
        self.village_groups: Dict[str, List[str]] = defaultdict(list)
        i = 0
        for g, gid in enumerate(group_ids):
            vid = village_ids[group_village[g]]
            self.village_groups[vid].append(gid)
            members = []
            for _ in range(int(group_sizes[g])):
                fid = next(farmer_ids)
                gender = Gender.WOMAN if genders[i] else Gender.MAN
                registered = config.start_date - timedelta(days=int(registration_offsets[i]))
                self.farmers[fid] = Farmer(fid, gid, vid, gender, registered)
                members.append(fid)
                i += 1
            self.group_members[gid] = members

        self.village_population = {vid: sum(len(self.group_members[g]) for g in self.village_groups[vid])
                                   for vid in village_ids}

        # Mediators per district
        mediator_ids = _ids("M", config.n_mediators)
        mediator_district = _assign_parents(rng, config.n_mediators, config.n_districts)
        mediator_women = rng.random(config.n_mediators) < config.mediator_women_fraction
        self.mediators = {mid: Mediator(mid, Gender.WOMAN if mediator_women[m] else Gender.MAN)
                          for m, mid in enumerate(mediator_ids)}
        self.district_mediators: Dict[str, List[str]] = defaultdict(list)
        for m, mid in enumerate(mediator_ids):
            self.district_mediators[district_ids[mediator_district[m]]].append(mid)

        # Videos per state, Zipf-weighted title words
        ranks = np.arange(1, config.title_vocabulary + 1, dtype=float)
        word_p = ranks ** -config.zipf_exponent
        word_p /= word_p.sum()
        language_ids = _ids("L", config.n_languages)
        video_ids = _ids("VID", config.n_videos)
        video_state = _assign_parents(rng, config.n_videos, config.n_states)
        video_language = _assign_parents(rng, config.n_videos, config.n_languages)
        durations = rng.uniform(config.duration_min, config.duration_max, size=config.n_videos)
        popularity = rng.lognormal(0.0, config.video_popularity_sigma, size=config.n_videos)

        self.videos: Dict[str, Video] = {}
        self.title_words: Dict[str, Tuple[str, ...]] = {}
        self.state_videos: Dict[str, List[int]] = defaultdict(list)
        for k, vid in enumerate(video_ids):
            title, words = _draw_title(rng, config, word_p)
            duration = float(min(max(round(float(durations[k]), 1), config.duration_min), config.duration_max))
            self.videos[vid] = Video(vid, title, duration, language_ids[video_language[k] % config.n_languages])
            self.title_words[vid] = words
            self.state_videos[state_ids[video_state[k]]].append(k)
        self.video_ids = video_ids
        self.popularity = popularity

        self.screenings = self._schedule(rng, village_ids)

    def _schedule(self, rng: np.random.Generator, village_ids: List[str]) -> List[Screening]:
        config = self.config
        span = (config.end_date - config.start_date).days + 1
        population = np.array([self.village_population[v] for v in village_ids], dtype=float)
        village_pick = rng.choice(len(village_ids), size=config.n_screenings, p=population / population.sum())
        day_offsets = rng.integers(0, span, size=config.n_screenings)
        minutes = rng.integers(0, 24 * 60, size=config.n_screenings)

        drafts = []
        for n in range(config.n_screenings):
            vid = village_ids[village_pick[n]]
            location = self.villages[vid]
            groups = self.village_groups[vid]
            group = groups[int(rng.integers(len(groups)))]
            members = self.group_members[group]
            attendees = [f for f in members if rng.random() < config.attendance_probability]
            if not attendees:
                attendees = [members[int(rng.integers(len(members)))]]
            if config.guest_probability > 0:
                for other in groups:
                    if other == group:
                        continue
                    attendees.extend(f for f in self.group_members[other] if rng.random() < config.guest_probability)
            pool = self.state_videos[location.state_id]
            weights = self.popularity[pool]
            video = self.video_ids[pool[int(rng.choice(len(pool), p=weights / weights.sum()))]]
            mediators = self.district_mediators[location.district_id]
            mediator = mediators[int(rng.integers(len(mediators)))]
            held_on = config.start_date + timedelta(days=int(day_offsets[n]))
            clock = f"{int(minutes[n]) // 60:02d}:{int(minutes[n]) % 60:02d}"
            drafts.append((held_on, clock, n, video, mediator, vid, tuple(sorted(attendees))))

        drafts.sort(key=lambda d: (d[0], d[1], d[2]))
        screening_ids = _ids("SC", config.n_screenings)
        return [Screening(sid, video, mediator, vid, held_on, clock, attendees)
                for sid, (held_on, clock, _, video, mediator, vid, attendees) in zip(screening_ids, drafts)]


# =============================================================================
# SIMULATION
# =============================================================================

class _History:
    """Event history as of the current simulation date (strictly earlier events)."""

    def __init__(self, layout: _Layout):
        self.layout = layout
        self.neighbors: Dict[str, Set[str]] = defaultdict(set)
        self.adopters: Dict[Tuple[str, str], Set[str]] = defaultdict(set)
        self.word_adoptions: Dict[Tuple[str, str], int] = defaultdict(int)
        self.video_screenings: Dict[Tuple[str, str], int] = defaultdict(int)
        self.village_videos: Dict[str, Set[str]] = defaultdict(set)

    def release(self, record: AdoptionRecord) -> None:
        farmer = self.layout.farmers[record.farmer_id]
        key = (farmer.village_id, record.video_id)
        for other in self.adopters[key]:
            self.neighbors[record.farmer_id].add(other)
            self.neighbors[other].add(record.farmer_id)
        self.adopters[key].add(record.farmer_id)
        state = self.layout.villages[farmer.village_id].state_id
        for word in set(self.layout.title_words[record.video_id]):
            self.word_adoptions[(state, word)] += 1

    def close_day(self, screenings: List[Screening]) -> None:
        for screening in screenings:
            state = self.layout.villages[screening.village_id].state_id
            self.video_screenings[(state, screening.video_id)] += 1
            self.village_videos[screening.village_id].add(screening.video_id)


def simulate(config: SynthConfig) -> GenerationTrace:
    """
    Generate a dataset and its latent trace.

    Raises:
        InfeasibleConfigError: If config.validate() reports problems
    """
    problems = config.validate()
    if problems:
        raise InfeasibleConfigError("; ".join(problems))

    rng = np.random.default_rng(config.seed)
    layout = _Layout(rng, config)
    history = _History(layout)
    logger.info(f"Simulating {len(layout.screenings)} screenings over {len(layout.farmers)} farmers")

    pending: List[Tuple[date, str, str]] = []
    adopted: Set[Tuple[str, str]] = set()
    records: List[AdoptionRecord] = []
    rows: List[Dict[str, Any]] = []

    day_start = 0
    screenings = layout.screenings
    while day_start < len(screenings):
        today = screenings[day_start].date
        day_end = day_start
        while day_end < len(screenings) and screenings[day_end].date == today:
            day_end += 1

        while pending and pending[0][0] < today:
            verified, fid, vid = heapq.heappop(pending)
            history.release(AdoptionRecord(fid, vid, verified))

        todays = screenings[day_start:day_end]
        for screening in todays:
            rows.extend(_screening_rows(rng, config, layout, history, screening, adopted, pending, records))
        history.close_day(todays)
        day_start = day_end

    dataset = Dataset(layout.farmers, layout.villages, layout.mediators, layout.videos,
                      {s.screening_id: s for s in screenings}, records)
    latents = pd.DataFrame(rows, columns=LATENT_COLUMNS)
    logger.info(f"Generated {len(records)} adoptions from {len(latents)} attendance events")
    return GenerationTrace(dataset=dataset, latents=latents, config=config)


def _screening_rows(rng, config, layout, history, screening, adopted, pending, records) -> List[Dict[str, Any]]:
    video = layout.videos[screening.video_id]
    location = layout.villages[screening.village_id]
    state = location.state_id
    village_size = layout.village_population[screening.village_id]
    seen = history.village_videos[screening.village_id] | {screening.video_id}
    cs_village = 1.0 / (len(seen) * village_size)
    prior_screenings = history.video_screenings[(state, screening.video_id)]
    if prior_screenings:
        mass = sum(history.word_adoptions[(state, w)] for w in set(layout.title_words[screening.video_id]))
        ta = mass / prior_screenings
    else:
        ta = 0.0
    prior_adopters = history.adopters[(screening.village_id, screening.video_id)]
    mediator_woman = int(layout.mediators[screening.mediator_id].gender is Gender.WOMAN)
    ma = 1.0 / len(screening.attendees)

    rows = []
    for fid in screening.attendees:
        farmer = layout.farmers[fid]
        influencers = history.neighbors[fid] & prior_adopters
        row = {
            "farmer_id": fid,
            "video_id": screening.video_id,
            "screening_id": screening.screening_id,
            "date": screening.date.isoformat(),
            "pai_village": len(influencers),
            "pai_group": sum(1 for g in influencers if layout.farmers[g].group_id == farmer.group_id),
            "ma": ma,
            "duration": video.duration_minutes,
            "cs_village": cs_village,
            "ta": ta,
            "woman": int(farmer.gender is Gender.WOMAN),
            "village_size": village_size,
            "group_size": len(layout.group_members[farmer.group_id]),
            "mediator_woman": mediator_woman,
            "noise": float(rng.normal(0.0, config.noise_scale)) if config.noise_scale > 0 else 0.0,
        }
        row["logit"] = planted_logit(config, row)
        row["probability"] = float(special.expit(row["logit"]))
        row["draw"] = int(rng.random() < row["probability"])
        key = (fid, screening.video_id)
        row["recorded"] = int(row["draw"] == 1 and key not in adopted)
        if row["recorded"]:
            adopted.add(key)
            lag = int(rng.integers(config.adoption_lag_min, config.adoption_lag_max + 1))
            verified = screening.date + timedelta(days=lag)
            records.append(AdoptionRecord(fid, screening.video_id, verified))
            heapq.heappush(pending, (verified, fid, screening.video_id))
        rows.append(row)
    return rows


def generate(config: SynthConfig) -> Dataset:
    """Generate a dataset that passes strict validation; same seed, same output."""
    return simulate(config).dataset


def emit_latents(trace: GenerationTrace, path: Union[str, Path]) -> Path:
    """Write the latent sidecar: one row per attendance event."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trace.latents.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    return path
