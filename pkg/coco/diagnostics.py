"""
Adoption-rate diagnostics: farmer and mediator adoption rates, the
one-tailed Welch battery over adoption-rate quartiles, the gender tests and
the descriptive plot-data bundle.
"""

import logging
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from enum import Enum
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from coco.dataset import Dataset, Gender
from coco.errors import DegenerateStatisticsError, InsufficientSampleError
from coco.features import FeatureMatrix, attribute_adoptions

logger = logging.getLogger(__name__)

BATTERY_ALPHA = 0.001
BATTERY_M = 8
GENDER_TIERS = (0.001, 0.05)
T_ORIENTATION = "t = mean(hypothesized smaller) - mean(hypothesized larger); negative t supports H1"


class Tail(str, Enum):
    LESS = "less"
    GREATER = "greater"


class Family(str, Enum):
    Q1_BELOW_Q4 = "q1<q4"
    Q4_BELOW_Q1 = "q4<q1"


# (column in the per-farmer factor table, hypothesis family)
BATTERY_FACTORS: List[Tuple[str, Family]] = [
    ("ma_mu", Family.Q1_BELOW_Q4),
    ("cs_v_mu", Family.Q1_BELOW_Q4),
    ("pai_g_mu", Family.Q1_BELOW_Q4),
    ("pai_v_mu", Family.Q1_BELOW_Q4),
    ("active_age", Family.Q1_BELOW_Q4),
    ("duration_mu", Family.Q4_BELOW_Q1),
    ("gs", Family.Q4_BELOW_Q1),
    ("vs", Family.Q4_BELOW_Q1),
]


# =============================================================================
# ADOPTION RATES
# =============================================================================

def adoption_rate_farmer(dataset: Dataset, farmer_id: str) -> float:
    """
    Distinct videos adopted over distinct videos viewed.

    Raises:
        InsufficientSampleError: The farmer viewed no video
    """
    viewed = dataset.videos_viewed(farmer_id)
    if not viewed:
        raise InsufficientSampleError(f"farmer {farmer_id!r} viewed no video")
    return len(dataset.videos_adopted(farmer_id)) / len(viewed)


def farmer_adoption_rates(dataset: Dataset) -> pd.Series:
    """Adoption rate of every farmer who viewed at least one video, indexed by farmer_id."""
    rates = {fid: adoption_rate_farmer(dataset, fid) for fid in sorted(dataset.farmer_screenings)}
    return pd.Series(rates, name="adoption_rate", dtype=np.float64)


def _credited(attributed: Dict[Tuple[str, str], str]) -> Dict[str, int]:
    counts: Dict[str, int] = defaultdict(int)
    for sid in attributed.values():
        counts[sid] += 1
    return counts


def _mediator_rate(dataset: Dataset, screening_ids: Sequence[str], credited: Dict[str, int]) -> float:
    attendees: Dict[str, int] = defaultdict(int)
    adoptions: Dict[str, int] = defaultdict(int)
    for sid in screening_ids:
        screening = dataset.screenings[sid]
        attendees[screening.video_id] += len(screening.attendees)
        adoptions[screening.video_id] += credited.get(sid, 0)
    return float(np.mean([adoptions[v] / attendees[v] for v in sorted(attendees)]))


def adoption_rate_mediator(dataset: Dataset, mediator_id: str,
                           attributed: Optional[Dict[Tuple[str, str], str]] = None) -> float:
    """
    Mean over the mediator's screened videos of adoptions attributed to the
    mediator's screenings of that video, over their attendees.

    Raises:
        InsufficientSampleError: The mediator conducted no screening
    """
    screening_ids = [s.screening_id for s in dataset.screenings_in_order() if s.mediator_id == mediator_id]
    if not screening_ids:
        raise InsufficientSampleError(f"mediator {mediator_id!r} conducted no screening")
    if attributed is None:
        attributed = attribute_adoptions(dataset)
    return _mediator_rate(dataset, screening_ids, _credited(attributed))


def mediator_adoption_rates(dataset: Dataset) -> pd.DataFrame:
    """Adoption rate per (mediator, state) over the mediator's screenings in that state."""
    credited = _credited(attribute_adoptions(dataset))
    by_key: Dict[Tuple[str, str], List[str]] = defaultdict(list)
    for screening in dataset.screenings_in_order():
        state = dataset.geography.state_of(screening.village_id)
        by_key[(screening.mediator_id, state)].append(screening.screening_id)
    rows = [(mid, state, dataset.mediators[mid].gender.value, _mediator_rate(dataset, sids, credited))
            for (mid, state), sids in sorted(by_key.items())]
    return pd.DataFrame(rows, columns=["mediator_id", "state_id", "gender", "adoption_rate"])


# =============================================================================
# TESTS
# =============================================================================

@dataclass(frozen=True)
class WelchResult:
    t_stat: float
    degrees_of_freedom: float
    p_value: float
    tail: Tail
    n_a: int
    n_b: int


def welch_one_tailed(sample_a: Sequence[float], sample_b: Sequence[float],
                     tail: Tail = Tail.LESS) -> WelchResult:
    """
    One-tailed Welch t-test of mean(a) against mean(b).

    Raises:
        InsufficientSampleError: Either sample has fewer than two values
        DegenerateStatisticsError: Both variances are zero and the means equal
    """
    tail = Tail(tail)
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise InsufficientSampleError(f"Welch test needs >= 2 values per sample, got {a.size} and {b.size}")
    ratio_a = a.var(ddof=1) / a.size
    ratio_b = b.var(ddof=1) / b.size
    se2 = ratio_a + ratio_b
    if se2 == 0.0:
        if a.mean() == b.mean():
            raise DegenerateStatisticsError("degenerate: both samples are constant with equal means")
        t = math.copysign(math.inf, a.mean() - b.mean())
        p = 0.0 if (t < 0) == (tail is Tail.LESS) else 1.0
        return WelchResult(t, float("nan"), p, tail, int(a.size), int(b.size))

    result = stats.ttest_ind(a, b, equal_var=False, alternative=tail.value)
    df = se2 ** 2 / (ratio_a ** 2 / (a.size - 1) + ratio_b ** 2 / (b.size - 1))
    return WelchResult(float(result.statistic), float(df), float(result.pvalue), tail, int(a.size), int(b.size))


def bonferroni_decide(p: float, m: int = BATTERY_M, alpha: float = BATTERY_ALPHA) -> bool:
    """Significant iff p < alpha / m."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return p < alpha / m


# =============================================================================
# DIFFERENTIAL BATTERY
# =============================================================================

@dataclass(frozen=True)
class FactorTest:
    factor: str
    family: Family
    mean_q1: float
    mean_q4: float
    t_stat: float
    degrees_of_freedom: float
    p_value: float
    significant: bool
    degenerate: bool = False


@dataclass
class DifferentialReport:
    alpha: float = BATTERY_ALPHA
    m: int = BATTERY_M
    states: Dict[str, Dict[str, FactorTest]] = field(default_factory=dict)
    quartile_sizes: Dict[str, List[int]] = field(default_factory=dict)
    quartile_means: Dict[str, Dict[str, List[float]]] = field(default_factory=dict)
    skipped: Dict[str, str] = field(default_factory=dict)

    @property
    def degenerate_cells(self) -> List[Tuple[str, str]]:
        return [(state, name) for state, cells in self.states.items()
                for name, cell in cells.items() if cell.degenerate]

    def to_dict(self) -> Dict:
        return {
            "alpha": self.alpha,
            "m": self.m,
            "threshold": self.alpha / self.m,
            "orientation": T_ORIENTATION,
            "factors": [{"factor": name, "family": family.value} for name, family in BATTERY_FACTORS],
            "states": {state: {name: {**asdict(cell), "family": cell.family.value}
                               for name, cell in cells.items()}
                       for state, cells in self.states.items()},
            "quartile_sizes": self.quartile_sizes,
            "skipped": self.skipped,
        }

    def mean_table(self) -> pd.DataFrame:
        """Per-state, per-quartile mean of every factor."""
        rows = []
        for state, means in self.quartile_means.items():
            for q in range(4):
                rows.append([state, f"q{q + 1}"] + [means[name][q] for name, _ in BATTERY_FACTORS])
        return pd.DataFrame(rows, columns=["state_id", "quartile"] + [name for name, _ in BATTERY_FACTORS])


def farmer_factor_table(dataset: Dataset, matrix: FeatureMatrix) -> pd.DataFrame:
    """
    Per-farmer factors for the battery: means over attendance rows for the
    per-video factors, first-to-last attendance span as active age, static
    group and village sizes, adoption rate and state.
    """
    frame = matrix.frame
    grouped = frame.groupby("farmer_id", sort=True)
    table = pd.DataFrame({
        "ma_mu": grouped["ma"].mean(),
        "cs_v_mu": grouped["cs_village"].mean(),
        "pai_g_mu": grouped["pai_group"].mean(),
        "pai_v_mu": grouped["pai_village"].mean(),
        "active_age": grouped["active_age"].max(),
        "duration_mu": grouped["duration"].mean(),
        "gs": grouped["group_size"].first(),
        "vs": grouped["village_size"].first(),
        "state_id": grouped["state_id"].first(),
    })
    table["adoption_rate"] = farmer_adoption_rates(dataset).reindex(table.index)
    return table


def differential_battery(dataset: Dataset, matrix: FeatureMatrix,
                         alpha: float = BATTERY_ALPHA, m: int = BATTERY_M) -> DifferentialReport:
    """
    Per state, split farmers with AR > 0 into AR quartiles and run the eight
    one-tailed Welch tests between q1 and q4 with Bonferroni correction.
    """
    report = DifferentialReport(alpha=alpha, m=m)
    table = farmer_factor_table(dataset, matrix)
    adopters = table[table["adoption_rate"] > 0]
    for state in dataset.geography.states():
        members = adopters[adopters["state_id"] == state].copy()
        members["farmer_id"] = members.index
        members = members.sort_values(["adoption_rate", "farmer_id"], kind="mergesort")
        if len(members) < 8:
            report.skipped[state] = f"quartile with fewer than 2 farmers ({len(members)} farmers with AR > 0)"
            logger.warning(f"Differential battery: state {state} skipped ({report.skipped[state]})")
            continue
        if members["adoption_rate"].nunique() == 1:
            report.skipped[state] = "all adoption rates equal"
            logger.warning(f"Differential battery: state {state} skipped (all adoption rates equal)")
            continue

        quartiles = np.array_split(np.arange(len(members)), 4)
        parts = [members.iloc[q] for q in quartiles]
        report.quartile_sizes[state] = [len(p) for p in parts]
        report.quartile_means[state] = {name: [float(p[name].mean()) for p in parts] for name, _ in BATTERY_FACTORS}
        q1, q4 = parts[0], parts[3]
        cells = {}
        for name, family in BATTERY_FACTORS:
            smaller, larger = (q1, q4) if family is Family.Q1_BELOW_Q4 else (q4, q1)
            try:
                result = welch_one_tailed(smaller[name], larger[name], Tail.LESS)
            except DegenerateStatisticsError:
                logger.warning(f"Differential battery: {name} degenerate in state {state}")
                cells[name] = FactorTest(name, family, float(q1[name].mean()), float(q4[name].mean()),
                                         0.0, float("nan"), 1.0, False, degenerate=True)
                continue
            cells[name] = FactorTest(name, family, float(q1[name].mean()), float(q4[name].mean()),
                                     result.t_stat, result.degrees_of_freedom, result.p_value,
                                     bonferroni_decide(result.p_value, m, alpha))
        report.states[state] = cells
    return report


# =============================================================================
# GENDER BATTERY
# =============================================================================

@dataclass(frozen=True)
class GenderCell:
    role: str
    state_id: str
    ar_men: float
    ar_women: float
    n_men: int
    n_women: int
    t_stat: float
    p_value: float
    tier: str
    computable: bool
    note: str = ""


@dataclass
class GenderReport:
    cells: List[GenderCell] = field(default_factory=list)

    def to_dict(self) -> Dict:
        roles: Dict[str, Dict[str, Dict]] = defaultdict(dict)
        for cell in self.cells:
            roles[cell.role][cell.state_id] = asdict(cell)
        return {"tiers": list(GENDER_TIERS), "hypothesis": "AR_mu(women) < AR_mu(men)",
                "orientation": T_ORIENTATION, "roles": dict(roles)}

    def cell(self, role: str, state_id: str) -> GenderCell:
        return next(c for c in self.cells if c.role == role and c.state_id == state_id)


def significance_tier(p: float) -> str:
    for tier in GENDER_TIERS:
        if p < tier:
            return str(tier)
    return "none"


def _gender_cell(role: str, state: str, women: np.ndarray, men: np.ndarray) -> GenderCell:
    ar_men = float(men.mean()) if men.size else float("nan")
    ar_women = float(women.mean()) if women.size else float("nan")
    if women.size < 2 or men.size < 2:
        return GenderCell(role, state, ar_men, ar_women, int(men.size), int(women.size),
                          float("nan"), float("nan"), "none", False, "missing gender group")
    try:
        result = welch_one_tailed(women, men, Tail.LESS)
    except DegenerateStatisticsError:
        return GenderCell(role, state, ar_men, ar_women, int(men.size), int(women.size),
                          float("nan"), float("nan"), "none", False, "degenerate")
    return GenderCell(role, state, ar_men, ar_women, int(men.size), int(women.size),
                      result.t_stat, result.p_value, significance_tier(result.p_value), True)


def gender_battery(dataset: Dataset) -> GenderReport:
    """One-tailed Welch tests of women's against men's adoption rates, per state and role."""
    report = GenderReport()
    rates = farmer_adoption_rates(dataset)
    farmer_rows = pd.DataFrame({
        "adoption_rate": rates,
        "gender": [dataset.farmers[f].gender.value for f in rates.index],
        "state_id": [dataset.geography.state_of(dataset.farmers[f].village_id) for f in rates.index],
    }, index=rates.index)
    mediators = mediator_adoption_rates(dataset)

    for role, frame in (("farmer", farmer_rows), ("mediator", mediators)):
        for state in dataset.geography.states():
            in_state = frame[frame["state_id"] == state]
            women = in_state.loc[in_state["gender"] == Gender.WOMAN.value, "adoption_rate"].to_numpy()
            men = in_state.loc[in_state["gender"] == Gender.MAN.value, "adoption_rate"].to_numpy()
            cell = _gender_cell(role, state, women, men)
            if not cell.computable:
                logger.warning(f"Gender battery: {role} test in state {state} not computable ({cell.note})")
            report.cells.append(cell)
    return report


# =============================================================================
# DESCRIPTIVE SUITE
# =============================================================================

@dataclass
class DescriptiveBundle:
    tables: Dict[str, pd.DataFrame]
    summary: Dict[str, float]


def _cdf(values: Sequence[float], value_name: str) -> pd.DataFrame:
    data = np.sort(np.asarray(values, dtype=np.float64))
    if data.size == 0:
        return pd.DataFrame(columns=[value_name, "cdf"])
    unique, counts = np.unique(data, return_counts=True)
    return pd.DataFrame({value_name: unique, "cdf": np.cumsum(counts) / data.size})


def village_pair_overlap(dataset: Dataset) -> pd.DataFrame:
    """Share of unordered same-state village pairs with at least one commonly adopted video."""
    adopted: Dict[str, set] = defaultdict(set)
    for record in dataset.adoptions:
        adopted[dataset.farmers[record.farmer_id].village_id].add(record.video_id)
    by_state: Dict[str, List[str]] = defaultdict(list)
    for vid, location in dataset.geography.villages.items():
        by_state[location.state_id].append(vid)

    rows = []
    for state in sorted(by_state):
        pairs = list(combinations(sorted(by_state[state]), 2))
        sharing = sum(1 for a, b in pairs if adopted[a] & adopted[b])
        rows.append((state, len(pairs), sharing, 100.0 * sharing / len(pairs) if pairs else 0.0))
    total_pairs = sum(r[1] for r in rows)
    total_sharing = sum(r[2] for r in rows)
    rows.append(("ALL", total_pairs, total_sharing, 100.0 * total_sharing / total_pairs if total_pairs else 0.0))
    return pd.DataFrame(rows, columns=["state_id", "village_pairs", "sharing_pairs", "overlap_percent"])


def descriptive_suite(dataset: Dataset) -> DescriptiveBundle:
    """Plot-data tables for the descriptive figures, plus a few headline numbers."""
    geography = dataset.geography
    state_of_village = {vid: loc.state_id for vid, loc in geography.villages.items()}
    farmer_state = {fid: state_of_village[f.village_id] for fid, f in dataset.farmers.items()}
    tables: Dict[str, pd.DataFrame] = {}
    summary: Dict[str, float] = {}

    group_sizes = np.array([len(m) for m in dataset.group_members.values()], dtype=np.int64)
    tables["group_size_cdf"] = _cdf(group_sizes, "group_size")
    summary["group_share_10_30"] = float(((group_sizes >= 10) & (group_sizes <= 30)).mean()) if group_sizes.size else 0.0

    rates = farmer_adoption_rates(dataset)
    cdf_parts = []
    for state in geography.states() + ["ALL"]:
        subset = rates if state == "ALL" else rates[[farmer_state[f] == state for f in rates.index]]
        part = _cdf(subset.to_numpy(), "adoption_rate")
        part.insert(0, "state_id", state)
        cdf_parts.append(part)
    tables["adoption_rate_cdf"] = pd.concat(cdf_parts, ignore_index=True)

    tables["village_pair_overlap"] = village_pair_overlap(dataset)

    screened: Dict[str, set] = defaultdict(set)
    adopted: Dict[str, set] = defaultdict(set)
    for screening in dataset.screenings.values():
        screened[state_of_village[screening.village_id]].add(screening.video_id)
    for record in dataset.adoptions:
        adopted[farmer_state[record.farmer_id]].add(record.video_id)
    states = geography.states()
    tables["state_videos"] = pd.DataFrame(
        [(s, len(screened[s]), len(adopted[s])) for s in states],
        columns=["state_id", "screened_videos", "adopted_videos"])
    tables["state_video_intersections"] = pd.DataFrame(
        [(a, b, len(screened[a] & screened[b]), len(adopted[a] & adopted[b])) for a, b in combinations(states, 2)],
        columns=["state_a", "state_b", "screened_common", "adopted_common"])

    tables["monthly_timeseries"] = _monthly_timeseries(dataset)

    views: Dict[str, int] = defaultdict(int)
    for screening in dataset.screenings.values():
        views[screening.video_id] += len(screening.attendees)
    adoptions: Dict[str, int] = defaultdict(int)
    for record in dataset.adoptions:
        adoptions[record.video_id] += 1
    scatter = pd.DataFrame([(v, views[v], adoptions[v]) for v in dataset.videos],
                           columns=["video_id", "views", "adoptions"])
    tables["video_views_adoptions"] = scatter
    positive = scatter[(scatter["views"] > 0) & (scatter["adoptions"] > 0)]
    if len(positive) >= 2 and positive["views"].nunique() > 1:
        fit = stats.linregress(np.log10(positive["views"]), np.log10(positive["adoptions"]))
        summary.update(views_adoptions_slope=float(fit.slope), views_adoptions_intercept=float(fit.intercept),
                       views_adoptions_r=float(fit.rvalue))
    else:
        summary.update(views_adoptions_slope=float("nan"), views_adoptions_intercept=float("nan"),
                       views_adoptions_r=float("nan"))

    tables["gender_proportions"] = _gender_proportions(dataset, farmer_state, state_of_village)
    tables["zero_adopters"] = _zero_adopters(dataset, rates, farmer_state)
    overall = tables["village_pair_overlap"]
    summary["village_pair_overlap_percent"] = float(overall.loc[overall["state_id"] == "ALL", "overlap_percent"].iloc[0])
    summary["zero_adopter_share"] = float((rates == 0).mean()) if len(rates) else 0.0
    return DescriptiveBundle(tables=tables, summary=summary)


def _monthly_timeseries(dataset: Dataset) -> pd.DataFrame:
    columns = ["month", "screenings", "adoptions"]
    if dataset.date_range is None:
        return pd.DataFrame(columns=columns)
    months = [str(p) for p in pd.period_range(dataset.date_range[0].isoformat(),
                                              dataset.date_range[1].isoformat(), freq="M")]
    screenings = Counter(s.date.strftime("%Y-%m") for s in dataset.screenings.values())
    adoptions = Counter(a.verification_date.strftime("%Y-%m") for a in dataset.adoptions)
    return pd.DataFrame({
        "month": months,
        "screenings": [screenings.get(m, 0) for m in months],
        "adoptions": [adoptions.get(m, 0) for m in months],
    }, columns=columns)


def _gender_proportions(dataset: Dataset, farmer_state: Dict[str, str],
                        state_of_village: Dict[str, str]) -> pd.DataFrame:
    mediator_states: Dict[str, set] = defaultdict(set)
    for screening in dataset.screenings.values():
        mediator_states[screening.mediator_id].add(state_of_village[screening.village_id])
    rows = []
    for state in dataset.geography.states():
        farmers = [f for f, s in farmer_state.items() if s == state]
        mediators = [m for m, states in mediator_states.items() if state in states]
        for role, people in (("farmer", [dataset.farmers[f].gender for f in farmers]),
                             ("mediator", [dataset.mediators[m].gender for m in mediators])):
            total = len(people)
            rows.append((state, role, total) + tuple(
                (sum(1 for g in people if g is gender) / total) if total else 0.0 for gender in Gender))
    return pd.DataFrame(rows, columns=["state_id", "role", "count"] + [f"share_{g.value}" for g in Gender])


def _zero_adopters(dataset: Dataset, rates: pd.Series, farmer_state: Dict[str, str]) -> pd.DataFrame:
    attended = pd.Series({f: len(dataset.videos_viewed(f)) for f in rates.index}, dtype=np.float64)
    rows = []
    for state in dataset.geography.states():
        in_state = [f for f in rates.index if farmer_state[f] == state]
        r = rates.reindex(in_state)
        zero = r[r == 0].index
        some = r[r > 0].index
        rows.append((state, len(in_state), float((r == 0).mean()) if len(r) else 0.0,
                     float(attended.reindex(zero).mean()) if len(zero) else float("nan"),
                     float(attended.reindex(some).mean()) if len(some) else float("nan")))
    return pd.DataFrame(rows, columns=["state_id", "farmers", "zero_ar_share",
                                       "mean_videos_attended_zero_ar", "mean_videos_attended_positive_ar"])
