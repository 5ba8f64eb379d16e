"""
Per-village temporal co-attendance (G1) and co-adoption (G2) networks.

Edge events are kept as date-sorted numpy arrays so a snapshot at any date
is a binary search plus a bincount. All queries use strict "before date"
semantics.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, timedelta
from enum import Enum
from itertools import combinations
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple, Union

import networkx as nx
import numpy as np
import pandas as pd
from scipy import sparse

from coco.dataset import Dataset
from coco.errors import GraphBuildError, UnknownEntityError

logger = logging.getLogger(__name__)

DEFAULT_ATTENDEE_CAP = 500


class GraphKind(str, Enum):
    CO_ATTENDANCE = "co_attendance"
    CO_ADOPTION = "co_adoption"


@dataclass(frozen=True)
class EdgeEvent:
    farmer_a: str
    farmer_b: str
    date: date


def canonical_pair(a: str, b: str) -> Tuple[str, str]:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True, eq=False)
class StaticGraph:
    """Weighted undirected snapshot of a temporal graph."""
    nodes: Tuple[str, ...]
    weights: Mapping[Tuple[str, str], int]
    village_id: str = ""
    kind: GraphKind = GraphKind.CO_ATTENDANCE
    date: Optional[date] = None
    _index: Dict[str, int] = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {node: i for i, node in enumerate(self.nodes)})

    @classmethod
    def from_edges(cls, nodes: Iterable[str], edges: Iterable[Tuple[str, str]], **kwargs) -> "StaticGraph":
        """Snapshot from plain edges; repeated edges raise the weight."""
        weights: Dict[Tuple[str, str], int] = defaultdict(int)
        node_set = set(nodes)
        for a, b in edges:
            if a == b:
                raise GraphBuildError(f"self-edge on {a!r}")
            weights[canonical_pair(a, b)] += 1
            node_set.update((a, b))
        return cls(nodes=tuple(sorted(node_set)), weights=dict(sorted(weights.items())), **kwargs)

    def index_of(self, node: str) -> int:
        try:
            return self._index[node]
        except KeyError:
            raise UnknownEntityError(f"node {node!r} is not in the snapshot") from None

    def __contains__(self, node: str) -> bool:
        return node in self._index

    @property
    def edge_count(self) -> int:
        return len(self.weights)

    def adjacency(self) -> sparse.csr_matrix:
        """Unweighted symmetric adjacency in node order."""
        n = len(self.nodes)
        if not self.weights:
            return sparse.csr_matrix((n, n), dtype=np.float64)
        rows = np.fromiter((self._index[a] for a, _ in self.weights), dtype=np.int64, count=len(self.weights))
        cols = np.fromiter((self._index[b] for _, b in self.weights), dtype=np.int64, count=len(self.weights))
        data = np.ones(2 * len(rows), dtype=np.float64)
        matrix = sparse.coo_matrix((data, (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
                                   shape=(n, n))
        return matrix.tocsr()

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(self.nodes)
        graph.add_weighted_edges_from((a, b, w) for (a, b), w in self.weights.items())
        return graph


class TemporalGraph:
    """
    Edge-event multiset of one village, indexed for as-of-date queries.

    Build with build_coattendance() or build_coadoption().
    """

    def __init__(self, village_id: str, kind: GraphKind, events: Iterable[EdgeEvent],
                 registrations: Mapping[str, date], date_range: Optional[Tuple[date, date]]):
        self.village_id = village_id
        self.kind = GraphKind(kind)
        self.date_range = date_range
        self._registrations = dict(sorted(registrations.items()))

        ordered = sorted(events, key=lambda e: (e.date, e.farmer_a, e.farmer_b))
        pair_ids: Dict[Tuple[str, str], int] = {}
        for event in ordered:
            if event.farmer_a >= event.farmer_b:
                raise GraphBuildError(f"edge event ({event.farmer_a}, {event.farmer_b}) is not canonical")
            for endpoint in (event.farmer_a, event.farmer_b):
                if endpoint not in self._registrations:
                    raise GraphBuildError(f"farmer {endpoint!r} is not in village {village_id!r}")
            pair_ids.setdefault((event.farmer_a, event.farmer_b), len(pair_ids))

        self.events: Tuple[EdgeEvent, ...] = tuple(ordered)
        self.pairs: List[Tuple[str, str]] = list(pair_ids)
        self._event_pair = np.array([pair_ids[(e.farmer_a, e.farmer_b)] for e in ordered], dtype=np.int64)
        self._event_day = np.array([e.date.toordinal() for e in ordered], dtype=np.int64)

        adjacency: Dict[str, Dict[str, date]] = defaultdict(dict)
        for event in ordered:
            adjacency[event.farmer_a].setdefault(event.farmer_b, event.date)
            adjacency[event.farmer_b].setdefault(event.farmer_a, event.date)
        self._adjacency = dict(adjacency)

    def __repr__(self) -> str:
        return (f"TemporalGraph(village={self.village_id!r}, kind={self.kind.value}, "
                f"events={len(self.events)}, pairs={len(self.pairs)})")

    @property
    def farmers(self) -> List[str]:
        return list(self._registrations)

    def has_farmer(self, farmer_id: str) -> bool:
        return farmer_id in self._registrations

    def clamp(self, when: date) -> date:
        """Clamp a query date to [first dataset date, day after the last]."""
        if self.date_range is None:
            return when
        low, high = self.date_range[0], self.date_range[1] + timedelta(days=1)
        return min(max(when, low), high)

    def pair_weights_asof(self, when: date) -> Dict[Tuple[str, str], int]:
        """Per-pair count of edge events strictly before `when`."""
        cut = int(np.searchsorted(self._event_day, self.clamp(when).toordinal(), side="left"))
        counts = np.bincount(self._event_pair[:cut], minlength=len(self.pairs))
        return {self.pairs[i]: int(counts[i]) for i in np.flatnonzero(counts)}

    def snapshot(self, when: date) -> StaticGraph:
        """
        Static graph of edge events dated strictly before `when`.

        Nodes are the village farmers registered on or before the (clamped)
        date, together with every edge endpoint.
        """
        when = self.clamp(when)
        weights = self.pair_weights_asof(when)
        nodes = {fid for fid, registered in self._registrations.items() if registered <= when}
        for a, b in weights:
            nodes.update((a, b))
        return StaticGraph(nodes=tuple(sorted(nodes)), weights=dict(sorted(weights.items())),
                           village_id=self.village_id, kind=self.kind, date=when)

    def neighbors_asof(self, farmer_id: str, when: date) -> FrozenSet[str]:
        """Farmers sharing at least one edge event with `farmer_id` strictly before `when`."""
        if not self.has_farmer(farmer_id):
            raise UnknownEntityError(f"farmer {farmer_id!r} is not in village {self.village_id!r}")
        when = self.clamp(when)
        return frozenset(g for g, first in self._adjacency.get(farmer_id, {}).items() if first < when)


def _village_registrations(dataset: Dataset, village_id: str) -> Dict[str, date]:
    dataset.require_village(village_id)
    return {fid: dataset.farmers[fid].registration_date for fid in dataset.village_farmers.get(village_id, ())}


def build_coattendance(dataset: Dataset, village_id: str,
                       attendee_cap: int = DEFAULT_ATTENDEE_CAP) -> TemporalGraph:
    """
    G1: every unordered attendee pair of every screening in the village
    contributes one edge event at the screening date.

    Raises:
        UnknownEntityError: Unknown village
        GraphBuildError: A screening exceeds the attendee cap
    """
    registrations = _village_registrations(dataset, village_id)
    events = []
    for sid in dataset.village_screenings.get(village_id, ()):
        screening = dataset.screenings[sid]
        if len(screening.attendees) > attendee_cap:
            raise GraphBuildError(
                f"screening {sid!r} has {len(screening.attendees)} attendees (cap {attendee_cap})")
        events.extend(EdgeEvent(a, b, screening.date) for a, b in combinations(screening.attendees, 2))
    graph = TemporalGraph(village_id, GraphKind.CO_ATTENDANCE, events, registrations, dataset.date_range)
    logger.debug(f"Built {graph!r}")
    return graph


def build_coadoption(dataset: Dataset, village_id: str) -> TemporalGraph:
    """
    G2: every unordered pair of same-village adopters of a video contributes
    one edge event dated at the later of their two verification dates.

    Raises:
        UnknownEntityError: Unknown village
    """
    registrations = _village_registrations(dataset, village_id)
    adopters_by_video: Dict[str, List[Tuple[str, date]]] = defaultdict(list)
    for fid in registrations:
        for record in dataset.farmer_adoptions.get(fid, ()):
            adopters_by_video[record.video_id].append((fid, record.verification_date))

    events = []
    for video_id in sorted(adopters_by_video):
        adopters = sorted(adopters_by_video[video_id])
        for (a, day_a), (b, day_b) in combinations(adopters, 2):
            events.append(EdgeEvent(a, b, max(day_a, day_b)))
    graph = TemporalGraph(village_id, GraphKind.CO_ADOPTION, events, registrations, dataset.date_range)
    logger.debug(f"Built {graph!r}")
    return graph


def build_graph(dataset: Dataset, village_id: str, kind: GraphKind, **kwargs) -> TemporalGraph:
    if GraphKind(kind) is GraphKind.CO_ATTENDANCE:
        return build_coattendance(dataset, village_id, **kwargs)
    return build_coadoption(dataset, village_id)


def write_edge_list(snapshot: StaticGraph, path: Union[str, Path]) -> Path:
    """Debug dump of a snapshot: farmer_a,farmer_b,weight."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([(a, b, w) for (a, b), w in snapshot.weights.items()],
                         columns=["farmer_a", "farmer_b", "weight"])
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    return path
