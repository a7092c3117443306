"""Retrieval metrics (CMC, mAP) and the end-to-end evaluation driver."""
from __future__ import annotations

import json
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .association import AssociationConfig, GalleryIndex, masked_affinity, rank_indices
from .errors import NoRelevant, ValidationError
from .metadata import CameraTrajectory
from .tracks import Tracklet

PROTOCOLS = ("cross-camera", "forward")


def _ap_from_hits(hits: np.ndarray, num_relevant: int) -> float:
    positions = np.flatnonzero(hits)
    if positions.size == 0:
        return 0.0
    precision = np.arange(1, positions.size + 1) / (positions + 1)
    return math.fsum(precision.tolist()) / num_relevant


def average_precision(ranking: Sequence[str], relevant: Iterable[str]) -> float:
    """Non-interpolated average precision of one ranked list."""
    relevant = set(relevant)
    if not relevant:
        raise NoRelevant("average precision is undefined without relevant items")
    ranked = set(ranking)
    if not relevant <= ranked:
        raise ValidationError(f"relevant ids missing from ranking: {sorted(relevant - ranked)}")
    hits = np.fromiter((g in relevant for g in ranking), dtype=bool, count=len(ranking))
    return _ap_from_hits(hits, len(relevant))


def first_hit_rank(ranking: Sequence[str], relevant) -> int | None:
    for r, g in enumerate(ranking, start=1):
        if g in relevant:
            return r
    return None


def _cmc_from_first_hits(first_hits: Sequence[int | None], k: int) -> list[float]:
    n = len(first_hits)
    counts = np.zeros(k + 1, dtype=np.int64)
    for r in first_hits:
        if r is not None and r <= k:
            counts[r] += 1
    return (np.cumsum(counts)[1:] / n).tolist()


def cmc_curve(rankings: Iterable[tuple[Sequence[str], Iterable[str]]], k: int) -> list[float]:
    """Fraction of queries whose first relevant item sits at rank <= 1..k.

    Queries with an empty relevant set are skipped; if nothing is left,
    ``NoRelevant`` is raised.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    first = []
    for ranking, relevant in rankings:
        relevant = set(relevant)
        if relevant:
            first.append(first_hit_rank(ranking, relevant))
    if not first:
        raise NoRelevant("no query has a relevant gallery item")
    return _cmc_from_first_hits(first, k)


@dataclass
class QueryResult:
    query_id: str
    ap: float
    first_hit_rank: int | None
    num_relevant: int
    masked_pairs: int
    next_camera: str | None = None
    eta_s: float | None = None
    fallback: bool = False
    error: str | None = None


@dataclass
class EvalReport:
    protocol: str
    cmc: list[float]
    map: float
    per_query: list[QueryResult]
    num_excluded_queries: int
    pruning: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def num_valid_queries(self) -> int:
        return len(self.per_query)

    def rank(self, k: int) -> float:
        """CMC value at rank ``k``; past the end of the curve the last value holds."""
        return self.cmc[min(k, len(self.cmc)) - 1]

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "cmc": self.cmc,
            "map": self.map,
            "num_valid_queries": self.num_valid_queries,
            "num_excluded_queries": self.num_excluded_queries,
            "per_query": [vars(q) for q in self.per_query],
            "pruning": self.pruning,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _relevant_mask(query: Tracklet, index: GalleryIndex, person_ids: np.ndarray,
                   protocol: str) -> np.ndarray:
    rel = (person_ids == query.person_id) & (index.cameras != query.camera_id)
    if protocol == "forward":
        rel &= index.entry >= query.exit_time
    return rel


def evaluate(tracklets: Sequence[Tracklet], cameras: Mapping[str, CameraTrajectory],
             cfg: AssociationConfig = AssociationConfig(), protocol: str = "cross-camera",
             queries: Sequence[str] | None = None, max_rank: int = 50,
             threads: int = 1) -> EvalReport:
    """Rank the labeled corpus against itself and score it.

    Every tracklet is in the gallery. Queries are all tracklets unless
    ``queries`` lists track ids. Same-camera gallery items are dropped from
    each ranking. The relevant set is the query's identity in other cameras;
    under the ``forward`` protocol only appearances that begin after the query
    ends count. Queries without relevant items are excluded and counted.
    """
    if protocol not in PROTOCOLS:
        raise ValidationError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    if not tracklets:
        raise ValidationError("empty corpus")
    unlabeled = [t.track_id for t in tracklets if t.person_id is None]
    if unlabeled:
        raise ValidationError(f"{len(unlabeled)} tracklet(s) lack person_id, e.g. {unlabeled[0]!r}")
    by_id = {t.track_id: t for t in tracklets}
    if queries is None:
        query_list = list(tracklets)
    else:
        missing = [q for q in queries if q not in by_id]
        if missing:
            raise ValidationError(f"unknown query id(s): {missing[:5]}")
        query_list = [by_id[q] for q in queries]
    if not query_list:
        raise ValidationError("empty query set")

    index = GalleryIndex(tracklets, cfg)
    person_ids = np.array([t.person_id for t in index.tracklets], dtype=object)
    valid, excluded = [], 0
    for q in query_list:
        if _relevant_mask(q, index, person_ids, protocol).any():
            valid.append(q)
        else:
            excluded += 1
    if not valid:
        raise NoRelevant("no query has a relevant gallery item under this protocol")

    m = masked_affinity(valid, tracklets, cameras, cfg, threads=threads, index=index)
    k_max = max(1, min(max_rank, len(index)))
    results, first_hits = [], []
    mask_counts = m.mask_count
    for row, q in enumerate(valid):
        order = rank_indices(m.scores[row], m.masked[row], m.id_rank)
        order = order[index.cameras[order] != q.camera_id]
        rel = _relevant_mask(q, index, person_ids, protocol)
        hits = rel[order]
        positions = np.flatnonzero(hits)
        first = int(positions[0]) + 1 if positions.size else None
        plan = m.plans[row]
        results.append(QueryResult(
            query_id=q.track_id,
            ap=_ap_from_hits(hits, int(rel.sum())),
            first_hit_rank=first,
            num_relevant=int(rel.sum()),
            masked_pairs=int(mask_counts[row]),
            next_camera=None if plan is None else plan.next_camera,
            eta_s=None if plan is None else plan.eta_s,
            fallback=False if plan is None else plan.fallback,
            error=None if plan is None else plan.error,
        ))
        first_hits.append(first)

    cross = ~m.same_camera
    total_pairs = int(cross.sum())
    masked_pairs = int((m.masked & cross).sum())
    return EvalReport(
        protocol=protocol,
        cmc=_cmc_from_first_hits(first_hits, k_max),
        map=math.fsum(r.ap for r in results) / len(results),
        per_query=results,
        num_excluded_queries=excluded,
        pruning={
            "cross_camera_pairs": total_pairs,
            "masked_pairs": masked_pairs,
            "masked_fraction": masked_pairs / total_pairs if total_pairs else 0.0,
            "fallback_queries": sum(r.fallback for r in results),
            "failed_queries": sum(r.error is not None for r in results),
            "prune_disabled": cfg.prune_disabled,
        },
        config=cfg.to_dict(),
    )
