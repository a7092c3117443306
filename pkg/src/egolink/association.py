"""Next-camera prediction, arrival-time estimation and gated appearance affinity.

For each query tracklet the target's heading and position at exit time are
inferred from the camera log. Cameras lying roughly along that heading are the
candidates, and the closest of them is taken as the camera the target reaches
next. The expected travel time to it follows from the distance and the
relative speed of target and camera. Gallery tracklets are then scored by
appearance, and any that are not in the predicted camera or that enter it
before the expected arrival get a score of exactly zero.
"""
from __future__ import annotations

import dataclasses
import functools
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (DegenerateGeometry, DimensionMismatch, EgolinkError, InvalidConfig,
                     NoCommonRegions, UnknownQuery, ValidationError)
from .geo import bearing, great_circle_distance, headings_equivalent
from .metadata import CameraTrajectory, sample_state
from .tracks import REGIONS, RegionFeatures, TargetKinematics, Tracklet, infer_target_kinematics

logger = logging.getLogger(__name__)

QUERY_BLOCK = 64


@dataclass(frozen=True)
class AssociationConfig:
    heading_tolerance: float = 45.0  # degrees
    walking_speed: float = 1.3  # m/s
    min_relative_speed: float = 0.1  # m/s, floor on the arrival-time denominator
    arrival_slack: float = 1.0  # multiplier on the expected travel time
    region_weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)  # gf, fb, ub, lb
    prune_disabled: bool = False
    # Optional upper bound, in seconds past the gated arrival time. Off by default.
    arrival_window: float | None = None

    def __post_init__(self):
        weights = tuple(float(w) for w in self.region_weights)
        object.__setattr__(self, "region_weights", weights)
        if len(weights) != len(REGIONS):
            raise InvalidConfig(f"region_weights needs {len(REGIONS)} values, got {len(weights)}")
        if any(w < 0 or not math.isfinite(w) for w in weights) or not any(weights):
            raise InvalidConfig(f"region_weights must be finite, >= 0 and not all zero: {weights}")
        if not 0.0 < self.heading_tolerance < 180.0:
            raise InvalidConfig(f"heading_tolerance must lie in (0, 180), got {self.heading_tolerance}")
        if not (self.walking_speed > 0 and self.min_relative_speed > 0):
            raise InvalidConfig("walking_speed and min_relative_speed must be positive")
        if not self.arrival_slack >= 0:
            raise InvalidConfig(f"arrival_slack must be >= 0, got {self.arrival_slack}")
        if self.arrival_window is not None and not self.arrival_window >= 0:
            raise InvalidConfig(f"arrival_window must be >= 0, got {self.arrival_window}")

    @classmethod
    def from_dict(cls, data: Mapping) -> AssociationConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown association config key(s): {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["region_weights"] = list(self.region_weights)
        return out


def _camera_items(cameras) -> list[tuple[str, CameraTrajectory]]:
    if isinstance(cameras, Mapping):
        return sorted(cameras.items())
    return sorted(((c.camera_id, c) for c in cameras), key=lambda item: item[0])


def candidate_cameras(kin: TargetKinematics, cameras, t_exit, cfg: AssociationConfig,
                      exclude: str | None = None, skipped: list | None = None) -> set[str]:
    """Cameras that lie in the direction the target is heading.

    Cameras whose log does not cover ``t_exit``, or that sit exactly on the
    target position, are left out and appended to ``skipped`` when given.
    """
    found = set()
    for cam_id, traj in _camera_items(cameras):
        if cam_id == exclude:
            continue
        if not traj.covers(t_exit):
            if skipped is not None:
                skipped.append(cam_id)
            continue
        try:
            direction = bearing(kin.position, sample_state(traj, t_exit).position)
        except DegenerateGeometry:
            if skipped is not None:
                skipped.append(cam_id)
            continue
        if headings_equivalent(direction, kin.heading, cfg.heading_tolerance):
            found.add(cam_id)
    return found


def _closest(kin: TargetKinematics, candidates: Iterable[str], cameras: Mapping, t_exit):
    best, best_d = None, math.inf
    for cam_id in sorted(candidates):
        d = great_circle_distance(kin.position, sample_state(cameras[cam_id], t_exit).position)
        if d < best_d:
            best, best_d = cam_id, d
    return best


def predict_next_camera(kin: TargetKinematics, cameras, t_exit, cfg: AssociationConfig,
                        exclude: str | None = None) -> str | None:
    """Closest candidate camera at ``t_exit``; ties go to the smaller camera id."""
    cams = dict(_camera_items(cameras))
    return _closest(kin, candidate_cameras(kin, cams, t_exit, cfg, exclude=exclude), cams, t_exit)


def arrival_time(distance_m: float, target_speed: float, camera_speed: float,
                 same_heading: bool, min_relative_speed: float) -> float:
    """Travel time in seconds for a target to close ``distance_m`` on a moving camera.

    Walking the same way as the camera the target gains at the difference of
    the two speeds; otherwise they close at the sum. The denominator is floored
    at ``min_relative_speed`` so the estimate stays finite.
    """
    rel = abs(target_speed - camera_speed) if same_heading else abs(target_speed + camera_speed)
    return distance_m / max(rel, min_relative_speed)


def estimate_time_of_arrival(kin: TargetKinematics, camera: CameraTrajectory, t_exit,
                             cfg: AssociationConfig) -> float:
    state = sample_state(camera, t_exit)
    same = headings_equivalent(kin.heading, state.heading, cfg.heading_tolerance)
    return arrival_time(great_circle_distance(kin.position, state.position), kin.speed,
                        state.speed, same, cfg.min_relative_speed)


# --------------------------------------------------------------------------- appearance

def _weights(cfg) -> np.ndarray:
    if isinstance(cfg, AssociationConfig):
        return np.asarray(cfg.region_weights, dtype=np.float64)
    return np.asarray(cfg, dtype=np.float64)


def appearance_similarity(a: RegionFeatures, b: RegionFeatures,
                          cfg: AssociationConfig = AssociationConfig()) -> float:
    """Cosine similarity of the weighted, per-region L2-normalized features.

    Only regions present in both inputs take part. Each region vector is scaled
    to unit length and multiplied by its weight before the regions are
    concatenated. Returns 0.0 when every shared region has zero weight or a zero
    vector.
    """
    if a.dim != b.dim:
        raise DimensionMismatch(f"feature dimensions differ: {a.dim} vs {b.dim}")
    shared = [i for i, r in enumerate(REGIONS) if a.get(r) is not None and b.get(r) is not None]
    if not shared:
        raise NoCommonRegions(f"no shared regions between {a.present} and {b.present}")
    w2 = _weights(cfg) ** 2
    num = norm_a = norm_b = 0.0
    for i in shared:
        va, vb = a.get(REGIONS[i]), b.get(REGIONS[i])
        na, nb = np.linalg.norm(va), np.linalg.norm(vb)
        if na > 0:
            norm_a += w2[i]
        if nb > 0:
            norm_b += w2[i]
        if na > 0 and nb > 0:
            num += w2[i] * float(np.dot(va / na, vb / nb))
    denom = norm_a * norm_b
    if denom == 0.0:
        return 0.0
    return float(min(1.0, max(-1.0, num / math.sqrt(denom))))


def _embed(features: RegionFeatures, weights: np.ndarray, dim: int):
    vec = np.zeros(len(REGIONS) * dim)
    present = np.zeros(len(REGIONS), dtype=bool)
    nonzero = np.zeros(len(REGIONS), dtype=bool)
    for i, r in enumerate(REGIONS):
        v = features.get(r)
        if v is None:
            continue
        if v.size != dim:
            raise DimensionMismatch(f"feature dimension {v.size}, expected {dim}")
        present[i] = True
        n = np.linalg.norm(v)
        if n > 0:
            nonzero[i] = True
            vec[i * dim:(i + 1) * dim] = v * (weights[i] / n)
    return vec, present, nonzero


class GalleryIndex:
    """Gallery tracklets packed for batched scoring.

    Each row holds the weighted unit-norm region vectors laid end to end, so one
    matrix product gives the numerator of every query/gallery cosine.
    """

    def __init__(self, gallery: Sequence[Tracklet], cfg: AssociationConfig = AssociationConfig()):
        if not gallery:
            raise ValidationError("gallery is empty")
        self.tracklets = list(gallery)
        self.ids = [t.track_id for t in self.tracklets]
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("gallery track ids are not unique")
        self.weights = _weights(cfg)
        self.dim = self.tracklets[0].features.dim
        n = len(self.tracklets)
        self.matrix = np.empty((n, len(REGIONS) * self.dim))
        self.present = np.empty((n, len(REGIONS)), dtype=bool)
        self.nonzero = np.empty((n, len(REGIONS)), dtype=bool)
        for k, t in enumerate(self.tracklets):
            self.matrix[k], self.present[k], self.nonzero[k] = _embed(t.features, self.weights,
                                                                     self.dim)
        self.cameras = np.array([t.camera_id for t in self.tracklets], dtype=object)
        self.entry = np.array([t.entry_time for t in self.tracklets], dtype=np.float64)
        # position of each id in lexicographic order, for deterministic tie-breaks
        order = sorted(range(n), key=self.ids.__getitem__)
        self.id_rank = np.empty(n, dtype=np.int64)
        self.id_rank[order] = np.arange(n)
        self.position = {tid: k for k, tid in enumerate(self.ids)}

    def __len__(self):
        return len(self.ids)

    def matches(self, cfg: AssociationConfig) -> bool:
        return np.array_equal(self.weights, _weights(cfg))

    def score_block(self, features: Sequence[RegionFeatures]):
        """Appearance scores for a block of queries against the whole gallery.

        Returns ``(scores, shared_count)``; pairs without a shared region get a
        score of 0 and a shared count of 0.
        """
        emb = [_embed(f, self.weights, self.dim) for f in features]
        q = np.stack([e[0] for e in emb])
        qp = np.stack([e[1] for e in emb]).astype(np.float64)
        qn = np.stack([e[2] for e in emb]).astype(np.float64)
        gp = self.present.astype(np.float64)
        gn = (self.present & self.nonzero).astype(np.float64)
        w2 = self.weights ** 2
        num = q @ self.matrix.T
        norm_q = (qp * qn * w2) @ gp.T
        norm_g = (qp * w2) @ gn.T
        shared = qp @ gp.T
        denom = norm_q * norm_g
        scores = np.zeros_like(num)
        ok = denom > 0
        scores[ok] = num[ok] / np.sqrt(denom[ok])
        np.clip(scores, -1.0, 1.0, out=scores)
        return scores, shared.astype(np.int64)


# --------------------------------------------------------------------------- gating

@dataclass(frozen=True)
class QueryPlan:
    """Everything the gate decided for one query."""

    query_id: str
    camera_id: str
    exit_time: int
    kinematics: TargetKinematics | None = None
    candidates: tuple[str, ...] = ()
    skipped_cameras: tuple[str, ...] = ()
    next_camera: str | None = None
    eta_s: float | None = None
    cutoff_ms: float | None = None
    fallback: bool = False
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "camera_id": self.camera_id,
            "exit_time": self.exit_time,
            "heading": None if self.kinematics is None else self.kinematics.heading,
            "direction": None if self.kinematics is None else self.kinematics.direction.value,
            "candidates": list(self.candidates),
            "skipped_cameras": list(self.skipped_cameras),
            "next_camera": self.next_camera,
            "eta_s": self.eta_s,
            "cutoff_ms": self.cutoff_ms,
            "fallback": self.fallback,
            "error": self.error,
        }


def plan_query(query: Tracklet, cameras: Mapping[str, CameraTrajectory],
               cfg: AssociationConfig) -> QueryPlan:
    """Predict the next camera and gated arrival time for one query.

    Failures are recorded in the plan's ``error`` rather than raised.
    """
    base = dict(query_id=query.track_id, camera_id=query.camera_id, exit_time=query.exit_time)
    if query.camera_id not in cameras:
        return QueryPlan(**base, error=f"no camera log for camera {query.camera_id!r}")
    try:
        kin = infer_target_kinematics(query, cameras[query.camera_id], cfg.walking_speed)
        skipped: list[str] = []
        cands = candidate_cameras(kin, cameras, query.exit_time, cfg,
                                  exclude=query.camera_id, skipped=skipped)
        if not cands:
            return QueryPlan(**base, kinematics=kin, skipped_cameras=tuple(skipped), fallback=True)
        nxt = _closest(kin, cands, cameras, query.exit_time)
        eta = estimate_time_of_arrival(kin, cameras[nxt], query.exit_time, cfg)
    except EgolinkError as exc:
        return QueryPlan(**base, error=f"{type(exc).__name__}: {exc}")
    return QueryPlan(**base, kinematics=kin, candidates=tuple(sorted(cands)),
                     skipped_cameras=tuple(skipped), next_camera=nxt, eta_s=eta,
                     cutoff_ms=query.exit_time + cfg.arrival_slack * eta * 1000.0)


def gate_row(plan: QueryPlan | None, index: GalleryIndex, query_camera: str,
             cfg: AssociationConfig) -> np.ndarray:
    """Boolean mask of gallery entries forced to zero for one query."""
    masked = index.cameras == query_camera
    if plan is None or plan.fallback:
        return masked
    if plan.error is not None:
        return np.ones(len(index), dtype=bool)
    keep = (index.cameras == plan.next_camera) & (index.entry >= plan.cutoff_ms)
    if cfg.arrival_window is not None:
        keep &= index.entry <= plan.cutoff_ms + cfg.arrival_window * 1000.0
    return masked | ~keep


@dataclass
class AffinityMatrix:
    query_ids: list[str]
    gallery_ids: list[str]
    query_cameras: list[str]
    gallery_cameras: list[str]
    scores: np.ndarray  # (queries, gallery)
    masked: np.ndarray  # True where a rule forced the score to zero
    shared_regions: np.ndarray  # number of regions both sides carry
    plans: list[QueryPlan | None]
    id_rank: np.ndarray  # lexicographic position of each gallery id

    def __post_init__(self):
        self._row = {qid: k for k, qid in enumerate(self.query_ids)}

    @functools.cached_property
    def same_camera(self) -> np.ndarray:
        names = {c: k for k, c in enumerate(sorted(set(self.query_cameras) | set(self.gallery_cameras)))}
        q = np.array([names[c] for c in self.query_cameras])
        g = np.array([names[c] for c in self.gallery_cameras])
        return q[:, None] == g[None, :]

    @property
    def mask_count(self) -> np.ndarray:
        """Cross-camera pairs zeroed by the gate, per query."""
        return (self.masked & ~self.same_camera).sum(axis=1)

    def row_index(self, query_id: str) -> int:
        try:
            return self._row[query_id]
        except KeyError:
            raise UnknownQuery(query_id) from None

    def to_dict(self) -> dict:
        return {
            "query_ids": list(self.query_ids),
            "gallery_ids": list(self.gallery_ids),
            "scores": self.scores.tolist(),
            "masked": [np.flatnonzero(r).tolist() for r in self.masked],
            "mask_count": self.mask_count.tolist(),
            "plans": [None if p is None else p.to_dict() for p in self.plans],
        }


def masked_affinity(queries: Sequence[Tracklet], gallery: Sequence[Tracklet],
                    cameras: Mapping[str, CameraTrajectory],
                    cfg: AssociationConfig = AssociationConfig(),
                    threads: int = 1, index: GalleryIndex | None = None) -> AffinityMatrix:
    """Appearance affinity of every query against the gallery, with gating.

    A gallery tracklet keeps its appearance score only if it lies in the
    query's predicted next camera and enters it no earlier than
    ``exit + arrival_slack * eta``. Same-camera pairs are always zero. A query
    without candidate cameras is scored against every other camera (flagged as
    a fallback in its plan). A query whose gate cannot be computed gets an
    all-zero row and an ``error`` in its plan. With ``prune_disabled`` only the
    same-camera rule applies.

    Rows are computed in fixed blocks, so the result does not depend on
    ``threads``.
    """
    if not queries:
        raise ValidationError("no queries")
    if index is None or not index.matches(cfg):
        index = GalleryIndex(gallery, cfg)
    elif [t.track_id for t in gallery] != index.ids:
        raise ValidationError("gallery does not match the supplied index")
    nq, ng = len(queries), len(index)
    scores = np.empty((nq, ng))
    masked = np.empty((nq, ng), dtype=bool)
    shared = np.empty((nq, ng), dtype=np.int64)
    plans: list[QueryPlan | None] = [None] * nq

    def run(start):
        block = queries[start:start + QUERY_BLOCK]
        s, c = index.score_block([q.features for q in block])
        for k, q in enumerate(block):
            plan = None if cfg.prune_disabled else plan_query(q, cameras, cfg)
            if plan is not None and plan.error is not None:
                logger.warning("query %s: %s", q.track_id, plan.error)
            m = gate_row(plan, index, q.camera_id, cfg)
            row = s[k]
            row[m] = 0.0
            scores[start + k] = row
            masked[start + k] = m
            shared[start + k] = c[k]
            plans[start + k] = plan

    starts = range(0, nq, QUERY_BLOCK)
    if threads > 1 and nq > QUERY_BLOCK:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, starts))
    else:
        for start in starts:
            run(start)
    return AffinityMatrix(
        query_ids=[q.track_id for q in queries],
        gallery_ids=list(index.ids),
        query_cameras=[q.camera_id for q in queries],
        gallery_cameras=list(index.cameras),
        scores=scores,
        masked=masked,
        shared_regions=shared,
        plans=plans,
        id_rank=index.id_rank,
    )


def rank_indices(scores: np.ndarray, masked: np.ndarray, id_rank: np.ndarray) -> np.ndarray:
    """Gallery positions ordered by score, masked entries last, ties by id."""
    return np.lexsort((id_rank, -scores, masked))


def rank_gallery(m: AffinityMatrix, query_id: str) -> list[str]:
    """Gallery ids from best to worst for one query.

    Unmasked entries come first in decreasing score; entries zeroed by a rule
    follow. Equal scores are ordered by gallery id.
    """
    k = m.row_index(query_id)
    order = rank_indices(m.scores[k], m.masked[k], m.id_rank)
    return [m.gallery_ids[i] for i in order]
