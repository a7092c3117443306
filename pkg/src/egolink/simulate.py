"""Kinematic world simulator: moving cameras, walking targets, synthetic tracklets.

Entities move with piecewise-constant velocity on a local tangent plane (x east,
y north, meters). Positions are mapped to GPS with the spherical
direct-geodesic formula from a fixed origin, which keeps the mapping
distance-preserving to well below a micrometer per step for worlds of a few
kilometers. A target is visible to a camera when it is within ``fov_range_m``
and within ``fov_half_angle_deg`` of the camera heading. Every run of at
least ``min_track_ticks`` visible ticks becomes a tracklet.

Two layouts are available:

* ``corridor``: cameras walk north in a convoy along a straight street,
  spaced ``camera_spacing_m`` apart, all at one shared speed. Targets walk
  the street northward or southward with constant heading. Here the
  closest-camera-ahead rule and the constant-speed arrival estimate hold
  exactly, which makes the layout usable as a ground-truth oracle.
* ``plane``: cameras and targets roam a square world with random headings,
  optionally turning toward a fresh waypoint every ``turn_interval_s``.

Appearance features are identity prototypes (one random unit vector per
region) plus isotropic Gaussian noise drawn per tracklet.
"""
from __future__ import annotations

import dataclasses
import errno
import hashlib
import json
import math
import shutil
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidConfig, ValidationError
from .geo import EARTH_RADIUS_M, GeoPoint
from .metadata import CameraStateSample, CameraTrajectory, serialize_camera_log, write_camera_logs
from .tracks import REGIONS, Detection, RegionFeatures, Tracklet, tracklet_to_dict, write_tracklets

LAYOUTS = ("corridor", "plane")

IMAGE_WIDTH, IMAGE_HEIGHT = 1920, 1080
FOCAL_PX = 1000.0
PERSON_HEIGHT_M = 1.7


@dataclass(frozen=True)
class ScenarioConfig:
    num_cameras: int = 4
    num_targets: int = 50
    world_extent_m: float = 400.0  # side of the square world (plane layout)
    camera_speed_range: tuple[float, float] = (0.3, 0.9)
    target_speed_range: tuple[float, float] = (1.3, 1.3)
    fov_range_m: float = 4.0
    fov_half_angle_deg: float = 30.0
    duration_s: float = 120.0
    tick_ms: int = 50
    feature_dim: int = 32
    feature_noise_sigma: float = 0.0
    distractor_count: int = 0  # extra look-alike walkers per identity
    distractor_similarity: float = 0.0  # cosine between a distractor prototype and its host
    rng_seed: int = 0
    layout: str = "corridor"
    turn_interval_s: float | None = None  # plane layout; None keeps headings constant
    camera_spacing_m: float = 80.0  # corridor layout
    lateral_offset_max_m: float = 1.0  # corridor layout
    origin: tuple[float, float] = (-81.2, 28.6)  # longitude, latitude
    start_time_ms: int = 1_577_836_800_000
    min_track_ticks: int = 16
    region_dropout: float = 0.0

    def __post_init__(self):
        for name in ("camera_speed_range", "target_speed_range", "origin"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        for name in ("num_cameras", "num_targets", "tick_ms", "feature_dim", "min_track_ticks"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise InvalidConfig(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.distractor_count, int) or self.distractor_count < 0:
            raise InvalidConfig(f"distractor_count must be an integer >= 0, got {self.distractor_count!r}")
        for name in ("camera_speed_range", "target_speed_range"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise InvalidConfig(f"{name} must satisfy 0 <= low <= high, got {(lo, hi)}")
        if self.target_speed_range[0] <= 0:
            raise InvalidConfig("targets must walk at a positive speed")
        for name in ("world_extent_m", "fov_range_m", "feature_noise_sigma", "camera_spacing_m",
                     "lateral_offset_max_m", "duration_s"):
            if not getattr(self, name) >= 0:
                raise InvalidConfig(f"{name} must be >= 0, got {getattr(self, name)!r}")
        if not 0 < self.fov_half_angle_deg <= 180:
            raise InvalidConfig(f"fov_half_angle_deg must lie in (0, 180], got {self.fov_half_angle_deg}")
        if not 0 <= self.distractor_similarity <= 1:
            raise InvalidConfig("distractor_similarity must lie in [0, 1]")
        if not 0 <= self.region_dropout < 1:
            raise InvalidConfig("region_dropout must lie in [0, 1)")
        duration_ms = self.duration_s * 1000.0
        if not duration_ms.is_integer() or int(duration_ms) % self.tick_ms or duration_ms <= 0:
            raise InvalidConfig(f"tick_ms={self.tick_ms} must divide duration {duration_ms} ms")
        if self.layout not in LAYOUTS:
            raise InvalidConfig(f"layout must be one of {LAYOUTS}, got {self.layout!r}")
        if self.turn_interval_s is not None and not self.turn_interval_s > 0:
            raise InvalidConfig("turn_interval_s must be positive when set")
        try:
            GeoPoint(*self.origin)
        except ValidationError as exc:
            raise InvalidConfig(f"bad origin: {exc}") from None

    @property
    def num_ticks(self) -> int:
        return int(round(self.duration_s * 1000)) // self.tick_ms + 1

    @classmethod
    def from_dict(cls, data: Mapping) -> ScenarioConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown scenario key(s): {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for name in ("camera_speed_range", "target_speed_range", "origin"):
            out[name] = list(out[name])
        return out


@dataclass(frozen=True)
class VisibilityInterval:
    target_id: str
    camera_id: str
    start_ms: int
    end_ms: int
    track_id: str | None  # None when the run was too short to become a tracklet


@dataclass
class WorldLog:
    config: ScenarioConfig
    times_ms: np.ndarray
    target_ids: list[str]
    target_lon: np.ndarray  # (targets, ticks)
    target_lat: np.ndarray
    target_speed: np.ndarray
    cameras: dict[str, CameraTrajectory]
    visibility: list[VisibilityInterval]
    tracklets: list[Tracklet]

    def __post_init__(self):
        self.tracklet_target = {v.track_id: v.target_id for v in self.visibility if v.track_id}
        self._by_target: dict[str, list[VisibilityInterval]] = {}
        for v in self.visibility:
            self._by_target.setdefault(v.target_id, []).append(v)

    def intervals_of(self, target_id: str) -> list[VisibilityInterval]:
        return self._by_target.get(target_id, [])

    def ground_truth(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "targets": [{"target_id": t, "speed_mps": float(s)}
                        for t, s in zip(self.target_ids, self.target_speed)],
            "visibility": [dataclasses.asdict(v) for v in self.visibility],
        }

    def to_bytes(self) -> bytes:
        """Canonical serialization; equal worlds give equal bytes."""
        parts = [json.dumps(self.ground_truth(), sort_keys=True).encode()]
        for t in self.tracklets:
            parts.append(json.dumps(tracklet_to_dict(t)).encode())
        for cam in sorted(self.cameras):
            parts.append(serialize_camera_log(self.cameras[cam]).encode())
        for arr in (self.times_ms, self.target_lon, self.target_lat, self.target_speed):
            parts.append(np.ascontiguousarray(arr).tobytes())
        return b"\n".join(parts)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def local_to_geo(origin: GeoPoint, x, y):
    """Map local east/north offsets in meters to (longitude, latitude) arrays."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    delta = np.hypot(x, y) / EARTH_RADIUS_M
    theta = np.arctan2(x, y)
    phi1, lam1 = math.radians(origin.latitude), math.radians(origin.longitude)
    sin_phi2 = math.sin(phi1) * np.cos(delta) + math.cos(phi1) * np.sin(delta) * np.cos(theta)
    phi2 = np.arcsin(np.clip(sin_phi2, -1.0, 1.0))
    lam2 = lam1 + np.arctan2(np.sin(theta) * np.sin(delta) * math.cos(phi1),
                             np.cos(delta) - math.sin(phi1) * sin_phi2)
    lon = np.degrees(lam2)
    lon = np.where(lon > 180.0, lon - 360.0, np.where(lon < -180.0, lon + 360.0, lon))
    return lon, np.degrees(phi2)


def _headings_to_velocity(headings_deg, speed):
    h = np.radians(headings_deg)
    return speed * np.sin(h), speed * np.cos(h)


def _integrate(x0, y0, vx, vy, dt_s):
    # vx, vy: per-interval velocity, length ticks - 1
    x = np.concatenate(([x0], x0 + np.cumsum(vx * dt_s)))
    y = np.concatenate(([y0], y0 + np.cumsum(vy * dt_s)))
    return x, y


def _roam(rng, cfg: ScenarioConfig, speed: float, n_ticks: int, dt_s: float):
    """Plane-layout path: random start, constant speed, optional waypoint turns."""
    extent = cfg.world_extent_m
    x0, y0 = rng.uniform(0, extent, size=2)
    heading = rng.uniform(0, 360)
    n_int = n_ticks - 1
    headings = np.empty(n_int)
    if cfg.turn_interval_s is None:
        headings[:] = heading
    else:
        seg = max(1, int(round(cfg.turn_interval_s / dt_s)))
        x, y = x0, y0
        for start in range(0, n_int, seg):
            if start > 0:
                wx, wy = rng.uniform(0, extent, size=2)
                heading = math.degrees(math.atan2(wx - x, wy - y)) % 360.0
            stop = min(start + seg, n_int)
            headings[start:stop] = heading
            vx, vy = _headings_to_velocity(heading, speed)
            x += vx * dt_s * (stop - start)
            y += vy * dt_s * (stop - start)
    vx, vy = _headings_to_velocity(headings, speed)
    x, y = _integrate(x0, y0, vx, vy, dt_s)
    return x, y, headings


def _unit(rng, dim):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _runs(mask: np.ndarray):
    """(start, stop) index pairs of consecutive True values, stop exclusive."""
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def generate_scenario(cfg: ScenarioConfig) -> WorldLog:
    """Simulate one world. Output is a pure function of ``cfg`` (seed included)."""
    rng = np.random.default_rng(cfg.rng_seed)
    n_ticks = cfg.num_ticks
    dt_s = cfg.tick_ms / 1000.0
    times = cfg.start_time_ms + cfg.tick_ms * np.arange(n_ticks, dtype=np.int64)
    origin = GeoPoint(*cfg.origin)
    n_walkers = cfg.num_targets * (1 + cfg.distractor_count)

    # cameras
    cam_ids = [f"cam{k + 1:02d}" for k in range(cfg.num_cameras)]
    cam_x, cam_y, cam_head, cam_speed = [], [], [], []
    if cfg.layout == "corridor":
        speed = float(rng.uniform(*cfg.camera_speed_range))
        for k in range(cfg.num_cameras):
            heads = np.zeros(n_ticks - 1)
            vx, vy = _headings_to_velocity(heads, speed)
            x, y = _integrate(0.0, k * cfg.camera_spacing_m, vx, vy, dt_s)
            cam_x.append(x), cam_y.append(y), cam_head.append(heads), cam_speed.append(speed)
    else:
        for _ in range(cfg.num_cameras):
            speed = float(rng.uniform(*cfg.camera_speed_range))
            x, y, heads = _roam(rng, cfg, speed, n_ticks, dt_s)
            cam_x.append(x), cam_y.append(y), cam_head.append(heads), cam_speed.append(speed)

    # walkers: identities first, then their look-alike distractors
    target_ids = [f"p{i:04d}" for i in range(cfg.num_targets)]
    target_ids += [f"p{h:04d}-d{k}" for h in range(cfg.num_targets)
                   for k in range(cfg.distractor_count)]
    tx = np.empty((n_walkers, n_ticks))
    ty = np.empty((n_walkers, n_ticks))
    t_speed = np.empty(n_walkers)
    for i in range(n_walkers):
        speed = float(rng.uniform(*cfg.target_speed_range))
        t_speed[i] = speed
        if cfg.layout == "corridor":
            lat_off = rng.uniform(-cfg.lateral_offset_max_m, cfg.lateral_offset_max_m)
            y0 = rng.uniform(-cfg.camera_spacing_m, cfg.num_cameras * cfg.camera_spacing_m)
            heading = 0.0 if rng.random() < 0.5 else 180.0
            vx, vy = _headings_to_velocity(np.full(n_ticks - 1, heading), speed)
            tx[i], ty[i] = _integrate(lat_off, y0, vx, vy, dt_s)
        else:
            tx[i], ty[i], _ = _roam(rng, cfg, speed, n_ticks, dt_s)

    # camera logs
    cameras = {}
    for k, cam in enumerate(cam_ids):
        lon, lat = local_to_geo(origin, cam_x[k], cam_y[k])
        heads = np.append(cam_head[k], cam_head[k][-1])
        samples = tuple(
            CameraStateSample(int(t), GeoPoint(float(lo), float(la)), float(h) % 360.0, cam_speed[k])
            for t, lo, la, h in zip(times, lon, lat, heads))
        cameras[cam] = CameraTrajectory(cam, samples)
    t_lon, t_lat = local_to_geo(origin, tx, ty)

    # visibility, computed in the metric frame
    raw = []  # (start_tick, camera index, walker index, stop_tick, dist, offset)
    for k in range(cfg.num_cameras):
        heads = np.append(cam_head[k], cam_head[k][-1])
        dx = tx - cam_x[k][None, :]
        dy = ty - cam_y[k][None, :]
        dist = np.hypot(dx, dy)
        rel = np.degrees(np.arctan2(dx, dy)) - heads[None, :]
        offset = (rel + 540.0) % 360.0 - 180.0  # signed angle off the optical axis
        visible = (dist <= cfg.fov_range_m) & (np.abs(offset) <= cfg.fov_half_angle_deg) & (dist > 1e-9)
        for i in np.flatnonzero(visible.any(axis=1)):
            for start, stop in _runs(visible[i]):
                raw.append((start, k, int(i), stop, dist[i, start:stop], offset[i, start:stop]))
    raw.sort(key=lambda r: (r[0], r[1], r[2]))

    # identity prototypes
    protos = np.empty((n_walkers, len(REGIONS), cfg.feature_dim))
    for i in range(cfg.num_targets):
        for r in range(len(REGIONS)):
            protos[i, r] = _unit(rng, cfg.feature_dim)
    s = cfg.distractor_similarity
    for j, i in enumerate(range(cfg.num_targets, n_walkers)):
        host = j // cfg.distractor_count
        for r in range(len(REGIONS)):
            v = s * protos[host, r] + math.sqrt(1.0 - s * s) * _unit(rng, cfg.feature_dim)
            protos[i, r] = v / np.linalg.norm(v)

    visibility, tracklets = [], []
    per_camera = [0] * cfg.num_cameras
    noise_scale = cfg.feature_noise_sigma / math.sqrt(cfg.feature_dim)
    for start, k, i, stop, dist, offset in raw:
        track_id = None
        if stop - start >= cfg.min_track_ticks:
            per_camera[k] += 1
            track_id = f"{cam_ids[k]}-{per_camera[k]:05d}"
            tracklets.append(_make_tracklet(rng, cfg, track_id, cam_ids[k], target_ids[i],
                                            times[start:stop], dist, offset, protos[i], noise_scale))
        visibility.append(VisibilityInterval(target_ids[i], cam_ids[k], int(times[start]),
                                             int(times[stop - 1]), track_id))

    return WorldLog(cfg, times, target_ids, t_lon, t_lat, t_speed, cameras, visibility, tracklets)


def _make_tracklet(rng, cfg, track_id, camera_id, person_id, times, dist, offset, proto,
                   noise_scale) -> Tracklet:
    dets = []
    for t, d, off in zip(times, dist, offset):
        h = FOCAL_PX * PERSON_HEIGHT_M / max(float(d), 0.05)
        w = 0.41 * h
        cx = IMAGE_WIDTH / 2 + FOCAL_PX * math.tan(math.radians(float(off)))
        dets.append(Detection(int(t), (cx - w / 2, IMAGE_HEIGHT / 2 - h / 2, w, h), 0.0, False))
    regions = {}
    keep = np.ones(len(REGIONS), dtype=bool)
    if cfg.region_dropout > 0:
        keep = rng.random(len(REGIONS)) >= cfg.region_dropout
        if not keep.any():
            keep[0] = True
    for r, name in enumerate(REGIONS):
        if not keep[r]:
            continue
        vec = proto[r].copy()
        if noise_scale > 0:
            vec += noise_scale * rng.standard_normal(cfg.feature_dim)
        regions[name] = vec
    return Tracklet(track_id, camera_id, tuple(dets), RegionFeatures(**regions), person_id)


def _target_of(world: WorldLog, tracklet: Tracklet) -> str:
    try:
        return world.tracklet_target[tracklet.track_id]
    except KeyError:
        raise ValidationError(f"tracklet {tracklet.track_id!r} does not belong to this world") from None


def _next_interval(world: WorldLog, tracklet: Tracklet, camera_id: str | None = None):
    best = None
    for v in world.intervals_of(_target_of(world, tracklet)):
        if v.camera_id == tracklet.camera_id or v.start_ms <= tracklet.exit_time:
            continue
        if camera_id is not None and v.camera_id != camera_id:
            continue
        if best is None or (v.start_ms, v.camera_id) < (best.start_ms, best.camera_id):
            best = v
    return best


def oracle_next_camera(world: WorldLog, tracklet: Tracklet) -> str | None:
    """Camera (other than the tracklet's) that actually sees the target next."""
    v = _next_interval(world, tracklet)
    return None if v is None else v.camera_id


def oracle_arrival_time(world: WorldLog, tracklet: Tracklet, camera_id: str) -> float | None:
    """Seconds from the tracklet's exit until the target is next seen by ``camera_id``."""
    v = _next_interval(world, tracklet, camera_id)
    return None if v is None else (v.start_ms - tracklet.exit_time) / 1000.0


def oracle_next_tracklet(world: WorldLog, tracklet: Tracklet) -> str | None:
    """Track id of the target's next appearance in another camera, if it became a tracklet."""
    v = _next_interval(world, tracklet)
    return None if v is None else v.track_id


def export_dataset(world: WorldLog, directory, overwrite: bool = False) -> list[Path]:
    """Write ``tracklets.jsonl``, ``cameras/<id>.csv`` and ``world.json``.

    Refuses to touch a non-empty directory unless ``overwrite`` is set.
    """
    directory = Path(directory)
    if directory.exists() and any(directory.iterdir()):
        if not overwrite:
            raise FileExistsError(errno.EEXIST, "output directory is not empty", str(directory))
        shutil.rmtree(directory / "cameras", ignore_errors=True)
    directory.mkdir(parents=True, exist_ok=True)
    tracks_path = directory / "tracklets.jsonl"
    write_tracklets(world.tracklets, tracks_path)
    write_camera_logs(world.cameras.values(), directory / "cameras")
    truth_path = directory / "world.json"
    truth_path.write_text(json.dumps(world.ground_truth(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
    return [tracks_path, truth_path] + [directory / "cameras" / f"{c}.csv" for c in sorted(world.cameras)]
