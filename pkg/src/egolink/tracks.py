"""Tracklets: per-camera detection sequences with region appearance features.

Also infers a target's walking direction relative to the camera and, from the
camera log, the target's heading/position/speed at the moment it leaves view.
"""
from __future__ import annotations

import enum
import json
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import TextIO

import numpy as np

from .errors import InsufficientData, ParseError, ValidationError
from .geo import GeoPoint, normalize_bearing
from .metadata import CameraTrajectory, sample_state

REGIONS = ("gf", "fb", "ub", "lb")  # global, full body, upper body, lower body
DEFAULT_WALKING_SPEED = 1.3  # m/s


@dataclass(frozen=True)
class Detection:
    timestamp: int
    bbox: tuple[float, float, float, float]  # x, y, width, height in pixels
    occluded_fraction: float | None = None
    is_false_positive: bool | None = None

    def __post_init__(self):
        if len(self.bbox) != 4:
            raise ValidationError(f"bbox must have 4 values, got {self.bbox!r}")
        if not (self.bbox[2] > 0 and self.bbox[3] > 0):
            raise ValidationError(f"bbox width and height must be positive, got {self.bbox!r}")
        if self.occluded_fraction is not None and not 0.0 <= self.occluded_fraction <= 1.0:
            raise ValidationError(f"occluded_fraction {self.occluded_fraction} outside [0, 1]")

    @property
    def height(self) -> float:
        return self.bbox[3]


class RegionFeatures:
    """One appearance vector per body region; absent regions are ``None``."""

    __slots__ = REGIONS

    def __init__(self, gf=None, fb=None, ub=None, lb=None):
        dim = None
        for name, vec in zip(REGIONS, (gf, fb, ub, lb)):
            if vec is not None:
                vec = np.asarray(vec, dtype=np.float64)
                if vec.ndim != 1 or vec.size == 0:
                    raise ValidationError(f"region {name!r} must be a non-empty 1-D vector")
                if not np.all(np.isfinite(vec)):
                    raise ValidationError(f"region {name!r} has non-finite entries")
                if dim is None:
                    dim = vec.size
                elif vec.size != dim:
                    raise ValidationError(
                        f"region {name!r} has dimension {vec.size}, expected {dim}")
                vec.setflags(write=False)
            object.__setattr__(self, name, vec)
        if dim is None:
            raise ValidationError("at least one feature region must be present")

    def __setattr__(self, name, value):
        raise AttributeError("RegionFeatures is immutable")

    @property
    def dim(self) -> int:
        return next(getattr(self, r).size for r in REGIONS if getattr(self, r) is not None)

    @property
    def present(self) -> tuple[str, ...]:
        return tuple(r for r in REGIONS if getattr(self, r) is not None)

    def get(self, region: str):
        return getattr(self, region)

    def __eq__(self, other):
        if not isinstance(other, RegionFeatures):
            return NotImplemented
        for r in REGIONS:
            a, b = getattr(self, r), getattr(other, r)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True

    __hash__ = None

    def __repr__(self):
        return f"RegionFeatures(present={self.present}, dim={self.dim})"

    def to_dict(self) -> dict:
        return {r: getattr(self, r).tolist() for r in self.present}


@dataclass(frozen=True)
class Tracklet:
    track_id: str
    camera_id: str
    detections: tuple[Detection, ...]
    features: RegionFeatures
    person_id: str | None = None

    def __post_init__(self):
        dets = tuple(self.detections)
        object.__setattr__(self, "detections", dets)
        if not dets:
            raise ValidationError(f"tracklet {self.track_id!r} has no detections")
        for prev, cur in zip(dets, dets[1:]):
            if cur.timestamp <= prev.timestamp:
                raise ValidationError(
                    f"tracklet {self.track_id!r}: detections not strictly time-ordered "
                    f"({prev.timestamp} then {cur.timestamp})")

    @property
    def entry_time(self) -> int:
        return self.detections[0].timestamp

    @property
    def exit_time(self) -> int:
        return self.detections[-1].timestamp

    def __len__(self):
        return len(self.detections)


class MotionDirection(enum.Enum):
    TOWARD_CAMERA = "toward"
    AWAY_FROM_CAMERA = "away"


@dataclass(frozen=True)
class TargetKinematics:
    heading: float
    position: GeoPoint
    speed: float
    direction: MotionDirection

    def __post_init__(self):
        if not self.speed > 0:
            raise ValidationError(f"target speed must be positive, got {self.speed}")


def height_slope(timestamps: Sequence[float], heights: Sequence[float]) -> float:
    """Least-squares slope of bbox height against time (pixels per ms)."""
    n = len(timestamps)
    t_mean = math.fsum(timestamps) / n
    h_mean = math.fsum(heights) / n
    num = math.fsum((t - t_mean) * (h - h_mean) for t, h in zip(timestamps, heights))
    den = math.fsum((t - t_mean) ** 2 for t in timestamps)
    return num / den


def infer_motion_direction(tracklet: Tracklet) -> MotionDirection:
    """Growing boxes mean the target approaches the camera.

    A flat or shrinking height trend counts as walking away, i.e. moving with
    the camera.
    """
    if len(tracklet.detections) < 2:
        raise InsufficientData(
            f"tracklet {tracklet.track_id!r}: need >= 2 detections to infer motion direction")
    slope = height_slope([d.timestamp for d in tracklet.detections],
                         [d.height for d in tracklet.detections])
    return MotionDirection.TOWARD_CAMERA if slope > 0 else MotionDirection.AWAY_FROM_CAMERA


def infer_target_kinematics(tracklet: Tracklet, camera: CameraTrajectory,
                            walking_speed: float = DEFAULT_WALKING_SPEED,
                            direction_fn=infer_motion_direction) -> TargetKinematics:
    """Target heading, position and speed at the tracklet's exit time.

    The camera is close to the people it films, so the target's position is
    taken to be the camera's GPS fix. A target walking away from the camera
    shares its heading; one walking toward it gets the reverse heading.
    """
    direction = direction_fn(tracklet)
    state = sample_state(camera, tracklet.exit_time)
    heading = state.heading
    if direction is MotionDirection.TOWARD_CAMERA:
        heading = normalize_bearing(heading + 180.0)
    return TargetKinematics(heading, state.position, walking_speed, direction)


# --------------------------------------------------------------------------- JSON Lines

def tracklet_to_dict(t: Tracklet) -> dict:
    dets = []
    for d in t.detections:
        item = {"t_ms": d.timestamp, "bbox": [float(v) for v in d.bbox]}
        if d.occluded_fraction is not None:
            item["occluded_fraction"] = d.occluded_fraction
        if d.is_false_positive is not None:
            item["is_false_positive"] = d.is_false_positive
        dets.append(item)
    out = {"track_id": t.track_id, "camera_id": t.camera_id}
    if t.person_id is not None:
        out["person_id"] = t.person_id
    out["detections"] = dets
    out["features"] = t.features.to_dict()
    return out


def tracklet_from_dict(obj: dict) -> Tracklet:
    for key in ("track_id", "camera_id", "detections", "features"):
        if key not in obj:
            raise ValidationError(f"tracklet record lacks {key!r}")
    dets = []
    for d in obj["detections"]:
        if "t_ms" not in d or "bbox" not in d:
            raise ValidationError("detection needs 't_ms' and 'bbox'")
        ts = d["t_ms"]
        if isinstance(ts, float) and ts.is_integer():
            ts = int(ts)
        if not isinstance(ts, int) or isinstance(ts, bool):
            raise ValidationError(f"detection timestamp must be an integer, got {ts!r}")
        occ = d.get("occluded_fraction")
        fp = d.get("is_false_positive")
        if fp is not None and not isinstance(fp, bool):
            raise ValidationError(f"is_false_positive must be boolean, got {fp!r}")
        dets.append(Detection(ts, tuple(float(v) for v in d["bbox"]),
                              None if occ is None else float(occ), fp))
    feats = obj["features"]
    unknown = set(feats) - set(REGIONS)
    if unknown:
        raise ValidationError(f"unknown feature regions {sorted(unknown)}")
    person = obj.get("person_id")
    return Tracklet(
        track_id=str(obj["track_id"]),
        camera_id=str(obj["camera_id"]),
        detections=tuple(dets),
        features=RegionFeatures(**{r: feats.get(r) for r in REGIONS}),
        person_id=None if person is None else str(person),
    )


def parse_tracklets(stream: TextIO, path=None) -> list[Tracklet]:
    out = []
    for line_no, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=line_no, path=path) from None
        if not isinstance(obj, dict):
            raise ParseError("expected a JSON object per line", line=line_no, path=path)
        try:
            out.append(tracklet_from_dict(obj))
        except ValidationError as exc:
            raise ParseError(str(exc), line=line_no, path=path) from None
    return out


def read_tracklets(path) -> list[Tracklet]:
    with open(path, encoding="utf-8") as fh:
        return parse_tracklets(fh, path=Path(path))


def write_tracklets(tracklets: Iterable[Tracklet], path):
    with open(path, "w", encoding="utf-8") as fh:
        for t in tracklets:
            fh.write(json.dumps(tracklet_to_dict(t)) + "\n")
