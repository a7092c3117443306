"""Per-camera sensor logs: parsing, serialization, interpolation and sanity checks.

A camera log is a time series of GPS position, compass heading and ground speed.
Two on-disk formats are supported:

* ``csv``: one file per camera named ``<camera_id>.csv`` with header
  ``timestamp_ms,longitude,latitude,heading_deg,speed_mps[,<extra>...]``.
* ``jsonl``: one JSON object per sample with the same field names, plus a
  ``camera_id`` key so several cameras can share a single file.

Columns beyond the five required ones are kept verbatim as extra channels.
"""
from __future__ import annotations

import bisect
import csv
import io
import json
import logging
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import TextIO

from .errors import OutOfRange, ParseError, ValidationError
from .geo import GeoPoint, great_circle_distance, normalize_bearing

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("timestamp_ms", "longitude", "latitude", "heading_deg", "speed_mps")
LOG_FORMATS = ("csv", "jsonl")


@dataclass(frozen=True)
class CameraStateSample:
    timestamp: int | float  # ms since Unix epoch
    position: GeoPoint
    heading: float
    speed: float

    def __post_init__(self):
        if not (math.isfinite(self.speed) and self.speed >= 0.0):
            raise ValidationError(f"speed must be finite and >= 0, got {self.speed}")
        if not 0.0 <= self.heading < 360.0:
            raise ValidationError(f"heading {self.heading} outside [0, 360)")


@dataclass(frozen=True)
class CameraTrajectory:
    """Time-ordered camera states. Treat as immutable once built."""

    camera_id: str
    samples: tuple[CameraStateSample, ...]
    extra_channels: Mapping[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        if len(samples) < 2:
            raise ValidationError(
                f"camera {self.camera_id!r}: trajectory needs at least 2 samples, got {len(samples)}")
        times = [s.timestamp for s in samples]
        for i in range(1, len(times)):
            if times[i] <= times[i - 1]:
                raise ValidationError(
                    f"camera {self.camera_id!r}: timestamps not strictly increasing at sample {i}")
        for name, values in self.extra_channels.items():
            if len(values) != len(samples):
                raise ValidationError(
                    f"camera {self.camera_id!r}: extra channel {name!r} has {len(values)} values "
                    f"for {len(samples)} samples")
        object.__setattr__(self, "_times", times)

    @property
    def start(self):
        return self._times[0]

    @property
    def end(self):
        return self._times[-1]

    def covers(self, t) -> bool:
        return self._times[0] <= t <= self._times[-1]

    def __len__(self):
        return len(self.samples)


def _interpolate_heading(h0: float, h1: float, frac: float, prev_turn: float) -> float:
    delta = math.fmod(h1 - h0 + 540.0, 360.0) - 180.0  # in [-180, 180)
    if abs(delta) == 180.0:
        # Antipodal pair: keep turning the way the previous segment turned.
        delta = -180.0 if prev_turn < 0.0 else 180.0
    return normalize_bearing(h0 + frac * delta)


def _signed_turn(h0: float, h1: float) -> float:
    return math.fmod(h1 - h0 + 540.0, 360.0) - 180.0


def sample_state(traj: CameraTrajectory, t) -> CameraStateSample:
    """Camera state at time ``t`` (ms).

    Longitude, latitude and speed are interpolated linearly; the heading follows
    the shorter arc between the bracketing samples. A timestamp that hits a
    logged row returns that row unchanged.

    Raises:
        OutOfRange: if ``t`` lies outside the logged span.
    """
    times = traj._times
    if not times[0] <= t <= times[-1]:
        raise OutOfRange(
            f"camera {traj.camera_id!r}: t={t} outside logged span [{times[0]}, {times[-1]}]")
    i = bisect.bisect_left(times, t)
    if times[i] == t:
        return traj.samples[i]
    s0, s1 = traj.samples[i - 1], traj.samples[i]
    frac = (t - s0.timestamp) / (s1.timestamp - s0.timestamp)
    prev_turn = 0.0
    if i >= 2:
        prev_turn = _signed_turn(traj.samples[i - 2].heading, s0.heading)
    p0, p1 = s0.position, s1.position
    position = GeoPoint(p0.longitude + frac * (p1.longitude - p0.longitude),
                        p0.latitude + frac * (p1.latitude - p0.latitude))
    return CameraStateSample(
        timestamp=t,
        position=position,
        heading=_interpolate_heading(s0.heading, s1.heading, frac, prev_turn),
        speed=s0.speed + frac * (s1.speed - s0.speed),
    )


# --------------------------------------------------------------------------- parsing

def _parse_row(values: Mapping, line: int, path) -> CameraStateSample:
    try:
        ts_raw = values["timestamp_ms"]
        if isinstance(ts_raw, bool):
            raise ValueError("boolean timestamp")
        if isinstance(ts_raw, float):
            if not ts_raw.is_integer():
                raise ValueError(f"timestamp {ts_raw} is not an integer")
            ts = int(ts_raw)
        else:
            ts = int(ts_raw)
        lon = float(values["longitude"])
        lat = float(values["latitude"])
        heading = float(values["heading_deg"])
        speed = float(values["speed_mps"])
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}", line=line, path=path) from None
    except (TypeError, ValueError) as exc:
        raise ParseError(f"malformed value: {exc}", line=line, path=path) from None
    if not all(math.isfinite(v) for v in (lon, lat, heading, speed)):
        raise ValidationError(f"{path or '<stream>'}: row at line {line}: non-finite value")
    if not -180.0 <= lon <= 180.0 or not -90.0 <= lat <= 90.0:
        raise ValidationError(
            f"{path or '<stream>'}: row at line {line}: coordinate ({lon}, {lat}) out of range")
    if speed < 0.0:
        raise ValidationError(f"{path or '<stream>'}: row at line {line}: negative speed {speed}")
    return CameraStateSample(ts, GeoPoint(lon, lat), normalize_bearing(heading), speed)


def _build_trajectory(camera_id, rows, extra_names, path) -> CameraTrajectory:
    # rows: list of (line, sample, extras-tuple)
    rows.sort(key=lambda r: r[1].timestamp)
    for prev, cur in zip(rows, rows[1:]):
        if cur[1].timestamp == prev[1].timestamp:
            raise ValidationError(
                f"{path or '<stream>'}: duplicate timestamp {cur[1].timestamp} "
                f"(lines {prev[0]} and {cur[0]})")
    if len(rows) < 2:
        raise ValidationError(
            f"{path or '<stream>'}: camera {camera_id!r} has {len(rows)} sample(s), need at least 2")
    extras = {name: tuple(r[2][k] for r in rows) for k, name in enumerate(extra_names)}
    return CameraTrajectory(camera_id, tuple(r[1] for r in rows), extras)


def _parse_csv(stream: TextIO, camera_id: str, path) -> CameraTrajectory:
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file, expected a header row", line=1, path=path) from None
    header = [h.strip() for h in header]
    missing = [f for f in REQUIRED_FIELDS if f not in header]
    if missing:
        raise ParseError(f"header lacks required column(s) {missing}", line=1, path=path)
    if len(set(header)) != len(header):
        raise ParseError("duplicate column names in header", line=1, path=path)
    extra_names = [h for h in header if h not in REQUIRED_FIELDS]
    rows = []
    for values in reader:
        line = reader.line_num
        if not values or (len(values) == 1 and not values[0].strip()):
            continue
        if len(values) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(values)}", line=line, path=path)
        record = dict(zip(header, values))
        sample = _parse_row(record, line, path)
        rows.append((line, sample, tuple(record[n] for n in extra_names)))
    return _build_trajectory(camera_id, rows, extra_names, path)


def _iter_jsonl(stream: TextIO, path):
    for line_no, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=line_no, path=path) from None
        if not isinstance(obj, dict):
            raise ParseError("expected a JSON object per line", line=line_no, path=path)
        yield line_no, obj


def _group_jsonl(stream: TextIO, default_id, path) -> dict[str, CameraTrajectory]:
    grouped: dict[str, list] = {}
    extra_names: dict[str, list] = {}
    for line_no, obj in _iter_jsonl(stream, path):
        cam = obj.get("camera_id", default_id)
        if cam is None:
            raise ParseError("sample lacks camera_id", line=line_no, path=path)
        cam = str(cam)
        names = [k for k in obj if k not in REQUIRED_FIELDS and k != "camera_id"]
        known = extra_names.setdefault(cam, names)
        if sorted(names) != sorted(known):
            raise ParseError(f"extra fields {names} differ from earlier rows {known}",
                             line=line_no, path=path)
        sample = _parse_row(obj, line_no, path)
        grouped.setdefault(cam, []).append((line_no, sample, tuple(obj[n] for n in known)))
    return {cam: _build_trajectory(cam, rows, extra_names[cam], path)
            for cam, rows in sorted(grouped.items())}


def parse_camera_log(stream: TextIO, fmt: str = "csv", camera_id: str | None = None,
                     path=None) -> CameraTrajectory:
    """Parse a single camera's log into a validated trajectory.

    Rows may appear in any order; they are sorted by timestamp. For ``jsonl``
    input every row must belong to the same camera.

    Raises:
        ParseError: malformed row (message carries the line number).
        ValidationError: out-of-range coordinate, negative speed, duplicate
            timestamps, or fewer than two samples.
    """
    if fmt == "csv":
        return _parse_csv(stream, camera_id if camera_id is not None else "", path)
    if fmt == "jsonl":
        trajectories = _group_jsonl(stream, camera_id, path)
        if len(trajectories) != 1:
            raise ValidationError(
                f"{path or '<stream>'}: expected one camera, found {sorted(trajectories)}")
        (traj,) = trajectories.values()
        if camera_id is not None and traj.camera_id != camera_id:
            raise ValidationError(f"log belongs to camera {traj.camera_id!r}, not {camera_id!r}")
        return traj
    raise ValueError(f"unknown log format {fmt!r}; expected one of {LOG_FORMATS}")


def load_camera_logs(path, fmt: str | None = None) -> dict[str, CameraTrajectory]:
    """Load every camera under ``path``.

    A directory is read as one ``<camera_id>.csv`` per camera; a file is read as
    a multi-camera JSON Lines log. ``fmt`` overrides the guess.
    """
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.is_dir() else "jsonl"
    if fmt == "csv":
        if not path.is_dir():
            raise FileNotFoundError(f"camera log directory not found: {path}")
        cameras = {}
        for file in sorted(path.glob("*.csv")):
            with open(file, newline="", encoding="utf-8") as fh:
                cameras[file.stem] = _parse_csv(fh, file.stem, file)
        return cameras
    if fmt == "jsonl":
        with open(path, encoding="utf-8") as fh:
            return _group_jsonl(fh, None, path)
    raise ValueError(f"unknown log format {fmt!r}; expected one of {LOG_FORMATS}")


def serialize_camera_log(traj: CameraTrajectory, fmt: str = "csv") -> str:
    out = io.StringIO()
    write_camera_log(traj, out, fmt)
    return out.getvalue()


def write_camera_log(traj: CameraTrajectory, stream: TextIO, fmt: str = "csv"):
    extra_names = list(traj.extra_channels)
    if fmt == "csv":
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(list(REQUIRED_FIELDS) + extra_names)
        for i, s in enumerate(traj.samples):
            writer.writerow([s.timestamp, repr(s.position.longitude), repr(s.position.latitude),
                             repr(s.heading), repr(s.speed)]
                            + [traj.extra_channels[n][i] for n in extra_names])
    elif fmt == "jsonl":
        for i, s in enumerate(traj.samples):
            obj = {"camera_id": traj.camera_id, "timestamp_ms": s.timestamp,
                   "longitude": s.position.longitude, "latitude": s.position.latitude,
                   "heading_deg": s.heading, "speed_mps": s.speed}
            for n in extra_names:
                obj[n] = traj.extra_channels[n][i]
            stream.write(json.dumps(obj) + "\n")
    else:
        raise ValueError(f"unknown log format {fmt!r}; expected one of {LOG_FORMATS}")


def write_camera_logs(cameras: Iterable[CameraTrajectory], directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for traj in cameras:
        with open(directory / f"{traj.camera_id}.csv", "w", newline="", encoding="utf-8") as fh:
            write_camera_log(traj, fh, "csv")


# --------------------------------------------------------------------------- checks

@dataclass(frozen=True)
class Diagnostic:
    kind: str  # "gap", "speed_spike" or "gps_jump"
    index: int  # index of the later sample of the offending pair
    timestamp: int | float
    value: float
    message: str


def validate_trajectory(traj: CameraTrajectory, max_gap_ms: float = 2000.0,
                        max_speed_mps: float = 15.0,
                        max_speed_jump_mps: float = 3.0) -> list[Diagnostic]:
    """Flag suspicious stretches of a camera log.

    Checks each consecutive pair of samples for a time gap above ``max_gap_ms``,
    a reported-speed change above ``max_speed_jump_mps`` and a GPS displacement
    implying motion faster than ``max_speed_mps``.
    """
    out = []
    for i in range(1, len(traj.samples)):
        s0, s1 = traj.samples[i - 1], traj.samples[i]
        dt_ms = s1.timestamp - s0.timestamp
        if dt_ms > max_gap_ms:
            out.append(Diagnostic("gap", i, s1.timestamp, dt_ms,
                                  f"{dt_ms} ms without samples before t={s1.timestamp}"))
        jump = abs(s1.speed - s0.speed)
        if jump > max_speed_jump_mps:
            out.append(Diagnostic("speed_spike", i, s1.timestamp, jump,
                                  f"reported speed changes by {jump:.3f} m/s at t={s1.timestamp}"))
        implied = great_circle_distance(s0.position, s1.position) / (dt_ms / 1000.0)
        if implied > max_speed_mps:
            out.append(Diagnostic("gps_jump", i, s1.timestamp, implied,
                                  f"GPS moves at {implied:.1f} m/s at t={s1.timestamp}"))
    return out

