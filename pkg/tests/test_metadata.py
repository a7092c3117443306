import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egolink.errors import OutOfRange, ParseError, ValidationError
from egolink.geo import GeoPoint, angular_difference, great_circle_distance
from egolink.metadata import (CameraStateSample, CameraTrajectory, load_camera_logs,
                              parse_camera_log, sample_state, serialize_camera_log,
                              validate_trajectory, write_camera_logs)

HEADER = "timestamp_ms,longitude,latitude,heading_deg,speed_mps"


def traj(*rows, camera_id="c"):
    return CameraTrajectory(camera_id, tuple(
        CameraStateSample(t, GeoPoint(lon, lat), h, v) for t, lon, lat, h, v in rows))


def circular_mean(h0, h1, frac):
    """Reference heading interpolation: rotate the unit vector along the shorter arc."""
    a0, a1 = np.radians([h0, h1])
    v0 = np.array([math.sin(a0), math.cos(a0)])
    v1 = np.array([math.sin(a1), math.cos(a1)])
    omega = math.acos(np.clip(v0 @ v1, -1, 1))
    v = (math.sin((1 - frac) * omega) * v0 + math.sin(frac * omega) * v1) / math.sin(omega)
    return math.degrees(math.atan2(v[0], v[1])) % 360.0


def test_minimal_csv():
    t = parse_camera_log(io.StringIO(f"{HEADER}\n1000,10.0,20.0,0,1.0\n2000,10.0,20.001,0,1.0\n"))
    assert len(t) == 2
    assert t.start == 1000 and t.end == 2000


def test_rows_are_sorted_and_extras_kept():
    text = f"{HEADER},gyro_x\n2000,1,2,0,1,0.5\n1000,1,2.0001,0,1,0.25\n"
    t = parse_camera_log(io.StringIO(text), camera_id="cam")
    assert [s.timestamp for s in t.samples] == [1000, 2000]
    assert t.extra_channels["gyro_x"] == ("0.25", "0.5")


def test_latitude_out_of_range_names_row():
    text = f"{HEADER}\n1000,0,0,0,1\n2000,0,91,0,1\n"
    with pytest.raises(ValidationError, match="line 3"):
        parse_camera_log(io.StringIO(text))


def test_single_row_rejected():
    with pytest.raises(ValidationError, match="at least 2"):
        parse_camera_log(io.StringIO(f"{HEADER}\n1000,0,0,0,1\n"))


@pytest.mark.parametrize("body, line", [("1000,0,0,0,1\nabc,0,0,0,1\n", 3),
                                        ("1000,0,0,0,1\n2000,0,0\n", 3),
                                        ("1000.5,0,0,0,1\n2000,0,0,0,1\n", 2)])
def test_malformed_rows_carry_line_number(body, line):
    with pytest.raises(ParseError) as info:
        parse_camera_log(io.StringIO(f"{HEADER}\n{body}"))
    assert info.value.line == line


def test_negative_speed_and_duplicates_rejected():
    with pytest.raises(ValidationError, match="negative speed"):
        parse_camera_log(io.StringIO(f"{HEADER}\n1000,0,0,0,1\n2000,0,0,0,-1\n"))
    with pytest.raises(ValidationError, match="duplicate timestamp"):
        parse_camera_log(io.StringIO(f"{HEADER}\n1000,0,0,0,1\n1000,0,0.1,0,1\n3000,0,0,0,1\n"))


def test_missing_header_column():
    with pytest.raises(ParseError, match="speed_mps"):
        parse_camera_log(io.StringIO("timestamp_ms,longitude,latitude,heading_deg\n1,0,0,0\n"))


def test_jsonl_grouped_logs(tmp_path):
    path = tmp_path / "all.jsonl"
    lines = [
        '{"camera_id": "b", "timestamp_ms": 0, "longitude": 1, "latitude": 2, "heading_deg": 5, "speed_mps": 0.5}',
        '{"camera_id": "a", "timestamp_ms": 0, "longitude": 1, "latitude": 2, "heading_deg": 5, "speed_mps": 0.5}',
        '{"camera_id": "a", "timestamp_ms": 10, "longitude": 1, "latitude": 2, "heading_deg": 5, "speed_mps": 0.5}',
        '{"camera_id": "b", "timestamp_ms": 10, "longitude": 1, "latitude": 2, "heading_deg": 5, "speed_mps": 0.5}',
    ]
    path.write_text("\n".join(lines) + "\n")
    cams = load_camera_logs(path)
    assert sorted(cams) == ["a", "b"]
    assert cams["a"].end == 10


def test_exact_hit_returns_row_verbatim():
    t = traj((0, 1, 2, 10, 1.0), (1000, 1.001, 2, 20, 2.0), (2000, 1.002, 2, 30, 3.0))
    assert sample_state(t, 1000) is t.samples[1]


def test_midpoint_speed():
    t = traj((0, 0, 0, 0, 1.0), (1000, 0, 0.0001, 0, 2.0))
    assert sample_state(t, 500).speed == 1.5


def test_midpoint_heading_across_north():
    t = traj((0, 0, 0, 350, 1.0), (1000, 0, 0.0001, 10, 1.0))
    h = sample_state(t, 500).heading
    assert angular_difference(h, 0.0) < 1e-9
    assert angular_difference(h, circular_mean(350, 10, 0.5)) < 1e-9


def test_antipodal_heading_tie_follows_previous_turn():
    # previous segment turns counter-clockwise (20 -> 10), so 10 -> 190 goes through 100 ccw = 280
    t = traj((0, 0, 0, 20, 1), (1000, 0, 0.0001, 10, 1), (2000, 0, 0.0002, 190, 1))
    assert angular_difference(sample_state(t, 1500).heading, 280.0) < 1e-9
    t = traj((0, 0, 0, 0, 1), (1000, 0, 0.0001, 10, 1), (2000, 0, 0.0002, 190, 1))
    assert angular_difference(sample_state(t, 1500).heading, 100.0) < 1e-9
    # no earlier segment: clockwise
    t = traj((0, 0, 0, 10, 1), (1000, 0, 0.0001, 190, 1))
    assert angular_difference(sample_state(t, 500).heading, 100.0) < 1e-9


def test_out_of_range_time():
    t = traj((0, 0, 0, 0, 1), (1000, 0, 0.0001, 0, 1))
    with pytest.raises(OutOfRange):
        sample_state(t, 1001)
    with pytest.raises(OutOfRange):
        sample_state(t, -1)


@given(st.floats(0, 359.99), st.floats(0, 359.99), st.floats(0.0, 1.0))
def test_interpolated_heading_on_shorter_arc(h0, h1, frac):
    if abs(angular_difference(h0, h1) - 180.0) < 1e-6 or angular_difference(h0, h1) < 1e-6:
        return
    t = traj((0, 0, 0, h0, 1), (1_000_000, 0, 0.0001, h1, 1))
    h = sample_state(t, frac * 1_000_000).heading
    arc = angular_difference(h0, h1)
    assert angular_difference(h0, h) + angular_difference(h, h1) == pytest.approx(arc, abs=1e-6)
    assert angular_difference(h, circular_mean(h0, h1, frac)) < 1e-6 * max(1.0, arc)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(1, 5000), st.floats(-0.001, 0.001), st.floats(-0.001, 0.001),
                          st.floats(0, 359), st.floats(0, 10)), min_size=2, max_size=8),
       st.floats(0, 1))
def test_sample_state_is_continuous(rows, frac):
    t_ms, samples = 0, []
    for dt, dlon, dlat, h, v in rows:
        t_ms += dt
        samples.append((t_ms, 10 + dlon, 45 + dlat, h, v))
    t = traj(*samples)
    at = t.start + frac * (t.end - t.start - 1)
    a, b = sample_state(t, at), sample_state(t, at + 1)
    fastest = max(great_circle_distance(p.position, q.position) / (q.timestamp - p.timestamp)
                  for p, q in zip(t.samples, t.samples[1:]))  # meters per ms
    assert great_circle_distance(a.position, b.position) <= 1.01 * fastest + 1e-6


def test_csv_round_trip():
    t = traj((0, -81.2, 28.6, 0.0, 0.5), (50, -81.2000001, 28.6000003, 359.5, 0.7))
    again = parse_camera_log(io.StringIO(serialize_camera_log(t)), camera_id="c")
    assert again == t
    jl = parse_camera_log(io.StringIO(serialize_camera_log(t, "jsonl")), fmt="jsonl")
    assert jl == t


def test_directory_round_trip(tmp_path):
    cams = [traj((0, 1, 1, 0, 0), (10, 1, 1, 0, 0), camera_id="x"),
            traj((0, 2, 2, 0, 0), (10, 2, 2, 0, 0), camera_id="y")]
    write_camera_logs(cams, tmp_path)
    loaded = load_camera_logs(tmp_path)
    assert loaded == {"x": cams[0], "y": cams[1]}


def test_validate_clean_trajectory():
    t = traj(*[(k * 1000, 0, k * 1e-5, 0, 1.1) for k in range(10)])
    assert validate_trajectory(t) == []


def test_validate_gap():
    t = traj((0, 0, 0, 0, 1), (1000, 0, 1e-5, 0, 1), (11_000, 0, 2e-5, 0, 1))
    kinds = [d.kind for d in validate_trajectory(t, max_gap_ms=2000)]
    assert kinds == ["gap"]


def test_validate_gps_jump():
    far = 100.0 / 111_195.08023353291  # 100 m north in degrees
    t = traj((0, 0, 0, 0, 1), (1000, 0, far, 0, 1))
    diags = validate_trajectory(t)
    assert [d.kind for d in diags] == ["gps_jump"]
    assert diags[0].value == pytest.approx(100.0, rel=1e-6)
