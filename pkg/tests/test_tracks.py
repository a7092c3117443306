import io
import json

import numpy as np
import pytest
from conftest import T0, make_tracklet, straight_camera
from hypothesis import given
from hypothesis import strategies as st

from egolink.errors import InsufficientData, OutOfRange, ParseError, ValidationError
from egolink.geo import GeoPoint, angular_difference
from egolink.metadata import sample_state
from egolink.tracks import (Detection, MotionDirection, RegionFeatures, Tracklet,
                            infer_motion_direction, infer_target_kinematics, parse_tracklets,
                            read_tracklets, write_tracklets)


def with_heights(heights, step_ms=100):
    dets = tuple(Detection(T0 + k * step_ms, (0, 0, 10, h)) for k, h in enumerate(heights))
    return Tracklet("t", "c", dets, RegionFeatures(gf=[1.0, 0.0]))


@pytest.mark.parametrize("heights, expected", [
    ([100, 120, 140], MotionDirection.TOWARD_CAMERA),
    ([140, 120, 100], MotionDirection.AWAY_FROM_CAMERA),
    ([100, 100, 100], MotionDirection.AWAY_FROM_CAMERA),
])
def test_motion_direction_examples(heights, expected):
    assert infer_motion_direction(with_heights(heights)) is expected


def test_motion_direction_needs_two_detections():
    with pytest.raises(InsufficientData):
        infer_motion_direction(with_heights([100]))


@given(st.lists(st.floats(1, 1000), min_size=2, max_size=20))
def test_reversal_flips_direction(heights):
    fwd = with_heights(heights)
    back = with_heights(heights[::-1])
    ts = np.array([d.timestamp for d in fwd.detections], dtype=float)
    slope = np.polyfit(ts - ts.mean(), np.array(heights), 1)[0]
    if abs(slope) < 1e-9:
        return
    assert infer_motion_direction(fwd) is not infer_motion_direction(back)


@pytest.mark.parametrize("growing, expected", [(False, 90.0), (True, 270.0)])
def test_target_heading_from_camera(growing, expected):
    cam = straight_camera("c", GeoPoint(0, 0), 90.0, 0.5)
    t = make_tracklet("t", "c", T0 + 5000, growing=growing)
    kin = infer_target_kinematics(t, cam)
    assert kin.heading == expected
    assert kin.speed == 1.3
    assert kin.position == sample_state(cam, t.exit_time).position


def test_kinematics_out_of_range():
    cam = straight_camera("c", GeoPoint(0, 0), 90.0, 0.5, duration_ms=1000)
    with pytest.raises(OutOfRange):
        infer_target_kinematics(make_tracklet("t", "c", T0 + 5000), cam)


@given(st.floats(0, 359.9), st.booleans(), st.integers(1000, 500_000))
def test_kinematics_heading_is_camera_or_reverse(heading, growing, entry):
    cam = straight_camera("c", GeoPoint(5, 5), heading, 1.0)
    t = make_tracklet("t", "c", T0 + entry, growing=growing)
    kin = infer_target_kinematics(t, cam)
    cam_heading = sample_state(cam, t.exit_time).heading
    assert angular_difference(kin.heading, cam_heading) in (0.0, 180.0) or \
        abs(angular_difference(kin.heading, cam_heading) - 180.0) < 1e-12


def test_region_features_validation():
    with pytest.raises(ValidationError):
        RegionFeatures()
    with pytest.raises(ValidationError):
        RegionFeatures(gf=[1, 2], fb=[1, 2, 3])
    f = RegionFeatures(ub=[1, 2])
    assert f.present == ("ub",) and f.dim == 2
    with pytest.raises(ValueError):
        f.ub[0] = 5.0


def test_detection_and_tracklet_invariants():
    with pytest.raises(ValidationError):
        Detection(0, (0, 0, 0, 10))
    with pytest.raises(ValidationError):
        Detection(0, (0, 0, 10, 10), occluded_fraction=1.5)
    dets = (Detection(10, (0, 0, 1, 1)), Detection(10, (0, 0, 1, 1)))
    with pytest.raises(ValidationError):
        Tracklet("t", "c", dets, RegionFeatures(gf=[1.0]))
    with pytest.raises(ValidationError):
        Tracklet("t", "c", (), RegionFeatures(gf=[1.0]))
    t = make_tracklet("t", "c", 1000, n=5, step_ms=10)
    assert (t.entry_time, t.exit_time) == (1000, 1040)


def test_jsonl_round_trip(tmp_path):
    a = make_tracklet("a", "c1", 1000, person_id="p1", occluded_fraction=0.1, is_false_positive=False)
    b = Tracklet("b", "c2", (Detection(5, (1.5, 2, 3, 4)),), RegionFeatures(fb=[0.25, -1.0]))
    path = tmp_path / "t.jsonl"
    write_tracklets([a, b], path)
    assert read_tracklets(path) == [a, b]
    record = json.loads(path.read_text().splitlines()[1])
    assert "person_id" not in record and set(record["features"]) == {"fb"}


def test_jsonl_errors_carry_line():
    good = '{"track_id": "a", "camera_id": "c", "detections": [{"t_ms": 1, "bbox": [0,0,1,1]}], "features": {"gf": [1]}}'
    with pytest.raises(ParseError) as info:
        parse_tracklets(io.StringIO(good + "\n{not json\n"))
    assert info.value.line == 2
    with pytest.raises(ParseError) as info:
        parse_tracklets(io.StringIO(good.replace('"gf"', '"xx"') + "\n"))
    assert info.value.line == 1
