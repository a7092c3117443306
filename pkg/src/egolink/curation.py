"""Dataset curation: drop heavily occluded detections, noisy tracks and short tracks."""
from __future__ import annotations

import dataclasses
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

from .errors import InvalidConfig, MissingAnnotation
from .tracks import Tracklet


@dataclass(frozen=True)
class CurationRules:
    min_frames: int = 16
    max_false_positive_fraction: float = 0.20
    max_detection_occlusion: float = 0.80
    strict: bool = False

    def __post_init__(self):
        if not isinstance(self.min_frames, int) or self.min_frames < 1:
            raise InvalidConfig(f"min_frames must be an integer >= 1, got {self.min_frames!r}")
        for name in ("max_false_positive_fraction", "max_detection_occlusion"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1], got {value!r}")

    @classmethod
    def from_dict(cls, data: Mapping) -> CurationRules:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown curation rule key(s): {sorted(unknown)}")
        return cls(**data)


@dataclass
class CurationReport:
    input_tracklets: int = 0
    output_tracklets: int = 0
    removed_short: int = 0
    removed_false_positive: int = 0
    detections_removed_occluded: int = 0
    tracklets_trimmed: int = 0
    # tracklets a rule could not be applied to because annotations were missing
    skipped_occlusion: list[str] = field(default_factory=list)
    skipped_false_positive: list[str] = field(default_factory=list)

    def __add__(self, other: CurationReport) -> CurationReport:
        return CurationReport(
            self.input_tracklets + other.input_tracklets,
            self.output_tracklets + other.output_tracklets,
            self.removed_short + other.removed_short,
            self.removed_false_positive + other.removed_false_positive,
            self.detections_removed_occluded + other.detections_removed_occluded,
            self.tracklets_trimmed + other.tracklets_trimmed,
            self.skipped_occlusion + other.skipped_occlusion,
            self.skipped_false_positive + other.skipped_false_positive,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def curate(tracklets: Iterable[Tracklet],
           rules: CurationRules = CurationRules()) -> tuple[list[Tracklet], CurationReport]:
    """Apply the curation rules in a fixed order.

    1. Detections occluded above ``max_detection_occlusion`` are dropped.
    2. Tracklets whose share of false-positive detections exceeds
       ``max_false_positive_fraction`` are dropped.
    3. Tracklets left with fewer than ``min_frames`` detections are dropped.

    Entry and exit times follow the surviving detections. A tracklet missing the
    annotation a rule needs either raises ``MissingAnnotation`` (strict rules) or
    is exempt from that rule and listed in the report.
    """
    report = CurationReport()
    kept = []
    for t in tracklets:
        report.input_tracklets += 1
        dets = t.detections

        if any(d.occluded_fraction is None for d in dets):
            if rules.strict:
                raise MissingAnnotation(f"tracklet {t.track_id!r} lacks occluded_fraction labels")
            report.skipped_occlusion.append(t.track_id)
        else:
            visible = tuple(d for d in dets if d.occluded_fraction <= rules.max_detection_occlusion)
            if len(visible) < len(dets):
                report.detections_removed_occluded += len(dets) - len(visible)
                report.tracklets_trimmed += 1
            dets = visible

        if dets:
            if any(d.is_false_positive is None for d in dets):
                if rules.strict:
                    raise MissingAnnotation(
                        f"tracklet {t.track_id!r} lacks is_false_positive labels")
                report.skipped_false_positive.append(t.track_id)
            elif sum(d.is_false_positive for d in dets) / len(dets) > rules.max_false_positive_fraction:
                report.removed_false_positive += 1
                continue

        if len(dets) < rules.min_frames:
            report.removed_short += 1
            continue

        kept.append(t if len(dets) == len(t.detections) else dataclasses.replace(t, detections=dets))
    report.output_tracklets = len(kept)
    return kept, report
