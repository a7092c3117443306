"""Cross-camera tracklet re-identification for moving, non-overlapping cameras.

Appearance similarity between tracklets is combined with camera sensor logs
(GPS, heading, speed) to predict where and when a target shows up next, and
gallery candidates that violate that prediction are pruned before ranking.
"""

__version__ = "0.1.0"
