"""Spherical-earth geodesy: bearings, great-circle distances, heading comparison.

Angles are in degrees throughout. Bearings are compass bearings, clockwise from
true north, normalized to [0, 360).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DegenerateGeometry, ValidationError

EARTH_RADIUS_M = 6_371_008.8  # IUGG mean radius
COINCIDENT_TOL_DEG = 1e-12


@dataclass(frozen=True)
class GeoPoint:
    longitude: float
    latitude: float

    def __post_init__(self):
        lon, lat = self.longitude, self.latitude
        if not (math.isfinite(lon) and math.isfinite(lat)):
            raise ValidationError(f"non-finite coordinate ({lon}, {lat})")
        if not -180.0 <= lon <= 180.0:
            raise ValidationError(f"longitude {lon} outside [-180, 180]")
        if not -90.0 <= lat <= 90.0:
            raise ValidationError(f"latitude {lat} outside [-90, 90]")


def normalize_bearing(degrees: float) -> float:
    """Map any angle to [0, 360)."""
    b = math.fmod(degrees, 360.0)
    if b < 0.0:
        b += 360.0
    # -1e-17 + 360.0 rounds to 360.0
    if b >= 360.0:
        b = 0.0
    return b


def bearing(a: GeoPoint, b: GeoPoint) -> float:
    """Initial great-circle bearing from ``a`` toward ``b``.

    Raises:
        DegenerateGeometry: if the two points coincide.
    """
    if (abs(a.longitude - b.longitude) <= COINCIDENT_TOL_DEG
            and abs(a.latitude - b.latitude) <= COINCIDENT_TOL_DEG):
        raise DegenerateGeometry(f"bearing undefined between coincident points {a} and {b}")
    lam1, phi1 = math.radians(a.longitude), math.radians(a.latitude)
    lam2, phi2 = math.radians(b.longitude), math.radians(b.latitude)
    dlam = lam2 - lam1
    x = math.sin(dlam) * math.cos(phi2)
    y = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlam)
    return normalize_bearing(math.degrees(math.atan2(x, y)))


def great_circle_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Haversine distance in meters."""
    phi1, phi2 = math.radians(a.latitude), math.radians(b.latitude)
    dphi = phi2 - phi1
    dlam = math.radians(b.longitude - a.longitude)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(min(1.0, h)))


def destination(origin: GeoPoint, bearing_deg: float, distance_m: float) -> GeoPoint:
    """Point reached by travelling ``distance_m`` along a great circle from ``origin``."""
    delta = distance_m / EARTH_RADIUS_M
    theta = math.radians(bearing_deg)
    phi1, lam1 = math.radians(origin.latitude), math.radians(origin.longitude)
    sin_phi2 = math.sin(phi1) * math.cos(delta) + math.cos(phi1) * math.sin(delta) * math.cos(theta)
    phi2 = math.asin(max(-1.0, min(1.0, sin_phi2)))
    lam2 = lam1 + math.atan2(math.sin(theta) * math.sin(delta) * math.cos(phi1),
                             math.cos(delta) - math.sin(phi1) * sin_phi2)
    lon = math.degrees(lam2)
    if lon > 180.0:
        lon -= 360.0
    elif lon < -180.0:
        lon += 360.0
    return GeoPoint(lon, math.degrees(phi2))


def angular_difference(h1: float, h2: float) -> float:
    """Smallest absolute angle between two headings, in [0, 180]."""
    d = math.fmod(abs(h1 - h2), 360.0)
    return min(d, 360.0 - d)


def headings_equivalent(h1: float, h2: float, tolerance: float) -> bool:
    if not 0.0 < tolerance < 180.0:
        raise ValidationError(f"heading tolerance must lie in (0, 180), got {tolerance}")
    return angular_difference(h1, h2) <= tolerance
