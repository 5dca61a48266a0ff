"""WGS84 / UTM conversion, ground sampling distance and pixel-to-world mapping.

The projection uses the 6th-order Krueger series (Karney 2011 formulation),
which is accurate to a few nanometres inside a UTM zone.  All projection
helpers accept scalars or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# WGS84 ellipsoid
WGS84_A = 6378137.0
WGS84_F = 1 / 298.257223563

UTM_K0 = 0.9996
UTM_FALSE_EASTING = 500000.0
UTM_FALSE_NORTHING_SOUTH = 10000000.0
MAX_ABS_LAT = 84.0

_N = WGS84_F / (2 - WGS84_F)
_E = math.sqrt(WGS84_F * (2 - WGS84_F))
_RECTIFYING_A = WGS84_A / (1 + _N) * (1 + _N**2 / 4 + _N**4 / 64 + _N**6 / 256)


def _series(coeffs: list[list[tuple[int, int]]]) -> np.ndarray:
    # each row: [(numerator, denominator) for powers n^1..n^6]
    out = []
    for row in coeffs:
        out.append(sum(num / den * _N ** (k + 1) for k, (num, den) in enumerate(row)))
    return np.array(out)


_ALPHA = _series([
    [(1, 2), (-2, 3), (5, 16), (41, 180), (-127, 288), (7891, 37800)],
    [(0, 1), (13, 48), (-3, 5), (557, 1440), (281, 630), (-1983433, 1935360)],
    [(0, 1), (0, 1), (61, 240), (-103, 140), (15061, 26880), (167603, 181440)],
    [(0, 1), (0, 1), (0, 1), (49561, 161280), (-179, 168), (6601661, 7257600)],
    [(0, 1), (0, 1), (0, 1), (0, 1), (34729, 80640), (-3418889, 1995840)],
    [(0, 1), (0, 1), (0, 1), (0, 1), (0, 1), (212378941, 319334400)],
])

_BETA = _series([
    [(1, 2), (-2, 3), (37, 96), (-1, 360), (-81, 512), (96199, 604800)],
    [(0, 1), (1, 48), (1, 15), (-437, 1440), (46, 105), (-1118711, 3870720)],
    [(0, 1), (0, 1), (17, 480), (-37, 840), (-209, 4480), (5569, 90720)],
    [(0, 1), (0, 1), (0, 1), (4397, 161280), (-11, 504), (-830251, 7257600)],
    [(0, 1), (0, 1), (0, 1), (0, 1), (4583, 161280), (-108847, 3991680)],
    [(0, 1), (0, 1), (0, 1), (0, 1), (0, 1), (20648693, 638668800)],
])

_J2 = 2 * np.arange(1, 7)


@dataclass(frozen=True)
class GeoPoint:
    lat_deg: float
    lon_deg: float
    alt_m: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.lat_deg <= 90.0:
            raise ValueError(f"latitude {self.lat_deg} outside [-90, 90]")
        if not -180.0 <= self.lon_deg <= 180.0:
            raise ValueError(f"longitude {self.lon_deg} outside [-180, 180]")


@dataclass(frozen=True)
class UtmPoint:
    zone: int
    hemisphere: str  # "north" | "south"
    easting_m: float
    northing_m: float

    def __post_init__(self):
        if not 1 <= self.zone <= 60:
            raise ValueError(f"UTM zone {self.zone} outside 1..60")
        if self.hemisphere not in ("north", "south"):
            raise ValueError(f"hemisphere must be 'north' or 'south', got {self.hemisphere!r}")
        if not 100000.0 < self.easting_m < 900000.0:
            raise ValueError(f"easting {self.easting_m} outside (100000, 900000)")
        if not 0.0 <= self.northing_m < 10000000.0:
            raise ValueError(f"northing {self.northing_m} outside [0, 10000000)")


@dataclass(frozen=True)
class CameraModel:
    focal_length_m: float
    pixel_pitch_m: float
    width_px: int
    height_px: int

    def __post_init__(self):
        if min(self.focal_length_m, self.pixel_pitch_m) <= 0:
            raise ValueError("focal length and pixel pitch must be positive")
        if not (isinstance(self.width_px, int) and isinstance(self.height_px, int)):
            raise TypeError("image dimensions must be integers")
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("image dimensions must be positive")


@dataclass(frozen=True)
class Gsd:
    meters_per_pixel: float

    def __post_init__(self):
        if not self.meters_per_pixel > 0:
            raise ValueError(f"GSD must be positive, got {self.meters_per_pixel}")


def utm_zone(lat_deg: float, lon_deg: float) -> int:
    """Standard UTM zone number, including the Norway and Svalbard exceptions."""
    if lon_deg >= 180.0:
        lon_deg -= 360.0
    zone = int(math.floor((lon_deg + 180.0) / 6.0)) + 1
    if 56.0 <= lat_deg < 64.0 and 3.0 <= lon_deg < 12.0:
        return 32
    if 72.0 <= lat_deg < 84.0 and lon_deg >= 0.0:
        if lon_deg < 9.0:
            return 31
        if lon_deg < 21.0:
            return 33
        if lon_deg < 33.0:
            return 35
        if lon_deg < 42.0:
            return 37
    return zone


def central_meridian(zone: int) -> float:
    return 6.0 * zone - 183.0


def project(lat_deg, lon_deg, zone: int):
    """Forward transverse Mercator for a UTM zone. Returns (easting, northing) without
    the southern false northing."""
    phi = np.radians(lat_deg)
    lam = np.radians(np.asarray(lon_deg, dtype=float) - central_meridian(zone))
    sin_phi = np.sin(phi)
    t = np.sinh(np.arctanh(sin_phi) - _E * np.arctanh(_E * sin_phi))
    xi_p = np.arctan2(t, np.cos(lam))
    eta_p = np.arctanh(np.sin(lam) / np.sqrt(1 + t * t))
    xi_p_ = np.expand_dims(xi_p, -1)
    eta_p_ = np.expand_dims(eta_p, -1)
    xi = xi_p + np.sum(_ALPHA * np.sin(_J2 * xi_p_) * np.cosh(_J2 * eta_p_), axis=-1)
    eta = eta_p + np.sum(_ALPHA * np.cos(_J2 * xi_p_) * np.sinh(_J2 * eta_p_), axis=-1)
    easting = UTM_FALSE_EASTING + UTM_K0 * _RECTIFYING_A * eta
    northing = UTM_K0 * _RECTIFYING_A * xi
    return easting, northing


def unproject(easting, northing, zone: int):
    """Inverse of :func:`project`. Returns (lat_deg, lon_deg)."""
    xi = np.asarray(northing, dtype=float) / (UTM_K0 * _RECTIFYING_A)
    eta = (np.asarray(easting, dtype=float) - UTM_FALSE_EASTING) / (UTM_K0 * _RECTIFYING_A)
    xi_ = np.expand_dims(xi, -1)
    eta_ = np.expand_dims(eta, -1)
    xi_p = xi - np.sum(_BETA * np.sin(_J2 * xi_) * np.cosh(_J2 * eta_), axis=-1)
    eta_p = eta - np.sum(_BETA * np.cos(_J2 * xi_) * np.sinh(_J2 * eta_), axis=-1)
    sinh_eta = np.sinh(eta_p)
    cos_xi = np.cos(xi_p)
    tau_p = np.sin(xi_p) / np.hypot(sinh_eta, cos_xi)
    lam = np.arctan2(sinh_eta, cos_xi)

    # Newton iteration for tau = tan(phi) from the conformal tau'
    e2m = 1 - _E * _E
    tau = tau_p.copy() if isinstance(tau_p, np.ndarray) else tau_p
    for _ in range(5):
        sqrt1 = np.sqrt(1 + tau * tau)
        sigma = np.sinh(_E * np.arctanh(_E * tau / sqrt1))
        tau_i = tau * np.sqrt(1 + sigma * sigma) - sigma * sqrt1
        tau = tau + (tau_p - tau_i) / np.sqrt(1 + tau_i * tau_i) * (1 + e2m * tau * tau) / (e2m * sqrt1)
    lat = np.degrees(np.arctan(tau))
    lon = np.degrees(lam) + central_meridian(zone)
    return lat, lon


def latlon_to_utm(p: GeoPoint, zone: int | None = None) -> UtmPoint:
    """Project a WGS84 point to UTM. ``zone`` forces the zone (e.g. 14)."""
    if abs(p.lat_deg) >= MAX_ABS_LAT:
        raise ValueError(f"latitude {p.lat_deg} outside UTM range (|lat| < {MAX_ABS_LAT})")
    if zone is None:
        zone = utm_zone(p.lat_deg, p.lon_deg)
    e, n = project(p.lat_deg, p.lon_deg, zone)
    hemisphere = "north"
    # latitudes a hair below the equator would round onto the southern 10 000 km line
    if p.lat_deg < 0 and n + UTM_FALSE_NORTHING_SOUTH < UTM_FALSE_NORTHING_SOUTH:
        hemisphere = "south"
        n = n + UTM_FALSE_NORTHING_SOUTH
    else:
        n = max(n, 0.0)
    return UtmPoint(zone, hemisphere, float(e), float(n))


def utm_to_latlon(u: UtmPoint, alt_m: float = 0.0) -> GeoPoint:
    n = u.northing_m
    if u.hemisphere == "south":
        n = n - UTM_FALSE_NORTHING_SOUTH
    lat, lon = unproject(u.easting_m, n, u.zone)
    lon = float(lon)
    # wrap for zones touching the antimeridian
    if lon > 180.0:
        lon -= 360.0
    elif lon < -180.0:
        lon += 360.0
    return GeoPoint(float(lat), lon, alt_m)


def compute_gsd(cam: CameraModel, altitude_m: float) -> Gsd:
    if not altitude_m > 0:
        raise ValueError(f"altitude must be positive, got {altitude_m}")
    return Gsd(cam.pixel_pitch_m * altitude_m / cam.focal_length_m)


def pixel_offset(col: float, row: float, gsd: Gsd, yaw_deg: float = 0.0) -> tuple[float, float]:
    """Ground (east, north) offset in metres of pixel (col, row) from the image's
    top-left corner. Yaw is the image-up heading, clockwise from north."""
    g = gsd.meters_per_pixel
    psi = math.radians(yaw_deg)
    c, s = math.cos(psi), math.sin(psi)
    dx, dy = col * g, -row * g
    return dx * c + dy * s, -dx * s + dy * c


def pixel_to_world(origin_topleft: UtmPoint, gsd: Gsd, col: float, row: float,
                   yaw_deg: float = 0.0) -> UtmPoint:
    if col < 0 or row < 0:
        raise ValueError(f"negative pixel index ({col}, {row})")
    de, dn = pixel_offset(col, row, gsd, yaw_deg)
    return UtmPoint(origin_topleft.zone, origin_topleft.hemisphere,
                    origin_topleft.easting_m + de, origin_topleft.northing_m + dn)


def world_to_pixel(origin_topleft: UtmPoint, gsd: Gsd, point: UtmPoint,
                   yaw_deg: float = 0.0) -> tuple[float, float]:
    """Inverse of :func:`pixel_to_world`; may return out-of-frame or negative pixels."""
    if point.zone != origin_topleft.zone:
        raise ValueError("points are in different UTM zones")
    de = point.easting_m - origin_topleft.easting_m
    dn = point.northing_m - origin_topleft.northing_m
    psi = math.radians(yaw_deg)
    c, s = math.cos(psi), math.sin(psi)
    dx = de * c - dn * s
    dy = de * s + dn * c
    g = gsd.meters_per_pixel
    return dx / g, -dy / g
