"""Geotag and detector CSV ingestion, bounding-box georeferencing and greedy
radius clustering of detections into spray targets."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

from .geodesy import GeoPoint, Gsd, UtmPoint, latlon_to_utm, pixel_to_world, utm_to_latlon

DEFAULT_CLUSTER_RADIUS_M = 1.0
DEFAULT_MIN_CONFIDENCE = 0.25
DEFAULT_IMAGE_SIZE = (1207, 923)


class InputError(ValueError):
    """Malformed or inconsistent input table."""


@dataclass(frozen=True)
class GeotagRecord:
    image_id: str
    topleft: GeoPoint
    altitude_m: float
    yaw_deg: float = 0.0
    gsd_m_per_px: float | None = None


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    class_label: str
    confidence: float
    bbox: tuple[float, float, float, float]  # x_min, y_min, x_max, y_max

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise InputError(f"degenerate or inverted bbox {self.bbox}")
        if min(self.bbox) < 0:
            raise InputError(f"bbox {self.bbox} has negative coordinates")
        if not 0.0 <= self.confidence <= 1.0:
            raise InputError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class SprayTarget:
    target_id: int
    location: GeoPoint
    member_count: int
    mean_confidence: float


def _open_text(src) -> TextIO:
    if isinstance(src, (str, Path)):
        return open(src, newline="")
    if isinstance(src, io.TextIOBase) or hasattr(src, "read"):
        return src
    raise TypeError(f"cannot read CSV from {type(src).__name__}")


def _rows(src, required: list[str]) -> Iterable[tuple[int, dict]]:
    f = _open_text(src)
    try:
        reader = csv.DictReader(f)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in required if c not in header]
        if missing:
            raise InputError(f"CSV header missing columns {missing}")
        reader.fieldnames = header
        for row in reader:
            if not any((v or "").strip() for v in row.values()):
                continue
            yield reader.line_num, {k: (v or "").strip() for k, v in row.items() if k is not None}
    finally:
        if f is not src:
            f.close()


def _float(row: dict, key: str, line: int) -> float:
    try:
        return float(row[key])
    except (KeyError, ValueError):
        raise InputError(f"line {line}: column {key!r} is not a number: {row.get(key)!r}") from None


def parse_geotags(src, default_yaw: float = 0.0) -> list[GeotagRecord]:
    """Read ``image_id,lat,lon,alt[,yaw][,gsd]``; lat/lon is the image's top-left corner.
    Rows without a yaw get ``default_yaw``."""
    records: list[GeotagRecord] = []
    seen: set[str] = set()
    for line, row in _rows(src, ["image_id", "lat", "lon", "alt"]):
        image_id = row["image_id"]
        if not image_id:
            raise InputError(f"line {line}: empty image_id")
        if image_id in seen:
            raise InputError(f"line {line}: duplicate image_id {image_id!r}")
        lat, lon, alt = _float(row, "lat", line), _float(row, "lon", line), _float(row, "alt", line)
        yaw = _float(row, "yaw", line) if row.get("yaw") else default_yaw
        gsd = _float(row, "gsd", line) if row.get("gsd") else None
        try:
            topleft = GeoPoint(lat, lon)
        except ValueError as exc:
            raise InputError(f"line {line}: {exc}") from None
        if not alt > 0:
            raise InputError(f"line {line}: altitude must be positive, got {alt}")
        if gsd is not None and not gsd > 0:
            raise InputError(f"line {line}: gsd must be positive, got {gsd}")
        seen.add(image_id)
        records.append(GeotagRecord(image_id, topleft, alt, yaw, gsd))
    return records


def parse_detections(src, normalized: bool = False,
                     image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE) -> list[DetectionRecord]:
    """Read corner-form boxes ``image_id,class,confidence,x_min,y_min,x_max,y_max``.

    With ``normalized=True`` the columns are instead
    ``image_id,class,confidence,x_center,y_center,width,height`` in [0, 1] units of
    ``image_size`` (width, height), as written by YOLO-style detectors.
    """
    cols = ["x_center", "y_center", "width", "height"] if normalized else ["x_min", "y_min", "x_max", "y_max"]
    w_img, h_img = image_size
    out: list[DetectionRecord] = []
    for line, row in _rows(src, ["image_id", "class", "confidence", *cols]):
        a, b, c, d = (_float(row, k, line) for k in cols)
        if normalized:
            a, b, c, d = ((a - c / 2) * w_img, (b - d / 2) * h_img, (a + c / 2) * w_img, (b + d / 2) * h_img)
        try:
            out.append(DetectionRecord(row["image_id"], row["class"], _float(row, "confidence", line), (a, b, c, d)))
        except InputError as exc:
            raise InputError(f"line {line}: {exc}") from None
    return out


def bbox_center(d: DetectionRecord) -> tuple[float, float]:
    x0, y0, x1, y1 = d.bbox
    return (x0 + x1) / 2, (y0 + y1) / 2


def resolve_gsd(g: GeotagRecord, default: Gsd | None) -> Gsd:
    # per-image value from the geotag table beats the pipeline-wide one
    if g.gsd_m_per_px is not None:
        return Gsd(g.gsd_m_per_px)
    if default is None:
        raise InputError(f"no GSD available for image {g.image_id!r}")
    return default


def georeference(d: DetectionRecord, g: GeotagRecord, gsd: Gsd | None = None,
                 zone: int | None = None) -> GeoPoint:
    if d.image_id != g.image_id:
        raise InputError(f"detection for {d.image_id!r} paired with geotag {g.image_id!r}")
    origin = latlon_to_utm(g.topleft, zone)
    col, row = bbox_center(d)
    world = pixel_to_world(origin, resolve_gsd(g, gsd), col, row, g.yaw_deg)
    return utm_to_latlon(world)


def georeference_all(detections: list[DetectionRecord], geotags: list[GeotagRecord],
                     gsd: Gsd | None = None, zone: int | None = None) -> list[GeoPoint]:
    by_id = {g.image_id: g for g in geotags}
    points = []
    for d in detections:
        g = by_id.get(d.image_id)
        if g is None:
            raise InputError(f"detection references image {d.image_id!r} with no geotag")
        points.append(georeference(d, g, gsd, zone))
    return points


def filter_confidence(detections: list[DetectionRecord],
                      min_confidence: float = DEFAULT_MIN_CONFIDENCE) -> list[DetectionRecord]:
    return [d for d in detections if d.confidence >= min_confidence]


def cluster_targets(points: list[GeoPoint], radius_m: float = DEFAULT_CLUSTER_RADIUS_M,
                    confidences: list[float] | None = None,
                    zone: int | None = None) -> list[SprayTarget]:
    """Greedy order-dependent radius clustering in the UTM plane.

    Each point joins the first cluster (in founding order) whose centroid lies
    within ``radius_m``, otherwise it founds a new cluster.
    """
    if not radius_m > 0:
        raise ValueError(f"cluster radius must be positive, got {radius_m}")
    if not points:
        return []
    if confidences is None:
        confidences = [1.0] * len(points)
    if len(confidences) != len(points):
        raise ValueError("confidences and points differ in length")
    if zone is None:
        zone = latlon_to_utm(points[0]).zone
    utm = [latlon_to_utm(p, zone) for p in points]
    hemisphere = utm[0].hemisphere

    # [sum_e, sum_n, count, sum_conf]
    clusters: list[list[float]] = []
    for u, conf in zip(utm, confidences):
        for c in clusters:
            ce, cn = c[0] / c[2], c[1] / c[2]
            if math.hypot(u.easting_m - ce, u.northing_m - cn) <= radius_m:
                c[0] += u.easting_m
                c[1] += u.northing_m
                c[2] += 1
                c[3] += conf
                break
        else:
            clusters.append([u.easting_m, u.northing_m, 1, conf])

    targets = []
    for i, (se, sn, count, sc) in enumerate(clusters):
        loc = utm_to_latlon(UtmPoint(zone, hemisphere, se / count, sn / count))
        targets.append(SprayTarget(i + 1, loc, int(count), sc / count))
    return targets


def format_targets_csv(targets: list[SprayTarget]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["target_id", "lat", "lon", "member_count", "mean_confidence"])
    for t in targets:
        w.writerow([t.target_id, f"{t.location.lat_deg:.7f}", f"{t.location.lon_deg:.7f}",
                    t.member_count, f"{t.mean_confidence:.4f}"])
    return buf.getvalue()


def parse_targets_csv(src) -> list[SprayTarget]:
    out = []
    for line, row in _rows(src, ["target_id", "lat", "lon"]):
        try:
            loc = GeoPoint(_float(row, "lat", line), _float(row, "lon", line))
        except ValueError as exc:
            raise InputError(f"line {line}: {exc}") from None
        out.append(SprayTarget(int(_float(row, "target_id", line)), loc,
                               int(_float(row, "member_count", line)) if row.get("member_count") else 1,
                               _float(row, "mean_confidence", line) if row.get("mean_confidence") else 1.0))
    return out
