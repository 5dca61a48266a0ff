"""Synthetic fixtures: a small geotagged farm with planted plant clusters, and
a multispectral band set with a reflectance-panel capture."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .geodesy import GeoPoint, Gsd, UtmPoint, latlon_to_utm, pixel_offset, utm_to_latlon, world_to_pixel
from .radiometry import BandMeta, RawBandImage, save_band

# ten hand-surveyed plant locations from a volunteer-cotton field trial (4-5 dp)
FIELD_TRIAL_POINTS = [
    GeoPoint(30.5343, -96.4312),
    GeoPoint(30.53431, -96.4301),
    GeoPoint(30.53492, -96.4303),
    GeoPoint(30.53386, -96.4299),
    GeoPoint(30.53531, -96.4289),
    GeoPoint(30.53484, -96.4299),
    GeoPoint(30.53687, -96.4284),
    GeoPoint(30.53537, -96.4289),
    GeoPoint(30.5359, -96.4283),
    GeoPoint(30.53321, -96.4298),
]
# the visiting order reported for that trial, as indices into FIELD_TRIAL_POINTS
FIELD_TRIAL_ORDER = (6, 8, 9, 3, 1, 2, 0, 5, 7, 4)

FARM_ORIGIN = GeoPoint(30.534351, -96.431239)
FARM_GSD = 0.0034
FRAME_SIZE = (1207, 923)
FARM_ALT_M = 4.6

# frame top-left offsets (east, north) from the farm origin in metres, and yaw;
# the third frame is flown on the return leg, so its top-left is the south edge
FRAMES = [
    ("IMG_0001", (0.0, 0.0), 0.0),
    ("IMG_0002", (0.0, -2.6), 0.0),
    ("IMG_0003", (4.0, -8.3), 180.0),
]

# cluster centres (east, north) in metres from the farm origin, and per-plant offsets
CLUSTERS = [
    ((1.0, -1.0), [(0.0, 0.0), (0.15, 0.05)]),
    ((3.2, -2.85), [(0.0, 0.05), (0.1, -0.05)]),  # inside the IMG_0001/IMG_0002 overlap
    ((1.5, -4.4), [(0.0, 0.0), (-0.12, 0.0)]),
    ((2.0, -7.5), [(0.0, 0.0), (0.08, 0.1)]),
]


@dataclass(frozen=True)
class Farm:
    directory: Path
    config_path: Path
    truth: list[GeoPoint]  # one per planted cluster, founding order
    n_detections: int


def _in_frame(col: float, row: float, half: float) -> bool:
    w, h = FRAME_SIZE
    return half <= col <= w - half and half <= row <= h - half


def make_farm(directory: str | Path, confidence_seed: int = 7) -> Farm:
    """Write geotags.csv, detections.csv and config.yaml into ``directory``.

    Every plant is detected in each frame that contains it, so plants in frame
    overlaps produce duplicate detections.  Ground truth per cluster is the mean
    world position of that cluster's detections.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(confidence_seed)
    gsd = Gsd(FARM_GSD)
    origin = latlon_to_utm(FARM_ORIGIN, 14)

    frames = []
    for image_id, (de, dn), yaw in FRAMES:
        tl = utm_to_latlon(UtmPoint(14, "north", origin.easting_m + de, origin.northing_m + dn))
        frames.append((image_id, tl, yaw))

    half_box = 20  # px
    detections = []
    truth = []
    for (ce, cn), plants in CLUSTERS:
        members = []
        for oe, on in plants:
            world = UtmPoint(14, "north", origin.easting_m + ce + oe, origin.northing_m + cn + on)
            for image_id, tl, yaw in frames:
                col, row = world_to_pixel(latlon_to_utm(tl, 14), gsd, world, yaw)
                if not _in_frame(col, row, half_box):
                    continue
                c, r = round(col), round(row)
                detections.append((image_id, c - half_box, r - half_box, c + half_box, r + half_box,
                                   round(float(rng.uniform(0.5, 0.95)), 3)))
                # the georeferenced centre is the integer pixel, so truth uses it too
                de, dn = pixel_offset(c, r, gsd, yaw)
                o = latlon_to_utm(tl, 14)
                members.append((o.easting_m + de, o.northing_m + dn))
        m = np.mean(members, axis=0)
        truth.append(utm_to_latlon(UtmPoint(14, "north", float(m[0]), float(m[1]))))

    with open(directory / "geotags.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["image_id", "lat", "lon", "alt", "yaw", "gsd"])
        for image_id, tl, yaw in frames:
            w.writerow([image_id, f"{tl.lat_deg:.9f}", f"{tl.lon_deg:.9f}", FARM_ALT_M, yaw, FARM_GSD])
    with open(directory / "detections.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["image_id", "class", "confidence", "x_min", "y_min", "x_max", "y_max"])
        for image_id, x0, y0, x1, y1, conf in detections:
            w.writerow([image_id, "vc", conf, x0, y0, x1, y1])

    cfg = {
        "paths": {"geotags": "geotags.csv", "detections": "detections.csv", "out": "out"},
        "geodesy": {"forced_zone": 14, "gsd_m_per_px": FARM_GSD},
        "clustering": {"radius_m": 1.0, "min_confidence": 0.25},
        "aco": {"seed": 1},
        "mission": {"alt_m": 4.6, "dwell_s": 2.0, "speed_mps": 2.0},
    }
    config_path = directory / "config.yaml"
    config_path.write_text(yaml.safe_dump(cfg, sort_keys=False))
    return Farm(directory, config_path, truth, len(detections))


def make_band_set(directory: str | Path, size: int = 64, seed: int = 3,
                  bands=("red", "green", "blue")) -> dict:
    """Write a panel capture and one scene capture per band (16-bit PNG + JSON
    sidecar). Returns the ``paths.bands`` / ``radiometry`` config fragment."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    panel_region = [size // 4, size // 4, 3 * size // 4, 3 * size // 4]
    panel_paths, capture = {}, {"id": "IMG_0001"}
    for i, band in enumerate(bands):
        meta = BandMeta(gain=1.0 + i, exposure_s=0.002 * (i + 1), black_level=4096.0,
                        a1=0.5, a2=1e-5, a3=1e-4)
        panel = np.full((size, size), 6000.0)
        x0, y0, x1, y1 = panel_region
        panel[y0:y1, x0:x1] = 30000.0 + 500.0 * i
        panel += rng.normal(0, 50, panel.shape)
        scene = 12000.0 + 4000.0 * np.sin(xx / 7.0 + i) * np.cos(yy / 9.0) + rng.normal(0, 100, (size, size))
        for name, arr, store in (("panel", panel, panel_paths), ("scene", scene, capture)):
            path = directory / f"{name}_{band}.png"
            save_band(path, RawBandImage(band, np.clip(arr, 0, 65535).astype(np.int64), 16, meta))
            store[band] = path.name
    return {
        "paths": {"bands": {"panel": panel_paths, "captures": [capture]}},
        "radiometry": {"panel_region": panel_region, "band_offsets": {"green": [1, 0], "blue": [0, 1]}},
    }
