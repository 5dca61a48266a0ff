"""Raw multispectral counts -> radiance -> reflectance, plus the enhancement chain
(unsharp mask, gamma) and 8-bit RGB composition.

Band rasters are single-band 16-bit images; each raster ``X.png`` carries a JSON
sidecar ``X.json`` with its radiometric metadata.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

BANDS = ("blue", "green", "red", "nir", "rededge")

# factory reflectance of the calibration panel used at the study site
DEFAULT_PANEL_REFLECTANCE = {"blue": 0.60, "green": 0.61, "red": 0.61, "nir": 0.60, "rededge": 0.56}

DEFAULT_GAMMA = 2.2
DEFAULT_UNSHARP_AMOUNT = 1.0
DEFAULT_UNSHARP_RADIUS_PX = 2.0

REFLECTANCE_TOLERATED_MAX = 1.5


class RadiometryError(ValueError):
    pass


@dataclass(frozen=True)
class VignetteModel:
    """Radial polynomial correction ``V(r) = 1 + k1*r + k2*r^2 + ...`` about (cx, cy)."""
    coeffs: tuple[float, ...]
    center_x: float
    center_y: float

    def factor(self, height: int, width: int) -> np.ndarray:
        y, x = np.mgrid[0:height, 0:width]
        r = np.hypot(x - self.center_x, y - self.center_y)
        v = np.ones_like(r, dtype=float)
        for k, c in enumerate(self.coeffs, start=1):
            v += c * r**k
        return v


@dataclass(frozen=True)
class BandMeta:
    gain: float
    exposure_s: float
    black_level: float = 0.0
    a1: float | None = None
    a2: float | None = None
    a3: float | None = None
    vignette: VignetteModel | None = None

    def __post_init__(self):
        if not self.gain > 0:
            raise RadiometryError(f"gain must be positive, got {self.gain}")
        if not self.exposure_s > 0:
            raise RadiometryError(f"exposure_s must be positive, got {self.exposure_s}")

    @property
    def has_sensor_model(self) -> bool:
        return None not in (self.a1, self.a2, self.a3)

    @classmethod
    def from_dict(cls, d: dict) -> BandMeta:
        for key in ("gain", "exposure_s"):
            if key not in d:
                raise RadiometryError(f"metadata missing required key {key!r}")
        vig = None
        if d.get("vignette"):
            v = d["vignette"]
            vig = VignetteModel(tuple(float(c) for c in v["coeffs"]), float(v["center_x"]), float(v["center_y"]))
        coeffs = [d.get(k) for k in ("a1", "a2", "a3")]
        if any(c is not None for c in coeffs) and any(c is None for c in coeffs):
            raise RadiometryError("radiometric coefficients a1, a2, a3 must be given together")
        return cls(gain=float(d["gain"]), exposure_s=float(d["exposure_s"]),
                   black_level=float(d.get("black_level", 0.0)),
                   a1=None if coeffs[0] is None else float(coeffs[0]),
                   a2=None if coeffs[1] is None else float(coeffs[1]),
                   a3=None if coeffs[2] is None else float(coeffs[2]),
                   vignette=vig)


@dataclass
class RawBandImage:
    band: str
    pixels: np.ndarray  # (height, width) integer counts
    bit_depth: int
    meta: BandMeta

    def __post_init__(self):
        if self.band not in BANDS:
            raise RadiometryError(f"unknown band {self.band!r}")
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 2:
            raise RadiometryError("band image must be 2-D")
        if self.pixels.size and (self.pixels.min() < 0 or self.pixels.max() >= 2**self.bit_depth):
            raise RadiometryError(f"pixel values outside [0, 2^{self.bit_depth})")

    @property
    def height_px(self) -> int:
        return self.pixels.shape[0]

    @property
    def width_px(self) -> int:
        return self.pixels.shape[1]


@dataclass
class RadianceImage:
    band: str
    pixels: np.ndarray


@dataclass
class ReflectanceImage:
    band: str
    pixels: np.ndarray


@dataclass(frozen=True)
class ReflectancePanel:
    band_reflectance: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_PANEL_REFLECTANCE))

    def __post_init__(self):
        for band, value in self.band_reflectance.items():
            if not 0 < value <= 1:
                raise RadiometryError(f"panel reflectance for {band} must be in (0, 1], got {value}")


def raw_to_radiance(img: RawBandImage) -> RadianceImage:
    m = img.meta
    scale = float(2**img.bit_depth)
    p_norm = img.pixels.astype(float) / scale
    bl_norm = m.black_level / scale
    if not m.has_sensor_model:
        return RadianceImage(img.band, np.clip((p_norm - bl_norm) / (m.gain * m.exposure_s), 0, None))

    y = np.arange(img.height_px, dtype=float)[:, None]
    denom = m.exposure_s + m.a2 * y - m.a3 * m.exposure_s * y
    if np.any(denom <= 0):
        raise RadiometryError(f"{img.band}: row-gradient denominator is non-positive; check a2/a3/exposure")
    v = m.vignette.factor(img.height_px, img.width_px) if m.vignette else 1.0
    radiance = v * (m.a1 / m.gain) * (p_norm - bl_norm) / denom
    return RadianceImage(img.band, np.clip(radiance, 0, None))


def panel_factor(panel_img: RadianceImage, panel_region: tuple[int, int, int, int],
                 panel: ReflectancePanel) -> float:
    """Radiance-to-reflectance factor from a panel capture.

    ``panel_region`` is ``(x_min, y_min, x_max, y_max)``, half-open in pixels.
    """
    x0, y0, x1, y1 = panel_region
    h, w = panel_img.pixels.shape
    if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
        raise RadiometryError(f"panel region {panel_region} not inside {w}x{h} image")
    if panel_img.band not in panel.band_reflectance:
        raise RadiometryError(f"no panel reflectance for band {panel_img.band!r}")
    mean = float(panel_img.pixels[y0:y1, x0:x1].mean())
    if not mean > 0:
        raise RadiometryError(f"mean panel radiance is {mean}; panel capture unusable")
    return panel.band_reflectance[panel_img.band] / mean


def radiance_to_reflectance(img: RadianceImage, factor: float) -> ReflectanceImage:
    if not factor > 0:
        raise RadiometryError(f"reflectance factor must be positive, got {factor}")
    return ReflectanceImage(img.band, img.pixels * factor)


def unsharp_mask(img: ReflectanceImage, amount: float = DEFAULT_UNSHARP_AMOUNT,
                 radius_px: float = DEFAULT_UNSHARP_RADIUS_PX) -> ReflectanceImage:
    # Gaussian low-pass with sigma = radius/2 truncated at 3 sigma, replicated borders
    if amount < 0 or radius_px < 1:
        raise RadiometryError("unsharp mask needs amount >= 0 and radius_px >= 1")
    src = img.pixels.astype(float)
    # high-pass of deviations from one pixel; unit-sum kernel, so constants give exactly zero
    dev = src - src.flat[0] if src.size else src
    blurred = ndimage.gaussian_filter(dev, sigma=radius_px / 2.0, mode="nearest", truncate=3.0)
    return ReflectanceImage(img.band, src + amount * (dev - blurred))


def gamma_correct(img, gamma: float = DEFAULT_GAMMA):
    """``out = clip(in, 0, 1) ** (1 / gamma)``; accepts an image object or an array."""
    if not gamma > 0:
        raise RadiometryError(f"gamma must be positive, got {gamma}")
    if isinstance(img, np.ndarray):
        return np.clip(img, 0.0, 1.0) ** (1.0 / gamma)
    return type(img)(img.band, np.clip(img.pixels, 0.0, 1.0) ** (1.0 / gamma))


def _translate_crop(arrays: list[np.ndarray], offsets: list[tuple[int, int]]) -> list[np.ndarray]:
    # out[y, x] = band[y + dy, x + dx]; crop to the region every band covers
    h, w = arrays[0].shape
    dxs = [o[0] for o in offsets]
    dys = [o[1] for o in offsets]
    x_lo, x_hi = max(0, -min(dxs)), min(w, w - max(dxs))
    y_lo, y_hi = max(0, -min(dys)), min(h, h - max(dys))
    if x_hi <= x_lo or y_hi <= y_lo:
        raise RadiometryError(f"band offsets {offsets} leave no overlap in a {w}x{h} image")
    return [a[y_lo + dy:y_hi + dy, x_lo + dx:x_hi + dx] for a, (dx, dy) in zip(arrays, offsets)]


def compose_rgb(red: ReflectanceImage, green: ReflectanceImage, blue: ReflectanceImage,
                offsets: dict[str, tuple[int, int]] | None = None) -> np.ndarray:
    """Stack three bands into an (H, W, 3) uint8 image.

    ``offsets`` maps band name to an integer ``(dx, dy)`` translation; output pixel
    (x, y) of a band samples its source at (x + dx, y + dy).
    """
    bands = [red, green, blue]
    shapes = {b.pixels.shape for b in bands}
    if len(shapes) != 1:
        raise RadiometryError(f"band shapes differ: {sorted(shapes)}")
    offsets = offsets or {}
    offs = [tuple(int(v) for v in offsets.get(b.band, (0, 0))) for b in bands]
    h, w = red.pixels.shape
    for dx, dy in offs:
        if abs(dx) >= w or abs(dy) >= h:
            raise RadiometryError(f"offset ({dx}, {dy}) larger than {w}x{h} image")
    planes = _translate_crop([b.pixels for b in bands], offs)
    stack = np.stack([np.clip(p, 0.0, 1.0) for p in planes], axis=-1)
    return np.floor(stack * 255 + 0.5).astype(np.uint8)


# --- file I/O ---------------------------------------------------------------

def sidecar_path(raster: Path) -> Path:
    return Path(raster).with_suffix(".json")


def load_band(raster: str | Path, band: str | None = None) -> RawBandImage:
    """Read a single-band 8/16-bit raster and its JSON sidecar."""
    raster = Path(raster)
    side = sidecar_path(raster)
    if not side.exists():
        raise RadiometryError(f"missing metadata sidecar {side}")
    meta_dict = json.loads(side.read_text())
    with Image.open(raster) as im:
        pixels = np.array(im)
    if pixels.ndim != 2:
        raise RadiometryError(f"{raster} is not a single-band raster")
    bit_depth = int(meta_dict.get("bit_depth", 16 if pixels.dtype != np.uint8 else 8))
    band = band or meta_dict.get("band")
    if band is None:
        raise RadiometryError(f"{side} does not name its band")
    return RawBandImage(band, pixels.astype(np.int64), bit_depth, BandMeta.from_dict(meta_dict))


def save_band(raster: str | Path, img: RawBandImage) -> None:
    """Write a 16-bit PNG and its sidecar (used for fixtures and demos)."""
    raster = Path(raster)
    Image.fromarray(img.pixels.astype(np.uint16)).save(raster)
    m = img.meta
    d = {"band": img.band, "bit_depth": img.bit_depth, "gain": m.gain,
         "exposure_s": m.exposure_s, "black_level": m.black_level}
    if m.has_sensor_model:
        d.update(a1=m.a1, a2=m.a2, a3=m.a3)
    if m.vignette:
        d["vignette"] = {"coeffs": list(m.vignette.coeffs),
                         "center_x": m.vignette.center_x, "center_y": m.vignette.center_y}
    sidecar_path(raster).write_text(json.dumps(d, indent=2) + "\n")


def save_reflectance(path: str | Path, img: ReflectanceImage) -> None:
    # float32 TIFF; values above the tolerated ceiling are clamped on export
    arr = np.clip(img.pixels, 0.0, REFLECTANCE_TOLERATED_MAX).astype(np.float32)
    Image.fromarray(arr).save(path, format="TIFF")


def save_rgb(path: str | Path, rgb: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8)).save(path, format="PNG")
