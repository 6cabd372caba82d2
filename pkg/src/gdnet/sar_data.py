"""Grayscale SAR images, change maps, the log-ratio difference image and a
synthetic speckled scene generator."""
from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FormatError, GenerationError, ConfigurationError

LOG_RATIO_EPS = 1e-6


@dataclass
class SarImage:
    pixels: np.ndarray  # H×W float64 in [0, 1]
    source_max: float = 1.0

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class SarImagePair:
    t1: SarImage
    t2: SarImage

    def __post_init__(self):
        if self.t1.pixels.shape != self.t2.pixels.shape:
            raise DimensionError(f"epochs differ in size: {self.t1.pixels.shape} vs {self.t2.pixels.shape}")

    @property
    def shape(self):
        return self.t1.pixels.shape


# ---------------------------------------------------------------- PGM codec

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _parse_header(data: bytes):
    """Return (magic, width, height, maxval, payload offset)."""
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if not m:
            raise FormatError("truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    magic = fields[0]
    if magic not in (b"P5", b"P2"):
        raise FormatError(f"unsupported magic number {magic!r}; only grayscale P5/P2 is accepted")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise FormatError("malformed PGM header") from exc
    if width <= 0 or height <= 0 or not 0 < maxval <= 65535:
        raise FormatError(f"invalid PGM header values {width}x{height} max {maxval}")
    # exactly one whitespace byte separates the header from a binary raster
    return magic, width, height, maxval, pos + 1


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Read a P5 or P2 file into an integer H×W array plus its maxval."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic, width, height, maxval, offset = _parse_header(data)
    count = width * height
    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        payload = data[offset:offset + need]
        if len(payload) < need:
            raise FormatError(f"truncated payload: expected {need} bytes, found {len(payload)}")
        raster = np.frombuffer(payload, dtype=dtype).astype(np.int64)
    else:
        tokens = data[offset - 1:].split()
        if len(tokens) < count:
            raise FormatError(f"truncated payload: expected {count} samples, found {len(tokens)}")
        try:
            raster = np.array([int(t) for t in tokens[:count]], dtype=np.int64)
        except ValueError as exc:
            raise FormatError("non-integer sample in plain PGM") from exc
    if raster.max(initial=0) > maxval:
        raise FormatError("sample exceeds declared maxval")
    return raster.reshape(height, width), maxval


def write_pgm(path, raster: np.ndarray, maxval: int = 255) -> None:
    """Write an integer grid as binary P5."""
    raster = np.asarray(raster)
    if raster.ndim != 2:
        raise DimensionError("PGM raster must be 2-D")
    h, w = raster.shape
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(raster.astype(dtype).tobytes())


def min_max_normalize(raw: np.ndarray) -> np.ndarray:
    """Affinely map to [0, 1]; a constant grid maps to all zeros."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise DimensionError("cannot normalize an empty grid")
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def load_image(path) -> SarImage:
    raster, _ = read_pgm(path)
    return SarImage(min_max_normalize(raster), source_max=float(raster.max()))


def save_image(path, image: SarImage | np.ndarray, bits: int = 8) -> None:
    """Quantize a [0, 1] grid to 8 or 16 bits and write it."""
    if bits not in (8, 16):
        raise ConfigurationError(f"bits must be 8 or 16, got {bits}")
    pixels = image.pixels if isinstance(image, SarImage) else np.asarray(image)
    maxval = (1 << bits) - 1
    write_pgm(path, np.rint(np.clip(pixels, 0.0, 1.0) * maxval).astype(np.int64), maxval)


def load_pair(t1_path, t2_path) -> SarImagePair:
    return SarImagePair(load_image(t1_path), load_image(t2_path))


# ---------------------------------------------------------------- change maps

def write_change_map(path, change_map: np.ndarray) -> None:
    cm = np.asarray(change_map)
    if not np.isin(cm, (0, 1)).all():
        raise FormatError("change map cells must be 0 or 1")
    write_pgm(path, cm.astype(np.uint8) * 255)


def read_change_map(path) -> np.ndarray:
    raster, maxval = read_pgm(path)
    if maxval != 255:
        raise FormatError(f"change maps are 8-bit with maxval 255, got {maxval}")
    if not np.isin(raster, (0, 255)).all():
        bad = raster[~np.isin(raster, (0, 255))][0]
        raise FormatError(f"change map contains pixel value {bad}; only 0 and 255 are allowed")
    return (raster == 255).astype(np.uint8)


# ---------------------------------------------------------------- difference image

def log_ratio_raw(t1: np.ndarray, t2: np.ndarray) -> np.ndarray:
    """Per-pixel ``|log((t2 + eps) / (t1 + eps))|`` before normalization."""
    t1, t2 = np.asarray(t1, dtype=np.float64), np.asarray(t2, dtype=np.float64)
    if t1.shape != t2.shape:
        raise DimensionError(f"epochs differ in size: {t1.shape} vs {t2.shape}")
    # difference of logs is antisymmetric bit for bit, so swapping epochs is exact
    return np.abs(np.log(t2 + LOG_RATIO_EPS) - np.log(t1 + LOG_RATIO_EPS))


def log_ratio_di(pair: SarImagePair) -> np.ndarray:
    """Normalized absolute log-ratio difference image of the two epochs."""
    return min_max_normalize(log_ratio_raw(pair.t1.pixels, pair.t2.pixels))


# ---------------------------------------------------------------- synthetic scenes

def apply_speckle(reflectance: np.ndarray, looks: float, rng: np.random.Generator) -> np.ndarray:
    """Multiply by unit-mean gamma speckle of the given number of looks."""
    return reflectance * rng.gamma(shape=looks, scale=1.0 / looks, size=reflectance.shape)


def _shape_mask(rng, height, width, area):
    """One random ellipse or rectangle with roughly the requested area."""
    aspect = rng.uniform(0.5, 2.0)
    yy, xx = np.mgrid[0:height, 0:width]
    if rng.random() < 0.5:
        ry = np.sqrt(area * aspect / np.pi)
        rx = area / (np.pi * ry)
        cy = rng.uniform(ry, height - ry) if height > 2 * ry else height / 2
        cx = rng.uniform(rx, width - rx) if width > 2 * rx else width / 2
        return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    hy = max(2, int(round(np.sqrt(area * aspect))))
    hx = max(2, int(round(area / hy)))
    hy, hx = min(hy, height), min(hx, width)
    y0 = int(rng.integers(0, height - hy + 1))
    x0 = int(rng.integers(0, width - hx + 1))
    mask = np.zeros((height, width), dtype=bool)
    mask[y0:y0 + hy, x0:x0 + hx] = True
    return mask


def synth_scene(seed: int, width: int = 256, height: int = 256,
                change_fraction_target: float = 0.15, looks: float = 4.0,
                clip: float = 1.0):
    """Piecewise-constant bitemporal scene with injected changes and speckle.

    Returns ``(pair, ground_truth)`` where ground truth is a uint8 H×W mask.
    """
    if width < 64 or height < 64:
        raise ConfigurationError("synthetic scenes must be at least 64×64")
    if not 0 < change_fraction_target < 0.5:
        raise ConfigurationError("change_fraction_target must lie in (0, 0.5)")
    if looks < 1:
        raise ConfigurationError("looks must be >= 1")
    rng = np.random.default_rng(seed)
    npix = width * height

    reflect = np.full((height, width), rng.uniform(0.15, 0.25))
    for _ in range(int(rng.integers(6, 12))):
        area = rng.uniform(0.01, 0.05) * npix
        reflect[_shape_mask(rng, height, width, area)] = rng.uniform(0.08, 0.35)

    target = change_fraction_target * npix
    gt = np.zeros((height, width), dtype=bool)
    reflect2 = reflect.copy()
    for _ in range(200):
        covered = gt.sum()
        if covered >= 0.97 * target:
            break
        remaining = target - covered
        area = min(remaining, rng.uniform(0.25, 0.45) * target)
        region = _shape_mask(rng, height, width, max(area, 16.0))
        fresh = region & ~gt
        if fresh.sum() > 1.3 * remaining:
            continue
        # brighten or darken by a strong factor
        factor = rng.uniform(4.0, 7.0)
        level = reflect[region].mean()
        new = min(level * factor, 0.9) if (rng.random() < 0.5 or level < 0.12) else level / factor
        reflect2[fresh] = new
        gt |= fresh
    frac = gt.sum() / npix
    if not 0.7 * change_fraction_target <= frac <= 1.3 * change_fraction_target:
        raise GenerationError(
            f"could not place changes covering {change_fraction_target:.3f} of the scene (got {frac:.3f})")

    i1 = np.clip(apply_speckle(reflect, looks, rng), 0.0, clip)
    i2 = np.clip(apply_speckle(reflect2, looks, rng), 0.0, clip)
    pair = SarImagePair(SarImage(min_max_normalize(i1), clip), SarImage(min_max_normalize(i2), clip))
    return pair, gt.astype(np.uint8)


def save_scene(directory, pair: SarImagePair, ground_truth: np.ndarray | None = None) -> dict:
    paths = {"t1": os.path.join(directory, "t1.pgm"), "t2": os.path.join(directory, "t2.pgm")}
    # 16 bits keep dark speckled pixels from collapsing onto zero
    save_image(paths["t1"], pair.t1, bits=16)
    save_image(paths["t2"], pair.t2, bits=16)
    if ground_truth is not None:
        paths["ground_truth"] = os.path.join(directory, "ground_truth.pgm")
        write_change_map(paths["ground_truth"], ground_truth)
    return paths
