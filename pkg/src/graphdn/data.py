"""Images, noise synthesis, patch extraction, dataset manifests.

Grayscale images live in [0, 1] as float64; 8-bit files map via v / 255.
Noisy images are intentionally not clamped: the network trains on the exact
additive model pixel + (sigma/255) * g, and clamping happens only when pixels
are written back to disk or scored.
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError, ShapeError
from .rng import Rng


@dataclass
class GrayImage:
    pixels: np.ndarray  # [H, W] float64; loaded files are in [0, 1]
    name: str = ""

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ShapeError(f"image must be 2-D, got shape {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class NoiseConfig:
    sigma: float  # AWGN level on the 0..255 scale
    seed: int

    def __post_init__(self):
        if self.sigma < 0:
            raise DataError(f"sigma must be >= 0, got {self.sigma}")


def add_awgn(img: GrayImage, cfg: NoiseConfig) -> GrayImage:
    """img + (sigma/255) * g with g drawn from the stream seeded by cfg.seed.
    The result is unclamped; values may leave [0, 1]."""
    g = Rng(cfg.seed).normal(img.height * img.width).reshape(img.height, img.width)
    return GrayImage(img.pixels + (cfg.sigma / 255.0) * g, name=img.name)


# --------------------------------------------------------------------------
# PGM (binary P5, maxval 255), hand-rolled; PNG via Pillow

def _pgm_tokens(data: bytes):
    """Header tokens of a PGM: whitespace separated, '#' comments to EOL."""
    i = 0
    while True:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if i < len(data) and data[i:i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        start = i
        while i < len(data) and not data[i:i + 1].isspace():
            i += 1
        if start == i:
            return
        yield data[start:i].decode("ascii"), i


def load_pgm(path: str) -> GrayImage:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = _pgm_tokens(data)
    try:
        magic, _ = next(tokens)
        if magic != "P5":
            raise DataError(f"{path}: not a binary PGM (magic {magic!r})")
        width, _ = next(tokens)
        height, _ = next(tokens)
        maxval, end = next(tokens)
    except StopIteration:
        raise DataError(f"{path}: truncated PGM header") from None
    try:
        w, h, mv = int(width), int(height), int(maxval)
    except ValueError:
        raise DataError(f"{path}: malformed PGM header") from None
    if mv != 255:
        raise DataError(f"{path}: only maxval 255 PGMs are supported, got {mv}")
    raster = data[end + 1:end + 1 + w * h]  # exactly one whitespace byte after maxval
    if len(raster) != w * h:
        raise DataError(f"{path}: expected {w * h} raster bytes, found {len(raster)}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0
    return GrayImage(pixels, name=os.path.basename(path))


def _quantize(pixels: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round half away from zero to 8 bits."""
    clipped = np.clip(pixels, 0.0, 1.0)
    return np.floor(clipped * 255.0 + 0.5).astype(np.uint8)


def save_pgm(img: GrayImage, path: str) -> None:
    q = _quantize(img.pixels)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def load_png(path: str) -> GrayImage:
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise DataError(f"{path}: only 8-bit grayscale PNGs are supported, mode is {im.mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError:
        raise DataError(f"{path}: not a readable PNG") from None
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    return GrayImage(arr.astype(np.float64) / 255.0, name=os.path.basename(path))


def save_png(img: GrayImage, path: str) -> None:
    Image.fromarray(_quantize(img.pixels), mode="L").save(path, format="PNG")


def load_image(path: str) -> GrayImage:
    """Dispatch on content for .pgm, on suffix otherwise."""
    if not os.path.exists(path):
        raise DataError(f"{path}: no such file")
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P5":
        return load_pgm(path)
    if path.lower().endswith(".png") or magic == b"\x89P":
        return load_png(path)
    raise DataError(f"{path}: unsupported image format (need binary PGM or 8-bit grayscale PNG)")


def save_image(img: GrayImage, path: str) -> None:
    lower = path.lower()
    if lower.endswith(".pgm"):
        save_pgm(img, path)
    elif lower.endswith(".png"):
        save_png(img, path)
    else:
        raise DataError(f"{path}: unsupported output suffix (use .pgm or .png)")


# --------------------------------------------------------------------------
# patches

@dataclass
class PatchSet:
    """Row-major enumeration of top-left corners over one or more images."""
    images: list[GrayImage]
    size: int
    stride: int
    entries: list[tuple[int, int, int]] = field(default_factory=list)  # (image idx, row, col)

    def __len__(self) -> int:
        return len(self.entries)

    def patch(self, index: int) -> np.ndarray:
        ii, r, c = self.entries[index]
        return self.images[ii].pixels[r:r + self.size, c:c + self.size].copy()


def extract_patches(images, size: int, stride: int) -> PatchSet:
    """Patches of one image or a list of images. Corners run row-major at the
    given stride; a trailing sliver narrower than size is not emitted."""
    if isinstance(images, GrayImage):
        images = [images]
    if size < 1 or stride < 1:
        raise DataError(f"patch size {size} and stride {stride} must be positive")
    pset = PatchSet(list(images), size, stride)
    for ii, img in enumerate(pset.images):
        if img.height < size or img.width < size:
            raise DataError(f"image {img.name or ii} ({img.height}x{img.width}) is smaller "
                            f"than the patch size {size}")
        for r in range(0, img.height - size + 1, stride):
            for c in range(0, img.width - size + 1, stride):
                pset.entries.append((ii, r, c))
    return pset


def iterate_patches(pset: PatchSet, shuffle_rng: Rng | None = None):
    """Yield (entry index, patch pixels). A given Rng fixes the shuffled order;
    None keeps the natural row-major order."""
    order = list(range(len(pset)))
    if shuffle_rng is not None:
        shuffle_rng.shuffle(order)
    for idx in order:
        yield idx, pset.patch(idx)


# --------------------------------------------------------------------------
# manifests

def read_manifest(path: str) -> list[str]:
    """One image path per line, '#' comments and blank lines skipped.
    Relative paths resolve against the manifest's directory."""
    if not os.path.exists(path):
        raise DataError(f"{path}: no such manifest")
    base = os.path.dirname(os.path.abspath(path))
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            out.append(line if os.path.isabs(line) else os.path.join(base, line))
    if not out:
        raise DataError(f"{path}: manifest lists no images")
    return out
