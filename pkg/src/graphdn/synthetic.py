"""Seeded piecewise-smooth test images.

Denoisers train on images with flat regions, smooth gradients, and sharp
edges; these generators compose exactly that (a tilted ramp, a few opaque
rectangles and disks, a faint sinusoidal texture) from a counter-based
stream, so any image is reproducible from its seed alone.
"""
from __future__ import annotations

import numpy as np

from .data import GrayImage
from .errors import ConfigError
from .rng import Rng, substream_seed


def synthetic_image(seed: int, height: int = 96, width: int = 96) -> GrayImage:
    """One piecewise-smooth image in [0, 1], fully determined by seed."""
    if height < 1 or width < 1:
        raise ConfigError(f"image extent {height}x{width} out of range")
    rng = Rng(seed)
    yy, xx = np.meshgrid(np.linspace(0.0, 1.0, height),
                         np.linspace(0.0, 1.0, width), indexing="ij")

    u = rng.uniform(3)
    angle = u[0] * 2.0 * np.pi
    offset = 0.2 + 0.6 * u[1]
    tilt = -0.5 + 1.0 * u[2]
    img = offset + tilt * (np.cos(angle) * xx + np.sin(angle) * yy)

    n_shapes = 2 + int(rng.uniform(1)[0] * 4.0)  # 2..5 opaque shapes
    for _ in range(n_shapes):
        s = rng.uniform(6)
        cy, cx = s[0], s[1]
        extent = 0.08 + 0.27 * s[2]
        level = 0.05 + 0.9 * s[3]
        if s[4] < 0.5:
            inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= extent ** 2
        else:
            aspect = 0.5 + s[5]
            inside = (np.abs(yy - cy) <= extent) & (np.abs(xx - cx) <= extent * aspect)
        img[inside] = level

    t = rng.uniform(3)
    amplitude = 0.06 * t[0]
    freq = 1.0 + 3.0 * t[1]
    phi = t[2] * np.pi
    img += amplitude * np.sin(2.0 * np.pi * freq * (np.cos(phi) * xx + np.sin(phi) * yy))

    return GrayImage(np.clip(img, 0.0, 1.0), name=f"synth-{seed & 0xFFFFFFFF:08x}")


def synthetic_images(seed: int, count: int, height: int = 96, width: int = 96
                     ) -> list[GrayImage]:
    """count independent images; image i depends only on (seed, i)."""
    return [synthetic_image(substream_seed(seed, "synthimage", i), height, width)
            for i in range(count)]
