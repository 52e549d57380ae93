"""Non-local graph construction: k nearest neighbors in feature space.

Each pixel connects to the k pixels with the closest feature vectors
(Euclidean) inside a square search window around it, skipping its own
spatial surroundings so the edges add information the local convolution
does not already have. Selection happens on raw feature values and is not
differentiated through; gradients flow through what the edges carry, not
through where they point.

Tie-breaking is part of the contract: candidates are ordered by distance,
then by ascending raster index. Both the fast builder and the brute-force
oracle accumulate squared differences channel by channel in ascending
channel order, so their distances agree bitwise and ties resolve the same
way in either implementation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class NlgConfig:
    """Neighborhood search parameters.

    k: neighbors per pixel (0 disables the non-local term entirely)
    window_radius: half-extent of the square search window, clipped at borders
    exclusion_radius: spatial radius around each pixel whose pixels are never
        candidates (they are the local convolution's job)
    """
    k: int = 8
    window_radius: int = 16
    exclusion_radius: int = 1

    def __post_init__(self):
        if self.k < 0:
            raise ConfigError(f"k must be >= 0, got {self.k}")
        if self.exclusion_radius < 0:
            raise ConfigError(f"exclusion_radius must be >= 0, got {self.exclusion_radius}")
        if self.exclusion_radius >= self.window_radius:
            raise ConfigError(
                f"exclusion_radius {self.exclusion_radius} must be smaller than "
                f"window_radius {self.window_radius}")


@dataclass
class NonLocalGraph:
    """Neighbor lists for one image: neighbors[i] are the raster indices of
    pixel i's k nearest feature-space neighbors, ascending by distance."""
    height: int
    width: int
    k: int
    neighbors: np.ndarray  # [H*W, k] int32
    config: NlgConfig = field(default=None, repr=False)

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    def dump(self) -> str:
        """Debug text: one line per pixel, 'i: j1 j2 ... jk'."""
        lines = []
        for i in range(self.n_pixels):
            js = " ".join(str(int(j)) for j in self.neighbors[i])
            lines.append(f"{i}: {js}" if js else f"{i}:")
        return "\n".join(lines) + "\n"


def _window_offsets(cfg: NlgConfig) -> list[tuple[int, int]]:
    # row-major order makes raster indices ascend per pixel -> stable-sort ties
    # resolve to the lowest raster index automatically
    r, e = cfg.window_radius, cfg.exclusion_radius
    return [(dr, dc)
            for dr in range(-r, r + 1)
            for dc in range(-r, r + 1)
            if not (abs(dr) <= e and abs(dc) <= e)]


def _check_features(features: np.ndarray) -> np.ndarray:
    f = np.asarray(features)
    if f.ndim != 3:
        raise ShapeError(f"features must be [C, H, W], got shape {f.shape}")
    return f


def build_knn_graph_batch(features: np.ndarray, cfg: NlgConfig) -> list[NonLocalGraph]:
    """Graphs for a batch [N, C, H, W]; items never see each other's pixels."""
    f = np.asarray(features)
    if f.ndim != 4:
        raise ShapeError(f"batched features must be [N, C, H, W], got {f.shape}")
    n, c, h, w = f.shape
    p = h * w
    offsets = _window_offsets(cfg)
    n_off = len(offsets)

    dist = np.full((n, h, w, n_off), np.inf, dtype=f.dtype)
    cand = np.full((h, w, n_off), -1, dtype=np.int64)
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    for t, (dr, dc) in enumerate(offsets):
        r0, r1 = max(0, -dr), min(h, h - dr)
        c0, c1 = max(0, -dc), min(w, w - dc)
        if r0 >= r1 or c0 >= c1:
            continue
        acc = np.zeros((n, r1 - r0, c1 - c0), dtype=f.dtype)
        for ch in range(c):  # sequential channel accumulation, see module docstring
            diff = f[:, ch, r0 + dr:r1 + dr, c0 + dc:c1 + dc] - f[:, ch, r0:r1, c0:c1]
            acc += diff * diff
        dist[:, r0:r1, c0:c1, t] = acc
        cand[r0:r1, c0:c1, t] = (rows[r0:r1] + dr) * w + (cols[:, c0:c1] + dc)

    eligible = (cand >= 0).sum(axis=2)
    if cfg.k > 0 and eligible.min() < cfg.k:
        short = int(eligible.min())
        where = np.unravel_index(int(eligible.argmin()), (h, w))
        raise ConfigError(
            f"pixel {where} has only {short} eligible candidates inside the window, "
            f"need k={cfg.k}; enlarge window_radius or the image")

    cand_flat = cand.reshape(p, n_off)
    graphs = []
    for item in range(n):
        if cfg.k == 0:
            nb = np.empty((p, 0), dtype=np.int32)
        else:
            order = np.argsort(dist[item].reshape(p, n_off), axis=1, kind="stable")[:, :cfg.k]
            nb = np.take_along_axis(cand_flat, order, axis=1).astype(np.int32)
        graphs.append(NonLocalGraph(h, w, cfg.k, nb, cfg))
    return graphs


def build_knn_graph(features: np.ndarray, cfg: NlgConfig) -> NonLocalGraph:
    """Graph for one feature map [C, H, W]."""
    f = _check_features(features)
    return build_knn_graph_batch(f[None], cfg)[0]


def brute_force_knn(features: np.ndarray, cfg: NlgConfig) -> NonLocalGraph:
    """Reference builder: exhaustive scan over all pixels with explicit
    eligibility predicates and an explicit (distance, index) sort. Slow and
    simple on purpose; the fast builder is tested against it."""
    f = _check_features(features)
    c, h, w = f.shape
    p = h * w
    flat = f.reshape(c, p)
    nb = np.empty((p, cfg.k), dtype=np.int32)
    all_r = np.arange(p) // w
    all_c = np.arange(p) % w
    for i in range(p):
        ri, ci = i // w, i % w
        in_window = (np.abs(all_r - ri) <= cfg.window_radius) & (np.abs(all_c - ci) <= cfg.window_radius)
        excluded = (np.abs(all_r - ri) <= cfg.exclusion_radius) & (np.abs(all_c - ci) <= cfg.exclusion_radius)
        js = np.flatnonzero(in_window & ~excluded)
        if cfg.k == 0:
            continue
        if js.size < cfg.k:
            raise ConfigError(
                f"pixel {(ri, ci)} has only {js.size} eligible candidates inside the window, "
                f"need k={cfg.k}; enlarge window_radius or the image")
        acc = np.zeros(js.size, dtype=f.dtype)
        for ch in range(c):
            diff = flat[ch, js] - flat[ch, i]
            acc += diff * diff
        ranked = sorted(zip(acc.tolist(), js.tolist()))[:cfg.k]
        nb[i] = [j for _, j in ranked]
    if cfg.k == 0:
        nb = np.empty((p, 0), dtype=np.int32)
    return NonLocalGraph(h, w, cfg.k, nb, cfg)
