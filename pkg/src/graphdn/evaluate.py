"""Scoring, whole-image denoising, receptive-field tracing, ablation pairing."""
from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from .checkpoint import config_digest, file_digest, load_model
from .data import GrayImage, NoiseConfig, add_awgn, load_image
from .errors import ConfigError, ShapeError, UsageError
from .layers import receptive_mask_step
from .model import (GraphCnnModel, NetworkConfig, forward,
                    network_config_to_text, with_nlg)
from .rng import substream_seed
from .tensor import Tensor


def psnr(clean, test) -> float:
    """Peak signal-to-noise ratio in dB over the [0, 1] intensity range.

    The test image is clamped to [0, 1] first (a denoiser is judged on the
    displayable image); identical images give float('inf')."""
    c = clean.pixels if isinstance(clean, GrayImage) else np.asarray(clean, dtype=np.float64)
    t = test.pixels if isinstance(test, GrayImage) else np.asarray(test, dtype=np.float64)
    if c.shape != t.shape:
        raise ShapeError(f"psnr: shapes {c.shape} vs {t.shape}")
    diff = c - np.clip(t, 0.0, 1.0)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


# --------------------------------------------------------------------------
# whole-image inference

def _denoise_block(model: GraphCnnModel, pixels: np.ndarray) -> np.ndarray:
    x = Tensor(pixels[None].astype(model.config.np_dtype))
    _, den = forward(model, x, mode="inference")
    return den.data[0].astype(np.float64)


def denoise_image(model: GraphCnnModel, noisy: GrayImage,
                  tile: int | None = None, overlap: int = 16) -> GrayImage:
    """Denoised image, clamped to [0, 1].

    tile runs inference on tile x tile windows stepped by tile - overlap and
    blends overlapping outputs uniformly (straight average of every tile
    covering a pixel); None processes the image in one pass."""
    h, w = noisy.height, noisy.width
    px = noisy.pixels
    if tile is None or (tile >= h and tile >= w):
        out = _denoise_block(model, px)
    else:
        if tile < 1 or overlap < 0 or overlap >= tile:
            raise ConfigError(f"tile {tile} with overlap {overlap} is not usable")
        step = tile - overlap
        acc = np.zeros((h, w), dtype=np.float64)
        cnt = np.zeros((h, w), dtype=np.float64)
        rows = _tile_starts(h, tile, step)
        cols = _tile_starts(w, tile, step)
        for r0 in rows:
            for c0 in cols:
                r1, c1 = min(r0 + tile, h), min(c0 + tile, w)
                block = _denoise_block(model, px[r0:r1, c0:c1])
                acc[r0:r1, c0:c1] += block
                cnt[r0:r1, c0:c1] += 1.0
        out = acc / cnt
    return GrayImage(np.clip(out, 0.0, 1.0), name=noisy.name)


def _tile_starts(extent: int, tile: int, step: int) -> list[int]:
    if tile >= extent:
        return [0]
    starts = list(range(0, extent - tile, step))
    starts.append(extent - tile)  # last tile flush with the border
    return starts


# --------------------------------------------------------------------------
# receptive-field tracing

def trace_receptive_field(model: GraphCnnModel, image: GrayImage,
                          pixel: tuple[int, int], upto_layer: int | None = None
                          ) -> list[np.ndarray]:
    """Per-layer dependency masks for one output pixel.

    Layer L's mask marks every input pixel that can influence the traced
    pixel after L graph conv layers, using the graphs the forward pass on
    this image actually built. Masks are boolean [H, W], one per layer, and
    only ever grow layer to layer."""
    r, c = pixel
    if not (0 <= r < image.height and 0 <= c < image.width):
        raise UsageError(f"pixel {pixel} outside a {image.height}x{image.width} image")
    x = Tensor(image.pixels[None].astype(model.config.np_dtype))
    _, _, fg = forward(model, x, mode="inference", return_graphs=True)
    steps = fg.gc_steps(0)
    if upto_layer is not None:
        if upto_layer < 1 or upto_layer > len(steps):
            raise UsageError(f"layer {upto_layer} outside 1..{len(steps)}")
        steps = steps[:upto_layer]
    mask = np.zeros((image.height, image.width), dtype=bool)
    mask[r, c] = True
    masks = []
    for graphs in steps:
        mask = receptive_mask_step(mask, graphs, kernel_extent=3)
        masks.append(mask)
    return masks


# --------------------------------------------------------------------------
# manifest evaluation

@dataclass
class EvalReport:
    image_names: list[str]
    psnrs: list[float]
    noisy_psnrs: list[float]
    config_digest: str
    checkpoint_digest: str
    wall_seconds: float
    sigma: float
    seed: int

    @property
    def average(self) -> float:
        return float(np.mean(self.psnrs)) if self.psnrs else float("nan")

    @property
    def average_noisy(self) -> float:
        return float(np.mean(self.noisy_psnrs)) if self.noisy_psnrs else float("nan")

    def to_tsv(self) -> str:
        lines = ["image\tpsnr_noisy_db\tpsnr_db"]
        for name, pn, p in zip(self.image_names, self.noisy_psnrs, self.psnrs):
            lines.append(f"{name}\t{_fmt_db(pn)}\t{_fmt_db(p)}")
        lines.append(f"average\t{_fmt_db(self.average_noisy)}\t{_fmt_db(self.average)}")
        lines.append(f"# sigma={self.sigma:g} seed={self.seed}")
        lines.append(f"# config_digest={self.config_digest}")
        lines.append(f"# checkpoint_digest={self.checkpoint_digest}")
        lines.append(f"# wall_seconds={self.wall_seconds:.3f}")
        return "\n".join(lines) + "\n"


def _fmt_db(v: float) -> str:
    return "inf" if np.isinf(v) else f"{v:.3f}"


def evaluate_checkpoint(checkpoint_path: str, image_paths: list[str], sigma: float,
                        seed: int, tile: int | None = None) -> EvalReport:
    """Noise each manifest image with its own substream of seed, denoise with
    the checkpointed model, score both against the clean original."""
    t0 = time.perf_counter()
    model = load_model(checkpoint_path)
    names, scores, noisy_scores = [], [], []
    for idx, path in enumerate(image_paths):
        clean = load_image(path)
        noisy = add_awgn(clean, NoiseConfig(sigma, substream_seed(seed, "evalnoise", idx)))
        den = denoise_image(model, noisy, tile=tile)
        names.append(clean.name or os.path.basename(path))
        noisy_scores.append(psnr(clean, noisy))
        scores.append(psnr(clean, den))
    return EvalReport(
        image_names=names, psnrs=scores, noisy_psnrs=noisy_scores,
        config_digest=config_digest(network_config_to_text(model.config)),
        checkpoint_digest=file_digest(checkpoint_path),
        wall_seconds=time.perf_counter() - t0, sigma=sigma, seed=seed)


# --------------------------------------------------------------------------
# paired ablation

@dataclass
class AblationReport:
    k_values: tuple[int, int]
    reports: dict[int, EvalReport]

    @property
    def difference(self) -> float:
        a, b = self.k_values
        return self.reports[b].average - self.reports[a].average

    def to_tsv(self) -> str:
        ka, kb = self.k_values
        ra, rb = self.reports[ka], self.reports[kb]
        lines = [f"image\tpsnr_k{ka}_db\tpsnr_k{kb}_db\tdiff_db"]
        for name, pa, pb in zip(ra.image_names, ra.psnrs, rb.psnrs):
            lines.append(f"{name}\t{_fmt_db(pa)}\t{_fmt_db(pb)}\t{pb - pa:+.3f}")
        lines.append(f"average\t{_fmt_db(ra.average)}\t{_fmt_db(rb.average)}"
                     f"\t{self.difference:+.3f}")
        lines.append(f"# direction: k={kb} minus k={ka} is {self.difference:+.3f} dB "
                     f"(positive favors the non-local graph)")
        return "\n".join(lines) + "\n"


def check_pairable(cfg_a: NetworkConfig, cfg_b: NetworkConfig) -> None:
    """Two configs may be compared only if they differ in nothing but k."""
    if with_nlg(cfg_a, k=0) != with_nlg(cfg_b, k=0):
        raise ConfigError("refusing to pair runs whose configs differ beyond the neighbor count k")


def ablation_compare(net_cfg: NetworkConfig, train_cfg, image_paths: list[str],
                     out_dir: str, k_values: tuple[int, int] = (0, 8),
                     eval_sigma: float | None = None, eval_seed: int = 0,
                     tile: int | None = None, log=None) -> AblationReport:
    """Train one model per k with identical seeds, evaluate both on the same
    manifest, and report paired per-image scores. The direction is reported,
    never asserted."""
    from .training import train_loop  # local import to avoid a cycle
    if len(k_values) != 2 or k_values[0] == k_values[1]:
        raise ConfigError(f"need two distinct k values, got {k_values!r}")
    sigma = train_cfg.sigma if eval_sigma is None else eval_sigma
    configs = {k: with_nlg(net_cfg, k=k) for k in k_values}
    check_pairable(configs[k_values[0]], configs[k_values[1]])
    reports = {}
    for k in k_values:
        run_dir = os.path.join(out_dir, f"k{k}")
        result = train_loop(configs[k], train_cfg, image_paths, run_dir, log=log)
        reports[k] = evaluate_checkpoint(result.checkpoint_path, image_paths,
                                         sigma, eval_seed, tile=tile)
    return AblationReport(tuple(k_values), reports)
