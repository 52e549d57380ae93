"""Graph convolution layer and receptive-field mask stepping.

A layer averages two routes over the same input: a local 3x3 convolution and
the edge-conditioned non-local aggregation. The averaged pre-activation is
batch-normalized and passed through one leaky ReLU, once, after the merge:

    y = LReLU(BN((conv3x3(x) + ecc(x, graph)) / 2))
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .ecc import EccParams, ecc_aggregate
from .errors import ShapeError
from .graph import NonLocalGraph
from .tensor import Tensor


@dataclass
class BnParams:
    scale: Tensor  # [C]
    shift: Tensor  # [C]
    running_mean: np.ndarray | None = None  # state, not trained
    running_var: np.ndarray | None = None
    eps: float = 1e-5
    momentum: float = 0.9


@dataclass
class GcLayerParams:
    local_weight: Tensor  # [d_out, d_in, 3, 3]
    local_bias: Tensor    # [d_out]
    ecc: EccParams
    bn: BnParams | None   # None bypasses normalization (tests, probes)
    slope: float = 0.2


def gc_layer_forward(x: Tensor, graphs, params: GcLayerParams, mode: str = "train") -> Tensor:
    """One graph convolution layer on [N, C, H, W] (or [C, H, W]) features."""
    single = x.ndim == 3
    x4 = T.reshape(x, (1,) + x.shape) if single else x
    if x4.ndim != 4:
        raise ShapeError(f"gc_layer_forward: rank {x.ndim} input")
    local = T.conv2d(x4, params.local_weight, params.local_bias)
    non_local = ecc_aggregate(x4, graphs, params.ecc)
    pre = T.scale(T.add(local, non_local), 0.5)
    if params.bn is not None:
        pre = T.batch_norm(pre, params.bn.scale, params.bn.shift,
                           params.bn.running_mean, params.bn.running_var,
                           eps=params.bn.eps, momentum=params.bn.momentum, mode=mode)
    out = T.leaky_relu(pre, params.slope)
    return T.reshape(out, out.shape[1:]) if single else out


def receptive_mask_step(mask: np.ndarray, graphs=None, kernel_extent: int = 3) -> np.ndarray:
    """Dependency mask after one more layer.

    mask[r, c] is True when the traced output pixel already depends on input
    pixel (r, c). One layer extends the set two ways: the local convolution
    pulls in the kernel footprint around every active pixel, and each active
    pixel i additionally pulls in its graph neighbors (the layer reads their
    features directly, with no footprint around them). Masks only grow: the
    footprint contains its center.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ShapeError(f"mask must be [H, W], got {mask.shape}")
    if kernel_extent < 1 or kernel_extent % 2 == 0:
        raise ShapeError(f"kernel_extent must be odd and positive, got {kernel_extent}")
    h, w = mask.shape
    e = (kernel_extent - 1) // 2
    out = np.zeros_like(mask)
    for dr in range(-e, e + 1):
        for dc in range(-e, e + 1):
            sr0, sr1 = max(0, -dr), min(h, h - dr)
            sc0, sc1 = max(0, -dc), min(w, w - dc)
            out[sr0 + dr:sr1 + dr, sc0 + dc:sc1 + dc] |= mask[sr0:sr1, sc0:sc1]
    if graphs is None:
        graph_list = []
    elif isinstance(graphs, NonLocalGraph):
        graph_list = [graphs]
    else:
        graph_list = list(graphs)
    for g in graph_list:
        if (g.height, g.width) != (h, w):
            raise ShapeError(f"graph {g.height}x{g.width} vs mask {h}x{w}")
        if g.k > 0:
            active = np.flatnonzero(mask.reshape(-1))
            if active.size:
                out.reshape(-1)[g.neighbors[active].reshape(-1)] = True
    return out
