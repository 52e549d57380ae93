"""Edge-conditioned aggregation with circulant-structured filter generation.

For every edge (i, j) of the non-local graph a small two-layer network turns
the edge label H_j - H_i into a full d_out x d_in matrix that is applied to
the neighbor's features. Pixel i's non-local output is the mean of those
per-edge products plus a shared affine term on its own features:

    out_i = mean_j Theta(H_j - H_i) @ H_j  +  W @ H_i + b

Identical labels produce identical matrices, so weight sharing is a property
of the construction rather than of any parameter tying.

The last layer of the label network is the expensive one (it emits d_out*d_in
numbers). Instead of a dense [d_out*d_in, h] weight it is a stack of M
row-subsampled circulant matrices, r rows each with M*r = d_out*d_in: one
length-h generator per matrix, cutting that layer's parameters by a factor
of r while keeping full output dimensionality.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .graph import NonLocalGraph
from .tensor import Tensor

# Pixels per chunk when walking the edge set; bounds transient memory,
# result is identical for any chunk size.
ECC_PIXEL_CHUNK = 2048


@dataclass
class CirculantStack:
    """M circulant matrices, keeping only rows 0..r-1 of each.

    Row j of matrix m is generators[m] cyclically shifted right by j; the
    stacked operator maps R^n -> R^(M*r)."""
    generators: Tensor  # [M, n]
    rows_per_matrix: int

    def __post_init__(self):
        if self.generators.ndim != 2:
            raise ShapeError(f"generators must be [M, n], got {self.generators.shape}")
        n = self.generators.shape[1]
        if not (1 <= self.rows_per_matrix <= n):
            raise ShapeError(f"rows_per_matrix {self.rows_per_matrix} outside [1, {n}]")

    @property
    def n_matrices(self) -> int:
        return self.generators.shape[0]

    @property
    def n_in(self) -> int:
        return self.generators.shape[1]

    @property
    def n_out(self) -> int:
        return self.n_matrices * self.rows_per_matrix


def expand_to_dense(stack: CirculantStack) -> np.ndarray:
    """Materialized [M*r, n] operator; the oracle the fast path is tested against."""
    g = stack.generators.data
    m, n = g.shape
    r = stack.rows_per_matrix
    dense = np.empty((m * r, n), dtype=g.dtype)
    for mi in range(m):
        for j in range(r):
            dense[mi * r + j] = np.roll(g[mi], j)
    return dense


def circulant_apply(stack: CirculantStack, x: Tensor) -> Tensor:
    """Stack applied to a vector [n] or rows of [B, n], without densifying."""
    single = x.ndim == 1
    if single:
        x = T.reshape(x, (1, x.shape[0]))
    out = T.circulant_matvec(stack.generators, x, stack.rows_per_matrix)
    return T.reshape(out, (stack.n_out,)) if single else out


def rows_for(n_out: int, requested: int) -> int:
    """Largest divisor of n_out not exceeding the requested row count.

    The stack needs M*r == n_out exactly; when the requested r does not
    divide n_out (it always does for the default trunk width) the nearest
    feasible value below is used."""
    r = max(1, min(requested, n_out))
    while n_out % r:
        r -= 1
    return r


@dataclass
class FNet:
    """Label -> matrix network: dense hidden layer, then a circulant-stacked
    (or optionally dense) output layer reshaped to [d_out, d_in] row-major."""
    hidden_weight: Tensor  # [h, n_label]
    hidden_bias: Tensor    # [h]
    output: "CirculantStack | Tensor"  # dense output is [d_out*d_in, h], no bias
    d_out: int
    d_in: int
    slope: float = 0.2

    def __post_init__(self):
        n_out = self.d_out * self.d_in
        h = self.hidden_weight.shape[0]
        if isinstance(self.output, CirculantStack):
            if self.output.n_out != n_out:
                raise ShapeError(f"circulant stack emits {self.output.n_out}, need {n_out}")
            if self.output.n_in != h:
                raise ShapeError(f"circulant stack reads {self.output.n_in}, hidden width is {h}")
        else:
            if self.output.shape != (n_out, h):
                raise ShapeError(f"dense output must be [{n_out}, {h}], got {self.output.shape}")

    @property
    def hidden_width(self) -> int:
        return self.hidden_weight.shape[0]

    @property
    def n_label(self) -> int:
        return self.hidden_weight.shape[1]


def edge_label(h_i: Tensor, h_j: Tensor) -> Tensor:
    """Edge label: the neighbor's features minus the center's."""
    return T.sub(h_j, h_i)


def fnet_forward(fnet: FNet, labels: Tensor) -> Tensor:
    """Matrices for a batch of labels: [E, n_label] -> [E, d_out, d_in].

    A single label [n_label] yields [d_out, d_in]."""
    single = labels.ndim == 1
    if single:
        labels = T.reshape(labels, (1, labels.shape[0]))
    if labels.shape[1] != fnet.n_label:
        raise ShapeError(f"labels have width {labels.shape[1]}, fnet expects {fnet.n_label}")
    hidden = T.leaky_relu(T.linear(labels, fnet.hidden_weight, fnet.hidden_bias), fnet.slope)
    if isinstance(fnet.output, CirculantStack):
        flat = circulant_apply(fnet.output, hidden)
    else:
        flat = T.linear(hidden, fnet.output)
    shape = (fnet.d_out, fnet.d_in) if single else (labels.shape[0], fnet.d_out, fnet.d_in)
    return T.reshape(flat, shape)


@dataclass
class EccParams:
    fnet: FNet
    node_weight: Tensor  # [d_out, d_in], the W of the self term
    bias: Tensor         # [d_out]

    @property
    def d_in(self) -> int:
        return self.fnet.d_in

    @property
    def d_out(self) -> int:
        return self.fnet.d_out


def _flatten_pixels(features: Tensor) -> tuple[Tensor, tuple, bool]:
    """[C,H,W] or [N,C,H,W] -> taped [N*H*W, C] pixel matrix."""
    single = features.ndim == 3
    x4 = T.reshape(features, (1,) + features.shape) if single else features
    if x4.ndim != 4:
        raise ShapeError(f"features must be [C,H,W] or [N,C,H,W], got {features.shape}")
    n, c, h, w = x4.shape
    x = T.reshape(T.transpose(x4, (0, 2, 3, 1)), (n * h * w, c))
    return x, (n, c, h, w), single


def ecc_aggregate(features: Tensor, graphs, params: EccParams,
                  pixel_chunk: int | None = None) -> Tensor:
    """Edge-conditioned aggregation over a feature map (or batch of maps).

    graphs: one NonLocalGraph, or a list with one per batch item. Neighbor
    averaging follows the graph's stored order (ascending distance), and the
    edge set is processed in fixed pixel chunks, so results are reproducible
    bit for bit. Gradients flow both through the aggregated neighbor features
    and through the labels inside the filter-generating network.
    """
    if isinstance(graphs, NonLocalGraph):
        graphs = [graphs]
    x, (n, c, h, w), single = _flatten_pixels(features)
    if len(graphs) != n:
        raise ShapeError(f"{len(graphs)} graphs for a batch of {n}")
    if c != params.d_in:
        raise ShapeError(f"features have {c} channels, params expect {params.d_in}")
    p = h * w
    for g in graphs:
        if g.height != h or g.width != w:
            raise ShapeError(f"graph is {g.height}x{g.width}, features are {h}x{w}")

    out = T.linear(x, params.node_weight, params.bias)  # self term, exact when k == 0
    k = graphs[0].k
    if k > 0:
        nbr = np.concatenate([g.neighbors.astype(np.int64) + item * p
                              for item, g in enumerate(graphs)], axis=0)  # [N*P, k]
        total = n * p
        chunk = pixel_chunk or ECC_PIXEL_CHUNK
        parts = []
        for s in range(0, total, chunk):
            e = min(s + chunk, total)
            centers = np.repeat(np.arange(s, e, dtype=np.int64), k)
            h_j = T.gather_rows(x, nbr[s:e].reshape(-1))
            h_i = T.gather_rows(x, centers)
            theta = fnet_forward(params.fnet, edge_label(h_i, h_j))
            msg = T.edge_matvec(theta, h_j)                       # [B*k, d_out]
            msg = T.mean_axis(T.reshape(msg, (e - s, k, params.d_out)), 1)
            parts.append(msg)
        neighbor_term = parts[0] if len(parts) == 1 else T.concat(parts, axis=0)
        out = T.add(out, neighbor_term)

    out4 = T.transpose(T.reshape(out, (n, h, w, params.d_out)), (0, 3, 1, 2))
    return T.reshape(out4, (params.d_out, h, w)) if single else out4


def fnet_output_param_count(hidden: int, d_out: int, d_in: int,
                            rows_per_matrix: int | None = None) -> int:
    """Parameters of the filter network's output layer.

    Dense: hidden * d_out * d_in. Circulant stack with r rows per matrix:
    (d_out * d_in / r) generators of length hidden."""
    n_out = d_out * d_in
    if rows_per_matrix is None:
        return n_out * hidden
    if n_out % rows_per_matrix:
        raise ConfigError(f"rows_per_matrix {rows_per_matrix} does not divide {n_out}")
    return (n_out // rows_per_matrix) * hidden


def count_fnet_params(fnet: FNet) -> int:
    n = fnet.hidden_weight.size + fnet.hidden_bias.size
    if isinstance(fnet.output, CirculantStack):
        return n + fnet.output.generators.size
    return n + fnet.output.size


def count_ecc_params(params: EccParams) -> int:
    return count_fnet_params(params.fnet) + params.node_weight.size + params.bias.size
