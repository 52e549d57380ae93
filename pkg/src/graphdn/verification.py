"""Finite-difference verification of every differentiable building block.

Each check builds a small randomized instance (extents at most 8, channels at
most 8), wires a scalar loss, and compares analytic gradients against central
differences in 64-bit. The end-to-end check freezes the k-NN graphs before
differencing: neighbor selection is discrete, so re-selecting from perturbed
features would change the function being differenced mid-check.

The same suite backs the gradcheck command and the automated acceptance run.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .ecc import CirculantStack, EccParams, FNet, ecc_aggregate, fnet_forward
from .graph import NlgConfig, build_knn_graph
from .layers import BnParams, GcLayerParams, gc_layer_forward
from .model import NetworkConfig, build_model, forward, named_parameters
from .rng import Rng, substream_seed
from .tensor import FdReport, Tensor, finite_difference_check

FD_STEP = 1e-5
FD_TOLERANCE = 1e-4


def _t(rng: Rng, shape) -> Tensor:
    return Tensor(rng.normal(int(np.prod(shape))).reshape(shape), requires_grad=True)


def _away_from_kink(x: np.ndarray, margin: float = 10 * FD_STEP) -> np.ndarray:
    # central differences straddle the leaky-ReLU kink when |x| < step;
    # nudge such samples out instead of skipping them
    near = np.abs(x) < margin
    return np.where(near, np.where(x >= 0, margin, -margin), x)


def check_leaky_relu(seed: int) -> FdReport:
    rng = Rng(seed)
    x = Tensor(_away_from_kink(rng.normal(6 * 7).reshape(6, 7)), requires_grad=True)
    target = Tensor(rng.normal(6 * 7).reshape(6, 7))

    def f():
        return T.mse(T.leaky_relu(x, 0.2), target)

    return finite_difference_check(f, {"x": x}, FD_STEP, FD_TOLERANCE)


def check_conv2d(seed: int) -> FdReport:
    rng = Rng(seed)
    c_in = 1 + int(rng.uniform(1)[0] * 3)   # 1..3
    c_out = 1 + int(rng.uniform(1)[0] * 3)
    h = 4 + int(rng.uniform(1)[0] * 5)      # 4..8
    w = 4 + int(rng.uniform(1)[0] * 5)
    x = _t(rng, (2, c_in, h, w))
    kern = _t(rng, (c_out, c_in, 3, 3))
    bias = _t(rng, (c_out,))
    target = Tensor(rng.normal(2 * c_out * h * w).reshape(2, c_out, h, w))

    def f():
        return T.mse(T.conv2d(x, kern, bias), target)

    return finite_difference_check(f, {"x": x, "kernel": kern, "bias": bias},
                                   FD_STEP, FD_TOLERANCE)


def check_batch_norm(seed: int) -> FdReport:
    rng = Rng(seed)
    c = 2 + int(rng.uniform(1)[0] * 3)
    x = _t(rng, (2, c, 4, 4))
    scale = Tensor(1.0 + 0.1 * rng.normal(c), requires_grad=True)
    shift = _t(rng, (c,))
    target = Tensor(rng.normal(2 * c * 16).reshape(2, c, 4, 4))
    rm, rv = np.zeros(c), np.ones(c)

    def f():
        return T.mse(T.batch_norm(x, scale, shift, rm, rv, mode="train"), target)

    return finite_difference_check(f, {"x": x, "scale": scale, "shift": shift},
                                   FD_STEP, FD_TOLERANCE)


def check_circulant(seed: int) -> FdReport:
    rng = Rng(seed)
    n = 4 + int(rng.uniform(1)[0] * 4)      # 4..7
    m = 2 + int(rng.uniform(1)[0] * 3)
    r = 2 + int(rng.uniform(1)[0] * (n - 2))
    gens = _t(rng, (m, n))
    x = _t(rng, (5, n))
    target = Tensor(rng.normal(5 * m * r).reshape(5, m * r))

    def f():
        return T.mse(T.circulant_matvec(gens, x, r), target)

    return finite_difference_check(f, {"generators": gens, "x": x}, FD_STEP, FD_TOLERANCE)


def _small_fnet(rng: Rng, d: int, hidden: int) -> FNet:
    n_out = d * d
    r = 3 if n_out % 3 == 0 else 1
    gens = _t(rng, (n_out // r, hidden))
    return FNet(_t(rng, (hidden, d)), _t(rng, (hidden,)),
                CirculantStack(gens, r), d_out=d, d_in=d)


def _fnet_blocks(fnet: FNet, prefix: str = "fnet") -> dict[str, Tensor]:
    out = {f"{prefix}.hidden.weight": fnet.hidden_weight,
           f"{prefix}.hidden.bias": fnet.hidden_bias}
    if isinstance(fnet.output, CirculantStack):
        out[f"{prefix}.out.generators"] = fnet.output.generators
    else:
        out[f"{prefix}.out.weight"] = fnet.output
    return out


def check_fnet(seed: int) -> FdReport:
    rng = Rng(seed)
    d = 3
    fnet = _small_fnet(rng, d, hidden=4)
    labels = _t(rng, (6, d))
    target = Tensor(rng.normal(6 * d * d).reshape(6, d, d))

    def f():
        return T.mse(fnet_forward(fnet, labels), target)

    blocks = {**_fnet_blocks(fnet), "labels": labels}
    return finite_difference_check(f, blocks, FD_STEP, FD_TOLERANCE)


def _ecc_params(rng: Rng, d: int) -> tuple[EccParams, dict[str, Tensor]]:
    fnet = _small_fnet(rng, d, hidden=d)
    params = EccParams(fnet, _t(rng, (d, d)), _t(rng, (d,)))
    blocks = {**_fnet_blocks(fnet), "node.weight": params.node_weight,
              "node.bias": params.bias}
    return params, blocks


def check_ecc(seed: int) -> FdReport:
    rng = Rng(seed)
    d, h, w = 3, 4, 4
    x = _t(rng, (d, h, w))
    graph = build_knn_graph(x.data, NlgConfig(k=2, window_radius=2, exclusion_radius=1))
    params, blocks = _ecc_params(rng, d)
    target = Tensor(rng.normal(d * h * w).reshape(d, h, w))

    def f():
        return T.mse(ecc_aggregate(x, graph, params), target)

    return finite_difference_check(f, {**blocks, "features": x}, FD_STEP, FD_TOLERANCE)


def check_gc_layer(seed: int) -> FdReport:
    rng = Rng(seed)
    d, h, w = 3, 5, 5
    x = _t(rng, (2, d, h, w))
    graphs = [build_knn_graph(x.data[i], NlgConfig(k=2, window_radius=2, exclusion_radius=1))
              for i in range(2)]
    ecc, blocks = _ecc_params(rng, d)
    bn = BnParams(Tensor(1.0 + 0.1 * rng.normal(d), requires_grad=True), _t(rng, (d,)),
                  running_mean=np.zeros(d), running_var=np.ones(d))
    layer = GcLayerParams(_t(rng, (d, d, 3, 3)), _t(rng, (d,)), ecc, bn)
    target = Tensor(rng.normal(2 * d * h * w).reshape(2, d, h, w))

    def f():
        return T.mse(gc_layer_forward(x, graphs, layer, mode="train"), target)

    blocks = {**blocks, "local.weight": layer.local_weight, "local.bias": layer.local_bias,
              "bn.scale": bn.scale, "bn.shift": bn.shift, "input": x}
    return finite_difference_check(f, blocks, FD_STEP, FD_TOLERANCE)


def check_end_to_end(seed: int, branch_channels: int = 1, size: int = 6,
                     k: int = 2) -> FdReport:
    """Whole network on a tiny config, graphs frozen from the unperturbed
    features; perturbs the input and every parameter block."""
    cfg = NetworkConfig(
        prepro_branch_channels=branch_channels,
        trunk_channels=3 * branch_channels,
        n_graph_stages=1, res_blocks_per_stage=1, layers_per_res_block=2,
        nlg=NlgConfig(k=k, window_radius=3, exclusion_radius=1),
        seed=seed, dtype="float64")
    model = build_model(cfg)
    rng = Rng(substream_seed(seed, "e2e-data"))
    x = Tensor(0.5 + 0.2 * rng.normal(size * size).reshape(1, size, size),
               requires_grad=True)
    target = Tensor(rng.normal(size * size).reshape(1, size, size))
    _, _, fg = forward(model, x, mode="train", return_graphs=True)

    def f():
        estimate, _ = forward(model, x, mode="train", graphs=fg)
        return T.mse(estimate, target)

    blocks = dict(named_parameters(model))
    blocks["input"] = x
    return finite_difference_check(f, blocks, FD_STEP, FD_TOLERANCE)


# --------------------------------------------------------------------------
# the suite

@dataclass
class SuiteEntry:
    name: str
    instances: int
    max_rel_error: float
    seconds: float
    tolerance: float = FD_TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


_CHECKS = [
    ("leaky_relu", check_leaky_relu),
    ("conv2d", check_conv2d),
    ("batch_norm", check_batch_norm),
    ("circulant_stack", check_circulant),
    ("filter_network", check_fnet),
    ("ecc_aggregate", check_ecc),
    ("gc_layer", check_gc_layer),
]


def run_gradient_suite(seed: int = 0, instances: int = 10,
                       include_end_to_end: bool = True, log=None) -> list[SuiteEntry]:
    """instances randomized checks per block type. The end-to-end entry runs
    instances - 1 three-channel cases plus one six-channel 8x8 case."""
    say = log if log is not None else (lambda s: None)
    entries = []
    for name, fn in _CHECKS:
        t0 = time.perf_counter()
        worst = 0.0
        for i in range(instances):
            rep = fn(substream_seed(seed, "grad/" + name, i))
            worst = max(worst, rep.max_rel_error)
        entries.append(SuiteEntry(name, instances, worst, time.perf_counter() - t0))
        say(f"{name}: max rel error {worst:.3e}")
    if include_end_to_end:
        t0 = time.perf_counter()
        worst = 0.0
        for i in range(max(1, instances - 1)):
            rep = check_end_to_end(substream_seed(seed, "grad/end_to_end", i))
            worst = max(worst, rep.max_rel_error)
        if instances > 1:
            rep = check_end_to_end(substream_seed(seed, "grad/end_to_end", instances - 1),
                                   branch_channels=2, size=8)
            worst = max(worst, rep.max_rel_error)
        entries.append(SuiteEntry("end_to_end_fixed_graph", instances, worst,
                                  time.perf_counter() - t0))
        say(f"end_to_end_fixed_graph: max rel error {worst:.3e}")
    return entries


def suite_passed(entries: list[SuiteEntry]) -> bool:
    return all(e.passed for e in entries)


def suite_table(entries: list[SuiteEntry]) -> str:
    lines = ["check\tinstances\tmax_rel_error\ttolerance\tstatus"]
    for e in entries:
        lines.append(f"{e.name}\t{e.instances}\t{e.max_rel_error:.3e}"
                     f"\t{e.tolerance:.1e}\t{'ok' if e.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"
