"""The denoising network: multiscale front end, graph-conv trunk, residual output.

Layout (defaults in parentheses):
  * three parallel branches, each a kxk convolution 1 -> 22 for k in {3,5,7}
    followed by a leaky ReLU and one graph conv layer 22 -> 22; the branch
    outputs concatenate into the 66-channel trunk
  * two stages, each building one fresh k-NN graph from its input features
    and running two residual blocks of three graph conv layers that all share
    that stage's graph
  * a 3x3 head convolution maps the trunk to a 1-channel noise estimate;
    the denoised image is input minus estimate

Graphs are rebuilt from current feature values on every forward pass (the
neighborhoods are dynamic); a prebuilt ForwardGraphs can be passed instead to
freeze them, which gradient verification requires. Branch graph conv layers
share one graph built on the raw 1-channel input by default; building one
graph per branch from that branch's own features is a config option.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import configio
from . import tensor as T
from .ecc import CirculantStack, EccParams, FNet, count_ecc_params, rows_for
from .errors import ConfigError, DataError, ShapeError
from .graph import NlgConfig, NonLocalGraph, build_knn_graph_batch
from .layers import BnParams, GcLayerParams, gc_layer_forward
from .rng import Rng, substream_seed
from .tensor import Tensor


@dataclass(frozen=True)
class NetworkConfig:
    prepro_branch_channels: int = 22
    trunk_channels: int = 66
    branch_kernels: tuple[int, ...] = (3, 5, 7)
    n_graph_stages: int = 2
    res_blocks_per_stage: int = 2
    layers_per_res_block: int = 3
    nlg: NlgConfig = field(default_factory=NlgConfig)
    activation_slope: float = 0.2
    circulant_rows: int = 3
    fnet_unstructured: bool = False
    prepro_graph: str = "shared_input"  # or "per_branch"
    seed: int = 0
    dtype: str = "float32"  # "float64" for gradient verification

    def __post_init__(self):
        if self.prepro_branch_channels * len(self.branch_kernels) != self.trunk_channels:
            raise ConfigError(
                f"{len(self.branch_kernels)} branches x {self.prepro_branch_channels} channels "
                f"!= trunk width {self.trunk_channels}")
        for k in self.branch_kernels:
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"branch kernel {k} must be odd and positive")
        if self.n_graph_stages < 0 or self.res_blocks_per_stage < 1 or self.layers_per_res_block < 1:
            raise ConfigError("stage/block/layer counts out of range")
        if self.prepro_graph not in ("shared_input", "per_branch"):
            raise ConfigError(f"unknown prepro_graph mode {self.prepro_graph!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.circulant_rows < 1:
            raise ConfigError("circulant_rows must be >= 1")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class BranchParams:
    conv_weight: Tensor
    conv_bias: Tensor
    gc: GcLayerParams


@dataclass
class GraphCnnModel:
    config: NetworkConfig
    branches: list[BranchParams]
    stages: list[list[list[GcLayerParams]]]  # [stage][block][layer]
    head_weight: Tensor
    head_bias: Tensor


# --------------------------------------------------------------------------
# construction

def _uniform_init(rng: Rng, shape, fan_in: int, dtype) -> Tensor:
    bound = np.sqrt(1.0 / fan_in)
    vals = (rng.uniform(int(np.prod(shape))) * 2.0 - 1.0) * bound
    return Tensor(vals.reshape(shape).astype(dtype), requires_grad=True)


def _generator_init(rng: Rng, shape, hidden: int, rows: int, dtype) -> Tensor:
    # variance 1/(hidden*rows): the expanded dense operator then matches the
    # fan-in scale of an unstructured output layer
    bound = np.sqrt(3.0 / (hidden * rows))
    vals = (rng.uniform(int(np.prod(shape))) * 2.0 - 1.0) * bound
    return Tensor(vals.reshape(shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(shape, dtype) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def _stream(cfg: NetworkConfig, name: str) -> Rng:
    return Rng(substream_seed(cfg.seed, "init/" + name))


def _build_gc_layer(cfg: NetworkConfig, name: str, d: int, init: bool) -> GcLayerParams:
    dt = cfg.np_dtype
    hidden = d  # hidden width of the label network tracks the layer width
    n_out = d * d
    if init:
        local_w = _uniform_init(_stream(cfg, name + ".local.weight"), (d, d, 3, 3), d * 9, dt)
        hid_w = _uniform_init(_stream(cfg, name + ".fnet.hidden.weight"), (hidden, d), d, dt)
        node_w = _uniform_init(_stream(cfg, name + ".node.weight"), (d, d), d, dt)
    else:
        local_w = _zeros((d, d, 3, 3), dt)
        hid_w = _zeros((hidden, d), dt)
        node_w = _zeros((d, d), dt)
    if cfg.fnet_unstructured:
        if init:
            out = _uniform_init(_stream(cfg, name + ".fnet.out.weight"), (n_out, hidden), hidden, dt)
        else:
            out = _zeros((n_out, hidden), dt)
    else:
        rows = rows_for(n_out, cfg.circulant_rows)
        m = n_out // rows
        if init:
            gens = _generator_init(_stream(cfg, name + ".fnet.out.generators"), (m, hidden), hidden, rows, dt)
        else:
            gens = _zeros((m, hidden), dt)
        out = CirculantStack(gens, rows)
    fnet = FNet(hid_w, _zeros((hidden,), dt), out, d_out=d, d_in=d, slope=cfg.activation_slope)
    ecc = EccParams(fnet, node_w, _zeros((d,), dt))
    bn = BnParams(_ones((d,), dt), _zeros((d,), dt),
                  running_mean=np.zeros(d, dtype=dt), running_var=np.ones(d, dtype=dt))
    return GcLayerParams(local_w, _zeros((d,), dt), ecc, bn, cfg.activation_slope)


def build_model(cfg: NetworkConfig, init: bool = True) -> GraphCnnModel:
    """Fresh model. Weight init draws from named substreams of cfg.seed, so
    the same config always yields the same weights. init=False allocates
    zeros (checkpoint loading overwrites them).

    Running statistics start explicitly at mean 0, variance 1 so an untrained
    model can run inference."""
    dt = cfg.np_dtype
    bc = cfg.prepro_branch_channels
    branches = []
    for bi, k in enumerate(cfg.branch_kernels):
        name = f"branch{bi}"
        if init:
            cw = _uniform_init(_stream(cfg, name + ".conv.weight"), (bc, 1, k, k), k * k, dt)
        else:
            cw = _zeros((bc, 1, k, k), dt)
        gc = _build_gc_layer(cfg, name + ".gc", bc, init)
        branches.append(BranchParams(cw, _zeros((bc,), dt), gc))
    stages = []
    for si in range(cfg.n_graph_stages):
        blocks = []
        for bi in range(cfg.res_blocks_per_stage):
            blocks.append([
                _build_gc_layer(cfg, f"stage{si}.block{bi}.layer{li}", cfg.trunk_channels, init)
                for li in range(cfg.layers_per_res_block)])
        stages.append(blocks)
    if init:
        head_w = _uniform_init(_stream(cfg, "head.weight"), (1, cfg.trunk_channels, 3, 3),
                               cfg.trunk_channels * 9, dt)
    else:
        head_w = _zeros((1, cfg.trunk_channels, 3, 3), dt)
    return GraphCnnModel(cfg, branches, stages, head_w, _zeros((1,), dt))


# --------------------------------------------------------------------------
# parameter walking

def _gc_layer_entries(name: str, p: GcLayerParams):
    yield name + ".local.weight", p.local_weight
    yield name + ".local.bias", p.local_bias
    yield name + ".fnet.hidden.weight", p.ecc.fnet.hidden_weight
    yield name + ".fnet.hidden.bias", p.ecc.fnet.hidden_bias
    if isinstance(p.ecc.fnet.output, CirculantStack):
        yield name + ".fnet.out.generators", p.ecc.fnet.output.generators
    else:
        yield name + ".fnet.out.weight", p.ecc.fnet.output
    yield name + ".node.weight", p.ecc.node_weight
    yield name + ".node.bias", p.ecc.bias
    if p.bn is not None:
        yield name + ".bn.scale", p.bn.scale
        yield name + ".bn.shift", p.bn.shift


def _walk_layers(model: GraphCnnModel):
    for bi, b in enumerate(model.branches):
        yield f"branch{bi}", b
    for si, stage in enumerate(model.stages):
        for bi, block in enumerate(stage):
            for li, layer in enumerate(block):
                yield f"stage{si}.block{bi}.layer{li}", layer


def named_parameters(model: GraphCnnModel) -> dict[str, Tensor]:
    """Trainable tensors, keyed by stable dotted names."""
    out: dict[str, Tensor] = {}
    for name, item in _walk_layers(model):
        if isinstance(item, BranchParams):
            out[name + ".conv.weight"] = item.conv_weight
            out[name + ".conv.bias"] = item.conv_bias
            out.update(_gc_layer_entries(name + ".gc", item.gc))
        else:
            out.update(_gc_layer_entries(name, item))
    out["head.weight"] = model.head_weight
    out["head.bias"] = model.head_bias
    return out


def named_state(model: GraphCnnModel) -> dict[str, np.ndarray]:
    """Non-trained state (batch norm running statistics)."""
    out: dict[str, np.ndarray] = {}
    for name, item in _walk_layers(model):
        gc = item.gc if isinstance(item, BranchParams) else item
        prefix = name + (".gc" if isinstance(item, BranchParams) else "")
        if gc.bn is not None and gc.bn.running_mean is not None:
            out[prefix + ".bn.running_mean"] = gc.bn.running_mean
            out[prefix + ".bn.running_var"] = gc.bn.running_var
    return out


def count_parameters(model: GraphCnnModel) -> dict[str, int]:
    """Census per named module plus a 'total' entry. Circulant output layers
    contribute their generator counts (the whole point of the structure)."""
    census: dict[str, int] = {}
    for bi, b in enumerate(model.branches):
        census[f"branch{bi}"] = (b.conv_weight.size + b.conv_bias.size
                                 + _layer_param_count(b.gc))
    for si, stage in enumerate(model.stages):
        for bi, block in enumerate(stage):
            for li, layer in enumerate(block):
                census[f"stage{si}.block{bi}.layer{li}"] = _layer_param_count(layer)
    census["head"] = model.head_weight.size + model.head_bias.size
    census["total"] = sum(census.values())
    return census


def _layer_param_count(p: GcLayerParams) -> int:
    n = p.local_weight.size + p.local_bias.size + count_ecc_params(p.ecc)
    if p.bn is not None:
        n += p.bn.scale.size + p.bn.shift.size
    return n


# --------------------------------------------------------------------------
# forward

@dataclass
class ForwardGraphs:
    """The graphs one forward pass used (or is told to use).

    gc_steps lists, per graph conv layer in execution order, the graphs of
    every batch item; the prepro step may hold several graphs per item in
    per-branch mode. layer_records names which graph object each layer
    consumed, for sharing checks and traces."""
    input_graphs: list[NonLocalGraph]
    branch_graphs: list[list[NonLocalGraph]] | None  # [branch][item], per_branch mode
    stage_graphs: list[list[NonLocalGraph]]          # [stage][item]
    layer_records: list[tuple[str, object]] = field(default_factory=list)

    def gc_steps(self, item: int = 0) -> list[list[NonLocalGraph]]:
        steps: list[list[NonLocalGraph]] = []
        if self.branch_graphs is not None:
            steps.append([bg[item] for bg in self.branch_graphs])
        else:
            steps.append([self.input_graphs[item]])
        for sg in self.stage_graphs:
            for _ in range(_layers_per_stage_of(self)):
                steps.append([sg[item]])
        return steps


def _layers_per_stage_of(fg: ForwardGraphs) -> int:
    # stage layer multiplicity is recovered from the records
    if not fg.stage_graphs:
        return 0
    per_stage = sum(1 for name, _ in fg.layer_records if name.startswith("stage0."))
    return per_stage


def forward(model: GraphCnnModel, noisy: Tensor, mode: str = "train",
            graphs: ForwardGraphs | None = None, return_graphs: bool = False):
    """Noise estimate and denoised output for [1, H, W] or [N, 1, H, W] input.

    mode selects batch norm behavior. graphs, when given, fixes every
    neighborhood instead of rebuilding from current features."""
    cfg = model.config
    if mode not in ("train", "inference"):
        raise ConfigError(f"unknown mode {mode!r}")
    if not isinstance(noisy, Tensor):
        noisy = Tensor(np.asarray(noisy, dtype=cfg.np_dtype))
    if noisy.dtype != cfg.np_dtype:
        raise ShapeError(f"input dtype {noisy.dtype} vs model dtype {cfg.dtype}")
    single = noisy.ndim == 3
    x4 = T.reshape(noisy, (1,) + noisy.shape) if single else noisy
    if x4.ndim != 4 or x4.shape[1] != 1:
        raise ShapeError(f"input must be [1, H, W] or [N, 1, H, W], got {noisy.shape}")

    fixed = graphs is not None
    fg = graphs if fixed else ForwardGraphs(
        input_graphs=build_knn_graph_batch(x4.data, cfg.nlg),
        branch_graphs=None, stage_graphs=[])
    fg.layer_records = []

    branch_outs = []
    if not fixed and cfg.prepro_graph == "per_branch":
        fg.branch_graphs = []
    for bi, bp in enumerate(model.branches):
        z = T.leaky_relu(T.conv2d(x4, bp.conv_weight, bp.conv_bias), cfg.activation_slope)
        if cfg.prepro_graph == "per_branch":
            bg = fg.branch_graphs[bi] if fixed else build_knn_graph_batch(z.data, cfg.nlg)
            if not fixed:
                fg.branch_graphs.append(bg)
        else:
            bg = fg.input_graphs
        fg.layer_records.append((f"branch{bi}.gc", bg))
        branch_outs.append(gc_layer_forward(z, bg, bp.gc, mode))
    trunk = T.concat_channels(branch_outs)

    for si, stage in enumerate(model.stages):
        if fixed:
            sg = fg.stage_graphs[si]
        else:
            sg = build_knn_graph_batch(trunk.data, cfg.nlg)
            fg.stage_graphs.append(sg)
        for bi, block in enumerate(stage):
            t = trunk
            for li, layer in enumerate(block):
                fg.layer_records.append((f"stage{si}.block{bi}.layer{li}", sg))
                t = gc_layer_forward(t, sg, layer, mode)
            trunk = T.add(trunk, t)

    estimate = T.conv2d(trunk, model.head_weight, model.head_bias)
    denoised = T.sub(x4, estimate)
    if single:
        estimate = T.reshape(estimate, estimate.shape[1:])
        denoised = T.reshape(denoised, denoised.shape[1:])
    if return_graphs:
        return estimate, denoised, fg
    return estimate, denoised


# --------------------------------------------------------------------------
# config text (embedded in checkpoints, hashed for digests)

def network_config_to_text(cfg: NetworkConfig) -> str:
    return configio.serialize({
        "network": {
            "prepro_branch_channels": configio.fmt(cfg.prepro_branch_channels),
            "trunk_channels": configio.fmt(cfg.trunk_channels),
            "branch_kernels": configio.fmt(cfg.branch_kernels),
            "n_graph_stages": configio.fmt(cfg.n_graph_stages),
            "res_blocks_per_stage": configio.fmt(cfg.res_blocks_per_stage),
            "layers_per_res_block": configio.fmt(cfg.layers_per_res_block),
            "activation_slope": configio.fmt(cfg.activation_slope),
            "circulant_rows": configio.fmt(cfg.circulant_rows),
            "fnet_unstructured": configio.fmt(cfg.fnet_unstructured),
            "prepro_graph": cfg.prepro_graph,
            "seed": configio.fmt(cfg.seed),
            "dtype": cfg.dtype,
        },
        "nlg": {
            "k": configio.fmt(cfg.nlg.k),
            "window_radius": configio.fmt(cfg.nlg.window_radius),
            "exclusion_radius": configio.fmt(cfg.nlg.exclusion_radius),
        },
    })


def network_config_from_sections(sections: configio.Sections) -> NetworkConfig:
    try:
        net = sections["network"]
        nlg = sections["nlg"]
    except KeyError as e:
        raise ConfigError(f"missing config section {e}") from None
    known_net = {"prepro_branch_channels", "trunk_channels", "branch_kernels",
                 "n_graph_stages", "res_blocks_per_stage", "layers_per_res_block",
                 "activation_slope", "circulant_rows", "fnet_unstructured",
                 "prepro_graph", "seed", "dtype"}
    for key in net:
        if key not in known_net:
            raise ConfigError(f"unknown key {key!r} in [network]")
    for key in nlg:
        if key not in {"k", "window_radius", "exclusion_radius"}:
            raise ConfigError(f"unknown key {key!r} in [nlg]")

    def get(section, key, parser, default):
        return parser(section[key]) if key in section else default

    base = NetworkConfig()
    return NetworkConfig(
        prepro_branch_channels=get(net, "prepro_branch_channels", configio.parse_int,
                                   base.prepro_branch_channels),
        trunk_channels=get(net, "trunk_channels", configio.parse_int, base.trunk_channels),
        branch_kernels=get(net, "branch_kernels", configio.parse_int_tuple, base.branch_kernels),
        n_graph_stages=get(net, "n_graph_stages", configio.parse_int, base.n_graph_stages),
        res_blocks_per_stage=get(net, "res_blocks_per_stage", configio.parse_int,
                                 base.res_blocks_per_stage),
        layers_per_res_block=get(net, "layers_per_res_block", configio.parse_int,
                                 base.layers_per_res_block),
        nlg=NlgConfig(
            k=get(nlg, "k", configio.parse_int, NlgConfig.k),
            window_radius=get(nlg, "window_radius", configio.parse_int, NlgConfig.window_radius),
            exclusion_radius=get(nlg, "exclusion_radius", configio.parse_int,
                                 NlgConfig.exclusion_radius)),
        activation_slope=get(net, "activation_slope", configio.parse_float, base.activation_slope),
        circulant_rows=get(net, "circulant_rows", configio.parse_int, base.circulant_rows),
        fnet_unstructured=get(net, "fnet_unstructured", configio.parse_bool, base.fnet_unstructured),
        prepro_graph=net.get("prepro_graph", base.prepro_graph),
        seed=get(net, "seed", configio.parse_int, base.seed),
        dtype=net.get("dtype", base.dtype),
    )


def network_config_from_text(text: str) -> NetworkConfig:
    return network_config_from_sections(configio.parse(text))


def with_nlg(cfg: NetworkConfig, **changes) -> NetworkConfig:
    """Config with some NlgConfig fields replaced (k sweeps, window overrides)."""
    return replace(cfg, nlg=replace(cfg.nlg, **changes))
