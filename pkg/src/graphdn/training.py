"""Training loop: residual MSE objective, adaptive-moment updates, resumable state.

The network learns to output the noise, not the image: for a clean patch p
and synthesized noise n the input is p + n and the loss is mse(estimate, n).

Determinism: patch shuffling, per-patch noise, and the validation split all
draw from named substreams of TrainConfig.seed, keyed by epoch or by a global
patch counter. A checkpoint stores parameters, batch-norm running stats,
optimizer moments, and the counters, so a resumed run replays the exact
remainder of an uninterrupted one.
"""
from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import configio
from . import tensor as T
from .checkpoint import aux_tensors, load_checkpoint, model_tensors, save_checkpoint
from .data import GrayImage, PatchSet, extract_patches, load_image
from .errors import ConfigError, DataError, NumericError
from .model import (GraphCnnModel, NetworkConfig, build_model, forward,
                    named_parameters, network_config_from_sections,
                    network_config_to_text)
from .rng import Rng, substream_seed
from .tensor import Tape, Tensor

loss = T.mse  # the training objective on (estimate, true noise)


@dataclass(frozen=True)
class TrainConfig:
    sigma: float = 25.0
    epochs: int = 30
    batch_size: int = 32
    patch_size: int = 32
    patch_stride: int = 32
    patches_per_epoch: int = 0  # 0 = every patch once per epoch
    learning_rate: float = 1e-3
    lr_decay: float = 0.5
    lr_decay_every: int = 10  # epochs
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_interval: int = 0  # steps; 0 = final checkpoint only
    val_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("sigma/epochs/batch_size out of range")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ConfigError(f"val_fraction {self.val_fraction} outside [0, 1)")
        if self.lr_decay_every < 1:
            raise ConfigError("lr_decay_every must be >= 1")


def learning_rate_at(cfg: TrainConfig, epoch: int) -> float:
    return cfg.learning_rate * cfg.lr_decay ** (epoch // cfg.lr_decay_every)


class Adam:
    """Adaptive-moment optimizer: bias-corrected first/second moments."""

    def __init__(self, cfg: TrainConfig):
        self.beta1 = cfg.beta1
        self.beta2 = cfg.beta2
        self.eps = cfg.adam_eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor], lr: float) -> None:
        """One update from the .grad fields. A missing gradient counts as zero
        (the parameter keeps its value while its moments decay); a non-finite
        gradient aborts, naming the parameter block."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data, dtype=np.float64)
            else:
                if not np.all(np.isfinite(g)):
                    raise NumericError(f"non-finite gradient in parameter block {name!r}")
                g = g.astype(np.float64, copy=False)
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros(p.shape, dtype=np.float64)
                self.v[name] = np.zeros(p.shape, dtype=np.float64)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)
            p.data -= update


@dataclass
class TrainState:
    """Everything beyond the weights needed to continue a run exactly."""
    epoch: int = 0            # next epoch to run
    batch_in_epoch: int = 0   # next batch within that epoch
    global_step: int = 0
    patch_counter: int = 0    # total patches consumed; keys the noise streams
    best_val_psnr: float = float("nan")


# --------------------------------------------------------------------------
# config file [train] section

_TRAIN_KEYS = {
    "sigma": ("sigma", configio.parse_float),
    "epochs": ("epochs", configio.parse_int),
    "batch_size": ("batch_size", configio.parse_int),
    "patch_size": ("patch_size", configio.parse_int),
    "patch_stride": ("patch_stride", configio.parse_int),
    "patches_per_epoch": ("patches_per_epoch", configio.parse_int),
    "learning_rate": ("learning_rate", configio.parse_float),
    "lr_decay": ("lr_decay", configio.parse_float),
    "lr_decay_every": ("lr_decay_every", configio.parse_int),
    "beta1": ("beta1", configio.parse_float),
    "beta2": ("beta2", configio.parse_float),
    "adam_eps": ("adam_eps", configio.parse_float),
    "checkpoint_interval": ("checkpoint_interval", configio.parse_int),
    "val_fraction": ("val_fraction", configio.parse_float),
    "seed": ("seed", configio.parse_int),
}


def train_config_from_sections(sections: configio.Sections) -> TrainConfig:
    kv = sections.get("train", {})
    kwargs = {}
    for key, value in kv.items():
        if key not in _TRAIN_KEYS:
            raise ConfigError(f"unknown key {key!r} in [train]")
        fieldname, parser = _TRAIN_KEYS[key]
        kwargs[fieldname] = parser(value)
    return TrainConfig(**kwargs)


def train_config_to_text(cfg: TrainConfig) -> str:
    return configio.serialize({"train": {
        key: configio.fmt(getattr(cfg, fieldname))
        for key, (fieldname, _) in _TRAIN_KEYS.items()
    }})


def load_run_config(path: str) -> tuple[NetworkConfig, TrainConfig]:
    """Parse a config file holding [network], [nlg], and [train] sections."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            sections = configio.parse(fh.read())
    except FileNotFoundError:
        raise DataError(f"{path}: no such config file") from None
    return network_config_from_sections(sections), train_config_from_sections(sections)


# --------------------------------------------------------------------------
# checkpoint plumbing for resumable state

def _state_tensors(state: TrainState, opt: Adam) -> dict[str, np.ndarray]:
    out = {
        "train.epoch": np.int64(state.epoch).reshape(()),
        "train.batch_in_epoch": np.int64(state.batch_in_epoch).reshape(()),
        "train.global_step": np.int64(state.global_step).reshape(()),
        "train.patch_counter": np.int64(state.patch_counter).reshape(()),
        "train.adam_t": np.int64(opt.t).reshape(()),
        "train.best_val_psnr": np.float64(state.best_val_psnr).reshape(()),
    }
    for name, m in opt.m.items():
        out["opt.m." + name] = m
        out["opt.v." + name] = opt.v[name]
    return out


def _restore_state(path: str, model: GraphCnnModel, opt: Adam) -> TrainState:
    aux = aux_tensors(path)
    if "train.epoch" not in aux:
        raise DataError(f"{path}: checkpoint has no training state to resume")
    state = TrainState(
        epoch=int(aux["train.epoch"]),
        batch_in_epoch=int(aux["train.batch_in_epoch"]),
        global_step=int(aux["train.global_step"]),
        patch_counter=int(aux["train.patch_counter"]),
        best_val_psnr=float(aux["train.best_val_psnr"]),
    )
    opt.t = int(aux["train.adam_t"])
    for name in named_parameters(model):
        mk, vk = "opt.m." + name, "opt.v." + name
        if mk not in aux or vk not in aux:
            raise DataError(f"{path}: optimizer moments missing for {name}")
        opt.m[name] = aux[mk].copy()
        opt.v[name] = aux[vk].copy()
    return state


# --------------------------------------------------------------------------
# the loop

@dataclass
class TrainResult:
    checkpoint_path: str
    metrics_path: str
    final_loss: float
    state: TrainState
    model: GraphCnnModel


def _epoch_order(seed: int, epoch: int, n: int) -> list[int]:
    return Rng(substream_seed(seed, "shuffle", epoch)).permutation(n)


def _noise_for(seed: int, patch_counter: int, size: int, sigma: float, dtype,
               stream: str = "noise") -> np.ndarray:
    g = Rng(substream_seed(seed, stream, patch_counter)).normal(size * size)
    return (g.reshape(size, size) * (sigma / 255.0)).astype(dtype)


def _val_split(seed: int, n: int, fraction: float) -> tuple[list[int], list[int]]:
    order = Rng(substream_seed(seed, "valsplit")).permutation(n)
    n_val = int(n * fraction)
    return sorted(order[n_val:]), sorted(order[:n_val])


def _val_psnr(model: GraphCnnModel, pset: PatchSet, val_idx: list[int],
              sigma: float, seed: int) -> float:
    from .evaluate import psnr  # local import to avoid a cycle
    dt = model.config.np_dtype
    scores = []
    for rank, idx in enumerate(val_idx):
        clean = pset.patch(idx)
        noise = _noise_for(seed, rank, pset.size, sigma, np.float64, stream="valnoise")
        noisy = Tensor((clean + noise)[None].astype(dt))
        _, den = forward(model, noisy, mode="inference")
        scores.append(psnr(clean, den.data[0].astype(np.float64)))
    return float(np.mean(scores)) if scores else float("nan")


def train_loop(net_cfg: NetworkConfig, train_cfg: TrainConfig,
               images: list[str | GrayImage], out_dir: str,
               resume: str | None = None, log=None) -> TrainResult:
    """Train a model and leave model.gcnn plus metrics.tsv in out_dir.

    images may be file paths or in-memory GrayImage objects. Metrics lines
    are "step<TAB>loss<TAB>lr<TAB>seconds"; everything except the wall
    seconds is bit-reproducible for a fixed config and seed. resume
    continues from a checkpoint written by this same function.
    """
    os.makedirs(out_dir, exist_ok=True)
    say = log if log is not None else (lambda s: None)
    images = [p if isinstance(p, GrayImage) else load_image(p) for p in images]
    pset = extract_patches(images, train_cfg.patch_size, train_cfg.patch_stride)
    train_idx, val_idx = _val_split(train_cfg.seed, len(pset), train_cfg.val_fraction)
    if not train_idx:
        raise DataError("no training patches left after the validation split")

    opt = Adam(train_cfg)
    if resume is not None:
        from .checkpoint import load_model
        model = load_model(resume)
        if model.config != net_cfg:
            raise ConfigError("resume checkpoint was trained with a different network config")
        state = _restore_state(resume, model, opt)
        say(f"resumed at epoch {state.epoch}, batch {state.batch_in_epoch}, "
            f"step {state.global_step}")
    else:
        model = build_model(net_cfg)
        state = TrainState()

    params = named_parameters(model)
    dt = net_cfg.np_dtype
    metrics_path = os.path.join(out_dir, "metrics.tsv")
    ckpt_path = os.path.join(out_dir, "model.gcnn")
    config_text = network_config_to_text(net_cfg) + train_config_to_text(train_cfg)

    def save(path: str) -> None:
        save_checkpoint(path, {**model_tensors(model), **_state_tensors(state, opt)},
                        config_text)

    per_epoch = len(train_idx)
    if train_cfg.patches_per_epoch:
        per_epoch = min(per_epoch, train_cfg.patches_per_epoch)

    # append only when resuming; a fresh run must not inherit stale lines
    metrics = open(metrics_path, "a" if resume is not None else "w", encoding="utf-8")
    final_loss = float("nan")
    try:
        for epoch in range(state.epoch, train_cfg.epochs):
            lr = learning_rate_at(train_cfg, epoch)
            order = _epoch_order(train_cfg.seed, epoch, len(train_idx))
            epoch_ids = [train_idx[i] for i in order[:per_epoch]]
            batches = [epoch_ids[s:s + train_cfg.batch_size]
                       for s in range(0, len(epoch_ids), train_cfg.batch_size)]
            start_batch = state.batch_in_epoch if epoch == state.epoch else 0
            for bi in range(start_batch, len(batches)):
                t0 = time.perf_counter()
                ids = batches[bi]
                clean = np.stack([pset.patch(i) for i in ids])[:, None].astype(dt)
                noise = np.stack([
                    _noise_for(train_cfg.seed, state.patch_counter + j, pset.size,
                               train_cfg.sigma, dt)
                    for j in range(len(ids))])[:, None]
                state.patch_counter += len(ids)
                noisy = Tensor(clean + noise)
                with Tape():
                    estimate, _ = forward(model, noisy, mode="train")
                    batch_loss = loss(estimate, Tensor(noise))
                    batch_loss.backward()
                opt.step(params, lr)
                T.zero_grads(params)
                final_loss = float(batch_loss.data)
                state.global_step += 1
                state.batch_in_epoch = bi + 1
                seconds = time.perf_counter() - t0
                metrics.write(f"{state.global_step}\t{final_loss!r}\t{lr!r}\t{seconds:.3f}\n")
                metrics.flush()
                if (train_cfg.checkpoint_interval
                        and state.global_step % train_cfg.checkpoint_interval == 0):
                    if val_idx:
                        v = _val_psnr(model, pset, val_idx, train_cfg.sigma, train_cfg.seed)
                        if not (v <= state.best_val_psnr):  # NaN-safe max
                            state.best_val_psnr = v
                    save(ckpt_path)
                    say(f"step {state.global_step}: loss {final_loss:.6f}, checkpointed")
            state.epoch = epoch + 1
            state.batch_in_epoch = 0
            say(f"epoch {epoch + 1}/{train_cfg.epochs} done, loss {final_loss:.6f}, lr {lr:g}")
    finally:
        metrics.close()
    if val_idx:
        v = _val_psnr(model, pset, val_idx, train_cfg.sigma, train_cfg.seed)
        if not (v <= state.best_val_psnr):
            state.best_val_psnr = v
    save(ckpt_path)
    return TrainResult(ckpt_path, metrics_path, final_loss, state, model)
