"""Dense tensors with tape-based reverse-mode differentiation.

Design notes:
  * numpy holds the values; every differentiable op is a pair of a forward
    kernel and a backward closure recorded on the active tape.
  * Replaying the tape in exact reverse execution order is a valid reverse
    topological order of the dynamic compute graph, so arbitrary DAGs
    (shared subexpressions, residual skips) need no extra bookkeeping beyond
    gradient accumulation per tensor.
  * There is no broadcasting framework. Only the operations the denoising
    network needs exist, each with explicit shape checks.
  * dtype is carried per tensor and must agree across operands; training
    runs in float32, gradient verification in float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AutodiffError, NumericError, ShapeError

FLOAT_DTYPES = (np.float32, np.float64)

# Raise on any non-finite op output. Cheap relative to the surrounding
# arithmetic at the scales this engine targets; NaNs must never pass silently.
CHECK_FINITE = True


def _check_finite(name: str, arr: np.ndarray) -> None:
    if CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in output of {name}")


class Tensor:
    """A dense array plus optional gradient.

    requires_grad marks leaves (parameters, probed inputs) whose .grad is
    populated by backward(). Intermediates produced under an active tape
    propagate gradients internally without exposing .grad unless they are
    themselves marked requires_grad.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: "Tape | None" = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Same values, cut off from any tape."""
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        """Reverse-mode sweep from this scalar; fills .grad on reachable leaves."""
        if self._tape is None:
            raise AutodiffError("backward on a tensor that no tape recorded")
        if self.data.shape != ():
            raise ShapeError(f"backward needs a scalar, got shape {self.data.shape}")
        self._tape.backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return scale(self, -1.0)


@dataclass
class _Record:
    out: Tensor
    inputs: tuple
    backward_fn: object  # grad_out -> tuple of per-input grads (None = no grad)
    name: str


class Tape:
    """Ordered record of executed differentiable operations.

    Use as a context manager around the forward pass; backward() replays the
    records last-to-first and then clears them. A consumed tape cannot be
    replayed again.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self.consumed = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise AutodiffError("tape already consumed by a previous backward")
        self.consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            if rec.out.requires_grad:
                rec.out.grad = g.copy() if rec.out.grad is None else rec.out.grad + g
            input_grads = rec.backward_fn(g)
            for t, gi in zip(rec.inputs, input_grads):
                if gi is None or not isinstance(t, Tensor):
                    continue
                if t._tape is self:
                    key = id(t)
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi
                elif t.requires_grad:
                    t.grad = gi.copy() if t.grad is None else t.grad + gi
        self.records.clear()


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _tracked(t) -> bool:
    return isinstance(t, Tensor) and (t.requires_grad or t._tape is _active_tape() and t._tape is not None)


def _emit(name: str, out_data: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
    """Wrap a forward result; record on the active tape if any input is live."""
    _check_finite(name, out_data)
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and not tape.consumed and any(_tracked(t) for t in inputs):
        out._tape = tape
        tape.records.append(_Record(out, inputs, backward_fn, name))
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_dtype(name: str, *tensors: Tensor) -> None:
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise ShapeError(f"{name}: mixed dtypes {dt} and {t.dtype}")


def zero_grads(params) -> None:
    for p in (params.values() if isinstance(params, dict) else params):
        p.grad = None


# ---------------------------------------------------------------------------
# elementwise and reduction ops

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_dtype("add", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_dtype("sub", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")
    return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_dtype("mul", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = a.dtype.type(c)
    return _emit("scale", a.data * c, (a,), lambda g: (g * c,))


# Sign trace for finite-difference verification: while a list is installed
# here, every leaky_relu records which inputs were positive, letting the
# checker detect a perturbation that crossed the kink (see
# finite_difference_check). None outside verification; zero cost then.
_SIGN_TRACE: list | None = None


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    s = x.dtype.type(slope)
    pos = xd > 0
    if _SIGN_TRACE is not None:
        _SIGN_TRACE.append(pos)
    out = np.where(pos, xd, xd * s)
    return _emit("leaky_relu", out, (x,), lambda g: (g * np.where(pos, x.dtype.type(1), s),))


def sum_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    shape, dt = x.shape, x.dtype
    return _emit("sum_all", np.asarray(x.data.sum(), dtype=dt), (x,),
                 lambda g: (np.full(shape, g, dtype=dt),))


def mean_axis(x: Tensor, axis: int) -> Tensor:
    """Mean over one axis. Backward spreads the gradient uniformly."""
    x = _as_tensor(x)
    n = x.shape[axis]
    if n == 0:
        raise ShapeError("mean_axis over an empty axis")
    inv = x.dtype.type(1.0 / n)

    def bw(g):
        return (np.repeat(np.expand_dims(g * inv, axis), n, axis=axis),)

    return _emit("mean_axis", x.data.mean(axis=axis, dtype=x.dtype), (x,), bw)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements; returns a scalar tensor."""
    a, b = _as_tensor(a), _as_tensor(b)
    _same_dtype("mse", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data
    out = np.asarray(np.mean(diff * diff, dtype=a.dtype), dtype=a.dtype)
    coef = a.dtype.type(2.0 / diff.size)

    def bw(g):
        gd = g * coef * diff
        return (gd, -gd)

    return _emit("mse", out, (a, b), bw)


# ---------------------------------------------------------------------------
# shape ops

def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    old = x.shape
    return _emit("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _emit("transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (g.transpose(inv),))


def concat(tensors, axis: int) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of zero tensors")
    _same_dtype("concat", *ts)
    ref = list(ts[0].shape)
    for t in ts[1:]:
        s = list(t.shape)
        if len(s) != len(ref) or s[:axis] != ref[:axis] or s[axis + 1:] != ref[axis + 1:]:
            raise ShapeError(f"concat: incompatible shapes {ts[0].shape} vs {t.shape}")
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit("concat", np.concatenate([t.data for t in ts], axis=axis), tuple(ts), bw)


def concat_channels(maps) -> Tensor:
    """Concatenate feature maps along the channel axis ([C,H,W] or [N,C,H,W])."""
    ts = [_as_tensor(t) for t in maps]
    nd = ts[0].ndim
    if nd not in (3, 4):
        raise ShapeError(f"concat_channels: rank {nd} map")
    return concat(ts, axis=0 if nd == 3 else 1)


def slice_channels(x: Tensor, lo: int, hi: int) -> Tensor:
    x = _as_tensor(x)
    if x.ndim not in (3, 4):
        raise ShapeError(f"slice_channels: rank {x.ndim}")
    ax = 0 if x.ndim == 3 else 1
    if not (0 <= lo <= hi <= x.shape[ax]):
        raise ShapeError(f"slice_channels: [{lo}:{hi}] out of {x.shape[ax]} channels")
    idx = [slice(None)] * x.ndim
    idx[ax] = slice(lo, hi)
    idx = tuple(idx)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _emit("slice_channels", x.data[idx].copy(), (x,), bw)


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows of a [P, d] matrix by integer index; backward scatter-adds."""
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"gather_rows: need [P, d], got {x.shape}")
    idx = np.asarray(idx)
    if idx.ndim != 1:
        raise ShapeError("gather_rows: index must be 1-D")
    p, d = x.shape

    def bw(g):
        gx = np.empty((p, d), dtype=g.dtype)
        for c in range(d):  # bincount per column: deterministic accumulation
            gx[:, c] = np.bincount(idx, weights=g[:, c], minlength=p)
        return (gx.astype(g.dtype, copy=False),)

    return _emit("gather_rows", x.data[idx], (x,), bw)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_dtype("matmul", a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _emit("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map of row vectors: [n, i] x [o, i] -> [n, o], plus optional bias."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    _same_dtype("linear", x, weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: x {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} vs out dim {weight.shape[0]}")
        out = out + bias.data
    xd, wd = x.data, weight.data

    def bw(g):
        gb = g.sum(axis=0) if bias is not None else None
        return (g @ wd, g.T @ xd, gb)

    return _emit("linear", out, (x, weight, bias), bw)


def edge_matvec(theta: Tensor, x: Tensor) -> Tensor:
    """Per-row matrix times vector: [E, o, i] x [E, i] -> [E, o]."""
    theta, x = _as_tensor(theta), _as_tensor(x)
    _same_dtype("edge_matvec", theta, x)
    if theta.ndim != 3 or x.ndim != 2 or theta.shape[0] != x.shape[0] or theta.shape[2] != x.shape[1]:
        raise ShapeError(f"edge_matvec: {theta.shape} vs {x.shape}")
    td, xd = theta.data, x.data
    out = np.matmul(td, xd[:, :, None])[:, :, 0]

    def bw(g):
        gtheta = g[:, :, None] * xd[:, None, :]
        gx = np.matmul(td.transpose(0, 2, 1), g[:, :, None])[:, :, 0]
        return (gtheta, gx)

    return _emit("edge_matvec", out, (theta, x), bw)


def circulant_matvec(generators: Tensor, x: Tensor, rows_per_matrix: int) -> Tensor:
    """Apply a stack of row-subsampled circulant matrices to row vectors.

    generators: [M, n]; each matrix m keeps rows 0..r-1 of the full circulant
    whose row j is generator m cyclically shifted right by j. Output column
    m*r + j is therefore sum_t g_m[(t - j) mod n] * x[t]. Computed from the
    generators directly, r rolled matmuls, never expanding the dense matrix.
    """
    generators, x = _as_tensor(generators), _as_tensor(x)
    _same_dtype("circulant_matvec", generators, x)
    if generators.ndim != 2 or x.ndim != 2:
        raise ShapeError(f"circulant_matvec: generators {generators.shape}, x {x.shape}")
    m, n = generators.shape
    if x.shape[1] != n:
        raise ShapeError(f"circulant_matvec: x width {x.shape[1]} != generator length {n}")
    r = int(rows_per_matrix)
    if r < 1 or r > n:
        raise ShapeError(f"circulant_matvec: rows_per_matrix {r} outside [1, {n}]")
    gd, xd = generators.data, x.data
    e = xd.shape[0]
    out = np.empty((e, m, r), dtype=xd.dtype)
    for j in range(r):
        out[:, :, j] = xd @ np.roll(gd, j, axis=1).T

    def bw(g):
        # materializing the [m*r, n] operator is tiny next to the edge count
        # and turns the backward into two dense matmuls; column m_i*r + j of
        # the forward is row m_i of the generators shifted right by j
        w = np.empty((m * r, n), dtype=gd.dtype)
        for j in range(r):
            w[j::r] = np.roll(gd, j, axis=1)
        gx = g @ w
        gw = g.T @ np.ascontiguousarray(xd)
        ggen = np.zeros_like(gd)
        for j in range(r):
            ggen += np.roll(gw[j::r], -j, axis=1)
        return (ggen, gx)

    return _emit("circulant_matvec", out.reshape(e, m * r), (generators, x), bw)


# ---------------------------------------------------------------------------
# image ops

def _pad_spatial(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, padding: int | None = None) -> Tensor:
    """2-D convolution with zero padding preserving spatial size.

    x: [C, H, W] or [N, C, H, W]; kernel: [O, C, k, k] with k odd;
    padding must equal (k - 1) / 2 (defaulted when omitted).
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    _same_dtype("conv2d", x, kernel)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ShapeError(f"conv2d: input rank {x.ndim}")
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3] or kernel.shape[2] % 2 == 0:
        raise ShapeError(f"conv2d: kernel {kernel.shape} must be [O, C, k, k] with k odd")
    n, c, h, w = xd.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"conv2d: kernel expects {kc} channels, input has {c}")
    pad = (kh - 1) // 2 if padding is None else int(padding)
    if pad != (kh - 1) // 2:
        raise ShapeError(f"conv2d: padding {pad} does not preserve size for k={kh}")
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (o,):
            raise ShapeError(f"conv2d: bias {bias.shape} vs {o} output channels")

    xp = _pad_spatial(xd, pad)
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h * w, c * kh * kw)
    kflat = kernel.data.reshape(o, c * kh * kw)
    out2 = cols @ kflat.T
    if bias is not None:
        out2 = out2 + bias.data
    out = out2.reshape(n, h, w, o).transpose(0, 3, 1, 2)
    kd = kernel.data

    def bw(g):
        g4 = g[None] if squeeze else g
        g2 = np.ascontiguousarray(g4.transpose(0, 2, 3, 1)).reshape(n * h * w, o)
        gk = (g2.T @ cols).reshape(o, c, kh, kw)
        gb = g4.sum(axis=(0, 2, 3)) if bias is not None else None
        gxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=g.dtype)
        for u in range(kh):
            for v in range(kw):
                contrib = np.tensordot(g4, kd[:, :, u, v], axes=([1], [0]))  # [N,H,W,C]
                gxp[:, :, u:u + h, v:v + w] += contrib.transpose(0, 3, 1, 2)
        gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        return (gx[0] if squeeze else gx, gk, gb)

    out = out[0] if squeeze else out
    return _emit("conv2d", np.ascontiguousarray(out), (x, kernel, bias), bw)


def batch_norm(x: Tensor, scale_p: Tensor, shift_p: Tensor,
               running_mean: np.ndarray | None, running_var: np.ndarray | None,
               eps: float = 1e-5, momentum: float = 0.9, mode: str = "train") -> Tensor:
    """Per-channel batch normalization over (batch, height, width).

    Train mode normalizes with batch statistics, differentiates through them,
    and updates the running arrays in place:
        running <- momentum * running + (1 - momentum) * batch
    Inference mode requires initialized running statistics and is a plain
    per-channel affine map.
    """
    x, scale_p, shift_p = _as_tensor(x), _as_tensor(scale_p), _as_tensor(shift_p)
    _same_dtype("batch_norm", x, scale_p, shift_p)
    if x.ndim != 4:
        raise ShapeError(f"batch_norm: need [N, C, H, W], got {x.shape}")
    n, c, h, w = x.shape
    if scale_p.shape != (c,) or shift_p.shape != (c,):
        raise ShapeError(f"batch_norm: scale/shift must be [{c}]")
    if mode not in ("train", "inference"):
        raise ShapeError(f"batch_norm: unknown mode {mode!r}")
    dt = x.dtype
    eps_t = dt.type(eps)
    xd = x.data
    axes = (0, 2, 3)
    m = n * h * w

    if mode == "train":
        mean = xd.mean(axis=axes, dtype=dt)
        xmu = xd - mean[None, :, None, None]
        var = np.mean(xmu * xmu, axis=axes, dtype=dt)
        if running_mean is not None and running_var is not None:
            mom = dt.type(momentum)
            running_mean *= mom
            running_mean += (dt.type(1) - mom) * mean
            running_var *= mom
            running_var += (dt.type(1) - mom) * var
        ivar = dt.type(1) / np.sqrt(var + eps_t)
        xhat = xmu * ivar[None, :, None, None]
        out = scale_p.data[None, :, None, None] * xhat + shift_p.data[None, :, None, None]
        sd = scale_p.data

        def bw(g):
            gshift = g.sum(axis=axes)
            gscale = (g * xhat).sum(axis=axes)
            gxhat = g * sd[None, :, None, None]
            gvar = np.sum(gxhat * xmu, axis=axes) * (dt.type(-0.5) * ivar ** 3)
            gmean = -ivar * np.sum(gxhat, axis=axes) + gvar * (dt.type(-2.0 / m)) * np.sum(xmu, axis=axes)
            gx = (gxhat * ivar[None, :, None, None]
                  + (gvar * dt.type(2.0 / m))[None, :, None, None] * xmu
                  + (gmean * dt.type(1.0 / m))[None, :, None, None])
            return (gx, gscale, gshift)

        return _emit("batch_norm", out, (x, scale_p, shift_p), bw)

    if running_mean is None or running_var is None:
        raise NumericError("batch_norm inference without initialized running statistics")
    ivar = dt.type(1) / np.sqrt(running_var.astype(dt) + eps_t)
    xhat = (xd - running_mean.astype(dt)[None, :, None, None]) * ivar[None, :, None, None]
    out = scale_p.data[None, :, None, None] * xhat + shift_p.data[None, :, None, None]
    sd = scale_p.data

    def bw_inf(g):
        gshift = g.sum(axis=axes)
        gscale = (g * xhat).sum(axis=axes)
        gx = g * (sd * ivar)[None, :, None, None]
        return (gx, gscale, gshift)

    return _emit("batch_norm", out, (x, scale_p, shift_p), bw_inf)


# ---------------------------------------------------------------------------
# finite differences

@dataclass
class FdReport:
    """Max relative error between analytic and central-difference gradients."""
    per_block: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)  # elements at a kink, per block
    step: float = 1e-5
    tolerance: float = 1e-4

    @property
    def max_rel_error(self) -> float:
        return max(self.per_block.values()) if self.per_block else 0.0

    @property
    def n_skipped(self) -> int:
        return sum(self.skipped.values())

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def __str__(self):
        lines = [f"{name}: {err:.3e}" for name, err in self.per_block.items()]
        if self.n_skipped:
            lines.append(f"skipped {self.n_skipped} element(s) at an activation kink")
        lines.append(f"max {self.max_rel_error:.3e} tolerance {self.tolerance:.1e} "
                     f"-> {'ok' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _eval_sign_traced(f) -> tuple[float, list]:
    global _SIGN_TRACE
    _SIGN_TRACE = []
    try:
        return float(f().data), _SIGN_TRACE
    finally:
        _SIGN_TRACE = None


def _signs_differ(a: list, b: list) -> bool:
    if len(a) != len(b):
        return True
    return any(not np.array_equal(x, y) for x, y in zip(a, b))


def finite_difference_check(f, params: dict, step: float = 1e-5,
                            tolerance: float = 1e-4) -> FdReport:
    """Compare analytic gradients of scalar f() against central differences.

    f recomputes the loss from the current values of the given parameter
    tensors. Verification runs in 64-bit; every element of every block is
    perturbed by +-step. Relative error uses max(|analytic|, |numeric|, 1e-6)
    as denominator, so gradients below 1e-6 are judged on absolute error.

    Leaky ReLU is not differentiable at zero, and central differences are
    invalid for any perturbation that moves some activation across it. Such
    crossings are detected exactly (the two evaluations disagree on an
    activation sign); the element is retried with a smaller step and skipped,
    not failed, if even the smallest step still straddles the kink.
    """
    for name, p in params.items():
        if p.dtype != np.float64:
            raise NumericError(f"finite_difference_check needs float64 parameters ({name} is {p.dtype})")
        p.grad = None
        p.requires_grad = True

    with Tape():
        loss = f()
        loss.backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()}

    report = FdReport(step=step, tolerance=tolerance)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        an = analytic[name].reshape(-1)
        worst = 0.0
        n_skipped = 0
        for i in range(flat.size):
            orig = flat[i]
            rel = None
            for h in (step, step / 8.0, step / 64.0):
                flat[i] = orig + h
                lp, sp = _eval_sign_traced(f)
                flat[i] = orig - h
                lm, sm = _eval_sign_traced(f)
                flat[i] = orig
                fd = (lp - lm) / (2.0 * h)
                err = abs(fd - an[i]) / max(abs(fd), abs(an[i]), 1e-6)
                if not _signs_differ(sp, sm):
                    rel = err if rel is None else min(rel, err)
                    break
                if err < tolerance:  # crossed, but agreement is conclusive anyway
                    rel = err if rel is None else min(rel, err)
                    break
            if rel is None:
                n_skipped += 1  # at the kink for every usable step
            else:
                worst = max(worst, rel)
        report.per_block[name] = worst
        if n_skipped:
            report.skipped[name] = n_skipped
    return report
