"""Reverse-mode automatic differentiation on float32 numpy arrays.

A Tensor wraps an ndarray plus an optional gradient accumulator. Operations
record their inputs and an adjoint rule on the output tensor; ``backward``
replays the recorded graph once, in reverse execution order, depositing
d(loss)/d(tensor) into each tracked tensor's ``grad``. The graph is rebuilt
eagerly on every forward pass and garbage-collected once the output tensors
die, which is the lifetime attack loops need when they differentiate with
respect to inputs repeatedly.

Tensors are immutable once created except for the ``grad`` accumulator.
A graph and its tensors belong to one logical thread; independent graphs
may run concurrently (the tracking switch is thread-local).
"""

from __future__ import annotations

import struct
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float32

TENSOR_MAGIC = b"SEDA"
TENSOR_FORMAT_VERSION = 1


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (forward-only evaluation)."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """Float32 n-d array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "is_param", "_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.is_param = False
        self._grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def grad(self) -> np.ndarray | None:
        """Gradient accumulator; materialized lazily for tracked tensors."""
        if self.requires_grad and self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self._grad is not None:
            self._grad[...] = 0.0

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars and ndarrays are lifted to constant tensors
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result, recording the graph edge when tracking is on."""
    track = _grad_enabled() and any(p.requires_grad for p in parents)
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = track
    t.is_param = False
    t._grad = None
    t._parents = tuple(parents) if track else ()
    t._backward = backward_fn if track else None
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``grad`` of every tracked tensor.

    The loss must be scalar. Each recorded operation is visited exactly once,
    in reverse execution order. Repeated calls without zeroing accumulate.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return  # constant loss: nothing tracked, all grads stay zero
    order = _topo_order(loss)
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        a = adjoint.pop(id(t), None)
        if a is None:
            continue
        if t._backward is None or t._grad is not None:
            # leaves always accumulate; interior tensors only once someone
            # has materialized their accumulator
            t.grad[...] += a
        if t._backward is None:
            continue
        for p, pa in zip(t._parents, t._backward(a)):
            if pa is None or not p.requires_grad:
                continue
            held = adjoint.get(id(p))
            if held is None:
                adjoint[id(p)] = pa
            else:
                # out of place: closure outputs may alias each other
                adjoint[id(p)] = held + pa
    return None


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, DTYPE(0)), (a,), lambda g: (g * mask,))


_GELU_C = DTYPE(0.7978845608028654)  # sqrt(2/pi)
_GELU_A = DTYPE(0.044715)


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    x = a.data
    u = _GELU_C * (x + _GELU_A * x * x * x)
    t = np.tanh(u)
    out = DTYPE(0.5) * x * (1 + t)

    def bw(g):
        du = _GELU_C * (1 + 3 * _GELU_A * x * x)
        d = DTYPE(0.5) * (1 + t) + DTYPE(0.5) * x * (1 - t * t) * du
        return (g * d,)

    return _make(out, (a,), bw)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))
    # the result is a view; tensors are immutable so sharing the buffer is safe
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a: Tensor, key) -> Tensor:
    """Basic slicing/int indexing only (no repeated-index fancy indexing)."""
    out = a.data[key].copy()
    shape = a.data.shape

    def bw(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[key] = g
        return (full,)

    return _make(out, (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    ts = list(tensors)
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=axis))

    return _make(out, ts, bw)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims, dtype=DTYPE)
    shape = a.data.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).astype(DTYPE, copy=True),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).astype(DTYPE, copy=True),)

    return _make(out, (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.data.shape[ax]
    s = tsum(a, axis=axis, keepdims=keepdims)
    return mul(s, Tensor(DTYPE(1.0 / count)))


# ---------------------------------------------------------------------------
# linear algebra and convolution
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batch broadcasting on leading axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    na, nb = a.requires_grad, b.requires_grad

    if bd.ndim == 2:
        # stacked-vectors case (every affine layer): one flat GEMM each way
        k = ad.shape[-1]
        a2 = ad.reshape(-1, k)
        out = np.matmul(a2, bd).reshape(ad.shape[:-1] + (bd.shape[1],))

        def bw2(g):
            g2 = g.reshape(-1, bd.shape[1])
            ga = np.matmul(g2, bd.T).reshape(ad.shape) if na else None
            gb = np.matmul(a2.T, g2) if nb else None
            return ga, gb

        return _make(out, (a, b), bw2)

    out = np.matmul(ad, bd)

    def bw(g):
        ga = gb = None
        if na:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        if nb:
            gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return _make(out, (a, b), bw)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation over B x C x H x W input with O x C x kH x kW kernel."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d needs 4-d input/kernel, got {x.shape}, {kernel.shape}")
    B, C, H, W = x.shape
    O, C2, kh, kw = kernel.shape
    if C != C2:
        raise ShapeError(f"conv2d channel mismatch: input {C} vs kernel {C2}")
    if stride < 1:
        raise ValueError(f"conv2d stride must be >= 1, got {stride}")
    if H + 2 * padding < kh or W + 2 * padding < kw:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than padded input "
            f"{H + 2 * padding}x{W + 2 * padding}"
        )
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # B, C, Ho, Wo, kh, kw
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
        B, Ho * Wo, C * kh * kw
    )
    km = kernel.data.reshape(O, C * kh * kw)
    out = np.matmul(cols, km.T).transpose(0, 2, 1).reshape(B, O, Ho, Wo)
    out = np.ascontiguousarray(out)
    hp, wp = xp.shape[2], xp.shape[3]

    nx, nk = x.requires_grad, kernel.requires_grad

    def bw(g):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(B * Ho * Wo, O)
        gk = None
        if nk:
            gk = np.matmul(gm.T, cols.reshape(B * Ho * Wo, C * kh * kw)).reshape(O, C, kh, kw)
        if not nx:
            return None, gk
        if stride == 1:
            # input gradient is a full correlation of g with the flipped kernel
            qh, qw = kh - 1 - padding, kw - 1 - padding
            gp = np.pad(g, ((0, 0), (0, 0), (qh, qh), (qw, qw)))
            gwin = np.lib.stride_tricks.sliding_window_view(gp, (kh, kw), axis=(2, 3))
            gcols2 = np.ascontiguousarray(gwin.transpose(0, 2, 3, 1, 4, 5)).reshape(
                B * H * W, O * kh * kw
            )
            kflip = km.reshape(O, C, kh, kw)[:, :, ::-1, ::-1]
            kmat = np.ascontiguousarray(kflip.transpose(0, 2, 3, 1)).reshape(O * kh * kw, C)
            gx = np.matmul(gcols2, kmat).reshape(B, H, W, C).transpose(0, 3, 1, 2)
            return np.ascontiguousarray(gx), gk
        gcols = np.matmul(gm, km).reshape(B, Ho, Wo, C, kh, kw)
        gcols = np.ascontiguousarray(gcols.transpose(0, 3, 4, 5, 1, 2))
        gxp = np.zeros((B, C, hp, wp), dtype=DTYPE)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + Ho * stride : stride, j : j + Wo * stride : stride] += gcols[
                    :, :, i, j
                ]
        if padding:
            gxp = gxp[:, :, padding : padding + H, padding : padding + W]
        return np.ascontiguousarray(gxp), gk

    return _make(out, (x, kernel), bw)


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping size x size max pooling; H and W must divide evenly."""
    B, C, H, W = x.shape
    if H % size or W % size:
        raise ShapeError(f"max_pool2d: {H}x{W} not divisible by {size}")
    Ho, Wo = H // size, W // size
    v = x.data.reshape(B, C, Ho, size, Wo, size).transpose(0, 1, 2, 4, 3, 5)
    v = np.ascontiguousarray(v).reshape(B, C, Ho, Wo, size * size)
    idx = v.argmax(axis=-1)
    out = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gv = np.zeros((B, C, Ho, Wo, size * size), dtype=DTYPE)
        np.put_along_axis(gv, idx[..., None], g[..., None], axis=-1)
        gv = gv.reshape(B, C, Ho, Wo, size, size).transpose(0, 1, 2, 4, 3, 5)
        return (np.ascontiguousarray(gv).reshape(B, C, H, W),)

    return _make(np.ascontiguousarray(out), (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply per-feature gain and bias."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True, dtype=DTYPE)
    xc = xd - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True, dtype=DTYPE)
    inv = DTYPE(1.0) / np.sqrt(var + DTYPE(eps))
    xn = xc * inv
    out = xn * gain.data + bias.data
    reduce_axes = tuple(range(xd.ndim - 1))

    def bw(g):
        dgain = (g * xn).sum(axis=reduce_axes, dtype=DTYPE)
        dbias = g.sum(axis=reduce_axes, dtype=DTYPE)
        dxn = g * gain.data
        m1 = dxn.mean(axis=-1, keepdims=True, dtype=DTYPE)
        m2 = (dxn * xn).mean(axis=-1, keepdims=True, dtype=DTYPE)
        dx = inv * (dxn - m1 - xn * m2)
        return dx.astype(DTYPE, copy=False), dgain, dbias

    return _make(out.astype(DTYPE, copy=False), (x, gain, bias), bw)


# ---------------------------------------------------------------------------
# probability and loss ops
# ---------------------------------------------------------------------------


def _softmax_data(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True, dtype=DTYPE)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max subtraction."""
    s = _softmax_data(x.data)

    def bw(g):
        dot = (g * s).sum(axis=-1, keepdims=True, dtype=DTYPE)
        return (s * (g - dot),)

    return _make(s, (x,), bw)


def softmax_t(logits: Tensor, temperature: float) -> Tensor:
    """Temperature softmax: softmax(logits / T). T = 1 is the standard softmax."""
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    invt = DTYPE(1.0 / temperature)
    s = _softmax_data(logits.data * invt)

    def bw(g):
        dot = (g * s).sum(axis=-1, keepdims=True, dtype=DTYPE)
        return (s * (g - dot) * invt,)

    return _make(s, (logits,), bw)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    z = logits.data
    if z.ndim != 2:
        raise ShapeError(f"cross_entropy expects B x K logits, got {z.shape}")
    y = np.asarray(labels)
    if y.shape != (z.shape[0],):
        raise ShapeError(f"labels shape {y.shape} does not match batch {z.shape[0]}")
    K = z.shape[1]
    if y.min(initial=0) < 0 or y.max(initial=0) >= K:
        raise ValueError(f"label out of range [0, {K})")
    B = z.shape[0]
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1, dtype=DTYPE))
    nll = lse - z[np.arange(B), y]
    out = np.asarray(nll.mean(dtype=DTYPE))

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(B), y] -= DTYPE(1.0)
        return (p * (DTYPE(float(g) / B)),)

    return _make(out, (logits,), bw)


def soft_target_loss(student_logits: Tensor, teacher_probs, temperature: float) -> Tensor:
    """Distillation loss: T^2-scaled cross-entropy of softened student vs teacher rows.

    The T^2 factor keeps gradient magnitude temperature-invariant. Teacher rows
    are treated as constants; each must sum to 1 within 1e-4.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    p = teacher_probs.data if isinstance(teacher_probs, Tensor) else np.asarray(
        teacher_probs, dtype=DTYPE
    )
    z = student_logits.data
    if z.shape != p.shape or z.ndim != 2:
        raise ShapeError(f"logits {z.shape} vs teacher rows {p.shape}")
    sums = p.sum(axis=1, dtype=np.float64)
    if np.max(np.abs(sums - 1.0)) > 1e-4:
        raise ValueError("teacher probability rows must each sum to 1 within 1e-4")
    B = z.shape[0]
    t2 = DTYPE(temperature * temperature)
    zs = z * DTYPE(1.0 / temperature)
    m = zs.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(zs - m).sum(axis=1, keepdims=True, dtype=DTYPE))
    logq = zs - lse
    per = -(p * logq).sum(axis=1, dtype=DTYPE)
    out = np.asarray(per.mean(dtype=DTYPE) * t2)

    def bw(g):
        q = np.exp(logq)
        return ((q - p) * DTYPE(float(g) * temperature / B),)

    return _make(out, (student_logits,), bw)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor | np.ndarray,
    h: float,
    coords: Iterable[int] | None = None,
) -> float:
    """Compare analytic gradients of a scalar function against central differences.

    Returns max over coordinates of |analytic - numeric| / max(1, |analytic|).
    ``coords`` restricts the sweep to a subset of flat indices (all by default).
    """
    if not h > 0:
        raise ValueError(f"step h must be > 0, got {h}")
    xd = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=DTYPE)
    probe = Tensor(xd.copy(), requires_grad=True)
    out = f(probe)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ShapeError("grad_check requires a scalar-valued function")
    backward(out)
    analytic = probe.grad.reshape(-1).copy()

    flat = xd.reshape(-1)
    indices = range(flat.size) if coords is None else coords
    hf = DTYPE(h)
    worst = 0.0
    with no_grad():
        for i in indices:
            xp = flat.copy()
            xp[i] += hf
            fp = float(f(Tensor(xp.reshape(xd.shape))).data)
            xm = flat.copy()
            xm[i] -= hf
            fm = float(f(Tensor(xm.reshape(xd.shape))).data)
            numeric = (fp - fm) / (2.0 * float(hf))
            a = float(analytic[i])
            err = abs(a - numeric) / max(1.0, abs(a))
            if err > worst:
                worst = err
    return worst


# ---------------------------------------------------------------------------
# serialization: magic "SEDA", version u16, rank u8, extents u32 LE, f32 LE data
# ---------------------------------------------------------------------------


def tensor_to_bytes(t: Tensor | np.ndarray) -> bytes:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=DTYPE)
    shape = arr.shape  # before ascontiguousarray, which promotes 0-d to 1-d
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = TENSOR_MAGIC + struct.pack("<HB", TENSOR_FORMAT_VERSION, len(shape))
    header += struct.pack(f"<{len(shape)}I", *shape)
    return header + arr.tobytes()


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one tensor record; returns (array, offset past the record)."""
    if len(buf) < offset + 7:
        raise ValueError("truncated tensor record header")
    if buf[offset : offset + 4] != TENSOR_MAGIC:
        raise ValueError(f"bad tensor magic {buf[offset:offset + 4]!r}")
    version, rank = struct.unpack_from("<HB", buf, offset + 4)
    if version != TENSOR_FORMAT_VERSION:
        raise ValueError(f"unsupported tensor format version {version}")
    pos = offset + 7
    if len(buf) < pos + 4 * rank:
        raise ValueError("truncated tensor extents")
    shape = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    count = int(np.prod(shape)) if rank else 1
    end = pos + 4 * count
    if len(buf) < end:
        raise ValueError("truncated tensor payload")
    arr = np.frombuffer(buf[pos:end], dtype="<f4").reshape(shape).astype(DTYPE)
    return arr, end


def save_tensor(t: Tensor | np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(t))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, end = tensor_from_bytes(buf)
    if end != len(buf):
        raise ValueError(f"{len(buf) - end} trailing bytes after tensor payload")
    return arr
