"""Dense float64 tensors with reverse-mode automatic differentiation.

All values live in numpy float64 arrays, row-major, with image-like data in
N x C x H x W layout. Every op returns a fresh tensor that records its parent
tensors and a closure mapping the output gradient to per-parent gradients;
``Tensor.backward`` walks that recorded graph once in reverse topological
order and accumulates gradients into every reachable leaf. Tensors are
immutable after creation except for gradient accumulation, so independent
graphs can run on separate threads.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

_nan_checks = True


def set_nan_checks(enabled: bool) -> None:
    """Toggle the finite-output assertion applied after every forward op.

    Non-finite values (NaN/Inf) produced from finite inputs indicate a bug
    and raise ``FloatingPointError`` instead of propagating silently.
    """
    global _nan_checks
    _nan_checks = bool(enabled)


class Tensor:
    """A dense float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    # ------------------------------------------------------------------
    # construction

    @staticmethod
    def zeros(shape, requires_grad=False) -> "Tensor":
        return Tensor(np.zeros(shape), requires_grad=requires_grad)

    @staticmethod
    def full(shape, value, requires_grad=False) -> "Tensor":
        return Tensor(np.full(shape, float(value)), requires_grad=requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same values, no graph participation."""
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------
    # backward

    def backward(self) -> None:
        """Populate ``grad`` on every requires_grad leaf reachable from here.

        Must be called on a scalar. Repeated calls accumulate into existing
        leaf gradients; fan-out within one call accumulates across branches.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        topo = _toposort(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg

    # operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return take_slice(self, idx)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def abs(self):
        return absolute(self)

    def clamp(self, lo=None, hi=None):
        return clamp(self, lo, hi)


def create(shape, fill=0.0, requires_grad: bool = False) -> Tensor:
    """Build a tensor of ``shape`` from a scalar fill or a flat value list."""
    shape = tuple(int(d) for d in shape)
    if any(d < 0 for d in shape):
        raise ValueError(f"negative extent in shape {shape}")
    n = int(np.prod(shape)) if shape else 1
    if np.isscalar(fill):
        data = np.full(shape, float(fill))
    else:
        values = np.asarray(fill, dtype=np.float64).ravel()
        if values.size != n:
            raise ValueError(
                f"shape {shape} needs {n} values, got {values.size}"
            )
        data = values.reshape(shape)
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data)


# ----------------------------------------------------------------------
# graph plumbing


def _toposort(root: Tensor):
    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return topo


def _op(data, parents, vjp) -> Tensor:
    if _nan_checks and not np.isfinite(data).all():
        raise FloatingPointError("non-finite value produced by a forward op")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out._parents = ()
        out._vjp = None
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ----------------------------------------------------------------------
# elementwise / broadcasting ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _op(data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _op(data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _op(data, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _op(data, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _op(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, p) -> Tensor:
    p = float(p)
    data = a.data ** p

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    return _op(data, (a,), vjp)


def maximum(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    pick_a = a.data >= b.data
    data = np.where(pick_a, a.data, b.data)

    def vjp(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return _op(data, (a, b), vjp)


def minimum(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    pick_a = a.data <= b.data
    data = np.where(pick_a, a.data, b.data)

    def vjp(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return _op(data, (a, b), vjp)


def clamp(a: Tensor, lo=None, hi=None) -> Tensor:
    """Clip to [lo, hi]; gradient is zero outside the closed interval."""
    if lo is None and hi is None:
        raise ValueError("clamp needs at least one bound")
    data = np.clip(a.data, lo, hi)
    inside = np.ones(a.shape, dtype=bool)
    if lo is not None:
        inside &= a.data >= lo
    if hi is not None:
        inside &= a.data <= hi

    def vjp(g):
        return (g * inside,)

    return _op(data, (a,), vjp)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def vjp(g):
        return (g * mask,)

    return _op(np.where(mask, a.data, 0.0), (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign for overflow-free evaluation
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _op(out, (a,), vjp)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def vjp(g):
        return (g * data,)

    return _op(data, (a,), vjp)


def absolute(a: Tensor) -> Tensor:
    def vjp(g):
        return (g * np.sign(a.data),)

    return _op(np.abs(a.data), (a,), vjp)


# ----------------------------------------------------------------------
# reductions


def _expand_reduced(g, axis, keepdims, shape):
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if np.isscalar(axis) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def reduce_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        return (_expand_reduced(g, axis, keepdims, a.shape),)

    return _op(np.asarray(data, dtype=np.float64), (a,), vjp)


def reduce_mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.size / np.asarray(data).size

    def vjp(g):
        return (_expand_reduced(g, axis, keepdims, a.shape) / count,)

    return _op(np.asarray(data, dtype=np.float64), (a,), vjp)


def reduce_max(a: Tensor, axis=None, keepdims=False) -> Tensor:
    data = a.data.max(axis=axis, keepdims=keepdims)

    def vjp(g):
        full = _expand_reduced(np.asarray(data), axis, keepdims, a.shape)
        mask = a.data == full
        counts = mask.sum(axis=axis, keepdims=True)
        ge = _expand_reduced(g, axis, keepdims, a.shape)
        # ties share the gradient evenly
        return (ge * mask / counts,)

    return _op(np.asarray(data, dtype=np.float64), (a,), vjp)


def ordered_sum(a: Tensor, axis: int) -> Tensor:
    """Sum along ``axis`` in ascending value order.

    The fixed summation order makes the result bitwise invariant under any
    permutation of the reduced axis (used for neighbor-slot reductions).
    """
    data = np.sort(a.data, axis=axis).sum(axis=axis)

    def vjp(g):
        return (_expand_reduced(g, axis, False, a.shape),)

    return _op(data, (a,), vjp)


def softmax(a: Tensor, axis: int) -> Tensor:
    """Max-stabilized softmax; denominator summed in value order."""
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    denom = np.sort(e, axis=axis).sum(axis=axis, keepdims=True)
    out = e / denom

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _op(out, (a,), vjp)


# ----------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(d) for d in shape)
    data = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.shape),)

    return _op(data, (a,), vjp)


def concat(tensors, axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _op(data, tuple(tensors), vjp)


def take_slice(a: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing; backward scatters into the source shape."""
    data = a.data[idx]

    def vjp(g):
        dz = np.zeros_like(a.data)
        dz[idx] += g
        return (dz,)

    return _op(data, (a,), vjp)


# ----------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner extents differ: {a.shape} x {b.shape}")
    data = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _op(data, (a, b), vjp)


def channel_matmul(x: Tensor, w: Tensor, axis: int = 1) -> Tensor:
    """Apply matrix ``w`` [C_out x C_in] along ``axis`` of ``x``."""
    c_out, c_in = w.shape
    if x.shape[axis] != c_in:
        raise ValueError(f"axis {axis} extent {x.shape[axis]} != {c_in}")
    moved = np.moveaxis(x.data, axis, -1)
    lead = moved.shape[:-1]
    flat = np.ascontiguousarray(moved).reshape(-1, c_in)
    out = flat @ w.data.T
    data = np.moveaxis(out.reshape(lead + (c_out,)), -1, axis)

    def vjp(g):
        gm = np.ascontiguousarray(np.moveaxis(g, axis, -1)).reshape(-1, c_out)
        dw = gm.T @ flat
        dx = np.moveaxis((gm @ w.data).reshape(lead + (c_in,)), -1, axis)
        return np.ascontiguousarray(dx), dw

    return _op(np.ascontiguousarray(data), (x, w), vjp)


# ----------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, k: int, s: int, d: int, ho: int, wo: int) -> np.ndarray:
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (n, c, k, k, ho, wo), (sn, sc, sh * d, sw * d, sh * s, sw * s),
        writeable=False,
    )
    return win.transpose(0, 4, 5, 1, 2, 3).reshape(n * ho * wo, c * k * k)


def conv2d(x: Tensor, w: Tensor, bias=None, stride: int = 1, padding: int = 0,
           dilation: int = 1) -> Tensor:
    """Cross-correlation of NCHW input with OCkk weights."""
    n, c, h, wd = x.shape
    o, cw, kh, kw = w.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError("kernel must be square with odd extent")
    if cw != c:
        raise ValueError(f"weight expects {cw} input channels, got {c}")
    s, p, d = int(stride), int(padding), int(dilation)
    span = d * (kh - 1) + 1
    num_h, num_w = h + 2 * p - span, wd + 2 * p - span
    if num_h < 0 or num_w < 0:
        raise ValueError(
            f"non-positive output extent for input {h}x{wd}, k={kh}, "
            f"stride={s}, padding={p}, dilation={d}"
        )
    ho, wo = num_h // s + 1, num_w // s + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    wmat = w.data.reshape(o, -1)
    cols = _im2col(xp, kh, s, d, ho, wo)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    data = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def vjp(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
        dw = (g2.T @ cols).reshape(w.shape)
        dcols = g2 @ wmat
        dxp = np.zeros_like(xp)
        dc = dcols.reshape(n, ho, wo, c, kh, kh).transpose(0, 3, 4, 5, 1, 2)
        for ki in range(kh):
            for kj in range(kh):
                dxp[:, :, ki * d: ki * d + s * (ho - 1) + 1: s,
                    kj * d: kj * d + s * (wo - 1) + 1: s] += dc[:, :, ki, kj]
        dx = dxp[:, :, p: p + h, p: p + wd] if p else dxp
        if bias is not None:
            return dx, dw, g.sum(axis=(0, 2, 3))
        return dx, dw

    parents = (x, w) if bias is None else (x, w, bias)
    return _op(np.ascontiguousarray(data), parents, vjp)


# ----------------------------------------------------------------------
# resampling


@lru_cache(maxsize=128)
def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-interpolation matrix for align-corners-false bilinear resizing."""
    if n_in == n_out:
        m = np.eye(n_in)
    else:
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        i0 = np.minimum(np.floor(src).astype(np.int64), max(n_in - 2, 0))
        w1 = src - i0
        m = np.zeros((n_out, n_in))
        m[np.arange(n_out), i0] += 1.0 - w1
        m[np.arange(n_out), np.minimum(i0 + 1, n_in - 1)] += w1
    m.setflags(write=False)
    return m


def resize_bilinear_array(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain-array bilinear resize over the two trailing axes."""
    ry = _resize_matrix(arr.shape[-2], int(out_h))
    rx = _resize_matrix(arr.shape[-1], int(out_w))
    return np.matmul(np.matmul(ry, arr), rx.T)


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Differentiable align-corners-false bilinear resize of NCHW data."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output extents must be >= 1")
    ry = _resize_matrix(x.shape[-2], int(out_h))
    rx = _resize_matrix(x.shape[-1], int(out_w))
    data = np.matmul(np.matmul(ry, x.data), rx.T)

    def vjp(g):
        return (np.matmul(np.matmul(ry.T, g), rx),)

    return _op(data, (x,), vjp)


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 mean pooling; both spatial extents must be even."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2 needs even extents, got {h}x{w}")
    data = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def vjp(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return _op(data, (x,), vjp)


def sample_bilinear(x: Tensor, coords: Tensor) -> Tensor:
    """Gather from ``x`` [N,C,H,W] at fractional (row, col) positions.

    ``coords`` is [N,K,2,h,w] in absolute pixel units; positions are clamped
    to the image rectangle before interpolation, and exact lattice positions
    reproduce pixel values exactly. Differentiable in both arguments; the
    coordinate gradient is zero wherever the raw position lies outside the
    rectangle.
    """
    xv, cv = x.data, coords.data
    n, c, h, w = xv.shape
    if cv.ndim != 5 or cv.shape[0] != n or cv.shape[2] != 2:
        raise ValueError(f"coords must be [N,K,2,h,w], got {cv.shape}")
    cy = np.clip(cv[:, :, 0], 0.0, h - 1.0)
    cx = np.clip(cv[:, :, 1], 0.0, w - 1.0)
    y0 = np.floor(cy)
    x0 = np.floor(cx)
    y0i = y0.astype(np.int64)
    x0i = x0.astype(np.int64)
    y1i = np.minimum(y0i + 1, h - 1)
    x1i = np.minimum(x0i + 1, w - 1)
    wy = cy - y0
    wx = cx - x0

    xt = np.ascontiguousarray(xv.transpose(0, 2, 3, 1))  # [N,H,W,C]
    nidx = np.arange(n).reshape(n, 1, 1, 1)
    g00 = xt[nidx, y0i, x0i]
    g01 = xt[nidx, y0i, x1i]
    g10 = xt[nidx, y1i, x0i]
    g11 = xt[nidx, y1i, x1i]  # each [N,K,h,w,C]
    w00 = ((1.0 - wy) * (1.0 - wx))[..., None]
    w01 = ((1.0 - wy) * wx)[..., None]
    w10 = (wy * (1.0 - wx))[..., None]
    w11 = (wy * wx)[..., None]
    out = w00 * g00 + w01 * g01 + w10 * g10 + w11 * g11
    data = np.ascontiguousarray(out.transpose(0, 1, 4, 2, 3))

    def vjp(g):
        gt = np.ascontiguousarray(g.transpose(0, 1, 3, 4, 2))  # [N,K,h,w,C]
        acc = np.zeros(n * h * w * c)
        carange = np.arange(c)
        for yi, xi, wgt in ((y0i, x0i, w00), (y0i, x1i, w01),
                            (y1i, x0i, w10), (y1i, x1i, w11)):
            flat = ((nidx * h + yi) * w + xi)
            idx = (flat[..., None] * c + carange).ravel()
            acc += np.bincount(idx, weights=(wgt * gt).ravel(),
                               minlength=n * h * w * c)
        dx = np.ascontiguousarray(
            acc.reshape(n, h, w, c).transpose(0, 3, 1, 2))
        dvy = (g10 - g00) * (1.0 - wx)[..., None] + (g11 - g01) * wx[..., None]
        dvx = (g01 - g00) * (1.0 - wy)[..., None] + (g11 - g10) * wy[..., None]
        dcy = (gt * dvy).sum(axis=-1)
        dcx = (gt * dvx).sum(axis=-1)
        dcy *= (cv[:, :, 0] >= 0.0) & (cv[:, :, 0] <= h - 1.0)
        dcx *= (cv[:, :, 1] >= 0.0) & (cv[:, :, 1] <= w - 1.0)
        return dx, np.stack([dcy, dcx], axis=2)

    return _op(data, (x, coords), vjp)
