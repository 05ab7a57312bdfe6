"""Dense tensors with reverse-mode automatic differentiation.

Every op records a :class:`Node` holding its parents and a backward closure.
:meth:`Tensor.backward` walks the recorded graph once in reverse topological
order and accumulates gradients into the leaves that requested them.

Broadcasting follows numpy's rules restricted to extent-1 expansion: an
operand may have fewer leading dims or extent 1 along an axis; gradients are
summed back over the expanded axes.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_state = {"check_finite": True, "grad_enabled": True, "dtype": DEFAULT_DTYPE}


class NonFiniteError(ArithmeticError):
    """Raised when an op produces NaN or Inf while finite checking is on."""


class GraphError(RuntimeError):
    """Raised on misuse of a recorded graph (non-scalar loss, reuse)."""


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def set_check_finite(enabled: bool) -> None:
    _state["check_finite"] = bool(enabled)


def check_finite_enabled() -> bool:
    return _state["check_finite"]


@contextlib.contextmanager
def check_finite(enabled: bool = True):
    prev = _state["check_finite"]
    _state["check_finite"] = bool(enabled)
    try:
        yield
    finally:
        _state["check_finite"] = prev


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    prev = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = prev


def get_default_dtype():
    return _state["dtype"]


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype used for new tensors (e.g. float64 for gradchecks)."""
    prev = _state["dtype"]
    _state["dtype"] = np.dtype(dtype).type
    try:
        yield
    finally:
        _state["dtype"] = prev


class Node:
    """One recorded op: parent tensors and a closure mapping dOut -> dParents."""

    __slots__ = ("op", "parents", "backward_fn", "consumed")

    def __init__(self, op: str, parents: tuple, backward_fn: Callable):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.consumed = False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        dtype = dtype or (data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else _state["dtype"])
        self.data = np.ascontiguousarray(np.asarray(data, dtype=dtype))
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    # -- basic protocol ---------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    # -- autodiff ---------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Populate ``.grad`` on every leaf that requires it.

        The graph below ``self`` is consumed: calling backward again without
        re-running the forward pass raises :class:`GraphError`.
        """
        if grad is None:
            if self.data.size != 1:
                raise GraphError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if self.node is None:
            if self.requires_grad:
                _accumulate(self, np.asarray(grad, dtype=self.dtype))
                return
            raise GraphError("backward() called on a tensor with no recorded graph")
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for t in order:
            g = grads.pop(id(t), None)
            node = t.node
            if node is None:
                if g is not None and t.requires_grad:
                    _accumulate(t, g)
                continue
            if g is None:
                node.consumed = True
                node.backward_fn = None
                continue
            parent_grads = node.backward_fn(g)
            node.consumed = True
            node.backward_fn = None
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not isinstance(p, Tensor) or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = g.astype(t.dtype, copy=False)
    if g.shape != t.shape:
        raise ShapeError(f"gradient shape {g.shape} != tensor shape {t.shape}")
    t.grad = g.copy() if t.grad is None else t.grad + g


def _topo_order(root: Tensor) -> list:
    """Reverse topological order (root first), each tensor exactly once."""
    visited: set[int] = set()
    post: list = []
    stack: list = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            post.append(t)
            continue
        if id(t) in visited:
            continue
        visited.add(id(t))
        if t.node is not None and t.node.consumed:
            raise GraphError(
                f"graph through op '{t.node.op}' was already consumed by a previous backward(); "
                "re-run the forward pass"
            )
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if isinstance(p, Tensor) and p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
    post.reverse()
    return post


# ---------------------------------------------------------------------------
# helpers


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        dtype = _state["dtype"]
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


def _coerce_pair(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype), dtype=a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype), dtype=b.dtype)
    elif not isinstance(a, Tensor):
        a, b = as_tensor(a), as_tensor(b)
    return a, b


def _make(data: np.ndarray, op: str, parents: tuple, backward_fn: Callable) -> Tensor:
    if _state["check_finite"] and data.dtype.kind == "f" and not np.isfinite(data).all():
        raise NonFiniteError(f"op '{op}' produced non-finite values (shape {data.shape})")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    needs = _state["grad_enabled"] and any(isinstance(p, Tensor) and p.requires_grad for p in parents)
    out.requires_grad = needs
    out.node = Node(op, parents, backward_fn) if needs else None
    return out


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` over axes that were broadcast."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a: tuple, b: tuple, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a} and {b} are not broadcast-compatible") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _broadcast_shape(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, "add", (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _broadcast_shape(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, "sub", (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _broadcast_shape(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        ga = unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad * bd, "mul", (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _broadcast_shape(a.shape, b.shape, "div")
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):  # non-finite results go through the finite check
        out = ad / bd

    def backward(g):
        ga = unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, "div", (a, b), backward)


def cast(x: Tensor, dtype) -> Tensor:
    """Change precision; the gradient is cast back to the source dtype."""
    src = x.dtype
    return _make(x.data.astype(dtype), "cast", (x,), lambda g: (g.astype(src),))


def silu(x: Tensor) -> Tensor:
    xd = x.data
    sig = 1.0 / (1.0 + np.exp(-xd))
    out = xd * sig
    return _make(out, "silu", (x,), lambda g: (g * (sig * (1.0 + xd * (1.0 - sig))),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, "exp", (x,), lambda g: (g * out,))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _make(xd * xd, "square", (x,), lambda g: (2.0 * g * xd,))


# ---------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return _make(out, "reshape", (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(x.data, axes))
    return _make(out, "transpose", (x,), lambda g: (np.ascontiguousarray(np.transpose(g, inv)),))


def getitem(x: Tensor, idx) -> Tensor:
    src, dt = x.shape, x.dtype
    out = np.ascontiguousarray(x.data[idx])

    def backward(g):
        full = np.zeros(src, dtype=dt)
        np.add.at(full, idx, g) if _is_advanced(idx) else full.__setitem__(idx, g)
        return (full,)

    return _make(out, "getitem", (x,), backward)


def _is_advanced(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, tensors[0].shape)) if i != axis
        ):
            raise ShapeError(f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, "concat", tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def broadcast_to(x: Tensor, shape) -> Tensor:
    src = x.shape
    _broadcast_shape(src, tuple(shape), "broadcast_to")
    out = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    return _make(out, "broadcast_to", (x,), lambda g: (unbroadcast(g, src),))


# ---------------------------------------------------------------------------
# reductions


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = x.shape
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, src).copy(),)

    return _make(np.asarray(out), "sum", (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = x.shape
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([src[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, src).copy(),)

    return _make(np.asarray(out, dtype=x.dtype), "mean", (x,), backward)


def mse(pred: Tensor, target) -> Tensor:
    """Scalar mean of squared differences."""
    pred, target = _coerce_pair(pred, target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray(np.mean(diff * diff), dtype=pred.dtype)

    def backward(g):
        gd = (2.0 / n) * g * diff
        return (gd if pred.requires_grad else None, -gd if target.requires_grad else None)

    return _make(out, "mse", (pred, target), backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch semantics on leading dims."""
    a, b = _coerce_pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims disagree for shapes {a.shape} and {b.shape}")
    _broadcast_shape(a.shape[:-2], b.shape[:-2], "matmul")
    ad, bd = a.data, b.data

    def backward(g):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad @ bd, "matmul", (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis; weight is [d_in, d_out]."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    lead = x.shape[:-1]
    xd = x.data.reshape(-1, x.shape[-1])
    wd = weight.data
    out = xd @ wd
    if bias is not None:
        out = out + bias.data
    out = out.reshape(*lead, wd.shape[1])

    def backward(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(x.shape) if x.requires_grad else None
        gw = xd.T @ g2 if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _make(out, "linear", parents, backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, "softmax", (x,), backward)


# ---------------------------------------------------------------------------
# normalization


def layer_norm(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.shape[-1]
    if weight.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: affine params {weight.shape}/{bias.shape} do not match width {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * weight.data + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        gw = (g * xhat).sum(axis=lead) if weight.requires_grad else None
        gb = g.sum(axis=lead) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = g * weight.data
            gx = rstd * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gw, gb

    return _make(out, "layer_norm", (x, weight, bias), backward)


def group_norm(x: Tensor, groups: int, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Group normalization for [N, C, *spatial] inputs."""
    n, c = x.shape[:2]
    if c % groups:
        raise ShapeError(f"group_norm: {groups} groups do not divide {c} channels")
    if weight.shape != (c,) or bias.shape != (c,):
        raise ShapeError(f"group_norm: affine params {weight.shape}/{bias.shape} do not match {c} channels")
    spatial = x.shape[2:]
    xg = x.data.reshape(n, groups, -1)
    mu = xg.mean(axis=-1, keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (xc * rstd).reshape(x.shape)
    bshape = (1, c) + (1,) * len(spatial)
    out = xhat * weight.data.reshape(bshape) + bias.data.reshape(bshape)

    def backward(g):
        red = (0,) + tuple(range(2, g.ndim))
        gw = (g * xhat).sum(axis=red) if weight.requires_grad else None
        gb = g.sum(axis=red) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = (g * weight.data.reshape(bshape)).reshape(n, groups, -1)
            xh = xhat.reshape(n, groups, -1)
            gx = rstd * (gh - gh.mean(axis=-1, keepdims=True) - xh * (gh * xh).mean(axis=-1, keepdims=True))
            gx = gx.reshape(x.shape)
        return gx, gw, gb

    return _make(out, "group_norm", (x, weight, bias), backward)


# ---------------------------------------------------------------------------
# convolutions and resampling


def _im2col(xp: np.ndarray, k: int, out_h: int, out_w: int, stride: int) -> np.ndarray:
    # xp: [N, C, Hp, Wp] -> [N, C*k*k, out_h*out_w]
    n, c = xp.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    # [N, C, oh, ow, k, k] -> [N, C, k, k, oh, ow]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * k * k, out_h * out_w)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. x: [N, Cin, H, W], weight: [Cout, Cin, k, k]."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d: expected [N, C, H, W] input, got {x.shape}")
    cout, cin, k, k2 = weight.shape
    if k != k2 or x.shape[1] != cin:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    n, _, h, w = x.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    oh, ow = (hp - k) // stride + 1, (wp - k) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d: kernel {k} too large for input {x.shape} with padding {padding}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, k, oh, ow, stride)
    w2 = weight.data.reshape(cout, -1)
    out = np.matmul(w2, cols)
    if bias is not None:
        out = out + bias.data[:, None]
    out = out.reshape(n, cout, oh, ow)

    def backward(g):
        g2 = g.reshape(n, cout, oh * ow)
        gw = gb = gx = None
        if weight.requires_grad:
            gw = np.einsum("nop,nkp->ok", g2, cols, optimize=True).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=(0, 2))
        if x.requires_grad:
            gcols = np.matmul(w2.T, g2).reshape(n, cin, k, k, oh, ow)
            gxp = np.zeros((n, cin, hp, wp), dtype=x.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += gcols[:, :, i, j]
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
            gx = np.ascontiguousarray(gx)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _make(out, "conv2d", parents, backward)


def conv1d_temporal(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding: int | None = None) -> Tensor:
    """1-D convolution along the last axis. x: [N, Cin, T], weight: [Cout, Cin, k].

    Defaults to 'same' zero padding for odd kernels.
    """
    if x.ndim != 3:
        raise ShapeError(f"conv1d_temporal: expected [N, C, T] input, got {x.shape}")
    cout, cin, k = weight.shape
    if x.shape[1] != cin:
        raise ShapeError(f"conv1d_temporal: input {x.shape} incompatible with weight {weight.shape}")
    if padding is None:
        padding = k // 2
    n, _, t = x.shape
    tp = t + 2 * padding
    ot = tp - k + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, :ot]  # [N, Cin, ot, k]
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(n, cin * k, ot)
    w2 = weight.data.reshape(cout, -1)
    out = np.matmul(w2, cols)
    if bias is not None:
        out = out + bias.data[:, None]

    def backward(g):
        gw = gb = gx = None
        if weight.requires_grad:
            gw = np.einsum("nop,nkp->ok", g, cols, optimize=True).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        if x.requires_grad:
            gcols = np.matmul(w2.T, g).reshape(n, cin, k, ot)
            gxp = np.zeros((n, cin, tp), dtype=x.dtype)
            for i in range(k):
                gxp[:, :, i : i + ot] += gcols[:, :, i]
            gx = np.ascontiguousarray(gxp[:, :, padding : padding + t]) if padding else gxp
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _make(out, "conv1d_temporal", parents, backward)


def avg_pool2d(x: Tensor, factor: int) -> Tensor:
    """Non-overlapping average pooling over the last two axes."""
    *lead, h, w = x.shape
    if h % factor or w % factor:
        raise ShapeError(f"avg_pool2d: extents {(h, w)} not divisible by {factor}")
    out = x.data.reshape(*lead, h // factor, factor, w // factor, factor).mean(axis=(-3, -1))
    src = x.shape

    def backward(g):
        g = np.repeat(np.repeat(g, factor, axis=-2), factor, axis=-1) / (factor * factor)
        return (g.reshape(src),)

    return _make(out.astype(x.dtype, copy=False), "avg_pool2d", (x,), backward)


def upsample_nearest2d(x: Tensor, factor: int) -> Tensor:
    *lead, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=-2), factor, axis=-1)

    def backward(g):
        return (g.reshape(*lead, h, factor, w, factor).sum(axis=(-3, -1)),)

    return _make(out, "upsample_nearest2d", (x,), backward)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup: ids (int array, any shape) -> [*ids.shape, d]."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: ids out of range for table of {table.shape[0]} rows")
    out = table.data[ids]
    shape = table.shape

    def backward(g):
        full = np.zeros(shape, dtype=table.dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _make(out, "embedding", (table,), backward)


def parameters_of(tensors: Iterable[Tensor]) -> list:
    return [t for t in tensors if t.requires_grad]
