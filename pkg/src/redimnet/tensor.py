"""Dense tensors with reverse-mode differentiation on top of numpy.

Every op takes and returns :class:`Tensor` objects.  A tensor produced by an op
keeps a reference to its parents and a closure that maps the gradient of the
output to gradients of the inputs.  ``Tensor.backward`` walks that graph once in
reverse topological order.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special

from .errors import ConfigError, NumericError, StateError, UsageError

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True
_ANOMALY = False
_MAC_COUNTERS: list["MacCounter"] = []


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ConfigError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _DEFAULT_DTYPE = dtype


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def default_dtype(dtype):
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def detect_anomaly():
    """Raise :class:`NumericError` as soon as any op produces NaN or Inf."""
    global _ANOMALY
    prev = _ANOMALY
    _ANOMALY = True
    try:
        yield
    finally:
        _ANOMALY = prev


class MacCounter:
    """Accumulates multiply-accumulates of conv, linear and matmul ops as they run."""

    def __init__(self):
        self.total = 0
        self.by_op: dict[str, int] = {}

    def add(self, op: str, n: int) -> None:
        self.total += int(n)
        self.by_op[op] = self.by_op.get(op, 0) + int(n)


@contextlib.contextmanager
def count_macs():
    counter = MacCounter()
    _MAC_COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _MAC_COUNTERS.remove(counter)


def _record_macs(op: str, n: int) -> None:
    for c in _MAC_COUNTERS:
        c.add(op, n)


def _contiguous(a: np.ndarray) -> np.ndarray:
    # np.ascontiguousarray promotes 0-d arrays to 1-d
    return a if a.flags.c_contiguous else np.ascontiguousarray(a)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = _DEFAULT_DTYPE
        self.data = _contiguous(np.asarray(data, dtype=dtype))
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _make(cls, data, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = _contiguous(np.asarray(data))
        out.grad = None
        out.op = op
        needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        if needs:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        if _ANOMALY and not np.all(np.isfinite(out.data)):
            raise NumericError(f"non-finite values produced by op '{op}'")
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, op={self.op})"

    def __len__(self):
        return self.shape[0]

    # -- backward -------------------------------------------------------------
    def backward(self, grad=None) -> None:
        if self.data.size != 1 and grad is None:
            raise UsageError(f"backward() needs a scalar output, got shape {self.shape}")
        if not self.requires_grad:
            raise UsageError("backward() called on a tensor that does not require grad")
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.dtype)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): seed}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def transpose(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return permute(self, axes)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else _DEFAULT_DTYPE))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary_operands(a, b):
    if isinstance(a, Tensor):
        b = as_tensor(b, like=a)
    else:
        b = as_tensor(b)
        a = as_tensor(a, like=b)
    return a, b


# -- elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor._make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(ad * bd, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(out, (a, b), backward, "div")


def power(x: Tensor, p: float) -> Tensor:
    xd = x.data
    out = xd ** p

    def backward(g):
        return (g * p * xd ** (p - 1),)

    return Tensor._make(out, (x,), backward, "pow")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor._make(np.log(xd), (x,), lambda g: (g / xd,), "log")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return Tensor._make(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor._make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    out = special.expit(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._make(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    xd = x.data
    cdf = 0.5 * (1.0 + special.erf(xd * _INV_SQRT2))

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return Tensor._make((xd * cdf).astype(x.dtype), (x,), backward, "gelu")


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    out = np.logaddexp(0, xd)
    return Tensor._make(out, (x,), lambda g: (g * special.expit(xd),), "softplus")


def maximum(x: Tensor, floor: float) -> Tensor:
    """Elementwise ``max(x, floor)``; gradient flows only where ``x > floor``."""
    mask = x.data > floor
    out = np.where(mask, x.data, floor).astype(x.dtype)
    return Tensor._make(out, (x,), lambda g: (g * mask,), "maximum")


def where(cond, a, b) -> Tensor:
    cond = np.asarray(cond.data if isinstance(cond, Tensor) else cond, dtype=bool)
    a, b = _binary_operands(a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(np.where(cond, g, 0), sa), _unbroadcast(np.where(cond, 0, g), sb)

    return Tensor._make(np.where(cond, a.data, b.data), (a, b), backward, "where")


def apply_activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation '{kind}'; expected one of {sorted(_ACTIVATIONS)}") from None
    return fn(x)


_ACTIVATIONS = {"relu": relu, "gelu": gelu, "sigmoid": sigmoid, "tanh": tanh}


# -- reductions ---------------------------------------------------------------

def _norm_axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    shape = x.shape
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._make(np.asarray(out), (x,), backward, "sum")


sum = sum_  # noqa: A001  (module-level alias, ``T.sum``)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    return sum_(x, axes, keepdims) * (1.0 / n)


def max_(x: Tensor, axis: int) -> Tensor:
    """Max along one axis; the gradient goes to the first arg-max."""
    axis = axis % x.ndim
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis).squeeze(axis)
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (gx,)

    return Tensor._make(out, (x,), backward, "max")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (x,), backward, "log_softmax")


# -- shape ops ----------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size or any(s <= 0 for s in shape):
        raise ConfigError(f"cannot reshape {x.shape} (volume {x.size}) to {shape}")
    src = x.shape
    return Tensor._make(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(a) % x.ndim for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ConfigError(f"{axes} is not a permutation of the {x.ndim} axes")
    inv = tuple(np.argsort(axes))
    return Tensor._make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "permute")


def reshape_permute(x: Tensor, shape: Sequence[int] | None = None, axes: Sequence[int] | None = None) -> Tensor:
    """Permute (if ``axes``) and then reshape (if ``shape``), row-major."""
    if axes is not None:
        x = permute(x, axes)
    if shape is not None:
        x = reshape(x, shape)
    return x


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def getitem(x: Tensor, idx) -> Tensor:
    """``x[idx]``; the gradient is scattered back with accumulation."""
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(gx, idx, g)
        return (gx,)

    return Tensor._make(x.data[idx], (x,), backward, "getitem")


# -- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _binary_operands(a, b)
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)
    m, k = ad.shape[-2], ad.shape[-1]
    n = bd.shape[-1]
    batch = int(np.prod(out.shape[:-2])) if out.ndim > 2 else 1
    _record_macs("matmul", batch * m * k * n)

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(out, (a, b), backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` over the trailing axis."""
    dout, din = w.shape
    if x.shape[-1] != din:
        raise ConfigError(f"linear expects trailing extent {din}, got input shape {x.shape}")
    xd, wd = x.data, w.data
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, din)
    out = x2 @ wd.T
    if b is not None:
        out = out + b.data
    _record_macs("linear", x2.shape[0] * din * dout)

    def backward(g):
        g2 = g.reshape(-1, dout)
        gx = (g2 @ wd).reshape(xd.shape) if x.requires_grad else None
        gw = g2.T @ x2 if w.requires_grad else None
        gb = g2.sum(axis=0) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(out.reshape(*lead, dout), parents, backward, "linear")


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0, groups: int = 1) -> Tensor:
    """Grouped 2D cross-correlation with zero padding, NCHW layout."""
    if x.ndim != 4 or w.ndim != 4:
        raise ConfigError(f"conv2d expects 4D input and weight, got {x.shape} and {w.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    n, cin, h, wd_ = x.shape
    cout, cig, kh, kw = w.shape
    g = int(groups)
    if g < 1 or cin % g or cout % g:
        raise ConfigError(f"conv2d: Cin={cin} and Cout={cout} must both be divisible by groups={g}")
    if cin // g != cig:
        raise ConfigError(f"conv2d: weight expects {cig * g} input channels for groups={g}, input has {cin}")
    if h + 2 * ph < kh or wd_ + 2 * pw < kw:
        raise ConfigError(f"conv2d: kernel {(kh, kw)} larger than padded input {(h + 2 * ph, wd_ + 2 * pw)}")
    if sh < 1 or sw < 1:
        raise ConfigError(f"conv2d: stride must be positive, got {(sh, sw)}")
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd_ + 2 * pw - kw) // sw + 1
    cog = cout // g
    xd = x.data
    if ph or pw:
        xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    else:
        xp = xd
    hp, wp = xp.shape[2], xp.shape[3]
    xg = xp.reshape(n, g, cig, hp, wp)
    wg = w.data.reshape(g, cog, cig, kh, kw)
    depthwise = cig == 1 and cog == 1
    out = np.zeros((n, g, cog, ho, wo), dtype=xd.dtype)

    def window(i, j):
        return (slice(None), slice(None), slice(None),
                slice(i, i + sh * (ho - 1) + 1, sh), slice(j, j + sw * (wo - 1) + 1, sw))

    for i in range(kh):
        for j in range(kw):
            xs = xg[window(i, j)]
            if depthwise:
                out += wg[:, :, 0, i, j][None, :, :, None, None] * xs
            else:
                out += np.matmul(wg[:, :, :, i, j], xs.reshape(n, g, cig, ho * wo)).reshape(n, g, cog, ho, wo)
    out = out.reshape(n, cout, ho, wo)
    if b is not None:
        out += b.data.reshape(1, cout, 1, 1)
    _record_macs("conv", n * cout * cig * kh * kw * ho * wo)

    def backward(gout):
        gg = gout.reshape(n, g, cog, ho, wo)
        gxp = np.zeros_like(xg) if x.requires_grad else None
        gw = np.zeros_like(wg) if w.requires_grad else None
        gflat = gg.reshape(n, g, cog, ho * wo)
        for i in range(kh):
            for j in range(kw):
                win = window(i, j)
                xs = xg[win]
                if depthwise:
                    if gw is not None:
                        gw[:, :, 0, i, j] = (gg * xs).sum(axis=(0, 3, 4))
                    if gxp is not None:
                        gxp[win] += wg[:, :, 0, i, j][None, :, :, None, None] * gg
                else:
                    if gw is not None:
                        xs2 = xs.reshape(n, g, cig, ho * wo)
                        gw[:, :, :, i, j] = np.matmul(gflat, np.swapaxes(xs2, -1, -2)).sum(axis=0)
                    if gxp is not None:
                        wt = np.swapaxes(wg[:, :, :, i, j], -1, -2)
                        gxp[win] += np.matmul(wt, gflat).reshape(n, g, cig, ho, wo)
        gx = None
        if gxp is not None:
            gx = gxp.reshape(n, cin, hp, wp)[:, :, ph:ph + h, pw:pw + wd_]
        gwr = gw.reshape(cout, cig, kh, kw) if gw is not None else None
        gb = gout.sum(axis=(0, 2, 3)) if b is not None else None
        return gx, gwr, gb

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(out, parents, backward, "conv2d")


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    if x.ndim != 3 or w.ndim != 3:
        raise ConfigError(f"conv1d expects 3D input and weight, got {x.shape} and {w.shape}")
    n, cin, length = x.shape
    cout, cig, k = w.shape
    x4 = reshape(x, (n, cin, 1, length))
    w4 = reshape(w, (cout, cig, 1, k))
    y = conv2d(x4, w4, b, stride=(1, stride), padding=(0, padding), groups=groups)
    return reshape(y, (y.shape[0], y.shape[1], y.shape[3]))


# -- normalization ------------------------------------------------------------

def _norm_core(x: Tensor, axes: tuple[int, ...], mu: np.ndarray, var: np.ndarray, eps: float) -> Tensor:
    """(x - mu) / sqrt(var + eps) with mu/var computed from x over ``axes``."""
    xd = x.data
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv

    def backward(g):
        gm = g.mean(axis=axes, keepdims=True)
        gxm = (g * xhat).mean(axis=axes, keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return Tensor._make(xhat.astype(xd.dtype), (x,), backward, "normalize")


def layer_norm(x: Tensor, axes: Sequence[int], gamma: Tensor | None, beta: Tensor | None,
               eps: float = 1e-6) -> Tensor:
    """Per-sample normalization over ``axes``; ``gamma``/``beta`` broadcast over the rest."""
    axes = _norm_axes(tuple(axes), x.ndim)
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    y = _norm_core(x, axes, mu, var, eps)
    return _affine(y, axes, gamma, beta)


def _affine(y: Tensor, axes: tuple[int, ...], gamma, beta) -> Tensor:
    shape = [1] * y.ndim
    for a in axes:
        shape[a] = y.shape[a]
    if gamma is not None:
        if gamma.size != int(np.prod(shape)):
            raise ConfigError(f"gamma has {gamma.size} elements, normalized axes need {int(np.prod(shape))}")
        y = y * reshape(gamma, shape)
    if beta is not None:
        if beta.size != int(np.prod(shape)):
            raise ConfigError(f"beta has {beta.size} elements, normalized axes need {int(np.prod(shape))}")
        y = y + reshape(beta, shape)
    return y


def batch_norm(x: Tensor, gamma: Tensor | None, beta: Tensor | None, running_mean: np.ndarray | None,
               running_var: np.ndarray | None, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Normalize over every axis except the channel axis 1.

    In training mode the minibatch statistics are used and the running
    buffers (if given) are updated in place with ``momentum``.
    """
    axes = tuple(a for a in range(x.ndim) if a != 1)
    if training:
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        if running_mean is not None:
            n = x.size // x.shape[1]
            unbiased = var.reshape(-1) * (n / max(n - 1, 1))
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu.reshape(-1)
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
        y = _norm_core(x, axes, mu, var, eps)
    else:
        if running_mean is None or running_var is None:
            raise StateError("batch-norm in eval mode needs initialized running statistics")
        shape = [1] * x.ndim
        shape[1] = x.shape[1]
        inv = (1.0 / np.sqrt(running_var + eps)).reshape(shape).astype(x.dtype)
        y = (x - running_mean.reshape(shape).astype(x.dtype)) * inv
    shape_axes = (1,)
    return _affine(y, shape_axes, gamma, beta)


def normalize(x: Tensor, mode: str, axes: Sequence[int] = (), gamma=None, beta=None, eps: float | None = None,
              running_mean=None, running_var=None, momentum: float = 0.1) -> Tensor:
    if mode == "layer":
        return layer_norm(x, axes, gamma, beta, 1e-6 if eps is None else eps)
    if mode == "batch-train":
        return batch_norm(x, gamma, beta, running_mean, running_var, True, momentum, 1e-5 if eps is None else eps)
    if mode == "batch-eval":
        return batch_norm(x, gamma, beta, running_mean, running_var, False, momentum, 1e-5 if eps is None else eps)
    raise ConfigError(f"unknown normalization mode '{mode}'")


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
