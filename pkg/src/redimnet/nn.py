"""Parameter containers and the basic layers the blocks are built from."""
from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype if dtype is not None else T.get_default_dtype())


class Module:
    """Attribute-registered tree of parameters, buffers and child modules."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def modules(self) -> Iterator["Module"]:
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters then buffers, in registration order."""
        out = OrderedDict()
        for k, p in self.named_parameters():
            out[k] = p.data
        for k, b in self.named_buffers():
            out[k] = b
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = self.state_dict()
        if strict:
            missing = [k for k in own if k not in state]
            unexpected = [k for k in state if k not in own]
            if missing or unexpected:
                from .errors import FormatError
                raise FormatError(f"state mismatch: missing {missing[:5]}, unexpected {unexpected[:5]}")
        for k, p in self.named_parameters():
            if k in state:
                _copy_into(k, p.data, state[k])
        for k, b in self.named_buffers():
            if k in state:
                _copy_into(k, b, state[k])

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def to(self, dtype) -> "Module":
        """Cast every parameter and buffer in place."""
        dtype = np.dtype(dtype)
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for m in self.modules():
            for name in m._buffers:
                arr = getattr(m, name).astype(dtype)
                m._buffers[name] = arr
                object.__setattr__(m, name, arr)
        return self


def _copy_into(name, dst: np.ndarray, src: np.ndarray) -> None:
    from .errors import FormatError
    src = np.asarray(src)
    if src.shape != dst.shape:
        raise FormatError(f"tensor '{name}': expected shape {dst.shape}, got {src.shape}")
    dst[...] = src


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._list: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, m: Module) -> None:
        setattr(self, str(len(self._list)), m)
        self._list.append(m)

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, i):
        return self._list[i]


class Sequential(ModuleList):
    def forward(self, x):
        for m in self._list:
            x = m(x)
        return x


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    # a=sqrt(5) convention: bound = 1/sqrt(fan_in)
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, stride=1, padding=0, groups=1, bias=True, rng=None, zero_init=False):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        kh, kw = T._pair(kernel)
        self.stride, self.padding, self.groups = T._pair(stride), T._pair(padding), groups
        shape = (cout, cin // groups, kh, kw)
        fan_in = (cin // groups) * kh * kw
        w = np.zeros(shape) if zero_init else _kaiming_uniform(rng, shape, fan_in)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(cout) if zero_init else _kaiming_uniform(rng, cout, fan_in)) if bias else None

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class Conv1d(Module):
    def __init__(self, cin, cout, kernel, stride=1, padding=0, groups=1, bias=True, rng=None, zero_init=False):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride, self.padding, self.groups = stride, padding, groups
        shape = (cout, cin // groups, kernel)
        fan_in = (cin // groups) * kernel
        w = np.zeros(shape) if zero_init else _kaiming_uniform(rng, shape, fan_in)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(cout) if zero_init else _kaiming_uniform(rng, cout, fan_in)) if bias else None

    def forward(self, x):
        return T.conv1d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class Linear(Module):
    def __init__(self, din, dout, bias=True, rng=None, zero_init=False):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(np.zeros((dout, din)) if zero_init else _kaiming_uniform(rng, (dout, din), din))
        self.bias = Parameter(np.zeros(dout) if zero_init else _kaiming_uniform(rng, dout, din)) if bias else None

    def forward(self, x):
        return T.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    """Batch normalization over every axis but the channel axis 1."""

    def __init__(self, channels, momentum=0.1, eps=1e-5, zero_init=False):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.weight = Parameter(np.zeros(channels) if zero_init else np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels, dtype=T.get_default_dtype()))
        self.register_buffer("running_var", np.ones(channels, dtype=T.get_default_dtype()))

    def forward(self, x):
        return T.batch_norm(x, self.weight, self.bias, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)


class LayerNorm(Module):
    """Layer norm over one axis (the channel axis by default)."""

    def __init__(self, channels, axis=1, eps=1e-6):
        super().__init__()
        self.axis, self.eps = axis, eps
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))

    def forward(self, x):
        return T.layer_norm(x, (self.axis,), self.weight, self.bias, self.eps)


def count_params(module: Module) -> int:
    return int(sum(p.size for p in module.parameters()))
