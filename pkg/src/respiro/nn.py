"""Parameter containers and layers built on :mod:`respiro.tensor`."""

import numpy as np

from . import tensor as T
from .errors import ArgumentError, ShapeError
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, dtype=np.float32):
        super().__init__(data, requires_grad=True, dtype=dtype)


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Module:
    """Base container. Parameters and submodules are discovered from attributes,
    including lists of modules, in assignment order."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        params = dict(self.named_parameters())
        if strict:
            missing = sorted(set(params) - set(state))
            unexpected = sorted(set(state) - set(params))
            if missing or unexpected:
                raise ArgumentError(
                    f"state dict mismatch: missing={missing} unexpected={unexpected}"
                )
        for name, p in params.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError(f"load {name}", value.shape, p.shape)
            p.data = value.astype(p.dtype).copy()

    def astype(self, dtype):
        """Cast every parameter in place (float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True, zero=False):
        shape = (d_out, d_in)
        self.weight = Parameter(np.zeros(shape) if zero else uniform_init(rng, shape, d_in))
        if bias:
            self.bias = Parameter(np.zeros(d_out) if zero else uniform_init(rng, (d_out,), d_in))
        else:
            self.bias = None

    def forward(self, x):
        return T.linear(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, c_in, c_out, kernel_size, rng, dilation=1, bias=True, zero=False):
        if kernel_size % 2 == 0:
            raise ArgumentError("Conv1d uses 'same' padding and needs an odd kernel")
        fan_in = c_in * kernel_size
        shape = (c_out, c_in, kernel_size)
        self.dilation = dilation
        self.weight = Parameter(np.zeros(shape) if zero else uniform_init(rng, shape, fan_in))
        if bias:
            self.bias = Parameter(np.zeros(c_out) if zero else uniform_init(rng, (c_out,), fan_in))
        else:
            self.bias = None

    def forward(self, x):
        return T.conv1d(x, self.weight, self.bias, dilation=self.dilation, padding="same")


class ConvTranspose2d(Module):
    def __init__(self, c_in, c_out, kernel, stride, rng, bias=False):
        kh, kw = kernel
        fan_in = c_out * kh * kw
        self.stride = tuple(stride)
        self.weight = Parameter(uniform_init(rng, (c_in, c_out, kh, kw), fan_in))
        self.bias = Parameter(uniform_init(rng, (c_out,), fan_in)) if bias else None

    def forward(self, x):
        return T.conv_transpose2d(x, self.weight, self.stride, self.bias)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.eps = eps
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))

    def forward(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self.eps)
