"""Dense tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Every differentiable op records its
parents and a closure mapping the upstream gradient to one gradient per
parent; :meth:`Tensor.backward` walks the graph in reverse topological order.

Storage defaults to float32. Ops keep whatever dtype their inputs carry, so
the same graph can be rebuilt in float64 for finite-difference checks.
Reductions accumulate in float64.
"""

import threading

import numpy as np
from scipy.special import expit

from .errors import ArgumentError, ShapeError

_state = threading.local()


def is_grad_enabled():
    return getattr(_state, "enabled", True)


class no_grad:
    """Context manager that stops graph recording (sampling, evaluation)."""

    def __enter__(self):
        self._prev = is_grad_enabled()
        _state.enabled = False
        return self

    def __exit__(self, *exc):
        _state.enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_retain")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=np.float32):
        self.data = np.array(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._retain = False

    @classmethod
    def _wrap(cls, arr):
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = False
        t._parents = ()
        t._backward = None
        t._retain = False
        return t

    # -- introspection -----------------------------------------------------
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

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor._wrap(self.data)

    def retain_grad(self):
        """Keep ``.grad`` on this non-leaf tensor after backward."""
        self._retain = True
        return self

    def zero_grad(self):
        self.grad = None

    # -- autodiff ----------------------------------------------------------
    def backward(self, grad=None):
        if not self.requires_grad:
            raise ArgumentError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ArgumentError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.dtype)
            if grad.shape != self.shape:
                raise ShapeError("backward", grad.shape, self.shape)

        order = []
        seen = set()
        stack = [(self, False)]
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

        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None or node._retain:
                g_store = np.asarray(g, dtype=node.dtype)
                node.grad = g_store.copy() if node.grad is None else node.grad + g_store
            if node._backward is None:
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = grads[key] + pg if key in grads else pg

    # -- operators ---------------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float32
    return Tensor._wrap(np.asarray(x, dtype=dtype))


def _make(data, parents, backward):
    out = Tensor._wrap(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# -- elementwise ---------------------------------------------------------------
def add(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        )

    return _make(out, (a, b), backward)


def scale(x, c):
    return mul(x, float(c))


def exp(x):
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x):
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def power(x, p):
    p = float(p)
    return _make(x.data ** p, (x,), lambda g: (g * p * x.data ** (p - 1),))


def tanh(x):
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x):
    out = expit(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x):
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x, slope=0.01):
    factor = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return _make(x.data * factor, (x,), lambda g: (g * factor,))


def silu(x):
    s = expit(x.data)
    out = x.data * s
    return _make(out, (x,), lambda g: (g * (s + out * (1.0 - s)),))


# -- reductions and shape ops --------------------------------------------------
def tsum(x, axis=None, keepdims=False):
    out = np.sum(x.data, axis=axis, keepdims=keepdims, dtype=np.float64).astype(x.dtype)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _make(np.asarray(out), (x,), backward)


def mean(x, axis=None, keepdims=False):
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if np.isscalar(axis) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(tsum(x, axis, keepdims), 1.0 / count)


def reshape(x, shape):
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def _is_basic_index(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, type(Ellipsis), type(None))) for p in parts)


def getitem(x, idx):
    if isinstance(idx, Tensor):
        idx = idx.data

    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(x.data[idx], (x,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


# -- linear algebra ------------------------------------------------------------
def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward)


def linear(x, weight, bias=None):
    """Affine map over the last axis; ``weight`` is ``D_out x D_in``."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError("linear", x.shape, (..., weight.shape[1]))
    y = matmul(x, transpose(weight))
    return y if bias is None else add(y, bias)


# -- normalisation and probabilities ------------------------------------------
def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward)


def log_softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), backward)


def layer_norm(x, gamma=None, beta=None, eps=1e-5):
    xd = x.data.astype(np.float64)
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xd - mu) * inv).astype(x.dtype)
    inv = inv.astype(x.dtype)
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data
    parents = [x] + [p for p in (gamma, beta) if p is not None]

    def backward(g):
        gx_hat = g * gamma.data if gamma is not None else g
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        grads = [gx]
        if gamma is not None:
            grads.append(_unbroadcast(g * xhat, gamma.shape))
        if beta is not None:
            grads.append(_unbroadcast(g, beta.shape))
        return tuple(grads)

    return _make(out, parents, backward)


def scaled_dot_product_attention(q, k, v):
    """softmax(q k^T / sqrt(d)) v over the last two axes."""
    d = q.shape[-1]
    scores = mul(matmul(q, transpose_last(k)), 1.0 / np.sqrt(d))
    return matmul(softmax(scores, axis=-1), v)


def transpose_last(x):
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


# -- losses --------------------------------------------------------------------
def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under ``logits``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("cross_entropy", logits.shape, (labels.shape[0], "C"))
    n, c = logits.shape
    if n < 1:
        raise ArgumentError("cross_entropy needs at least one sample")
    if labels.min() < 0 or labels.max() >= c:
        raise ArgumentError(f"cross_entropy: labels must lie in [0, {c}), got {labels.tolist()}")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(n)
    loss = np.asarray(-logp[rows, labels].mean(), dtype=logits.dtype)

    def backward(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return ((grad * (float(g) / n)).astype(logits.dtype),)

    return _make(loss, (logits,), backward)


def mse_loss(pred, target):
    pred, target = _pair(pred, target)
    if pred.shape != target.shape:
        raise ShapeError("mse_loss", pred.shape, target.shape)
    diff = pred.data - target.data
    n = diff.size
    loss = np.asarray(np.mean(np.square(diff, dtype=np.float64)), dtype=pred.dtype)

    def backward(g):
        gd = diff * (2.0 * float(g) / n)
        return gd, -gd

    return _make(loss, (pred, target), backward)


def gradient_reverse(x, coeff=1.0):
    """Identity forward; backward multiplies the upstream gradient by ``-coeff``."""
    if coeff < 0:
        raise ArgumentError(f"gradient_reverse coefficient must be >= 0, got {coeff}")
    c = float(coeff)
    return _make(x.data.copy(), (x,), lambda g: (g * (-c),))


# -- convolutions --------------------------------------------------------------
def conv1d(x, weight, bias=None, dilation=1, padding=0):
    """Dilated 1-D cross-correlation.

    ``x`` is ``C_in x L`` or ``N x C_in x L``; ``weight`` is ``C_out x C_in x K``.
    ``padding="same"`` zero-pads ``dilation * (K - 1) / 2`` on each side.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeError("conv1d", x.shape, weight.shape)
    if dilation < 1:
        raise ArgumentError(f"conv1d dilation must be >= 1, got {dilation}")
    c_out, c_in, k = weight.shape
    if padding == "same":
        if k % 2 == 0:
            raise ArgumentError("conv1d 'same' padding needs an odd kernel")
        padding = dilation * (k - 1) // 2
    n, _, length = x.shape
    l_out = length + 2 * padding - dilation * (k - 1)
    if l_out < 1:
        raise ShapeError("conv1d", x.shape, weight.shape)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    w2 = weight.data.transpose(0, 2, 1).reshape(c_out, k * c_in)
    if k == 1:
        cols = xp[:, :, :l_out]
    else:
        cols = np.concatenate(
            [xp[:, :, j * dilation : j * dilation + l_out] for j in range(k)], axis=1
        )
    out = w2 @ cols
    if bias is not None:
        out = out + bias.data[:, None]

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            gcols = w2.T @ g
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for j in range(k):
                gxp[:, :, j * dilation : j * dilation + l_out] += gcols[:, j * c_in : (j + 1) * c_in]
            gx = gxp[:, :, padding : padding + length] if padding else gxp
        if weight.requires_grad:
            gw2 = (g @ cols.transpose(0, 2, 1)).sum(axis=0)
            gw = gw2.reshape(c_out, k, c_in).transpose(0, 2, 1)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2), dtype=np.float64).astype(g.dtype)
        return gx, gw, gb

    parents = (x, weight) + ((bias,) if bias is not None else ())
    y = _make(out, parents, backward)
    return reshape(y, y.shape[1:]) if squeeze else y


def conv_transpose2d(x, weight, stride=(1, 1), bias=None):
    """Transposed 2-D convolution without padding.

    ``x`` is ``C_in x H x W`` or ``N x C_in x H x W``; ``weight`` is
    ``C_in x C_out x K_h x K_w``. Output extents are
    ``(H - 1) * s_h + K_h`` by ``(W - 1) * s_w + K_w``.
    """
    sh, sw = stride
    if sh < 1 or sw < 1:
        raise ArgumentError(f"conv_transpose2d strides must be positive, got {stride}")
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[0]:
        raise ShapeError("conv_transpose2d", x.shape, weight.shape)
    n, c_in, h, w = x.shape
    _, c_out, kh, kw = weight.shape
    ho, wo = (h - 1) * sh + kh, (w - 1) * sw + kw
    # kernel taps grouped into stride-sized blocks: tap (bi*sh + ri, bj*sw + rj)
    # of input (a, b) lands on output block (a + bi, b + bj), phase (ri, rj)
    mh, mw = -(-kh // sh), -(-kw // sw)
    block_shape = (n, c_out, h + mh - 1, sh, w + mw - 1, sw)

    xt = x.data.transpose(0, 2, 3, 1)  # N H W Ci
    wpad = np.zeros((c_in, c_out, mh * sh, mw * sw), dtype=weight.dtype)
    wpad[:, :, :kh, :kw] = weight.data
    wflat = wpad.reshape(c_in, -1)
    contrib = (xt.reshape(-1, c_in) @ wflat).reshape(n, h, w, c_out, mh, sh, mw, sw)
    contrib = contrib.transpose(4, 6, 0, 3, 1, 5, 2, 7)  # mh mw N Co H sh W sw
    blocks = np.zeros(block_shape, dtype=contrib.dtype)
    for i in range(mh):
        for j in range(mw):
            blocks[:, :, i : i + h, :, j : j + w, :] += contrib[i, j]
    out = blocks.reshape(n, c_out, (h + mh - 1) * sh, (w + mw - 1) * sw)[:, :, :ho, :wo]
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        gpad = np.zeros((n, c_out, (h + mh - 1) * sh, (w + mw - 1) * sw), dtype=g.dtype)
        gpad[:, :, :ho, :wo] = g
        gb_ = gpad.reshape(block_shape)
        gathered = np.empty((mh, mw, n, c_out, h, sh, w, sw), dtype=g.dtype)
        for i in range(mh):
            for j in range(mw):
                gathered[i, j] = gb_[:, :, i : i + h, :, j : j + w, :]
        gflat = gathered.transpose(2, 4, 6, 3, 0, 5, 1, 7).reshape(n * h * w, -1)
        gx = gw = gb = None
        if x.requires_grad:
            gx = (gflat @ wflat.T).reshape(n, h, w, c_in).transpose(0, 3, 1, 2)
        if weight.requires_grad:
            gw = (xt.reshape(-1, c_in).T @ gflat).reshape(c_in, c_out, mh * sh, mw * sw)
            gw = gw[:, :, :kh, :kw]
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) + ((bias,) if bias is not None else ())
    y = _make(np.ascontiguousarray(out), parents, backward)
    return reshape(y, y.shape[1:]) if squeeze else y
