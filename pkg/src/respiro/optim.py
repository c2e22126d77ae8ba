"""Adam with bias correction."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, TrainingError


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Apply one Adam update in place.

    ``params`` maps names to arrays (or parameters); ``grads`` maps the same
    names to gradient arrays, ``None`` meaning no gradient this step. Moments
    are kept in float64.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}", parameter=name)

    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        data = p if isinstance(p, np.ndarray) else p.data
        g = grads.get(name)
        g = np.zeros(data.shape) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != data.shape:
            raise ShapeError(f"adam {name}", g.shape, data.shape)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(data.shape)
            state.v[name] = np.zeros(data.shape)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        data -= update.astype(data.dtype)
    return params, state


class Adam:
    def __init__(self, named_params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(named_params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self):
        grads = {name: p.grad for name, p in self.params.items()}
        adam_step(self.params, grads, self.state)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
