"""Central finite-difference oracle for the autodiff engine.

Everything here runs in float64 and never calls ``backward`` on the path it
compares against, so it stays independent of the gradients it checks.
"""

import numpy as np

from .tensor import Tensor, no_grad


def relative_error(analytic, numeric):
    """Max-norm relative error ``max|a - n| / max(max|a|, max|n|)``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def numerical_gradient(f, arrays, eps=1e-3):
    """Gradient of scalar ``f(*arrays)`` with respect to every array."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = f(*arrays)
            flat[i] = orig - eps
            down = f(*arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * eps)
        grads.append(g)
    return grads


def check_gradients(fn, arrays, eps=1e-3, seed=0):
    """Compare backward against finite differences for ``fn(*tensors)``.

    ``fn`` may return a tensor of any shape; it is reduced to a scalar with a
    fixed random projection so every output element is exercised. Returns the
    worst relative error over all inputs.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    out = fn(*tensors)
    weights = np.random.default_rng(seed).standard_normal(out.shape)
    (out * Tensor(weights, dtype=np.float64)).sum().backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def probe(*arrs):
        with no_grad():
            res = fn(*[Tensor(a, dtype=np.float64) for a in arrs])
        return float(np.sum(res.data * weights))

    numeric = numerical_gradient(probe, arrays, eps)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


def check_module_gradients(loss_fn, module, eps=1e-3, max_per_param=None, seed=0):
    """Finite-difference check over a module's parameters.

    ``loss_fn()`` must rebuild the scalar loss from the module's current
    parameters. The module should already be cast to float64. With
    ``max_per_param`` only that many randomly chosen entries per parameter are
    probed, which keeps large models tractable. The error is taken jointly
    over all probed entries.
    """
    rng = np.random.default_rng(seed)
    module.zero_grad()
    loss_fn().backward()
    all_a, all_n = [], []
    for name, p in module.named_parameters():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = rng.choice(flat.size, size=max_per_param, replace=False)
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                up = float(loss_fn().data)
                flat[i] = orig - eps
                down = float(loss_fn().data)
            flat[i] = orig
            numeric[j] = (up - down) / (2.0 * eps)
        all_a.append(analytic.reshape(-1)[idx])
        all_n.append(numeric)
    module.zero_grad()
    return relative_error(np.concatenate(all_a), np.concatenate(all_n))
