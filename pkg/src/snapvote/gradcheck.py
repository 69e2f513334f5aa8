"""Central finite-difference gradient checking."""

import numpy as np


def numerical_gradient(f, params, eps=1e-5):
    """Central differences of scalar ``f()`` w.r.t. each array in ``params``.

    The arrays are perturbed in place and restored.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = p[i]
            p[i] = orig + eps
            up = f()
            p[i] = orig - eps
            down = f()
            p[i] = orig
            g[i] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def relative_error(analytic, numeric):
    """Max-norm relative error ``|a - n|_inf / max(|a|_inf, |n|_inf)``.

    Two all-zero tensors compare as 0.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)
