"""Shared helpers for the test suite: finite differences and tolerances."""

import numpy as np

from est import tensor as T


def central_diff(f, x, h=1e-5):
    """Gradient of scalar f at ndarray x by central differences."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def tape_grad(build, x):
    """Autodiff gradient of scalar build(leaf) at x."""
    with T.record() as tape:
        lx = T.leaf(x.copy())
        loss = build(lx)
        tape.backward(loss)
    return lx.grad, float(loss.data)


def rel_dev(a, b, floor=1e-8):
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.max(np.abs(a - b) / (np.abs(b) + floor)))
