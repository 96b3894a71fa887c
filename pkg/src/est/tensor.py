"""Dense float64 tensors with a minimal reverse-mode tape.

The op set is fixed: add, sub, mul (elementwise), smul (by a python
scalar), matmul, transpose, reshape, concat, slice, sum/mean reduce,
softmax, silu, exp, log, sqrt and l2norm. Everything differentiable in
the library is composed from these, so gradient correctness is testable
once, here, against central finite differences.

Tensors are immutable after construction and safe to share read-only.
A tape is single threaded; independent tapes may run in parallel over
shared parameter arrays. Recording is opt-in: with no active tape the
ops are plain numpy calls.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np


class ContractError(ValueError):
    """A caller violated an operation precondition (shape, domain, ...)."""


def _as_array(x):
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """Wrapper around a float64 ndarray, optionally tracked on a tape."""

    __slots__ = ("data", "track", "grad", "name")

    def __init__(self, data, track=False, name=None):
        self.data = _as_array(data)
        self.track = track
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, track={self.track})"


class Tape:
    """Records (output, parents, vjp) triples in creation order."""

    def __init__(self):
        self._nodes = []

    def _record(self, out, parents, vjp):
        self._nodes.append((out, parents, vjp))

    def backward(self, loss: Tensor):
        """Populate .grad on every tracked ancestor of a scalar loss."""
        if loss.data.size != 1:
            raise ContractError(
                f"backward() needs a scalar loss, got shape {loss.data.shape}"
            )
        for out, _, _ in self._nodes:
            out.grad = None
        loss.grad = np.ones_like(loss.data)
        for out, parents, vjp in reversed(self._nodes):
            if out.grad is None:
                continue
            gs = vjp(out.grad)
            for p, g in zip(parents, gs):
                if g is None or not p.track:
                    continue
                p.grad = g if p.grad is None else p.grad + g


_ACTIVE: Tape | None = None


@contextmanager
def record():
    """Activate a fresh tape for the duration of the block."""
    global _ACTIVE
    tape = Tape()
    prev = _ACTIVE
    _ACTIVE = tape
    try:
        yield tape
    finally:
        _ACTIVE = prev


def active_tape():
    return _ACTIVE


def constant(data, name=None) -> Tensor:
    """A tensor that never receives gradients."""
    return Tensor(data, track=False, name=name)


def leaf(data, name=None) -> Tensor:
    """A parameter leaf; backward() fills .grad for these."""
    return Tensor(data, track=True, name=name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(out_data, parents, vjp) -> Tensor:
    track = any(p.track for p in parents)
    out = Tensor(out_data, track=track)
    if _ACTIVE is not None and track:
        _ACTIVE._record(out, parents, vjp)
    return out


def _unbroadcast(g, shape):
    """Sum g down to `shape` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / scalar ops

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ContractError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    return _emit(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise ContractError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")
    return _emit(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ContractError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    return _emit(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def smul(a, s: float):
    a = _wrap(a)
    s = float(s)
    return _emit(a.data * s, (a,), lambda g: (g * s,))


def exp(a):
    a = _wrap(a)
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,))


def log(a):
    a = _wrap(a)
    if np.any(a.data <= 0.0):
        raise ContractError("log: input must be strictly positive")
    return _emit(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = _wrap(a)
    if np.any(a.data < 0.0):
        raise ContractError("sqrt: input must be non-negative")
    out = np.sqrt(a.data)
    # subgradient 0 at exactly zero
    return _emit(out, (a,), lambda g: (np.where(out > 0.0, g * 0.5 / np.where(out > 0.0, out, 1.0), 0.0),))


def silu(a):
    a = _wrap(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * sig

    def vjp(g):
        return (g * sig * (1.0 + a.data * (1.0 - sig)),)

    return _emit(out, (a,), vjp)


def reciprocal(a):
    """1/a for strictly positive a, composed as exp(-log(a))."""
    return exp(smul(log(a), -1.0))


# ---------------------------------------------------------------------------
# shape plumbing

def transpose(a, axes=None):
    a = _wrap(a)
    if axes is None:
        if a.ndim < 2:
            raise ContractError(f"transpose: need ndim >= 2, got {a.shape}")
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    inv = tuple(np.argsort(axes))
    return _emit(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a, shape):
    a = _wrap(a)
    old = a.shape
    return _emit(np.reshape(a.data, shape), (a,), lambda g: (np.reshape(g, old),))


def concat(tensors, axis=0):
    ts = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    out = np.concatenate([t.data for t in ts], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(ts))
        )

    return _emit(out, tuple(ts), vjp)


def slice_axis(a, axis, start, stop):
    a = _wrap(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = a.data[idx]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _emit(out, (a,), vjp)


# ---------------------------------------------------------------------------
# contractions and reductions

def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError(f"matmul: need ndim >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul: inner dims differ for {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _emit(out, (a, b), vjp)


def sum_reduce(a, axis=None, keepdims=False):
    a = _wrap(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit(out, (a,), vjp)


def mean_reduce(a, axis=None, keepdims=False):
    a = _wrap(a)
    n = a.data.size if axis is None else a.shape[axis]
    return smul(sum_reduce(a, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(a, axis=-1):
    a = _wrap(a)
    if a.shape[axis] == 0:
        raise ContractError(f"softmax: axis of extent 0 in shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _emit(out, (a,), vjp)


def l2norm(a, axis=-1, keepdims=True):
    """Euclidean norm over one axis; gradient is guarded at zero."""
    a = _wrap(a)
    sq = (a.data * a.data).sum(axis=axis, keepdims=True)
    norm = np.sqrt(sq)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * a.data / np.maximum(norm, 1e-300),)

    out = norm if keepdims else np.squeeze(norm, axis=axis)
    return _emit(out, (a,), vjp)


# ---------------------------------------------------------------------------
# rng and optimizers

def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic stream: PCG64 keyed by the seed, same on all platforms."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def spawn_seeds(seed: int, n: int):
    """n child seeds derived from one master seed (SeedSequence spawn)."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(int(seed)).spawn(n)]


class SGD:
    def __init__(self, params: dict, lr=1e-2):
        self.params = params
        self.lr = lr

    def step(self, grads: dict):
        for k, g in grads.items():
            if g is not None:
                self.params[k] -= self.lr * g


class Adam:
    """Plain Adam; provided for the probe training paths only."""

    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            if g is None:
                continue
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            self.params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def collect_grads(leaves: dict) -> dict:
    """Gradient map for a dict of leaf tensors after tape.backward()."""
    return {k: (t.grad if t.grad is not None else None) for k, t in leaves.items()}
