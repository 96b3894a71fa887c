"""Clebsch-Gordan couplings and the baseline equivariant layers.

The real-basis CG coefficients are generated from the Racah closed form
in the complex basis and conjugated by the real<->complex change of
basis that matches the harmonics convention in this package. For triples
with l1+l2+l3 even this reproduces the Gaunt integral
    integral Y1 Y2 Y3 dOmega
        = sqrt((2l1+1)(2l2+1) / (4pi (2l3+1))) <l1 0 l2 0|l3 0> * C
so the even-parity signs are pinned by quadrature; odd-parity triples
(e.g. the cross product) have a conventional global sign.

Also here: degree-wise linear maps, the invariant gate activation and
the equivariant RMS layer norm. Each op has a plain SteerableTensor
interface and a `*_t` variant that runs on batched autodiff tensors of
shape (batch, (L+1)^2, channels).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from math import factorial
from pathlib import Path

import numpy as np

from . import tensor as T
from .harmonics import (SteerableTensor, degree_slice, l_max_from_rows,
                        num_components)
from .tensor import ContractError, Tensor


# ---------------------------------------------------------------------------
# coefficient generation

def _racah_cg(j1, m1, j2, m2, j3, m3) -> float:
    """<j1 m1 j2 m2 | j3 m3> in the Condon-Shortley complex basis."""
    if m1 + m2 != m3:
        return 0.0
    if not abs(j1 - j2) <= j3 <= j1 + j2:
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(m3) > j3:
        return 0.0
    f = factorial
    pref = (
        (2 * j3 + 1)
        * f(j3 + j1 - j2) * f(j3 - j1 + j2) * f(j1 + j2 - j3)
        * f(j3 + m3) * f(j3 - m3)
        * f(j1 - m1) * f(j1 + m1) * f(j2 - m2) * f(j2 + m2)
    )
    pref_den = f(j1 + j2 + j3 + 1)
    k_lo = max(0, j2 - j3 - m1, j1 - j3 + m2)
    k_hi = min(j1 + j2 - j3, j1 - m1, j2 + m2)
    s = 0.0
    for k in range(k_lo, k_hi + 1):
        den = (
            f(k) * f(j1 + j2 - j3 - k) * f(j1 - m1 - k)
            * f(j2 + m2 - k) * f(j3 - j2 + m1 + k) * f(j3 - j1 - m2 + k)
        )
        s += (-1.0) ** k / den
    return float(np.sqrt(pref / pref_den)) * s


def _complex_cg_block(l1, l2, l3) -> np.ndarray:
    out = np.zeros((2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1))
    for m1 in range(-l1, l1 + 1):
        for m2 in range(-l2, l2 + 1):
            m3 = m1 + m2
            if abs(m3) <= l3:
                out[l1 + m1, l2 + m2, l3 + m3] = _racah_cg(l1, m1, l2, m2, l3, m3)
    return out


def _real_basis(l: int) -> np.ndarray:
    """Q with Y_real = Q @ Y_complex, rows/cols ordered m = -l..l."""
    q = np.zeros((2 * l + 1, 2 * l + 1), dtype=complex)
    q[l, l] = 1.0
    for m in range(1, l + 1):
        q[l + m, l - m] = 1 / np.sqrt(2)
        q[l + m, l + m] = (-1) ** m / np.sqrt(2)
        q[l - m, l - m] = 1j / np.sqrt(2)
        q[l - m, l + m] = -1j * (-1) ** m / np.sqrt(2)
    return q


def cg_real_block(l1: int, l2: int, l3: int) -> np.ndarray:
    """Real-basis CG coefficients, shape (2l1+1, 2l2+1, 2l3+1)."""
    cc = _complex_cg_block(l1, l2, l3)
    q1, q2, q3 = _real_basis(l1), _real_basis(l2), _real_basis(l3)
    t = np.einsum("ia,jb,kc,abc->ijk", q1, q2, np.conj(q3), cc)
    if (l1 + l2 + l3) % 2 == 0:
        if np.max(np.abs(t.imag)) > 1e-10:
            raise AssertionError("even-parity real CG came out complex")
        return np.ascontiguousarray(t.real)
    if np.max(np.abs(t.real)) > 1e-10:
        raise AssertionError("odd-parity real CG came out real")
    return np.ascontiguousarray(t.imag)


def gaunt_factor(l1: int, l2: int, l3: int) -> float:
    """sqrt((2l1+1)(2l2+1)/(4pi(2l3+1))) <l1 0 l2 0|l3 0>; zero for odd parity."""
    return float(
        np.sqrt((2 * l1 + 1) * (2 * l2 + 1) / (4 * np.pi * (2 * l3 + 1)))
        * _racah_cg(l1, 0, l2, 0, l3, 0)
    )


@dataclass
class CGTable:
    """Dense per-triple CG blocks for all selection-rule-valid triples."""

    l1_max: int
    l2_max: int
    l_max: int
    blocks: dict

    @classmethod
    def build(cls, l1_max: int, l2_max: int, l_max: int) -> "CGTable":
        blocks = {}
        for l1 in range(l1_max + 1):
            for l2 in range(l2_max + 1):
                for l3 in range(abs(l1 - l2), min(l1 + l2, l_max) + 1):
                    blocks[(l1, l2, l3)] = cg_real_block(l1, l2, l3)
        return cls(l1_max, l2_max, l_max, blocks)

    def block(self, l1: int, l2: int, l3: int) -> np.ndarray:
        """Dense block for one triple; zeros when the selection rule fails."""
        if (l1, l2, l3) in self.blocks:
            return self.blocks[(l1, l2, l3)]
        return np.zeros((2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1))

    def entries(self):
        """Sparse view: (l1, m1, l2, m2, l, m, value) with value != 0."""
        for (l1, l2, l3), blk in sorted(self.blocks.items()):
            for i1 in range(2 * l1 + 1):
                for i2 in range(2 * l2 + 1):
                    for i3 in range(2 * l3 + 1):
                        v = blk[i1, i2, i3]
                        if v != 0.0:
                            yield (l1, i1 - l1, l2, i2 - l2, l3, i3 - l3, float(v))

    def to_json(self) -> str:
        payload = {
            "l1_max": self.l1_max,
            "l2_max": self.l2_max,
            "l_max": self.l_max,
            "entries": [list(e) for e in self.entries()],
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "CGTable":
        payload = json.loads(text)
        table = cls(payload["l1_max"], payload["l2_max"], payload["l_max"], {})
        for l1, m1, l2, m2, l3, m3, v in payload["entries"]:
            key = (l1, l2, l3)
            if key not in table.blocks:
                table.blocks[key] = np.zeros((2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1))
            table.blocks[key][l1 + m1, l2 + m2, l3 + m3] = v
        return table


def cache_dir() -> Path:
    return Path(os.environ.get("EST_CACHE_DIR", Path.home() / ".cache" / "est"))


def load_or_build_cg(l1_max: int, l2_max: int, l_max: int) -> CGTable:
    """CG table with a JSON cache keyed by the degree bounds."""
    path = cache_dir() / f"cg_{l1_max}_{l2_max}_{l_max}.json"
    if path.exists():
        try:
            return CGTable.from_json(path.read_text())
        except (json.JSONDecodeError, KeyError):
            pass  # stale cache; rebuild
    table = CGTable.build(l1_max, l2_max, l_max)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(table.to_json())
    except OSError:
        pass  # cache is best effort
    return table


def cg_coefficients(l1: int, l2: int, l3: int) -> CGTable:
    """Single-triple slice; empty (all-zero) outside the selection rule."""
    if abs(l1 - l2) <= l3 <= l1 + l2:
        return CGTable(l1, l2, l3, {(l1, l2, l3): cg_real_block(l1, l2, l3)})
    return CGTable(l1, l2, l3, {})


# ---------------------------------------------------------------------------
# tensor product

def product_matrix(l1_max: int, l2_max: int, l_out: int, path_weights=None,
                   gaunt_scaled: bool = False) -> np.ndarray:
    """Dense map from vec(outer(u, v)) to the coupled output coefficients.

    Shape (R_out, R1*R2); all admissible (l1, l2, l3) paths are summed with
    unit weight unless `path_weights[(l1, l2, l3)]` overrides for a path.
    With gaunt_scaled=True each path carries the Gaunt factor instead, so
    the matrix expands the pointwise product of two band-limited functions.
    """
    r1, r2, ro = num_components(l1_max), num_components(l2_max), num_components(l_out)
    m = np.zeros((ro, r1 * r2))
    for l1 in range(l1_max + 1):
        for l2 in range(l2_max + 1):
            for l3 in range(abs(l1 - l2), min(l1 + l2, l_out) + 1):
                w = 1.0
                if path_weights is not None:
                    w = float(path_weights.get((l1, l2, l3), 1.0))
                if gaunt_scaled:
                    w *= gaunt_factor(l1, l2, l3)
                if w == 0.0:
                    continue
                blk = cg_real_block(l1, l2, l3)
                s1, s2, s3 = degree_slice(l1), degree_slice(l2), degree_slice(l3)
                for i1 in range(2 * l1 + 1):
                    row1 = (s1.start + i1) * r2
                    m[s3, row1 + s2.start:row1 + s2.stop] += w * blk[i1].T
    return m


def tp_t(u: Tensor, v: Tensor, matrix: np.ndarray) -> Tensor:
    """Channel-wise coupled product on (B, R, C) tensors via a dense map."""
    if u.shape[-1] != v.shape[-1]:
        raise ContractError(f"channel mismatch in tensor product: {u.shape} vs {v.shape}")
    b = u.shape[:-2]
    r1, c = u.shape[-2], u.shape[-1]
    r2 = v.shape[-2]
    ut = T.reshape(T.transpose(u, axes=tuple(range(len(b))) + (len(b) + 1, len(b))),
                   b + (c, r1, 1))
    vt = T.reshape(T.transpose(v, axes=tuple(range(len(b))) + (len(b) + 1, len(b))),
                   b + (c, 1, r2))
    outer = T.reshape(T.matmul(ut, vt), b + (c, r1 * r2))
    out = T.matmul(outer, T.constant(matrix.T))  # (B, C, R_out)
    return T.transpose(out, axes=tuple(range(len(b))) + (len(b) + 1, len(b)))


def cg_tensor_product(u: SteerableTensor, v: SteerableTensor, l_out: int,
                      path_weights=None) -> SteerableTensor:
    """Depth-wise CG product: channel c of u pairs with channel c of v."""
    if u.channels != v.channels:
        raise ContractError(f"channel mismatch: {u.channels} vs {v.channels}")
    m = product_matrix(u.l_max, v.l_max, l_out, path_weights=path_weights)
    out = tp_t(T.constant(u.coeffs[None]), T.constant(v.coeffs[None]), m)
    return SteerableTensor(l_out, out.data[0])


# ---------------------------------------------------------------------------
# degree-wise linear

@dataclass
class DWLinearParams:
    """One weight matrix per degree; bias only on the invariant block."""

    weights: list  # per degree, (C_in, C_out)
    bias0: np.ndarray | None = None

    @classmethod
    def identity(cls, l_max: int, channels: int) -> "DWLinearParams":
        return cls([np.eye(channels) for _ in range(l_max + 1)])

    @classmethod
    def random(cls, rng, l_max: int, c_in: int, c_out: int, scale=None) -> "DWLinearParams":
        scale = scale if scale is not None else 1.0 / np.sqrt(c_in)
        return cls([scale * rng.standard_normal((c_in, c_out)) for _ in range(l_max + 1)])


def dw_linear_t(x: Tensor, weights, bias0=None) -> Tensor:
    """Per-degree right multiplication, shared across orders within a degree."""
    l_max = l_max_from_rows(x.shape[-2])
    if len(weights) != l_max + 1:
        raise ContractError(
            f"dw_linear: {len(weights)} degree weights do not match row count {x.shape[-2]}")
    outs = []
    for l in range(l_max + 1):
        sl = degree_slice(l)
        blk = T.matmul(T.slice_axis(x, -2, sl.start, sl.stop), weights[l])
        if l == 0 and bias0 is not None:
            blk = T.add(blk, bias0)
        outs.append(blk)
    return T.concat(outs, axis=-2)


def dw_linear(x: SteerableTensor, params: DWLinearParams) -> SteerableTensor:
    ws = [T.constant(w) for w in params.weights]
    b0 = T.constant(params.bias0) if params.bias0 is not None else None
    out = dw_linear_t(T.constant(x.coeffs[None]), ws, b0)
    return SteerableTensor(x.l_max, out.data[0])


# ---------------------------------------------------------------------------
# gate activation

@dataclass
class GateParams:
    """Two-layer SiLU MLP producing the invariant per-channel gate."""

    w1: np.ndarray  # (2C, C)
    b1: np.ndarray  # (C,)
    w2: np.ndarray  # (C, C)
    b2: np.ndarray  # (C,)

    @classmethod
    def random(cls, rng, channels: int, scale=None) -> "GateParams":
        scale = scale if scale is not None else 1.0 / np.sqrt(channels)
        return cls(
            w1=scale * rng.standard_normal((2 * channels, channels)),
            b1=np.zeros(channels),
            w2=scale * rng.standard_normal((channels, channels)),
            b2=np.ones(channels),  # identity-biased: gate starts near 1
        )


def gate_activation_t(x: Tensor, w1, b1, w2, b2) -> Tensor:
    """Invariant gate: scalars through SiLU, higher degrees rescaled.

    The gate input is [x^(0), sum_l ||x^(l)||] per channel; the per-degree
    norm is rotation invariant, so the output stays steerable.
    """
    l_max = l_max_from_rows(x.shape[-2])
    scal = T.slice_axis(x, -2, 0, 1)  # (B, 1, C)
    norm_sum = None
    for l in range(1, l_max + 1):
        sl = degree_slice(l)
        n = T.l2norm(T.slice_axis(x, -2, sl.start, sl.stop), axis=-2, keepdims=True)
        norm_sum = n if norm_sum is None else T.add(norm_sum, n)
    if norm_sum is None:
        inv_in = T.concat([scal, scal], axis=-1)
    else:
        inv_in = T.concat([scal, norm_sum], axis=-1)  # (B, 1, 2C)
    h = T.silu(T.add(T.matmul(inv_in, w1), b1))
    c_inv = T.add(T.matmul(h, w2), b2)  # (B, 1, C)
    pieces = [T.silu(scal)]
    if l_max >= 1:
        rest = T.slice_axis(x, -2, 1, num_components(l_max))
        pieces.append(T.mul(rest, c_inv))
    return T.concat(pieces, axis=-2)


def gate_activation(x: SteerableTensor, params: GateParams) -> SteerableTensor:
    out = gate_activation_t(
        T.constant(x.coeffs[None]),
        T.constant(params.w1), T.constant(params.b1),
        T.constant(params.w2), T.constant(params.b2),
    )
    return SteerableTensor(x.l_max, out.data[0])


# ---------------------------------------------------------------------------
# equivariant layer norm

@dataclass
class LayerNormParams:
    scales: np.ndarray  # (L+1, C), one scale per degree per channel
    bias0: np.ndarray | None = None  # (C,), invariant block only

    @classmethod
    def ones(cls, l_max: int, channels: int) -> "LayerNormParams":
        return cls(np.ones((l_max + 1, channels)))


LN_EPS = 1e-6


def equivariant_layer_norm_t(x: Tensor, scales: Tensor, bias0=None) -> Tensor:
    """Divide each degree block by the RMS (over channels) of its L2 norm.

    No mean is removed for any degree; epsilon guards all-zero input.
    """
    l_max = l_max_from_rows(x.shape[-2])
    outs = []
    for l in range(l_max + 1):
        sl = degree_slice(l)
        blk = T.slice_axis(x, -2, sl.start, sl.stop)  # (B, 2l+1, C)
        norm = T.l2norm(blk, axis=-2, keepdims=True)  # (B, 1, C)
        rms = T.sqrt(T.mean_reduce(T.mul(norm, norm), axis=-1, keepdims=True))
        inv = T.reciprocal(T.add(rms, T.constant(np.float64(LN_EPS))))
        scale_l = T.reshape(T.slice_axis(scales, 0, l, l + 1), (1, -1))
        blk = T.mul(T.mul(blk, inv), scale_l)
        if l == 0 and bias0 is not None:
            blk = T.add(blk, bias0)
        outs.append(blk)
    return T.concat(outs, axis=-2)


def equivariant_layer_norm(x: SteerableTensor, params: LayerNormParams) -> SteerableTensor:
    b0 = T.constant(params.bias0) if params.bias0 is not None else None
    out = equivariant_layer_norm_t(T.constant(x.coeffs[None]), T.constant(params.scales), b0)
    return SteerableTensor(x.l_max, out.data[0])
