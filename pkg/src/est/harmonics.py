"""Real spherical harmonics, Wigner-D rotations and steerable containers.

Conventions (fixed once, everywhere):
  * real-valued harmonics; for l <= 2 they match the closed forms
        Y(0,0)  = sqrt(1/4pi)
        Y(1,-1) = sqrt(3/4pi)  sin(phi) sin(theta)        ~ y
        Y(1,0)  = sqrt(3/4pi)  cos(theta)                 ~ z
        Y(1,1)  = sqrt(3/4pi)  cos(phi) sin(theta)        ~ x
        Y(2,-2) = sqrt(15/16pi) sin(2phi) sin^2(theta)
        Y(2,-1) = sqrt(15/4pi)  sin(phi) sin(theta) cos(theta)
        Y(2,0)  = sqrt(5/16pi) (3cos^2(theta) - 1)
        Y(2,1)  = sqrt(15/4pi)  cos(phi) sin(theta) cos(theta)
        Y(2,2)  = sqrt(15/16pi) cos(2phi) sin^2(theta)
    and extend to higher degree through the associated-Legendre
    recurrence with the same normalization and signs.
  * orders within a degree run m = -l..l ascending; the flat index of
    component (l, m) is l*l + l + m, so a full vector up to degree L has
    (L+1)^2 entries and the degree-l block occupies rows l^2 .. l^2+2l.
  * theta is the polar angle in [0, pi] measured from +z, phi the
    azimuth in [0, 2pi).

No attempt is made to be bit-compatible with any external harmonics
library; all downstream coefficients (Wigner-D, Clebsch-Gordan) are
derived from these functions so the convention is self-consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError

_UNIT_TOL = 1e-9


def num_components(l_max: int) -> int:
    return (l_max + 1) ** 2


def degree_slice(l: int) -> slice:
    """Rows of the degree-l block inside a flattened (L+1)^2 vector."""
    return slice(l * l, l * l + 2 * l + 1)


def l_max_from_rows(rows: int) -> int:
    l_max = int(round(np.sqrt(rows))) - 1
    if num_components(l_max) != rows:
        raise ContractError(f"{rows} rows is not a full 0..L harmonic stack")
    return l_max


@dataclass(frozen=True)
class Orientation:
    """A unit vector on the sphere with derived polar angles."""

    vec: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vec, dtype=np.float64)
        if v.shape != (3,):
            raise ContractError(f"Orientation needs a 3-vector, got shape {v.shape}")
        if abs(v @ v - 1.0) > 1e-12:
            raise ContractError(f"Orientation must be unit norm, |p| = {np.linalg.norm(v)!r}")
        object.__setattr__(self, "vec", v)

    @property
    def theta(self) -> float:
        return float(np.arccos(np.clip(self.vec[2], -1.0, 1.0)))

    @property
    def phi(self) -> float:
        return float(np.arctan2(self.vec[1], self.vec[0]) % (2 * np.pi))

    @classmethod
    def from_angles(cls, theta: float, phi: float) -> "Orientation":
        st = np.sin(theta)
        return cls(np.array([st * np.cos(phi), st * np.sin(phi), np.cos(theta)]))


def _check_unit(points: np.ndarray):
    nrm2 = np.sum(points * points, axis=-1)
    bad = np.abs(nrm2 - 1.0) > 2 * _UNIT_TOL
    if np.any(bad):
        worst = float(np.sqrt(nrm2.reshape(-1)[np.argmax(np.abs(nrm2 - 1.0))]))
        raise ContractError(f"orientation must be unit norm (no silent renormalization), got |p| = {worst}")


def eval_real_sh(l_max: int, points) -> np.ndarray:
    """Real spherical harmonics Y^(l,m) for all l <= l_max at unit points.

    Args:
        l_max: maximum degree, >= 0.
        points: Orientation or array (..., 3) of unit vectors.

    Returns:
        array (..., (l_max+1)^2), component (l, m) at flat index l^2+l+m.
    """
    if l_max < 0:
        raise ContractError("l_max must be >= 0")
    p = points.vec if isinstance(points, Orientation) else np.asarray(points, dtype=np.float64)
    if p.shape[-1] != 3:
        raise ContractError(f"points must have a trailing axis of 3, got {p.shape}")
    _check_unit(p)

    shape = p.shape[:-1]
    p = p.reshape(-1, 3)
    n = p.shape[0]
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    sin_t = np.hypot(x, y)  # sin(theta) >= 0
    # cos/sin of the azimuth; value at the poles is irrelevant (sin^m = 0)
    safe = np.where(sin_t > 0.0, sin_t, 1.0)
    cos_p = np.where(sin_t > 0.0, x / safe, 1.0)
    sin_p = np.where(sin_t > 0.0, y / safe, 0.0)

    R = num_components(l_max)
    out = np.empty((n, R))

    # associated Legendre without the Condon-Shortley phase:
    #   P[l][m] = (-1)^m P_l^m(cos theta)
    plm = [[None] * (l + 1) for l in range(l_max + 1)]
    plm[0][0] = np.ones(n)
    for m in range(1, l_max + 1):
        plm[m][m] = (2 * m - 1) * sin_t * plm[m - 1][m - 1]
    for m in range(0, l_max):
        plm[m + 1][m] = (2 * m + 1) * z * plm[m][m]
    for l in range(2, l_max + 1):
        for m in range(0, l - 1):
            plm[l][m] = ((2 * l - 1) * z * plm[l - 1][m] - (l - 1 + m) * plm[l - 2][m]) / (l - m)

    # Chebyshev recurrence for cos(m phi), sin(m phi)
    cos_m = [np.ones(n), cos_p]
    sin_m = [np.zeros(n), sin_p]
    for m in range(2, l_max + 1):
        cos_m.append(2 * cos_p * cos_m[-1] - cos_m[-2])
        sin_m.append(2 * cos_p * sin_m[-1] - sin_m[-2])

    for l in range(l_max + 1):
        base = l * l + l
        out[:, base] = np.sqrt((2 * l + 1) / (4 * np.pi)) * plm[l][0]
        for m in range(1, l + 1):
            nrm = np.sqrt((2 * l + 1) / (2 * np.pi) *
                          float(_factorial_ratio(l - m, l + m)))
            out[:, base + m] = nrm * plm[l][m] * cos_m[m]
            out[:, base - m] = nrm * plm[l][m] * sin_m[m]

    return out.reshape(shape + (R,))


def _factorial_ratio(a: int, b: int):
    """(a)! / (b)! computed exactly for small non-negative ints, a <= b."""
    r = 1
    for k in range(a + 1, b + 1):
        r *= k
    return 1.0 / r


@dataclass
class SteerableTensor:
    """Harmonic-domain feature: (L+1)^2 rows of coefficients per channel."""

    l_max: int
    coeffs: np.ndarray  # ((l_max+1)^2, channels)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.ndim == 1:
            self.coeffs = self.coeffs[:, None]
        if self.coeffs.shape[0] != num_components(self.l_max):
            raise ContractError(
                f"steerable tensor with l_max={self.l_max} needs "
                f"{num_components(self.l_max)} rows, got {self.coeffs.shape[0]}")

    @property
    def channels(self) -> int:
        return self.coeffs.shape[1]

    def block(self, l: int) -> np.ndarray:
        return self.coeffs[degree_slice(l)]

    @classmethod
    def zeros(cls, l_max: int, channels: int = 1) -> "SteerableTensor":
        return cls(l_max, np.zeros((num_components(l_max), channels)))

    @classmethod
    def random(cls, rng, l_max: int, channels: int = 1, scale: float = 1.0) -> "SteerableTensor":
        return cls(l_max, scale * rng.standard_normal((num_components(l_max), channels)))


# well-spread fixed probe directions used to solve for Wigner-D blocks
def _probe_points(n: int) -> np.ndarray:
    s = np.arange(1, n + 1, dtype=np.float64)
    z = 1.0 - (2.0 * s - 1.0) / n
    golden = (1.0 + np.sqrt(5.0)) / 2.0
    phi = 2.0 * np.pi * s / golden
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    return pts / np.linalg.norm(pts, axis=-1, keepdims=True)


@dataclass
class WignerD:
    """Per-degree orthogonal blocks D^(l) realizing Y(R p) = D Y(p)."""

    l_max: int
    blocks: list = field(repr=False)
    rotation: np.ndarray = field(default=None, repr=False)

    def block(self, l: int) -> np.ndarray:
        return self.blocks[l]

    def matrix(self) -> np.ndarray:
        """Full block-diagonal matrix of size (L+1)^2."""
        R = num_components(self.l_max)
        out = np.zeros((R, R))
        for l in range(self.l_max + 1):
            sl = degree_slice(l)
            out[sl, sl] = self.blocks[l]
        return out

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        """Rotate flattened coefficients (R, ...) block by block."""
        out = np.empty_like(coeffs)
        for l in range(self.l_max + 1):
            sl = degree_slice(l)
            out[sl] = self.blocks[l] @ coeffs[sl]
        return out


def _validate_rotation(R: np.ndarray, tol: float = 1e-10):
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise ContractError(f"rotation must be 3x3, got {R.shape}")
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol:
        raise ContractError("input is not orthogonal (R^T R != I within 1e-10)")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ContractError(f"input is not a proper rotation, det = {np.linalg.det(R)}")
    return R


def wigner_d(l_max: int, R: np.ndarray) -> WignerD:
    """Wigner-D blocks for a rotation, in the real harmonics basis.

    Solved degree by degree from Y(R p) = D^(l) Y(p) in least squares over
    well-spread probe directions, then orthogonalized by polar
    decomposition. This anchors the convention to eval_real_sh itself.
    """
    R = _validate_rotation(R)
    pts = _probe_points(max(4 * (2 * l_max + 1), 32))
    y = eval_real_sh(l_max, pts)
    y_rot = eval_real_sh(l_max, pts @ R.T)
    blocks = []
    for l in range(l_max + 1):
        sl = degree_slice(l)
        a = y[:, sl]
        b = y_rot[:, sl]
        dt, *_ = np.linalg.lstsq(a, b, rcond=None)
        u, _, vt = np.linalg.svd(dt.T)
        blocks.append(u @ vt)
    return WignerD(l_max, blocks, R)


def rotate_steerable(x: SteerableTensor, d: WignerD) -> SteerableTensor:
    if x.l_max > d.l_max:
        raise ContractError(f"rotation built for l_max={d.l_max} cannot rotate l_max={x.l_max}")
    out = np.empty_like(x.coeffs)
    for l in range(x.l_max + 1):
        sl = degree_slice(l)
        out[sl] = d.block(l) @ x.coeffs[sl]
    return SteerableTensor(x.l_max, out)


def random_rotation(rng) -> np.ndarray:
    """Haar-uniform rotation via a normalized random quaternion."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
