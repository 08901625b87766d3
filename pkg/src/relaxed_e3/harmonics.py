"""Real spherical harmonics with component normalization.

Degree ``l`` has ``2l+1`` components ordered ``m = -l..l`` and normalized so
that ``sum_m Y^l_m(u)^2 = 2l + 1`` on the unit sphere.  The y axis is polar:

==  ==========================================
l   components
==  ==========================================
0   ``1``
1   ``sqrt(3) * (x, y, z)``
2   ``sqrt(15) xz, sqrt(15) xy, sqrt(5) (y^2 - (x^2 + z^2)/2), sqrt(15) yz,
    sqrt(15)/2 (z^2 - x^2)``
==  ==========================================

Higher degrees follow the same recipe: the textbook real harmonics (no
Condon-Shortley phase) evaluated at the permuted point ``(z, x, y)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre

from .irreps import IrrepsLayout


@lru_cache(maxsize=None)
def _legendre_derivative(l: int, m: int) -> np.ndarray:
    # power-series coefficients of d^m/dz^m P_l(z), lowest order first
    return legendre.leg2poly(legendre.legder(np.eye(l + 1)[l], m)) if m <= l else np.zeros(1)


@lru_cache(maxsize=None)
def _norm(l: int, m: int) -> float:
    am = abs(m)
    n = math.sqrt((2 * l + 1) * math.factorial(l - am) / math.factorial(l + am))
    return n * math.sqrt(2.0) if m else n


def _unit(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vectors = np.asarray(vectors, dtype=float)
    r = np.linalg.norm(vectors, axis=-1)
    safe = np.where(r > 0, r, 1.0)
    return vectors / safe[..., None], r


def spherical_harmonics(l: int, vectors) -> np.ndarray:
    """Degree-``l`` harmonics of the directions of ``vectors`` (shape ``(..., 3)``).

    Zero vectors map to ``[1]`` for ``l = 0`` and to zeros otherwise.
    """
    u, r = _unit(vectors)
    out = np.zeros(u.shape[:-1] + (2 * l + 1,))
    if l == 0:
        out[..., 0] = 1.0
        return out
    # textbook frame: x' = z, y' = x, z' = y
    xp, yp, zp = u[..., 2], u[..., 0], u[..., 1]
    w = xp + 1j * yp
    power = np.ones_like(w)
    for am in range(l + 1):
        poly = np.polynomial.polynomial.polyval(zp, _legendre_derivative(l, am))
        if am == 0:
            out[..., l] = _norm(l, 0) * poly
        else:
            out[..., l + am] = _norm(l, am) * poly * power.real
            out[..., l - am] = _norm(l, -am) * poly * power.imag
        power = power * w
    out[r == 0] = 0.0
    return out


def eval_sh(l: int, v) -> np.ndarray:
    """Harmonics of degree ``l`` at one 3-vector; only its direction matters."""
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    return spherical_harmonics(l, v)


def sh_stack(lmax: int, vectors) -> np.ndarray:
    """Concatenated harmonics ``l = 0..lmax`` along the last axis."""
    return np.concatenate([spherical_harmonics(l, vectors) for l in range(lmax + 1)], axis=-1)


@dataclass(frozen=True, eq=False)
class SphericalSignal:
    """Coefficients of ``Y^0 + Y^1 + ... + Y^lmax`` as one flat vector."""

    lmax: int
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.shape != ((self.lmax + 1) ** 2,):
            raise ValueError(f"lmax={self.lmax} needs {(self.lmax + 1) ** 2} coefficients, got {c.shape}")
        object.__setattr__(self, "coefficients", c)

    @property
    def layout(self) -> IrrepsLayout:
        return IrrepsLayout.spherical_harmonics(self.lmax)

    def degree(self, l: int) -> np.ndarray:
        return self.coefficients[l * l:(l + 1) ** 2]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coefficients, dtype=dtype)


def sh_projection(lmax: int, v) -> SphericalSignal:
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    return SphericalSignal(lmax, sh_stack(lmax, v))


def project_point_set(lmax: int, points) -> SphericalSignal:
    """Radius-weighted sum of harmonic projections, ``sum_i |p_i| Y(p_i / |p_i|)``."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        raise ValueError("empty point set")
    radii = np.linalg.norm(points, axis=1)
    return SphericalSignal(lmax, radii @ sh_stack(lmax, points))
