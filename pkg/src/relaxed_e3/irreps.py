"""O(3) irreps, typed direct-sum layouts and their representation matrices.

Components of an irrep of degree ``l`` are indexed ``m = -l..l`` in the real
basis used by :mod:`relaxed_e3.harmonics`, so that ``Y(R v) = D(R) Y(v)``.
For ``l = 1`` the component order is ``(x, y, z)`` and ``D`` is the rotation
matrix itself.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Sequence, Union

import numpy as np

_IRREP_RE = re.compile(r"^\s*(\d+)\s*([eo])\s*$")
_TERM_RE = re.compile(r"^\s*(?:(\d+)\s*x\s*)?(\d+\s*[eo])\s*$")


@dataclass(frozen=True, order=True)
class Irrep:
    """Irreducible representation of O(3) labelled by degree and parity."""

    l: int
    p: int

    def __post_init__(self):
        if not isinstance(self.l, (int, np.integer)) or self.l < 0:
            raise ValueError(f"l must be a non-negative integer, got {self.l!r}")
        if self.p not in (1, -1):
            raise ValueError(f"parity must be +1 or -1, got {self.p!r}")
        object.__setattr__(self, "l", int(self.l))
        object.__setattr__(self, "p", int(self.p))

    @classmethod
    def parse(cls, text: Union[str, "Irrep"]) -> "Irrep":
        if isinstance(text, Irrep):
            return text
        match = _IRREP_RE.match(text)
        if match is None:
            raise ValueError(f"cannot parse irrep {text!r}")
        return cls(int(match.group(1)), 1 if match.group(2) == "e" else -1)

    @property
    def dim(self) -> int:
        return 2 * self.l + 1

    @property
    def is_scalar(self) -> bool:
        """True only for the invariant ``0e``; ``0o`` is a pseudoscalar."""
        return self.l == 0 and self.p == 1

    @property
    def is_natural(self) -> bool:
        """Parity matches that of the spherical harmonic of the same degree."""
        return self.p == (-1) ** self.l

    def __mul__(self, other: "Irrep") -> Iterator["Irrep"]:
        """Irreps appearing in the tensor product ``self x other``."""
        p = self.p * other.p
        for l in range(abs(self.l - other.l), self.l + other.l + 1):
            yield Irrep(l, p)

    def __str__(self) -> str:
        return f"{self.l}{'e' if self.p == 1 else 'o'}"

    def __repr__(self) -> str:
        return f"Irrep('{self}')"


IrrepLike = Union[str, Irrep]


@dataclass(frozen=True)
class IrrepsLayout:
    """Ordered direct sum ``mul_1 x ir_1 + mul_2 x ir_2 + ...``.

    Entries may repeat; each entry owns one contiguous block of the flat
    feature vector, with its ``mul`` copies stored channel-major.
    """

    entries: tuple[tuple[int, Irrep], ...]

    def __post_init__(self):
        clean = []
        for mul, ir in self.entries:
            mul = int(mul)
            if mul < 1:
                raise ValueError(f"multiplicity must be positive, got {mul}")
            clean.append((mul, Irrep.parse(ir)))
        object.__setattr__(self, "entries", tuple(clean))

    @classmethod
    def parse(cls, text: Union[str, "IrrepsLayout", Sequence]) -> "IrrepsLayout":
        """Parse ``"2x0e + 1x1o"``; whitespace is ignored, ``1x`` optional."""
        if isinstance(text, IrrepsLayout):
            return text
        if not isinstance(text, str):
            return cls(tuple((mul, Irrep.parse(ir)) for mul, ir in text))
        if not text.strip():
            return cls(())
        entries = []
        for term in text.split("+"):
            match = _TERM_RE.match(term)
            if match is None:
                raise ValueError(f"cannot parse layout term {term!r} in {text!r}")
            mul = int(match.group(1)) if match.group(1) else 1
            entries.append((mul, Irrep.parse(match.group(2).replace(" ", ""))))
        return cls(tuple(entries))

    @classmethod
    def spherical_harmonics(cls, lmax: int, p: int = -1) -> "IrrepsLayout":
        """``0e + 1o + 2e + ...`` (``p=-1``) up to ``lmax``."""
        return cls(tuple((1, Irrep(l, p**l)) for l in range(lmax + 1)))

    @property
    def dim(self) -> int:
        return sum(mul * ir.dim for mul, ir in self.entries)

    @property
    def num_channels(self) -> int:
        return sum(mul for mul, _ in self.entries)

    @property
    def lmax(self) -> int:
        return max((ir.l for _, ir in self.entries), default=0)

    def slices(self) -> list[slice]:
        """Index range of each entry (all ``mul`` copies together)."""
        out, start = [], 0
        for mul, ir in self.entries:
            out.append(slice(start, start + mul * ir.dim))
            start += mul * ir.dim
        return out

    def channels(self) -> list[tuple[int, Irrep, slice]]:
        """``(entry_index, irrep, slice)`` for every single channel copy."""
        out, start = [], 0
        for i, (mul, ir) in enumerate(self.entries):
            for _ in range(mul):
                out.append((i, ir, slice(start, start + ir.dim)))
                start += ir.dim
        return out

    def count(self, ir: IrrepLike) -> int:
        ir = Irrep.parse(ir)
        return sum(mul for mul, other in self.entries if other == ir)

    def index(self, ir: IrrepLike) -> int:
        """Position of the first entry holding ``ir``."""
        ir = Irrep.parse(ir)
        for i, (_, other) in enumerate(self.entries):
            if other == ir:
                return i
        raise KeyError(f"{ir} not in {self}")

    def slice_of(self, ir: IrrepLike) -> slice:
        return self.slices()[self.index(ir)]

    def simplify(self) -> "IrrepsLayout":
        """Merge consecutive entries with the same irrep."""
        out: list[list] = []
        for mul, ir in self.entries:
            if out and out[-1][1] == ir:
                out[-1][0] += mul
            else:
                out.append([mul, ir])
        return IrrepsLayout(tuple((m, i) for m, i in out))

    def __add__(self, other: "IrrepsLayout") -> "IrrepsLayout":
        return IrrepsLayout(self.entries + IrrepsLayout.parse(other).entries)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __str__(self) -> str:
        return "+".join(f"{mul}x{ir}" for mul, ir in self.entries)

    def __repr__(self) -> str:
        return f"IrrepsLayout('{self}')"


def layout(text) -> IrrepsLayout:
    return IrrepsLayout.parse(text)


# -- group elements ---------------------------------------------------------


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


@dataclass(frozen=True, eq=False)
class GroupElement:
    """Element of O(3) = SO(3) x Z2: unit quaternion ``(w, x, y, z)`` plus inversion."""

    quaternion: np.ndarray
    inversion: bool = False

    def __post_init__(self):
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"quaternion must have unit norm, got {norm!r}")
        q = q.copy()
        q.setflags(write=False)
        object.__setattr__(self, "quaternion", q)
        object.__setattr__(self, "inversion", bool(self.inversion))

    @classmethod
    def identity(cls) -> "GroupElement":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def pure_inversion(cls) -> "GroupElement":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), inversion=True)

    @classmethod
    def from_axis_angle(cls, axis, angle: float, inversion: bool = False) -> "GroupElement":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        q = np.concatenate([[math.cos(angle / 2)], math.sin(angle / 2) * axis])
        return cls(q / np.linalg.norm(q), inversion)

    def rotation(self) -> np.ndarray:
        """Proper rotation part as a 3x3 matrix."""
        w, x, y, z = self.quaternion
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def matrix(self) -> np.ndarray:
        """Action on ordinary 3D vectors, ``-R`` when the inversion is present."""
        rot = self.rotation()
        return -rot if self.inversion else rot

    def euler_zyz(self) -> tuple[float, float, float]:
        """Angles with ``R = Rz(alpha) Ry(beta) Rz(gamma)``, read off the quaternion.

        Using ``atan2`` on quaternion components stays accurate near the
        gimbal-lock poles where ``arccos(R[2, 2])`` would lose half the digits.
        """
        w, x, y, z = self.quaternion
        plus = math.atan2(z, w)
        minus = math.atan2(-x, y)
        beta = 2.0 * math.atan2(math.hypot(x, y), math.hypot(w, z))
        return plus + minus, beta, plus - minus

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        q = _quat_mul(self.quaternion, other.quaternion)
        return GroupElement(q / np.linalg.norm(q), self.inversion ^ other.inversion)

    def inverse(self) -> "GroupElement":
        w, x, y, z = self.quaternion
        return GroupElement(np.array([w, -x, -y, -z]), self.inversion)

    def __repr__(self) -> str:
        q = np.array2string(self.quaternion, precision=4)
        return f"GroupElement(quaternion={q}, inversion={self.inversion})"


def random_group_element(rng=None, include_inversion: bool = True) -> GroupElement:
    """Haar-uniform rotation (normalized Gaussian quaternion), fair-coin inversion."""
    rng = np.random.default_rng(rng)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    inversion = bool(rng.integers(2)) if include_inversion else False
    return GroupElement(q, inversion)


# -- representation matrices ------------------------------------------------


@lru_cache(maxsize=None)
def _small_d_terms(l: int):
    # Wigner's explicit sum: per (m', m) the list of (coefficient, cos power, sin power)
    f = math.factorial
    terms = {}
    for mp in range(-l, l + 1):
        for m in range(-l, l + 1):
            pref = math.sqrt(f(l + mp) * f(l - mp) * f(l + m) * f(l - m))
            row = []
            for k in range(max(0, m - mp), min(l + m, l - mp) + 1):
                coef = (-1) ** (k - m + mp) * pref / (
                    f(l + m - k) * f(k) * f(l - k - mp) * f(k - m + mp)
                )
                row.append((coef, 2 * l - 2 * k + m - mp, 2 * k - m + mp))
            terms[mp, m] = row
    return terms


def small_d(l: int, beta: float) -> np.ndarray:
    """Complex-basis Wigner small-d matrix ``d^l_{m'm}(beta)``."""
    c, s = math.cos(beta / 2), math.sin(beta / 2)
    d = np.zeros((2 * l + 1, 2 * l + 1))
    for (mp, m), row in _small_d_terms(l).items():
        d[mp + l, m + l] = sum(coef * c**a * s**b for coef, a, b in row)
    return d


@lru_cache(maxsize=None)
def real_to_complex(l: int) -> np.ndarray:
    """Unitary ``U`` with ``Y_real = U @ Y_complex`` (Condon-Shortley complex basis)."""
    u = np.zeros((2 * l + 1, 2 * l + 1), dtype=complex)
    s = 1 / math.sqrt(2)
    u[l, l] = 1.0
    for m in range(1, l + 1):
        u[l + m, l + m] = (-1) ** m * s
        u[l + m, l - m] = s
        u[l - m, l - m] = 1j * s
        u[l - m, l + m] = -1j * (-1) ** m * s
    u.setflags(write=False)
    return u


# The real harmonics treat y as the polar axis: they equal the textbook
# (z-polar) real harmonics evaluated at (z, x, y).
AXIS_PERMUTATION = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def _textbook_rotation_d(l: int, alpha: float, beta: float, gamma: float) -> np.ndarray:
    m = np.arange(-l, l + 1)
    dc = np.exp(-1j * m[:, None] * alpha) * small_d(l, beta) * np.exp(-1j * m[None, :] * gamma)
    u = real_to_complex(l)
    return (u @ dc.conj() @ u.conj().T).real


def _permuted(g: GroupElement) -> GroupElement:
    # quaternion of P R P^T: rotate the vector part by the axis permutation
    w, x, y, z = g.quaternion
    return GroupElement(np.array([w, z, x, y]))


def wigner_d(irrep: IrrepLike, g: GroupElement) -> np.ndarray:
    """Real orthogonal matrix ``D^{l,p}(g)`` acting on the irrep's components."""
    irrep = Irrep.parse(irrep)
    if irrep.l == 0:
        d = np.ones((1, 1))
    else:
        alpha, beta, gamma = _permuted(g).euler_zyz()
        d = _textbook_rotation_d(irrep.l, alpha, beta, gamma)
    if g.inversion and irrep.p == -1:
        d = -d
    return d


def rep_matrix(lay, g: GroupElement) -> np.ndarray:
    """Block-diagonal action of ``g`` on a whole feature vector of layout ``lay``."""
    lay = IrrepsLayout.parse(lay)
    out = np.zeros((lay.dim, lay.dim))
    blocks = {}
    for _, ir, sl in lay.channels():
        if ir not in blocks:
            blocks[ir] = wigner_d(ir, g)
        out[sl, sl] = blocks[ir]
    return out
