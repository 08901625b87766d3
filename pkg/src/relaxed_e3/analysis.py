"""Readouts of learned relaxed weights.

The relaxed weights of a layer define functions on the sphere,

    f(x) = sum_{l,p} theta^{l,p} . Y^l(x),

split into a scalar signal (blocks with ``p = (-1)^l``, the parity of
``Y^l``) and a pseudoscalar signal (the remaining blocks).  The l = 2 part
of the scalar signal is a trace-free quadratic form whose coefficients
identify which point group survives the learned symmetry breaking.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .harmonics import spherical_harmonics
from .irreps import Irrep
from .network import NetworkSpec, Params, RelaxedWeights

MONOMIALS = ("x2", "y2", "z2", "xy", "xz", "yz")

# Y^2_m as homogeneous quadratics; columns follow MONOMIALS.
_R5, _R15 = math.sqrt(5.0), math.sqrt(15.0)
L2_MONOMIAL_TABLE = np.array([
    [0.0, 0.0, 0.0, 0.0, _R15, 0.0],
    [0.0, 0.0, 0.0, _R15, 0.0, 0.0],
    [-_R5 / 2, _R5, -_R5 / 2, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0, _R15],
    [-_R15 / 2, 0.0, _R15 / 2, 0.0, 0.0, 0.0],
])

O_H = "O_h-preserving"
D_4H = "D_4h-compatible"
ASYMMETRIC = "asymmetric"
VERDICTS = (O_H, D_4H, ASYMMETRIC)

DEFAULT_THRESHOLD = 1e-2
DEFAULT_RTOL = 0.05
GRID_POINTS = 2000


def is_scalar_parity(ir: Irrep) -> bool:
    """True when the block has the parity of ``Y^l`` and so feeds the scalar signal."""
    return ir.p == (-1) ** ir.l


def _signal(theta: RelaxedWeights, points, keep) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    single = points.ndim == 1
    pts = points.reshape(-1, 3)
    out = np.zeros(len(pts))
    for ir, block in theta.blocks().items():
        if keep(ir) and np.any(block):
            out += spherical_harmonics(ir.l, pts) @ block
    return out[0] if single else out.reshape(points.shape[:-1])


def scalar_signal(theta: RelaxedWeights, points) -> np.ndarray:
    """``sum theta^{l,p} . Y^l(x)`` over parity-matched blocks; ``points`` is ``(..., 3)``."""
    return _signal(theta, points, is_scalar_parity)


def pseudoscalar_signal(theta: RelaxedWeights, points) -> np.ndarray:
    """Same sum over the blocks whose parity is opposite to ``Y^l``."""
    return _signal(theta, points, lambda ir: not is_scalar_parity(ir))


def fibonacci_sphere(n: int = GRID_POINTS) -> np.ndarray:
    if n < 1:
        raise ValueError("need at least one grid point")
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    rho = np.sqrt(1.0 - z * z)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


# -- quadratic forms --------------------------------------------------------


def quadratic_coefficients(theta: RelaxedWeights) -> np.ndarray:
    """Coefficients of ``x^2, y^2, z^2, xy, xz, yz`` in the l = 2 scalar signal."""
    if not theta.layout.count("2e"):
        raise ValueError("relaxed weights have no 2e block")
    return theta.block("2e") @ L2_MONOMIAL_TABLE


def symmetry_verdict(coefficients, rtol: float = DEFAULT_RTOL, scale: float = 1.0) -> str:
    """Classify a quadratic form by which cube symmetries it keeps.

    Coefficients below ``rtol * scale`` count as zero.  A nonzero form is
    D_4h-compatible (z unique) when ``c_x ~ c_y``, ``c_z ~ -2 c_x`` and the
    cross terms vanish, all to ``rtol`` relative to ``|c_x|``.
    """
    c = np.asarray(coefficients, dtype=float).reshape(6)
    if rtol <= 0 or scale <= 0:
        raise ValueError("rtol and scale must be positive")
    if np.max(np.abs(c)) <= rtol * scale:
        return O_H
    cx, cy, cz = c[:3]
    ref = abs(cx)
    if ref > 0 and abs(cx - cy) <= rtol * ref and abs(cz + 2 * cx) <= rtol * ref \
            and np.max(np.abs(c[3:])) <= rtol * ref:
        return D_4H
    return ASYMMETRIC


# -- sparsity ---------------------------------------------------------------


@dataclass
class SparsityTable:
    """Per layer, the number of components of each theta block above the cutoff."""

    irreps: list[str]
    counts: list[list[int]]
    cutoffs: list[float]
    threshold: float
    relative: bool

    def count(self, ir, layer: int = -1) -> int:
        return self.counts[layer][self.irreps.index(str(Irrep.parse(ir)))]

    def nonzero(self, layer: int = -1) -> list[str]:
        return [ir for ir, n in zip(self.irreps, self.counts[layer]) if n > 0]

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "relative": self.relative,
            "irreps": list(self.irreps),
            "layers": [{"cutoff": c, "counts": dict(zip(self.irreps, row))}
                       for c, row in zip(self.cutoffs, self.counts)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SparsityTable":
        irreps = list(data["irreps"])
        return cls(irreps, [[int(layer["counts"][ir]) for ir in irreps] for layer in data["layers"]],
                   [float(layer["cutoff"]) for layer in data["layers"]],
                   float(data["threshold"]), bool(data["relative"]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "irrep", "l", "p", "dim", "count"])
        for i, row in enumerate(self.counts):
            for ir, n in zip(self.irreps, row):
                irrep = Irrep.parse(ir)
                w.writerow([i, ir, irrep.l, irrep.p, irrep.dim, n])
        return buf.getvalue()


def sparsity(thetas: Sequence[RelaxedWeights], threshold: float = DEFAULT_THRESHOLD,
             relative: bool = True) -> SparsityTable:
    """Count components with ``|theta| > cutoff``.

    With ``relative`` the cutoff is ``threshold`` times the layer's largest
    ``|theta|``; otherwise ``threshold`` is used as is.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    if isinstance(thetas, RelaxedWeights):
        thetas = [thetas]
    irreps: list[str] = []
    for theta in thetas:
        for ir in theta.blocks():
            if str(ir) not in irreps:
                irreps.append(str(ir))
    counts, cutoffs = [], []
    for theta in thetas:
        peak = float(np.max(np.abs(theta.values))) if theta.values.size else 0.0
        cutoff = threshold * peak if relative else threshold
        blocks = {str(ir): v for ir, v in theta.blocks().items()}
        counts.append([int(np.sum(np.abs(blocks[ir]) > cutoff)) if ir in blocks else 0 for ir in irreps])
        cutoffs.append(cutoff)
    return SparsityTable(irreps, counts, cutoffs, float(threshold), relative)


# -- reports ----------------------------------------------------------------


def layer_thetas(spec: NetworkSpec, params: Params) -> list[RelaxedWeights]:
    """Relaxed weights of every relaxed layer (scalar init for frozen ones)."""
    out = []
    for i, layer in enumerate(spec.layers):
        values = layer.theta(params, f"layers.{i}")
        if values is not None:
            out.append(RelaxedWeights(layer.relaxed, values))
    return out


@dataclass
class SignalReport:
    """Scalar and pseudoscalar signal coefficients per layer, plus the l = 2 readout."""

    scalar: list[dict[str, list[float]]]
    pseudoscalar: list[dict[str, list[float]]]
    quadratic: list[Optional[list[float]]]
    verdicts: list[Optional[str]]
    grid: Optional[np.ndarray] = field(default=None, repr=False)
    grid_values: list[np.ndarray] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        layers = []
        for i in range(len(self.scalar)):
            layers.append({
                "scalar": self.scalar[i],
                "pseudoscalar": self.pseudoscalar[i],
                "quadratic": None if self.quadratic[i] is None else dict(zip(MONOMIALS, self.quadratic[i])),
                "verdict": self.verdicts[i],
            })
        return {"monomials": list(MONOMIALS), "layers": layers}

    @classmethod
    def from_dict(cls, data: dict) -> "SignalReport":
        layers = data["layers"]
        return cls(
            [dict(layer["scalar"]) for layer in layers],
            [dict(layer["pseudoscalar"]) for layer in layers],
            [None if layer["quadratic"] is None else [layer["quadratic"][m] for m in MONOMIALS]
             for layer in layers],
            [layer["verdict"] for layer in layers],
        )

    def to_csv(self) -> str:
        """Long format: one row per coefficient."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "signal", "irrep", "index", "value"])
        for i in range(len(self.scalar)):
            for kind, blocks in (("scalar", self.scalar[i]), ("pseudoscalar", self.pseudoscalar[i])):
                for ir, values in blocks.items():
                    for k, v in enumerate(values):
                        w.writerow([i, kind, ir, k, repr(float(v))])
        return buf.getvalue()

    def grid_csv(self, layer: int = -1) -> str:
        """``x, y, z, f`` rows of the scalar signal on the export grid."""
        if self.grid is None:
            raise ValueError("report was built without a grid")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y", "z", "f"])
        for p, f in zip(self.grid, self.grid_values[layer]):
            w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), repr(float(f))])
        return buf.getvalue()


def signal_report(thetas: Sequence[RelaxedWeights], grid_points: int = GRID_POINTS,
                  rtol: float = DEFAULT_RTOL) -> SignalReport:
    """Verdicts use the layer's largest ``|theta|`` as the zero scale."""
    grid = fibonacci_sphere(grid_points) if grid_points else None
    scal, pseudo, quad, verdicts, values = [], [], [], [], []
    for theta in thetas:
        blocks = theta.blocks()
        scal.append({str(ir): v.tolist() for ir, v in blocks.items() if is_scalar_parity(ir)})
        pseudo.append({str(ir): v.tolist() for ir, v in blocks.items() if not is_scalar_parity(ir)})
        if theta.layout.count("2e"):
            c = quadratic_coefficients(theta)
            scale = float(np.max(np.abs(theta.values))) or 1.0
            quad.append(c.tolist())
            verdicts.append(symmetry_verdict(c, rtol, scale))
        else:
            quad.append(None)
            verdicts.append(None)
        if grid is not None:
            values.append(scalar_signal(theta, grid))
    return SignalReport(scal, pseudo, quad, verdicts, grid, values)
