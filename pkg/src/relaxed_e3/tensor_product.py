"""Clebsch-Gordan tensors and weighted tensor products of typed features.

Every product is compiled to a :class:`TPProgram`: a flat coordinate list of
``(path, input index, filter index, output index, coefficient)`` entries
that the kernels in :mod:`relaxed_e3.kernels` contract in one call.

Normalization.  Each CG tensor is scaled so that ``sum_ab C_abc^2 = 1`` for
every output component ``c`` (``||C||_F^2 = 2 l_o + 1``).  In a weighted
product, every path into an output channel is further divided by
``sqrt(fan_in)`` where ``fan_in`` counts the (input channel, filter channel)
pairs feeding that channel.  With unit-variance inputs and unit weights
every output component then has unit variance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import kernels
from .irreps import Irrep, IrrepsLayout, real_to_complex, wigner_d, GroupElement

_ZERO = 1e-13


def selection_rule(l_i: int, l_f: int, l_o: int) -> bool:
    return abs(l_i - l_f) <= l_o <= l_i + l_f


def _complex_cg(j1: int, m1: int, j2: int, m2: int, j: int, m: int) -> float:
    """Racah's closed form for ``<j1 m1 j2 m2 | j m>``."""
    if m != m1 + m2 or not selection_rule(j1, j2, j):
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(m) > j:
        return 0.0
    f = math.factorial
    pre = math.sqrt(
        (2 * j + 1) * f(j + j1 - j2) * f(j - j1 + j2) * f(j1 + j2 - j) / f(j1 + j2 + j + 1)
    )
    pre *= math.sqrt(f(j + m) * f(j - m) * f(j1 - m1) * f(j1 + m1) * f(j2 - m2) * f(j2 + m2))
    total = 0.0
    for k in range(0, j1 + j2 - j + 1):
        args = (j1 + j2 - j - k, j1 - m1 - k, j2 + m2 - k, j - j2 + m1 + k, j - j1 - m2 + k)
        if min(args) < 0:
            continue
        denom = f(k)
        for a in args:
            denom *= f(a)
        total += (-1) ** k / denom
    return pre * total


@dataclass(frozen=True, eq=False)
class CGTensor:
    """Sparse real coupling tensor ``C[alpha, beta, gamma]`` for one ``(l_i, l_f, l_o)``."""

    l_i: int
    l_f: int
    l_o: int
    entries: tuple[tuple[int, int, int, float], ...]

    @property
    def shape(self) -> tuple[int, int, int]:
        return (2 * self.l_i + 1, 2 * self.l_f + 1, 2 * self.l_o + 1)

    def dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for a, b, c, v in self.entries:
            out[a, b, c] = v
        return out

    def __len__(self) -> int:
        return len(self.entries)

    def contract(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.einsum("...a,...b,abc->...c", x, y, self.dense())


@lru_cache(maxsize=None)
def _cg_dense(l_i: int, l_f: int, l_o: int) -> np.ndarray:
    shape = (2 * l_i + 1, 2 * l_f + 1, 2 * l_o + 1)
    if not selection_rule(l_i, l_f, l_o):
        return np.zeros(shape)
    cg = np.zeros(shape)
    for m1 in range(-l_i, l_i + 1):
        for m2 in range(-l_f, l_f + 1):
            m = m1 + m2
            if abs(m) <= l_o:
                cg[m1 + l_i, m2 + l_f, m + l_o] = _complex_cg(l_i, m1, l_f, m2, l_o, m)
    u1, u2, u3 = real_to_complex(l_i), real_to_complex(l_f), real_to_complex(l_o)
    c = np.einsum("cz,xyz,ax,by->abc", u3, cg, u1.conj(), u2.conj())
    # the real-basis tensor is purely real or purely imaginary
    c = c.real if np.abs(c.real).max() >= np.abs(c.imag).max() else c.imag
    c[np.abs(c) < _ZERO] = 0.0
    c *= math.sqrt(2 * l_o + 1) / np.linalg.norm(c)
    c.setflags(write=False)
    return c


def cg_coefficients(l_i: int, l_f: int, l_o: int) -> CGTensor:
    """Real CG tensor, component-normalized; empty when the selection rule fails."""
    c = _cg_dense(l_i, l_f, l_o)
    idx = np.argwhere(c != 0.0)
    entries = tuple((int(a), int(b), int(g), float(c[a, b, g])) for a, b, g in idx)
    return CGTensor(l_i, l_f, l_o, entries)


def cg_nullspace(l_i: int, l_f: int, l_o: int, num_samples: int = 4, seed: int = 0) -> np.ndarray:
    """Independent construction: the invariant of ``D_i x D_f x D_o`` found numerically.

    Returns the unit-norm (dense) solution, or zeros when none exists.
    """
    rng = np.random.default_rng(seed)
    dim = (2 * l_i + 1) * (2 * l_f + 1) * (2 * l_o + 1)
    rows = []
    for _ in range(num_samples):
        g = GroupElement(_unit_quaternion(rng))
        k = np.kron(np.kron(wigner_d(Irrep(l_i, 1), g), wigner_d(Irrep(l_f, 1), g)),
                    wigner_d(Irrep(l_o, 1), g))
        rows.append(k - np.eye(dim))
    _, s, vt = np.linalg.svd(np.concatenate(rows))
    if s[-1] > 1e-8:
        return np.zeros((2 * l_i + 1, 2 * l_f + 1, 2 * l_o + 1))
    return vt[-1].reshape(2 * l_i + 1, 2 * l_f + 1, 2 * l_o + 1)


def _unit_quaternion(rng) -> np.ndarray:
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


# -- compiled products ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TPProgram:
    """Coordinate list for ``out[o] += w[k] * coef * x[i] * y[f]``."""

    path: np.ndarray
    idx_in: np.ndarray
    idx_filter: np.ndarray
    idx_out: np.ndarray
    coef: np.ndarray
    dim_in: int
    dim_filter: int
    dim_out: int
    num_weights: int
    _scatter: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_lists(cls, path, idx_in, idx_filter, idx_out, coef, dims, num_weights) -> "TPProgram":
        as_int = lambda a: np.ascontiguousarray(a, dtype=np.int32)
        return cls(as_int(path), as_int(idx_in), as_int(idx_filter), as_int(idx_out),
                   np.ascontiguousarray(coef, dtype=float), *dims, num_weights)

    def __len__(self) -> int:
        return len(self.coef)


@dataclass(frozen=True)
class Instruction:
    """One entry-level ``(input, filter, output)`` triple and its block of channel paths."""

    i_in: int
    i_filter: int
    i_out: int
    offset: int
    mul_in: int
    mul_filter: int
    mul_out: int

    @property
    def num_paths(self) -> int:
        return self.mul_in * self.mul_filter * self.mul_out

    def path_index(self, u: int, v: int, w: int) -> int:
        return self.offset + (u * self.mul_filter + v) * self.mul_out + w


@dataclass(frozen=True, eq=False)
class PathTable:
    """All parity- and selection-admissible channel paths between three layouts."""

    irreps_in: IrrepsLayout
    irreps_filter: IrrepsLayout
    irreps_out: IrrepsLayout
    instructions: tuple[Instruction, ...]

    @property
    def num_paths(self) -> int:
        return sum(ins.num_paths for ins in self.instructions)

    def paths(self):
        """Yield ``(k, (c_i, ir_i), (c_f, ir_f), (c_o, ir_o))`` with entry-local channel indices."""
        for ins in self.instructions:
            ir_i = self.irreps_in.entries[ins.i_in][1]
            ir_f = self.irreps_filter.entries[ins.i_filter][1]
            ir_o = self.irreps_out.entries[ins.i_out][1]
            for u in range(ins.mul_in):
                for v in range(ins.mul_filter):
                    for w in range(ins.mul_out):
                        yield ins.path_index(u, v, w), (u, ir_i), (v, ir_f), (w, ir_o)

    @property
    def program(self) -> TPProgram:
        prog = self.__dict__.get("_program")
        if prog is None:
            prog = _compile_weighted(self)
            object.__setattr__(self, "_program", prog)
        return prog


def enumerate_paths(irreps_in, irreps_filter, irreps_out) -> PathTable:
    irreps_in = IrrepsLayout.parse(irreps_in)
    irreps_filter = IrrepsLayout.parse(irreps_filter)
    irreps_out = IrrepsLayout.parse(irreps_out)
    instructions, offset = [], 0
    for a, (mul_a, ir_a) in enumerate(irreps_in):
        for b, (mul_b, ir_b) in enumerate(irreps_filter):
            for c, (mul_c, ir_c) in enumerate(irreps_out):
                if ir_c.p != ir_a.p * ir_b.p or not selection_rule(ir_a.l, ir_b.l, ir_c.l):
                    continue
                ins = Instruction(a, b, c, offset, mul_a, mul_b, mul_c)
                instructions.append(ins)
                offset += ins.num_paths
    return PathTable(irreps_in, irreps_filter, irreps_out, tuple(instructions))


def _compile_weighted(table: PathTable) -> TPProgram:
    fan_in = np.zeros(len(table.irreps_out))
    for ins in table.instructions:
        fan_in[ins.i_out] += ins.mul_in * ins.mul_filter
    s_in, s_f, s_out = table.irreps_in.slices(), table.irreps_filter.slices(), table.irreps_out.slices()
    cols = [[] for _ in range(5)]
    for ins in table.instructions:
        ir_a = table.irreps_in.entries[ins.i_in][1]
        ir_b = table.irreps_filter.entries[ins.i_filter][1]
        ir_c = table.irreps_out.entries[ins.i_out][1]
        cg = cg_coefficients(ir_a.l, ir_b.l, ir_c.l)
        alpha = 1.0 / math.sqrt(fan_in[ins.i_out])
        a_idx, b_idx, c_idx, vals = (np.array(col) for col in zip(*cg.entries))
        for u in range(ins.mul_in):
            for v in range(ins.mul_filter):
                for w in range(ins.mul_out):
                    n = len(vals)
                    cols[0].append(np.full(n, ins.path_index(u, v, w)))
                    cols[1].append(s_in[ins.i_in].start + u * ir_a.dim + a_idx)
                    cols[2].append(s_f[ins.i_filter].start + v * ir_b.dim + b_idx)
                    cols[3].append(s_out[ins.i_out].start + w * ir_c.dim + c_idx)
                    cols[4].append(alpha * vals)
    cols = [np.concatenate(col) if col else np.zeros(0) for col in cols]
    dims = (table.irreps_in.dim, table.irreps_filter.dim, table.irreps_out.dim)
    return TPProgram.from_lists(*cols, dims, table.num_paths)


@dataclass(frozen=True, eq=False)
class FullTensorProduct:
    """Unweighted product keeping every ``(channel_1, channel_2, l_o)`` as its own output channel."""

    irreps_1: IrrepsLayout
    irreps_2: IrrepsLayout
    irreps_out: IrrepsLayout
    program: TPProgram
    # (channel_1, channel_2) source of each output channel
    sources: tuple[tuple[int, int], ...]

    @classmethod
    def build(cls, irreps_1, irreps_2) -> "FullTensorProduct":
        irreps_1, irreps_2 = IrrepsLayout.parse(irreps_1), IrrepsLayout.parse(irreps_2)
        ch1, ch2 = irreps_1.channels(), irreps_2.channels()
        out_entries, sources = [], []
        cols = [[] for _ in range(4)]
        start = 0
        for a, (_, ir_a, sl_a) in enumerate(ch1):
            for b, (_, ir_b, sl_b) in enumerate(ch2):
                for ir_c in ir_a * ir_b:
                    cg = cg_coefficients(ir_a.l, ir_b.l, ir_c.l)
                    for x, y, z, val in cg.entries:
                        cols[0].append(sl_a.start + x)
                        cols[1].append(sl_b.start + y)
                        cols[2].append(start + z)
                        cols[3].append(val)
                    out_entries.append((1, ir_c))
                    sources.append((a, b))
                    start += ir_c.dim
        irreps_out = IrrepsLayout(tuple(out_entries))
        n = len(cols[3])
        prog = TPProgram.from_lists(np.zeros(n), *cols, (irreps_1.dim, irreps_2.dim, irreps_out.dim), 1)
        return cls(irreps_1, irreps_2, irreps_out, prog, tuple(sources))

    def __call__(self, x, y) -> np.ndarray:
        return run(self.program, x, y, np.ones(1))


# -- evaluation -------------------------------------------------------------


def _as_batch(a: np.ndarray, dim: int, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape[-1] != dim:
        raise ValueError(f"{name} has trailing dimension {a.shape[-1]}, layout expects {dim}")
    return a


def run(prog: TPProgram, x, y, weights) -> np.ndarray:
    """Evaluate a compiled product; leading axes of ``x``, ``y``, ``weights`` broadcast."""
    x = _as_batch(x, prog.dim_in, "input")
    y = _as_batch(y, prog.dim_filter, "filter")
    weights = _as_batch(weights, prog.num_weights, "weights")
    lead = np.broadcast_shapes(x.shape[:-1], y.shape[:-1], weights.shape[:-1])
    n = int(np.prod(lead))
    xb = np.ascontiguousarray(np.broadcast_to(x, lead + x.shape[-1:]).reshape(n, -1))
    yb = np.ascontiguousarray(np.broadcast_to(y, lead + y.shape[-1:]).reshape(n, -1))
    wb = np.broadcast_to(weights, lead + weights.shape[-1:]).reshape(n, -1)
    out = kernels.tp_forward(prog, xb, yb, wb)
    return out.reshape(lead + (prog.dim_out,))


def run_backward(prog: TPProgram, grad_out, x, y, weights):
    """Gradients of ``run`` w.r.t. its three arguments, reduced to their shapes."""
    x = _as_batch(x, prog.dim_in, "input")
    y = _as_batch(y, prog.dim_filter, "filter")
    weights = _as_batch(weights, prog.num_weights, "weights")
    grad_out = _as_batch(grad_out, prog.dim_out, "output gradient")
    lead = grad_out.shape[:-1]
    n = int(np.prod(lead))
    xb = np.ascontiguousarray(np.broadcast_to(x, lead + x.shape[-1:]).reshape(n, -1))
    yb = np.ascontiguousarray(np.broadcast_to(y, lead + y.shape[-1:]).reshape(n, -1))
    wb = np.broadcast_to(weights, lead + weights.shape[-1:]).reshape(n, -1)
    gb = np.ascontiguousarray(grad_out.reshape(n, -1))
    gx, gy, gw = kernels.tp_backward(prog, gb, xb, yb, wb)
    return (_reduce_to(gx.reshape(lead + gx.shape[-1:]), x.shape),
            _reduce_to(gy.reshape(lead + gy.shape[-1:]), y.shape),
            _reduce_to(gw.reshape(lead + gw.shape[-1:]), weights.shape))


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def weighted_tp(x, y, table: PathTable, weights) -> np.ndarray:
    """``sum_k weights[k] * alpha_k * C_k(x[c_i], y[c_f])`` accumulated into ``out[c_o]``."""
    _check_layout(x, table.irreps_in, "input")
    _check_layout(y, table.irreps_filter, "filter")
    return run(table.program, x, y, weights)


def weighted_tp_backward(grad_out, x, y, table: PathTable, weights):
    """Return ``(grad_x, grad_y, grad_weights)`` for :func:`weighted_tp`."""
    _check_layout(x, table.irreps_in, "input")
    _check_layout(y, table.irreps_filter, "filter")
    _check_layout(grad_out, table.irreps_out, "output gradient")
    return run_backward(table.program, grad_out, x, y, weights)


def _check_layout(a, lay: IrrepsLayout, name: str):
    if np.shape(a)[-1] != lay.dim:
        raise ValueError(f"{name} of size {np.shape(a)[-1]} does not match layout {lay} (dim {lay.dim})")
