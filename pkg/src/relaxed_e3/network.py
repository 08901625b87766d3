"""Relaxed equivariant graph convolution and multi-layer networks.

A layer computes, for every node ``a``::

    f'_a = 1/sqrt(N) * sum_{b in nbrs(a)} g_b (x)_{W(|r_ab|)} (theta (x) Y(r_ab / |r_ab|))

where ``g_b`` is the node feature optionally fused with node attributes,
``W`` is a small radial MLP producing one weight per tensor-product path and
``theta`` are the relaxed weights.  With only the ``0e`` entry of ``theta``
non-zero the layer is exactly O(3)-equivariant.

Parameters live in a flat ``dict[str, ndarray]``; every function here is
pure in them.  ``forward(..., record=True)`` returns a tape consumed by
:func:`backward`, which hand-propagates gradients through each operation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .harmonics import sh_stack
from .irreps import GroupElement, Irrep, IrrepsLayout, rep_matrix
from .tensor_product import FullTensorProduct, enumerate_paths, run, run_backward

Params = dict


def silu(x):
    return x * expit(x)


def _silu_grad(x):
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


# makes E[(c * silu(z))^2] = 1 for z ~ N(0, 1)
_SILU_NORM = 1.0 / math.sqrt(0.3557755198173526)


sigmoid = expit


# -- relaxed weights --------------------------------------------------------


@dataclass(eq=False)
class RelaxedWeights:
    """Direct sum ``theta = (+)_{l,p} theta^{l,p}``, one copy of each irrep."""

    layout: IrrepsLayout
    values: np.ndarray

    def __post_init__(self):
        self.layout = IrrepsLayout.parse(self.layout)
        check_relaxed_layout(self.layout)
        self.values = np.array(self.values, dtype=float).reshape(self.layout.dim)

    @classmethod
    def scalar_init(cls, lay, scalar: float = 1.0) -> "RelaxedWeights":
        """Equivariant start: ``0e`` set to ``scalar``, every other block exactly 0."""
        lay = IrrepsLayout.parse(lay)
        values = np.zeros(lay.dim)
        if lay.count("0e"):
            values[lay.slice_of("0e")] = scalar
        return cls(lay, values)

    @classmethod
    def up_to(cls, lmax: int) -> "RelaxedWeights":
        terms = [f"{l}{p}" for l in range(lmax + 1) for p in "eo"]
        return cls.scalar_init("+".join(terms))

    def block(self, ir) -> np.ndarray:
        return self.values[self.layout.slice_of(ir)]

    def set_block(self, ir, values) -> None:
        self.values[self.layout.slice_of(ir)] = values

    def blocks(self) -> dict[Irrep, np.ndarray]:
        return {ir: self.values[sl] for (_, ir), sl in zip(self.layout, self.layout.slices())}

    @property
    def is_scalar(self) -> bool:
        return all(ir.is_scalar or not np.any(v) for ir, v in self.blocks().items())


def check_relaxed_layout(lay: IrrepsLayout) -> None:
    seen = set()
    for mul, ir in lay:
        if mul != 1 or ir in seen:
            raise ValueError(f"relaxed layout must hold each irrep once with multiplicity 1, got {lay}")
        seen.add(ir)


# -- graphs -----------------------------------------------------------------


@dataclass(eq=False)
class Graph:
    """Nodes with typed features/attributes and directed edges ``a <- b``.

    ``edge_dst[k] = a`` receives from ``edge_src[k] = b`` along
    ``r_ab = pos[b] - pos[a]``.
    """

    positions: np.ndarray
    features: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    attributes: Optional[np.ndarray] = None
    avg_degree: Optional[float] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        n = len(self.positions)
        self.features = np.asarray(self.features, dtype=float).reshape(n, -1)
        if self.attributes is not None:
            self.attributes = np.asarray(self.attributes, dtype=float).reshape(n, -1)
        self.edge_src = np.asarray(self.edge_src, dtype=np.int64)
        self.edge_dst = np.asarray(self.edge_dst, dtype=np.int64)
        if self.avg_degree is None:
            self.avg_degree = len(self.edge_src) / max(n, 1)
        if self.avg_degree <= 0:
            raise ValueError("average degree must be positive")

    @property
    def num_nodes(self) -> int:
        return len(self.positions)

    @property
    def num_edges(self) -> int:
        return len(self.edge_src)

    @property
    def edge_vectors(self) -> np.ndarray:
        return self.positions[self.edge_src] - self.positions[self.edge_dst]

    @classmethod
    def single_node(cls, features, attributes=None) -> "Graph":
        """One node at the origin joined to itself; the convolution acts as a dense map."""
        attrs = None if attributes is None else np.asarray(attributes, dtype=float)[None]
        return cls(np.zeros((1, 3)), np.asarray(features, dtype=float)[None], [0], [0], attrs)

    @classmethod
    def radius_graph(cls, positions, features, r_cut: float, attributes=None) -> "Graph":
        """Edges between all pairs closer than ``r_cut``, self-edges included."""
        positions = np.asarray(positions, dtype=float)
        dist = np.linalg.norm(positions[:, None] - positions[None], axis=-1)
        dst, src = np.nonzero(dist < r_cut)
        return cls(positions, features, src, dst, attributes)

    def transformed(self, g: GroupElement, irreps_in, irreps_attr=None) -> "Graph":
        """Image under ``g`` acting on positions, features and attributes."""
        attrs = None
        if self.attributes is not None:
            attrs = self.attributes @ rep_matrix(irreps_attr, g).T
        return Graph(self.positions @ g.matrix().T, self.features @ rep_matrix(irreps_in, g).T,
                     self.edge_src, self.edge_dst, attrs, self.avg_degree)


def batch_graphs(graphs: Sequence[Graph]) -> Graph:
    """Disjoint union; the average degree is recomputed over the union."""
    offsets = np.cumsum([0] + [g.num_nodes for g in graphs[:-1]])
    attrs = None
    if graphs[0].attributes is not None:
        attrs = np.concatenate([g.attributes for g in graphs])
    return Graph(
        np.concatenate([g.positions for g in graphs]),
        np.concatenate([g.features for g in graphs]),
        np.concatenate([g.edge_src + o for g, o in zip(graphs, offsets)]),
        np.concatenate([g.edge_dst + o for g, o in zip(graphs, offsets)]),
        attrs,
    )


# -- layer and network specs ------------------------------------------------


@dataclass(frozen=True)
class LayerSpec:
    irreps_in: IrrepsLayout
    irreps_out: IrrepsLayout
    filter_lmax: int = 2
    relaxed: Optional[IrrepsLayout] = None
    irreps_attr: Optional[IrrepsLayout] = None
    irreps_fused: Optional[IrrepsLayout] = None
    radial_basis: int = 10
    radial_hidden: int = 16
    r_max: float = 1.0
    # False keeps theta fixed at its scalar init: the equivariant baseline
    relaxed_trainable: bool = True

    def __post_init__(self):
        for name in ("irreps_in", "irreps_out", "relaxed", "irreps_attr", "irreps_fused"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, IrrepsLayout.parse(value))
        if self.relaxed is not None:
            check_relaxed_layout(self.relaxed)
        if self.irreps_attr is not None and self.irreps_fused is None:
            object.__setattr__(self, "irreps_fused", self.irreps_in)
        if self.r_max <= 0:
            raise ValueError("r_max must be positive")

    @cached_property
    def irreps_sh(self) -> IrrepsLayout:
        return IrrepsLayout.spherical_harmonics(self.filter_lmax)

    @cached_property
    def filter_product(self) -> Optional[FullTensorProduct]:
        if self.relaxed is None:
            return None
        return FullTensorProduct.build(self.relaxed, self.irreps_sh)

    @property
    def irreps_filter(self) -> IrrepsLayout:
        return self.irreps_sh if self.relaxed is None else self.filter_product.irreps_out

    @property
    def irreps_message_in(self) -> IrrepsLayout:
        return self.irreps_in if self.irreps_attr is None else self.irreps_fused

    @cached_property
    def fuse_table(self):
        if self.irreps_attr is None:
            return None
        return enumerate_paths(self.irreps_in, self.irreps_attr, self.irreps_fused)

    @cached_property
    def conv_table(self):
        return enumerate_paths(self.irreps_message_in, self.irreps_filter, self.irreps_out)

    @cached_property
    def sh_embedding(self) -> np.ndarray:
        """Indices placing ``Y`` into the filter layout as ``0e (x) Y`` (the non-relaxed filter)."""
        if self.relaxed is None:
            return np.arange(self.irreps_sh.dim)
        fp = self.filter_product
        ch1, ch2 = self.relaxed.channels(), self.irreps_sh.channels()
        out_ch = fp.irreps_out.channels()
        idx = np.full(self.irreps_sh.dim, -1)
        for (a, b), (_, ir_c, sl) in zip(fp.sources, out_ch):
            if ch1[a][1].is_scalar and ir_c == ch2[b][1]:
                idx[ch2[b][2]] = np.arange(sl.start, sl.stop)
        if np.any(idx < 0):
            raise ValueError("relaxed layout needs a 0e entry to embed the plain filter")
        return idx

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {
            "radial_w1": (self.radial_basis, self.radial_hidden),
            "radial_w2": (self.radial_hidden, self.conv_table.num_paths),
        }
        if self.fuse_table is not None:
            shapes["fuse"] = (self.fuse_table.num_paths,)
        if self.relaxed is not None and self.relaxed_trainable:
            shapes["theta"] = (self.relaxed.dim,)
        return shapes

    def theta(self, params: Params, prefix: str) -> Optional[np.ndarray]:
        if self.relaxed is None:
            return None
        key = f"{prefix}.theta"
        if key in params:
            return params[key]
        return RelaxedWeights.scalar_init(self.relaxed).values


@dataclass(frozen=True)
class GateSpec:
    """``num_scalars x 0e`` pass through SiLU; each ``gated`` channel is scaled by ``sigmoid(gate)``."""

    num_scalars: int
    gated: IrrepsLayout

    def __post_init__(self):
        object.__setattr__(self, "gated", IrrepsLayout.parse(self.gated))
        if any(ir.is_scalar for _, ir in self.gated):
            raise ValueError("gated channels must be non-scalar")

    @property
    def num_gates(self) -> int:
        return self.gated.num_channels

    @property
    def irreps_in(self) -> IrrepsLayout:
        parts = []
        if self.num_scalars:
            parts.append((self.num_scalars, Irrep(0, 1)))
        if self.num_gates:
            parts.append((self.num_gates, Irrep(0, 1)))
        return IrrepsLayout(tuple(parts)) + self.gated

    @property
    def irreps_out(self) -> IrrepsLayout:
        parts = ((self.num_scalars, Irrep(0, 1)),) if self.num_scalars else ()
        return IrrepsLayout(parts) + self.gated

    @cached_property
    def gate_index(self) -> np.ndarray:
        # gate channel feeding each component of the gated block
        return np.concatenate([np.full(ir.dim, c) for c, (_, ir, _) in enumerate(self.gated.channels())]
                              or [np.zeros(0, dtype=int)]).astype(int)


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    gates: tuple[GateSpec, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "gates", tuple(self.gates))
        if len(self.gates) != len(self.layers) - 1:
            raise ValueError("need exactly one gate between consecutive layers")
        for i, gate in enumerate(self.gates):
            # same component order is all that matters, so compare merged layouts
            if str(gate.irreps_in.simplify()) != str(self.layers[i].irreps_out.simplify()):
                raise ValueError(f"layer {i} outputs {self.layers[i].irreps_out}, gate expects {gate.irreps_in}")
            if str(gate.irreps_out.simplify()) != str(self.layers[i + 1].irreps_in.simplify()):
                raise ValueError(f"gate {i} outputs {gate.irreps_out}, layer {i + 1} expects {self.layers[i + 1].irreps_in}")

    @property
    def irreps_in(self) -> IrrepsLayout:
        return self.layers[0].irreps_in

    @property
    def irreps_out(self) -> IrrepsLayout:
        return self.layers[-1].irreps_out

    @property
    def irreps_attr(self) -> Optional[IrrepsLayout]:
        return self.layers[0].irreps_attr

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {}
        for i, layer in enumerate(self.layers):
            for name, shape in layer.param_shapes().items():
                shapes[f"layers.{i}.{name}"] = shape
        return shapes

    def num_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())

    def relaxed_keys(self) -> list[str]:
        return [k for k in self.param_shapes() if k.endswith(".theta")]

    def with_frozen_relaxed(self) -> "NetworkSpec":
        """Same architecture with every theta fixed at its scalar initialization."""
        from dataclasses import replace

        layers = tuple(replace(layer, relaxed_trainable=False) for layer in self.layers)
        return NetworkSpec(layers, self.gates)


def init_params(spec: NetworkSpec, rng=None) -> Params:
    """Radial weights ~ N(0, 1) (scaled by ``1/sqrt(fan_in)`` in the forward pass),
    fusion weights ~ N(0, 1/sqrt(paths)), theta at its scalar initialization."""
    rng = np.random.default_rng(rng)
    params = {}
    for key, shape in spec.param_shapes().items():
        i = int(key.split(".")[1])
        name = key.split(".")[2]
        if name == "theta":
            params[key] = RelaxedWeights.scalar_init(spec.layers[i].relaxed).values
        elif name == "fuse":
            params[key] = rng.normal(size=shape) / math.sqrt(max(shape[0], 1))
        else:
            params[key] = rng.normal(size=shape)
    return params


# -- radial network ---------------------------------------------------------


def radial_basis(r: np.ndarray, num_basis: int, r_max: float) -> np.ndarray:
    """Evenly spaced Gaussians on ``[0, r_max]`` with width equal to the spacing.

    Scaled by ``sqrt(num_basis)`` so the first dense layer sees O(1) inputs.
    """
    centers = np.linspace(0.0, r_max, num_basis)
    step = r_max / (num_basis - 1)
    return math.sqrt(num_basis) * np.exp(-(((np.asarray(r)[..., None] - centers) / step) ** 2))


def radial_forward(layer: LayerSpec, w1, w2, lengths):
    basis = radial_basis(lengths, layer.radial_basis, layer.r_max)
    pre = basis @ w1 / math.sqrt(layer.radial_basis)
    hidden = _SILU_NORM * silu(pre)
    out = hidden @ w2 / math.sqrt(layer.radial_hidden)
    return out, (basis, pre, hidden)


def radial_backward(layer: LayerSpec, w1, w2, cache, grad_out):
    basis, pre, hidden = cache
    g_w2 = hidden.T @ grad_out / math.sqrt(layer.radial_hidden)
    g_hidden = grad_out @ w2.T / math.sqrt(layer.radial_hidden)
    g_pre = g_hidden * _SILU_NORM * _silu_grad(pre)
    g_w1 = basis.T @ g_pre / math.sqrt(layer.radial_basis)
    return g_w1, g_w2


# -- operations -------------------------------------------------------------


def relaxed_filter(theta: RelaxedWeights, r, lmax: int) -> np.ndarray:
    """``theta (x) Y(r)`` in the full product layout of ``theta.layout`` and ``Y^0..Y^lmax``."""
    sh_layout = IrrepsLayout.spherical_harmonics(lmax)
    fp = FullTensorProduct.build(theta.layout, sh_layout)
    return fp(theta.values, sh_stack(lmax, np.asarray(r, dtype=float)))


def _layer_filter(layer: LayerSpec, theta, sh, relaxed: bool):
    if layer.relaxed is None:
        return sh
    if relaxed:
        return run(layer.filter_product.program, theta[None], sh, np.ones(1))
    filt = np.zeros((len(sh), layer.irreps_filter.dim))
    filt[:, layer.sh_embedding] = sh
    return filt


def relaxed_conv(graph: Graph, layer: LayerSpec, params: Params, prefix: str = "layers.0",
                 features=None, relaxed: bool = True, record: bool = False):
    """One convolution; ``relaxed=False`` swaps the filter for plain ``Y(r)``."""
    x = graph.features if features is None else features
    if x.shape[-1] != layer.irreps_in.dim:
        raise ValueError(f"node features of size {x.shape[-1]} do not match layer input {layer.irreps_in}")
    if layer.irreps_attr is not None:
        if graph.attributes is None or graph.attributes.shape[-1] != layer.irreps_attr.dim:
            raise ValueError(f"layer expects node attributes {layer.irreps_attr}")
        fused = run(layer.fuse_table.program, x, graph.attributes, params[f"{prefix}.fuse"])
    else:
        fused = x
    vec = graph.edge_vectors
    lengths = np.linalg.norm(vec, axis=1)
    sh = sh_stack(layer.filter_lmax, vec)
    theta = layer.theta(params, prefix)
    filt = _layer_filter(layer, theta, sh, relaxed)
    w1, w2 = params[f"{prefix}.radial_w1"], params[f"{prefix}.radial_w2"]
    weights, radial_cache = radial_forward(layer, w1, w2, lengths)
    src_features = fused[graph.edge_src]
    messages = run(layer.conv_table.program, src_features, filt, weights)
    norm = 1.0 / math.sqrt(graph.avg_degree)
    out = np.zeros((graph.num_nodes, layer.irreps_out.dim))
    np.add.at(out, graph.edge_dst, messages)
    out *= norm
    if not record:
        return out
    cache = dict(x=x, fused=fused, sh=sh, theta=theta, filt=filt, weights=weights,
                 radial=radial_cache, src_features=src_features, norm=norm, relaxed=relaxed)
    return out, cache


def relaxed_conv_backward(graph: Graph, layer: LayerSpec, params: Params, prefix: str, cache, grad_out):
    """Return ``(grad wrt input features, {param key: grad})``."""
    grads = {}
    g_msg = grad_out[graph.edge_dst] * cache["norm"]
    g_src, g_filt, g_weights = run_backward(layer.conv_table.program, g_msg, cache["src_features"],
                                            cache["filt"], cache["weights"])
    g_fused = np.zeros_like(cache["fused"])
    np.add.at(g_fused, graph.edge_src, g_src)
    w1, w2 = params[f"{prefix}.radial_w1"], params[f"{prefix}.radial_w2"]
    grads[f"{prefix}.radial_w1"], grads[f"{prefix}.radial_w2"] = radial_backward(
        layer, w1, w2, cache["radial"], g_weights)
    key = f"{prefix}.theta"
    if key in params and cache["relaxed"]:
        g_theta, _, _ = run_backward(layer.filter_product.program, g_filt, cache["theta"][None],
                                     cache["sh"], np.ones(1))
        grads[key] = g_theta[0]
    elif key in params:
        grads[key] = np.zeros_like(params[key])
    if layer.irreps_attr is not None:
        g_x, _, g_fuse = run_backward(layer.fuse_table.program, g_fused, cache["x"], graph.attributes,
                                      params[f"{prefix}.fuse"])
        grads[f"{prefix}.fuse"] = g_fuse
    else:
        g_x = g_fused
    return g_x, grads


def gate(features: np.ndarray, spec: GateSpec, record: bool = False):
    if features.shape[-1] != spec.irreps_in.dim:
        raise ValueError(f"gate expects {spec.irreps_in} (dim {spec.irreps_in.dim}), got size {features.shape[-1]}")
    ns, ng = spec.num_scalars, spec.num_gates
    scalars = features[..., :ns]
    gates = features[..., ns:ns + ng]
    gated = features[..., ns + ng:]
    act_gates = sigmoid(gates)
    out = np.concatenate([silu(scalars), gated * act_gates[..., spec.gate_index]], axis=-1)
    if not record:
        return out
    return out, (scalars, gates, gated, act_gates)


def gate_backward(spec: GateSpec, cache, grad_out):
    scalars, gates, gated, act_gates = cache
    ns = spec.num_scalars
    g_scalars = grad_out[..., :ns] * _silu_grad(scalars)
    g_rest = grad_out[..., ns:]
    g_gated = g_rest * act_gates[..., spec.gate_index]
    per_component = g_rest * gated
    g_act = np.zeros_like(gates)
    np.add.at(g_act.T, spec.gate_index, per_component.T)
    g_gates = g_act * act_gates * (1.0 - act_gates)
    return np.concatenate([g_scalars, g_gates, g_gated], axis=-1)


@dataclass
class Tape:
    graph: Graph
    spec: NetworkSpec
    params: Params
    steps: list = field(default_factory=list)


def forward(spec: NetworkSpec, graph: Graph, params: Params, record: bool = False, relaxed: bool = True):
    """Layer -> gate -> ... -> layer (the last layer is not gated)."""
    tape = Tape(graph, spec, params) if record else None
    x = graph.features
    for i, layer in enumerate(spec.layers):
        prefix = f"layers.{i}"
        if record:
            x, cache = relaxed_conv(graph, layer, params, prefix, x, relaxed, record=True)
            tape.steps.append(("conv", i, cache))
        else:
            x = relaxed_conv(graph, layer, params, prefix, x, relaxed)
        if i < len(spec.gates):
            if record:
                x, cache = gate(x, spec.gates[i], record=True)
                tape.steps.append(("gate", i, cache))
            else:
                x = gate(x, spec.gates[i])
    return (x, tape) if record else x


def backward(tape: Optional[Tape], grad_output: np.ndarray) -> Params:
    """Gradients of ``sum(grad_output * output)`` w.r.t. every parameter."""
    if tape is None or not tape.steps:
        raise RuntimeError("no recorded forward pass; call forward(..., record=True)")
    grads = {k: np.zeros_like(v) for k, v in tape.params.items()}
    g = grad_output
    for kind, i, cache in reversed(tape.steps):
        if kind == "gate":
            g = gate_backward(tape.spec.gates[i], cache, g)
        else:
            g, layer_grads = relaxed_conv_backward(tape.graph, tape.spec.layers[i], tape.params,
                                                   f"layers.{i}", cache, g)
            for k, v in layer_grads.items():
                grads[k] += v.reshape(grads[k].shape)
    return grads


def equivariance_error(spec: NetworkSpec, params: Params, graph: Graph, g: GroupElement) -> float:
    """``|f(g.x) - D(g) f(x)| / |f(x)|`` (max norm)."""
    out = forward(spec, graph, params)
    moved = forward(spec, graph.transformed(g, spec.irreps_in, spec.irreps_attr), params)
    expected = out @ rep_matrix(spec.irreps_out, g).T
    scale = max(np.abs(out).max(), 1e-300)
    return float(np.abs(moved - expected).max() / scale)
