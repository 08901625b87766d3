"""Datasets and network presets for the two symmetry-breaking tasks.

* Shape deformation: map the harmonic projection of a cube's vertices to
  that of a cube, a square prism (unique z axis) or a randomly perturbed
  cube.  Each sample is a single-node graph with a self-edge.
* Charged particle: predict the Lorentz force ``q (E + v x B)`` from the
  particle velocity (``1o``) and charge (``0e``) given as node attributes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .harmonics import project_point_set
from .irreps import IrrepsLayout
from .network import GateSpec, Graph, LayerSpec, NetworkSpec, RelaxedWeights

SHAPE_KINDS = ("cube", "prism", "asym")
SHAPE_LMAX = 2
ASYM_NOISE = 0.3

CUBE = np.array([[x, y, z] for x in (-1.0, 1.0) for y in (-1.0, 1.0) for z in (-1.0, 1.0)])


@dataclass(eq=False)
class ShapeTask:
    kind: str
    inputs: np.ndarray
    targets: np.ndarray
    lmax: int = SHAPE_LMAX

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(-1, 3)
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1, 3)
        if len(self.inputs) == 0 or len(self.targets) == 0:
            raise ValueError("shape task needs non-empty vertex lists")


def make_shape_pair(kind: str, seed: int = 0) -> ShapeTask:
    """Cube to ``cube`` / ``prism`` (+-1, +-1, +-2) / ``asym`` (cube + U[-0.3, 0.3]^3 noise)."""
    if kind == "cube":
        target = CUBE.copy()
    elif kind == "prism":
        target = CUBE * np.array([1.0, 1.0, 2.0])
    elif kind == "asym":
        rng = np.random.default_rng(seed)
        target = CUBE + rng.uniform(-ASYM_NOISE, ASYM_NOISE, size=CUBE.shape)
    else:
        raise ValueError(f"unknown shape kind {kind!r}; expected one of {SHAPE_KINDS}")
    return ShapeTask(kind, CUBE.copy(), target)


def shape_to_sample(task: ShapeTask):
    """``(single-node graph, target signal row)``; both are ``Y^0..Y^lmax`` projections."""
    feature = project_point_set(task.lmax, task.inputs).coefficients
    target = project_point_set(task.lmax, task.targets).coefficients
    return Graph.single_node(feature), target[None]


def shape_network(lmax: int = SHAPE_LMAX, l_relaxed: int = 4, hidden_mul: int = 2,
                  hidden_scalars: int = 4, relaxed: bool = True) -> NetworkSpec:
    """Two relaxed layers with a gate in between; theta spans ``0e..l_relaxed`` both parities."""
    signal = IrrepsLayout.spherical_harmonics(lmax)
    theta = RelaxedWeights.up_to(l_relaxed).layout
    gated = "+".join(f"{hidden_mul}x{l}{p}" for l in range(lmax + 1) for p in "eo" if (l, p) != (0, "e"))
    g0 = GateSpec(hidden_scalars, gated)
    layers = (
        LayerSpec(signal, g0.irreps_in, lmax, theta),
        LayerSpec(g0.irreps_out, signal, lmax, theta),
    )
    spec = NetworkSpec(layers, (g0,))
    return spec if relaxed else spec.with_frozen_relaxed()


# -- charged particle -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EMField:
    E: np.ndarray  # 1o vector
    B: np.ndarray  # 1e pseudovector

    def __post_init__(self):
        object.__setattr__(self, "E", np.asarray(self.E, dtype=float).reshape(3))
        object.__setattr__(self, "B", np.asarray(self.B, dtype=float).reshape(3))

    def force(self, q: float, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return q * (self.E + np.cross(v, self.B))


DEFAULT_FIELD = EMField([1.0, 0.0, 0.0], [0.0, 1.0, 0.0])


@dataclass(eq=False)
class Trajectory:
    q: float
    dt: float
    positions: np.ndarray
    velocities: np.ndarray
    forces: np.ndarray
    field: EMField = DEFAULT_FIELD

    def __len__(self) -> int:
        return len(self.positions)


def _rk4_step(field: EMField, q: float, x, v, dt):
    def deriv(x_, v_):
        return v_, q * (field.E + np.cross(v_, field.B))

    k1x, k1v = deriv(x, v)
    k2x, k2v = deriv(x + 0.5 * dt * k1x, v + 0.5 * dt * k1v)
    k3x, k3v = deriv(x + 0.5 * dt * k2x, v + 0.5 * dt * k2v)
    k4x, k4v = deriv(x + dt * k3x, v + dt * k3v)
    return (x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x),
            v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v))


def simulate_trajectory(field: EMField, q: float, x0, v0, dt: float = 0.01, steps: int = 500) -> Trajectory:
    """RK4 for ``x' = v, v' = q (E + v x B)`` (unit mass); stores ``steps`` states from t = 0."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, v = np.asarray(x0, dtype=float), np.asarray(v0, dtype=float)
    xs, vs = np.zeros((steps, 3)), np.zeros((steps, 3))
    for t in range(steps):
        xs[t], vs[t] = x, v
        x, v = _rk4_step(field, q, x, v, dt)
    forces = q * (field.E + np.cross(vs, field.B))
    return Trajectory(q, dt, xs, vs, forces, field)


def random_trajectory(seed: int = 0, field: EMField = DEFAULT_FIELD, q: float = 1.0,
                      dt: float = 0.01, steps: int = 500) -> Trajectory:
    """Initial position and velocity uniform in ``[-1, 1]^3``."""
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(-1.0, 1.0, 3)
    v0 = rng.uniform(-1.0, 1.0, 3)
    return simulate_trajectory(field, q, x0, v0, dt, steps)


EM_FEATURES = IrrepsLayout.parse("0e+0o+1e+1o+2e+2o")
EM_ATTRIBUTES = IrrepsLayout.parse("1o+0e")
EM_RELAXED = IrrepsLayout.parse("0e+0o+1o+1e")
EM_OUTPUT = IrrepsLayout.parse("1o")


def em_to_samples(traj: Trajectory):
    """One single-node graph per stored step: attributes ``(v, q)``, constant ``0e = 1`` feature."""
    feature = np.zeros(EM_FEATURES.dim)
    feature[EM_FEATURES.slice_of("0e")] = 1.0
    samples = []
    for v, f in zip(traj.velocities, traj.forces):
        attrs = np.concatenate([v, [traj.q]])
        samples.append((Graph.single_node(feature, attrs), f[None].copy()))
    return samples


def em_network(relaxed: bool = True, filter_lmax: int = 2) -> NetworkSpec:
    layer = LayerSpec(EM_FEATURES, EM_OUTPUT, filter_lmax, EM_RELAXED, irreps_attr=EM_ATTRIBUTES)
    spec = NetworkSpec((layer,))
    return spec if relaxed else spec.with_frozen_relaxed()


def extract_fields(theta: RelaxedWeights, samples=None) -> dict:
    """Read E from the ``1o`` block and B from the ``1e`` block of ``theta``.

    The blocks fix the directions.  Sign and magnitude come from the
    least-squares fit ``F ~ q (s_E e + s_B v x b)`` over ``samples``; with
    no samples the raw blocks are returned unscaled.
    """
    for ir in ("1o", "1e"):
        if not theta.layout.count(ir):
            raise ValueError(f"relaxed weights lack the {ir} block needed to read the fields")
    e_raw, b_raw = theta.block("1o").copy(), theta.block("1e").copy()
    s_e = s_b = 1.0
    if samples:
        rows, rhs = [], []
        for graph, force in samples:
            v, q = graph.attributes[0, :3], graph.attributes[0, 3]
            rows.append(np.stack([q * e_raw, q * np.cross(v, b_raw)], axis=1))
            rhs.append(np.asarray(force).reshape(3))
        (s_e, s_b), *_ = np.linalg.lstsq(np.concatenate(rows), np.concatenate(rhs), rcond=None)
    e_pred, b_pred = s_e * e_raw, s_b * b_raw
    return {
        "E_raw": e_raw, "B_raw": b_raw,
        "E_scale": float(s_e), "B_scale": float(s_b),
        "E_pred": e_pred, "B_pred": b_pred,
        "E_unit": _unit(e_pred), "B_unit": _unit(b_pred),
    }


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.zeros_like(v)


# -- presets and dataset files ---------------------------------------------

EXPERIMENTS = ("shape-cube", "shape-prism", "shape-asym", "em-field")

# training defaults per experiment
DEFAULTS = {
    "shape": {"optimizer": "sgd", "lr": 5e-3, "lam": 1e-6, "epochs": 2500, "batch_size": None},
    "em": {"optimizer": "adam", "lr": 1e-3, "lam": 1e-4, "epochs": 5000, "batch_size": 50},
}


def experiment_family(name: str) -> str:
    if name not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}; expected one of {', '.join(EXPERIMENTS)}")
    return "em" if name == "em-field" else "shape"


def default_network(name: str) -> NetworkSpec:
    return em_network() if experiment_family(name) == "em" else shape_network()


def make_dataset(name: str, seed: int = 0):
    """``(samples, record)`` where ``record`` is the JSON-ready dataset description."""
    if experiment_family(name) == "em":
        traj = random_trajectory(seed)
        record = {
            "experiment": name, "seed": seed, "q": traj.q, "dt": traj.dt,
            "E": traj.field.E.tolist(), "B": traj.field.B.tolist(),
            "positions": traj.positions.tolist(), "velocities": traj.velocities.tolist(),
            "forces": traj.forces.tolist(),
        }
        return em_to_samples(traj), record
    task = make_shape_pair(name.split("-", 1)[1], seed)
    graph, target = shape_to_sample(task)
    record = {
        "experiment": name, "kind": task.kind, "seed": seed, "lmax": task.lmax,
        "inputs": task.inputs.tolist(), "targets": task.targets.tolist(),
        "input_signal": graph.features[0].tolist(), "target_signal": target[0].tolist(),
    }
    return [(graph, target)], record
