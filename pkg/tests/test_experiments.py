import numpy as np
import pytest

from relaxed_e3.analysis import quadratic_coefficients
from relaxed_e3.experiments import (
    ASYM_NOISE,
    CUBE,
    DEFAULT_FIELD,
    EM_FEATURES,
    EMField,
    default_network,
    em_network,
    em_to_samples,
    experiment_family,
    extract_fields,
    make_dataset,
    make_shape_pair,
    random_trajectory,
    shape_to_sample,
    simulate_trajectory,
)
from relaxed_e3.harmonics import eval_sh
from relaxed_e3.network import RelaxedWeights, init_params


def test_cube_pair_identical():
    task = make_shape_pair("cube")
    assert task.inputs.shape == (8, 3)
    assert np.array_equal(task.inputs, task.targets)


def test_prism_is_stretched_along_z():
    task = make_shape_pair("prism")
    assert np.array_equal(task.targets[:, :2], CUBE[:, :2])
    assert np.array_equal(task.targets[:, 2], 2 * CUBE[:, 2])


def test_asym_noise_bounded_and_seeded():
    a, b, c = make_shape_pair("asym", 3), make_shape_pair("asym", 3), make_shape_pair("asym", 4)
    assert np.array_equal(a.targets, b.targets)
    assert not np.array_equal(a.targets, c.targets)
    assert np.abs(a.targets - CUBE).max() <= ASYM_NOISE


def test_unknown_shape():
    with pytest.raises(ValueError, match="unknown shape"):
        make_shape_pair("sphere")


def test_cube_signal_has_only_scalar_part():
    graph, target = shape_to_sample(make_shape_pair("cube"))
    assert np.allclose(graph.features[0, 1:], 0, atol=1e-12)
    assert np.array_equal(graph.features, target)


def test_prism_target_quadrupole_pattern():
    _, target = shape_to_sample(make_shape_pair("prism"))
    # direct summation oracle for the l = 2 block
    direct = sum(np.linalg.norm(v) * eval_sh(2, v) for v in make_shape_pair("prism").targets)
    assert np.allclose(target[0, 4:9], direct)
    theta = RelaxedWeights("0e+2e", np.concatenate([[0.0], target[0, 4:9]]))
    cx, cy, cz, *cross = quadratic_coefficients(theta)
    assert cx == pytest.approx(cy)
    assert cz == pytest.approx(-2 * cx)
    assert np.allclose(cross, 0)
    assert abs(cx) > 1


def test_rk4_exact_for_constant_force():
    field = EMField([0.5, -1.0, 2.0], [0.0, 0.0, 0.0])
    x0, v0 = np.array([0.1, 0.2, 0.3]), np.array([1.0, 0.0, -1.0])
    traj = simulate_trajectory(field, 2.0, x0, v0, dt=0.05, steps=40)
    t = 0.05 * np.arange(40)[:, None]
    assert np.allclose(traj.positions, x0 + v0 * t + 0.5 * 2.0 * field.E * t**2, atol=1e-12)


def test_magnetic_motion_keeps_speed():
    field = EMField([0.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    traj = simulate_trajectory(field, 1.0, np.zeros(3), [1.0, 0.0, 0.5], steps=500)
    speed = np.linalg.norm(traj.velocities, axis=1)
    assert np.abs(speed - speed[0]).max() < 1e-8


def test_trajectory_forces_and_validation():
    traj = random_trajectory(0)
    assert len(traj) == 500
    ref = traj.q * (DEFAULT_FIELD.E + np.cross(traj.velocities, DEFAULT_FIELD.B))
    assert np.allclose(traj.forces, ref)
    with pytest.raises(ValueError):
        simulate_trajectory(DEFAULT_FIELD, 1.0, np.zeros(3), np.zeros(3), steps=0)
    with pytest.raises(ValueError):
        simulate_trajectory(DEFAULT_FIELD, 1.0, np.zeros(3), np.zeros(3), dt=-1)


def test_em_samples():
    samples = em_to_samples(random_trajectory(1))
    assert len(samples) == 500
    g, f = samples[10]
    assert g.features.shape == (1, EM_FEATURES.dim)
    assert g.features[0, 0] == 1.0 and not np.any(g.features[0, 1:])
    assert g.attributes.shape == (1, 4) and g.attributes[0, 3] == 1.0
    assert f.shape == (1, 3)


def test_extract_fields_synthetic():
    samples = em_to_samples(random_trajectory(2))
    theta = RelaxedWeights("0e+0o+1o+1e", [1.0, 0.0, 2.0, 0.0, 0.0, 0.0, -3.0, 0.0])
    out = extract_fields(theta, samples)
    assert np.allclose(out["E_pred"], [1, 0, 0]) and np.allclose(out["B_pred"], [0, 1, 0])
    assert out["E_scale"] == pytest.approx(0.5) and out["B_scale"] == pytest.approx(-1 / 3)
    assert np.allclose(out["B_unit"], [0, 1, 0])


def test_extract_fields_scalar_init_is_zero():
    spec = em_network()
    params = init_params(spec, 0)
    theta = RelaxedWeights(spec.layers[0].relaxed, params["layers.0.theta"])
    out = extract_fields(theta)
    assert not np.any(out["E_raw"]) and not np.any(out["B_raw"])
    assert not np.any(out["E_unit"])


def test_extract_fields_needs_blocks():
    with pytest.raises(ValueError, match="1e"):
        extract_fields(RelaxedWeights.scalar_init("0e+1o"))


def test_make_dataset_records():
    samples, record = make_dataset("shape-prism", 0)
    assert len(samples) == 1 and record["kind"] == "prism"
    assert np.allclose(record["target_signal"], samples[0][1][0])
    samples, record = make_dataset("em-field", 5)
    assert len(samples) == 500 and len(record["forces"]) == 500


def test_experiment_names():
    assert experiment_family("em-field") == "em"
    assert experiment_family("shape-asym") == "shape"
    with pytest.raises(ValueError, match="unknown experiment"):
        experiment_family("shape-torus")
    assert default_network("shape-cube").layers[0].relaxed.lmax == 4
