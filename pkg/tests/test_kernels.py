import subprocess
import sys

import numpy as np
import pytest

from relaxed_e3 import kernels
from relaxed_e3.experiments import em_network, shape_network
from relaxed_e3.network import forward, init_params
from relaxed_e3.experiments import make_dataset

compiled = pytest.mark.skipif("compiled" not in kernels.BACKENDS, reason="extension not built")


@pytest.fixture
def restore_backend():
    before = kernels.BACKEND
    yield
    kernels.use(before)


def test_unknown_backend():
    with pytest.raises(ValueError, match="unavailable"):
        kernels.use("fortran")


@compiled
def test_auto_prefers_compiled():
    assert kernels.BACKEND == "compiled"


def test_env_selects_fallback():
    code = "from relaxed_e3 import kernels; print(kernels.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={"RELAXED_E3_KERNELS": "python", "PATH": ""}, check=True)
    assert out.stdout.strip() == "python"


@compiled
@pytest.mark.parametrize("which", ["conv0", "conv1", "filter", "em"])
def test_backends_agree(rng, which):
    shape = shape_network()
    prog = {
        "conv0": shape.layers[0].conv_table.program,
        "conv1": shape.layers[1].conv_table.program,
        "filter": shape.layers[0].filter_product.program,
        "em": em_network().layers[0].conv_table.program,
    }[which]
    x = rng.normal(size=(7, prog.dim_in))
    y = rng.normal(size=(7, prog.dim_filter))
    w = rng.normal(size=(7, prog.num_weights))
    g = rng.normal(size=(7, prog.dim_out))
    py_f, py_b = kernels.BACKENDS["python"]
    c_f, c_b = kernels.BACKENDS["compiled"]
    assert np.allclose(py_f(prog, x, y, w), c_f(prog, x, y, w), rtol=1e-12, atol=1e-12)
    for a, b in zip(py_b(prog, g, x, y, w), c_b(prog, g, x, y, w)):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


@compiled
def test_network_output_backend_independent(restore_backend):
    samples, _ = make_dataset("em-field", 0)
    spec = em_network()
    params = init_params(spec, np.random.default_rng(0))
    graph = samples[3][0]
    kernels.use("python")
    a = forward(spec, graph, params)
    kernels.use("compiled")
    b = forward(spec, graph, params)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


@compiled
def test_compiled_accepts_broadcast_weights(rng):
    prog = em_network().layers[0].fuse_table.program
    x = rng.normal(size=(4, prog.dim_in))
    y = rng.normal(size=(4, prog.dim_filter))
    w = np.broadcast_to(rng.normal(size=prog.num_weights), (4, prog.num_weights))
    py_f, _ = kernels.BACKENDS["python"]
    c_f, _ = kernels.BACKENDS["compiled"]
    assert np.allclose(py_f(prog, x, y, w), c_f(prog, x, y, w))
