import json

import numpy as np
import pytest

from relaxed_e3 import serialization
from relaxed_e3.experiments import em_network, shape_network
from relaxed_e3.network import Graph, forward, init_params
from relaxed_e3.serialization import CheckpointError, OutputError


@pytest.mark.parametrize("make", [shape_network, em_network])
def test_spec_yaml_round_trip(make):
    spec = make()
    text = serialization.dump_spec(spec)
    back = serialization.load_spec(text)
    assert serialization.dump_spec(back) == text
    assert back.param_shapes() == spec.param_shapes()


def test_spec_yaml_rejects_garbage():
    with pytest.raises(ValueError):
        serialization.load_spec("layers: 3\n")
    with pytest.raises(ValueError):
        serialization.load_spec("[1, 2]\n")


def test_checkpoint_round_trip(tmp_path, rng):
    spec = em_network()
    params = init_params(spec, rng)
    path = serialization.save_checkpoint(tmp_path / "ck.json", spec, params, {"lr": 1e-3}, [1.0, 0.5])
    spec2, params2, data = serialization.load_checkpoint(path)
    assert all(np.array_equal(params[k], params2[k]) for k in params)
    assert data["history"] == [1.0, 0.5]
    g = Graph.single_node(rng.normal(size=spec.irreps_in.dim), rng.normal(size=4))
    assert np.array_equal(forward(spec, g, params), forward(spec2, g, params2))


def test_checkpoint_errors(tmp_path, rng):
    with pytest.raises(CheckpointError):
        serialization.load_checkpoint(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(CheckpointError):
        serialization.load_checkpoint(bad)
    spec = shape_network()
    data = serialization.checkpoint_dict(spec, init_params(spec, rng))
    data["params"]["layers.0.theta"]["shape"] = [3]
    bad.write_text(json.dumps(data))
    with pytest.raises(CheckpointError, match="shape"):
        serialization.load_checkpoint(bad)
    del data["params"]["layers.0.theta"]
    bad.write_text(json.dumps(data))
    with pytest.raises(CheckpointError, match="lacks"):
        serialization.load_checkpoint(bad)


def test_write_json_validates(tmp_path):
    with pytest.raises(OutputError):
        serialization.write_json(tmp_path / "s.json", {"irreps": 3}, "sparsity")
    with pytest.raises(OutputError):
        serialization.write_json(tmp_path / "n.json", {"x": float("nan")})


def test_numpy_values_are_converted(tmp_path):
    path = serialization.write_json(tmp_path / "a.json", {"a": np.arange(3), "b": np.float64(2.5)})
    assert serialization.read_json(path) == {"a": [0, 1, 2], "b": 2.5}
    assert path.read_text() == serialization.dumps({"a": [0, 1, 2], "b": 2.5})
