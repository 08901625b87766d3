import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relaxed_e3.irreps import (
    GroupElement,
    Irrep,
    IrrepsLayout,
    random_group_element,
    rep_matrix,
    small_d,
    wigner_d,
)

seeds = st.integers(0, 2**32 - 1)
irreps = st.builds(Irrep, st.integers(0, 4), st.sampled_from([1, -1]))


def test_parse_roundtrip():
    assert Irrep.parse("0e") == Irrep(0, 1)
    assert Irrep.parse("1o") == Irrep(1, -1)
    for ir in ("0e", "0o", "3e", "4o"):
        assert str(Irrep.parse(ir)) == ir


@pytest.mark.parametrize("bad", ["", "1x", "-1e", "2q", "e1"])
def test_parse_rejects(bad):
    with pytest.raises(ValueError):
        Irrep.parse(bad)


def test_irrep_validation():
    with pytest.raises(ValueError):
        Irrep(-1, 1)
    with pytest.raises(ValueError):
        Irrep(1, 0)


def test_scalar_and_natural():
    assert Irrep.parse("0e").is_scalar
    assert not Irrep.parse("0o").is_scalar  # pseudoscalars break inversion symmetry
    assert Irrep.parse("1o").is_natural and not Irrep.parse("1e").is_natural


def test_product_irreps():
    assert [str(ir) for ir in Irrep.parse("1o") * Irrep.parse("1o")] == ["0e", "1e", "2e"]
    assert [str(ir) for ir in Irrep.parse("2e") * Irrep.parse("1e")] == ["1e", "2e", "3e"]


def test_layout_parse_and_dims():
    lay = IrrepsLayout.parse("2x0e + 1o + 3x2e")
    assert lay.dim == 2 + 3 + 15
    assert lay.num_channels == 6
    assert lay.lmax == 2
    assert [s.stop - s.start for s in lay.slices()] == [2, 3, 15]
    assert str(IrrepsLayout.parse(str(lay))) == str(lay)


def test_layout_lookup():
    lay = IrrepsLayout.parse("0e+1o+2e")
    assert lay.slice_of("1o") == slice(1, 4)
    assert lay.count("2o") == 0
    with pytest.raises(KeyError):
        lay.index("3e")


def test_spherical_harmonics_layout():
    assert str(IrrepsLayout.spherical_harmonics(3)) == "1x0e+1x1o+1x2e+1x3o"


def test_group_element_rejects_non_unit():
    with pytest.raises(ValueError):
        GroupElement(np.array([1.0, 1.0, 0.0, 0.0]))


def test_random_element_deterministic():
    a = random_group_element(np.random.default_rng(7))
    b = random_group_element(np.random.default_rng(7))
    assert np.array_equal(a.quaternion, b.quaternion) and a.inversion == b.inversion


def test_identity_and_inversion():
    e, i = GroupElement.identity(), GroupElement.pure_inversion()
    for l in range(5):
        for p in (1, -1):
            assert np.allclose(wigner_d(Irrep(l, p), e), np.eye(2 * l + 1))
            assert np.allclose(wigner_d(Irrep(l, p), i), p * np.eye(2 * l + 1))


def test_vector_rep_is_the_matrix():
    # Y^1 = sqrt(3) (x, y, z), so D^{1o} is exactly the Cartesian matrix
    g = random_group_element(np.random.default_rng(3))
    assert np.allclose(wigner_d("1o", g), g.matrix(), atol=1e-14)
    assert np.allclose(wigner_d("1e", g), g.rotation(), atol=1e-14)


def test_small_d_pi_over_two_l1():
    d = small_d(1, math.pi / 2)
    assert np.allclose(d @ d.T, np.eye(3))
    assert d[1, 1] == pytest.approx(0.0, abs=1e-15)


def test_euler_near_pole():
    # beta close to 0: angle recovery must stay accurate
    g = GroupElement.from_axis_angle([0, 0, 1], 0.3) @ GroupElement.from_axis_angle([0, 1, 0], 1e-9)
    a, b, c = g.euler_zyz()
    rz = lambda t: np.array([[math.cos(t), -math.sin(t), 0], [math.sin(t), math.cos(t), 0], [0, 0, 1]])
    ry = lambda t: np.array([[math.cos(t), 0, math.sin(t)], [0, 1, 0], [-math.sin(t), 0, math.cos(t)]])
    assert np.abs(rz(a) @ ry(b) @ rz(c) - g.rotation()).max() < 1e-14


@settings(max_examples=60, deadline=None)
@given(irreps, seeds, seeds)
def test_homomorphism(ir, s1, s2):
    g = random_group_element(np.random.default_rng(s1))
    h = random_group_element(np.random.default_rng(s2))
    assert np.abs(wigner_d(ir, g @ h) - wigner_d(ir, g) @ wigner_d(ir, h)).max() < 1e-10


@settings(max_examples=60, deadline=None)
@given(irreps, seeds)
def test_orthogonal_and_inverse(ir, s):
    g = random_group_element(np.random.default_rng(s))
    d = wigner_d(ir, g)
    assert np.abs(d @ d.T - np.eye(ir.dim)).max() < 1e-10
    assert np.abs(wigner_d(ir, g.inverse()) - d.T).max() < 1e-10


def test_rep_matrix_block_diagonal(rng):
    lay = IrrepsLayout.parse("2x0e+1o+2e")
    g = random_group_element(rng)
    m = rep_matrix(lay, g)
    assert m.shape == (lay.dim, lay.dim)
    assert np.allclose(m[2:5, 2:5], wigner_d("1o", g))
    assert np.all(m[:2, 2:] == 0)
