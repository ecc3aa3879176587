import numpy as np
import pytest

from spinc_emt import swsh
from spinc_emt.domains import build_sphere_ladder, ladder_levels


@pytest.fixture(scope="module")
def grid():
    d = build_sphere_ladder(6)
    return d, d.coords[0], d.coords[1]


@pytest.mark.parametrize("s", [0, 1, -1, 0.5, -0.5, 1.5])
def test_orthonormality(grid, s):
    d, th, ph = grid
    B = swsh.basis_matrix(s, 4, th, ph)
    gram = B.conj().T @ (B * d.weights.ravel()[:, None])
    assert np.allclose(gram, np.eye(B.shape[1]), atol=1e-11)


def test_scalar_harmonic_y10(grid):
    _, th, ph = grid
    val, _ = swsh.sylm(0, 1, 0, th, ph)
    assert np.allclose(val, np.sqrt(3 / (4 * np.pi)) * np.cos(th), atol=1e-13)


@pytest.mark.parametrize("s", [0, 0.5, -0.5, 1])
def test_eth_matches_differential_operator(grid, s):
    d, th, ph = grid
    rng = np.random.default_rng(1)
    labs = swsh.labels(s, 4)
    c = rng.standard_normal(len(labs)) + 1j * rng.standard_normal(len(labs))
    up = swsh.evaluate(s + 1, 4, swsh.apply_eth(s, 4, c), th, ph)
    # direct: -(d_theta + i csc d_phi - s cot) eta
    val = np.zeros(th.shape, complex)
    dth = np.zeros(th.shape, complex)
    dph = np.zeros(th.shape, complex)
    for k, (l, m) in enumerate(labs):
        v, dv = swsh.sylm(s, l, m, th, ph)
        val += c[k] * v
        dth += c[k] * dv
        dph += c[k] * 1j * m * v
    direct = -(dth + 1j * dph / np.sin(th) - s * val / np.tan(th))
    assert np.allclose(up, direct, atol=1e-10)


def test_eth_ethbar_commutator_factor():
    # ethbar eth - eth ethbar = 2 s on weight-s fields
    for s in (0, 0.5, 1):
        for l in ladder_levels(s + 1, 5):
            a = swsh.ethbar_factor(s + 1, l) * swsh.eth_factor(s, l)
            b = swsh.eth_factor(s - 1, l) * swsh.ethbar_factor(s, l)
            assert a - b == pytest.approx(2 * s)
