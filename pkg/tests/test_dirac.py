import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinc_emt import dirac
from spinc_emt.domains import build_patch2, build_torus2, build_torus3, flat_chart
from spinc_emt.spinc import gauge_transform, make_spinc


def _sphere_levels(sphere, deg, k):
    s = make_spinc(sphere, deg)
    return s, np.array([p.eigenvalue for p in dirac.eigenpairs(dirac.assemble_dsq(sphere, s), k)])


def test_spin_sphere_spectrum(sphere):
    # lambda^2 = (l + 1/2)^2 with multiplicity 2(2l + 1), l = 1/2, 3/2, ...
    _, vals = _sphere_levels(sphere, 0, 12)
    assert np.allclose(vals[:4], 1, atol=1e-12)
    assert np.allclose(vals[4:12], 4, atol=1e-12)


def test_canonical_sphere_spectrum(sphere):
    s, vals = _sphere_levels(sphere, 2, 8)
    assert abs(vals[0]) < 1e-12
    assert np.allclose(vals[1:7], 2, atol=1e-12)
    assert vals[7] == pytest.approx(6, abs=1e-12)


@pytest.mark.parametrize("deg", [-4, -2, 0, 2, 4])
def test_sphere_kernel_matches_index(sphere, deg):
    s = make_spinc(sphere, deg)
    pairs = dirac.eigenpairs(dirac.assemble_dsq(sphere, s), 6)
    ker = [p for p in pairs if abs(p.eigenvalue) < 1e-10]
    assert len(ker) == abs(deg) // 2
    for p in ker:
        frac = p.eigenspinor.chirality_plus_fraction()
        assert frac == pytest.approx(1.0 if deg > 0 else 0.0, abs=1e-12)


@pytest.mark.parametrize("deg", [0, 2, -2])
def test_sphere_dsq_is_square_of_d(sphere, deg):
    s = make_spinc(sphere, deg)
    D = dirac.assemble_d_sphere(sphere, s).dense()
    D2 = dirac.assemble_dsq(sphere, s).dense()
    assert np.allclose(D @ D, D2, atol=1e-11)
    assert np.allclose(D, D.conj().T)
    # D is odd with respect to the chirality grading
    G = np.diag(dirac.sphere_chirality(s))
    assert np.allclose(G @ D + D @ G, 0)


def test_dtilde_squares_to_dsq(sphere):
    s = make_spinc(sphere, 2)
    Dt = dirac.assemble_dtilde_sphere(sphere, s).dense()
    D2 = dirac.assemble_dsq(sphere, s).dense()
    assert np.allclose(-Dt @ Dt, D2, atol=1e-11) or np.allclose(Dt @ Dt.conj().T, D2, atol=1e-11)


def test_first_order_refused_on_lattice(torus16):
    with pytest.raises(dirac.UnsupportedBackendError):
        dirac.assemble_d_sphere(torus16, make_spinc(torus16, 0))


def test_no_dsq_on_patches():
    d = build_patch2(flat_chart(1, 1, 5, 5))
    with pytest.raises((dirac.AssemblyError, TypeError)):
        dirac.assemble_dsq(d, make_spinc(build_torus2(1, 1, 4), 0))


def test_free_torus_spectrum(torus16):
    s = make_spinc(torus16, 0)
    vals = [p.eigenvalue for p in dirac.eigenpairs(dirac.assemble_dsq(torus16, s), 10)]
    assert np.allclose(vals[:2], 0, atol=1e-12)
    # |k|^2 = 1 with multiplicity 4 momenta x 2 spin components; fourth-order stencil
    assert np.allclose(vals[2:10], 1, atol=1e-3)


@pytest.mark.parametrize("deg", [1, 2, -1])
def test_landau_levels(torus16, deg):
    s = make_spinc(torus16, deg)
    k = abs(deg) + 2 * abs(deg)
    vals = np.array([p.eigenvalue for p in dirac.eigenpairs(dirac.assemble_dsq(torus16, s), k)])
    gap = 4 * np.pi * abs(deg) / torus16.area
    assert np.all(np.abs(vals[: abs(deg)]) < 1e-3 * gap)
    assert np.allclose(vals[abs(deg):], gap, rtol=1e-2)


def test_kernel_chirality_on_torus(torus16):
    for deg in (2, -2):
        s = make_spinc(torus16, deg)
        pairs = dirac.eigenpairs(dirac.assemble_dsq(torus16, s), 2)
        for p in pairs:
            frac = p.eigenspinor.chirality_plus_fraction()
            assert frac == pytest.approx(1.0 if deg > 0 else 0.0, abs=1e-8)


def test_self_adjoint(torus16, sphere):
    for d, deg in ((torus16, 1), (sphere, 2)):
        op = dirac.assemble_dsq(d, make_spinc(d, deg))
        assert dirac.self_adjointness_defect(op) < 1e-13


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_spectrum_gauge_invariant(seed):
    d = build_torus2(2 * np.pi, 2 * np.pi, 12)
    s = make_spinc(d, 1)
    lam = np.random.default_rng(seed).uniform(-np.pi, np.pi, d.shape)
    a = [p.eigenvalue for p in dirac.eigenpairs(dirac.assemble_dsq(d, s), 4)]
    b = [p.eigenvalue for p in dirac.eigenpairs(dirac.assemble_dsq(d, gauge_transform(s, lam)), 4)]
    assert np.allclose(a, b, atol=1e-9)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([0, 2, -2, 4]))
def test_sphere_dsq_positive(seed, deg):
    from spinc_emt.domains import build_sphere_ladder

    d = build_sphere_ladder(4)
    op = dirac.assemble_dsq(d, make_spinc(d, deg))
    x = np.random.default_rng(seed).standard_normal(op.dimension)
    assert np.real(np.vdot(x, op.apply(x))) >= -1e-12


def test_lanczos_agrees_with_dense():
    d = build_torus2(2 * np.pi, 2 * np.pi, 10)
    op = dirac.assemble_dsq(d, make_spinc(d, 1))
    a = [p.eigenvalue for p in dirac.eigenpairs(op, 5, dense=False)]
    b = [p.eigenvalue for p in dirac.eigenpairs(op, 5, dense=True)]
    assert np.allclose(a, b, atol=1e-10)
    c = [p.eigenvalue for p in dirac.eigenpairs(op, 3, shift=0.3, dense=False)]
    assert np.allclose(sorted(c), sorted(sorted(b, key=lambda v: abs(v - 0.3))[:3]), atol=1e-9)


def test_eigenpair_residuals_and_normalisation(torus16):
    op = dirac.assemble_dsq(torus16, make_spinc(torus16, 1))
    for p in dirac.eigenpairs(op, 4):
        assert p.residual < 1e-8
        assert p.eigenspinor.norm() == pytest.approx(1.0)


def test_eigenpairs_deterministic(torus16):
    op = dirac.assemble_dsq(torus16, make_spinc(torus16, 2))
    a = dirac.eigenpairs(op, 3, seed=7)
    b = dirac.eigenpairs(op, 3, seed=7)
    assert all(np.array_equal(x.vector, y.vector) for x, y in zip(a, b))


def test_eigenpairs_k_range(torus16):
    op = dirac.assemble_dsq(torus16, make_spinc(torus16, 0))
    with pytest.raises(ValueError):
        dirac.eigenpairs(op, 0)


def _smooth_error(N, order):
    d = build_torus2(2 * np.pi, 2 * np.pi, N)
    s = make_spinc(d, 0)
    x, y = d.coords
    f = np.exp(np.sin(x) + np.cos(2 * y))
    lap = -(np.cos(x) ** 2 - np.sin(x) + 4 * np.sin(2 * y) ** 2 - 4 * np.cos(2 * y)) * f
    K = dirac.lattice_laplacian(d, s.links * 0 + 1, order)
    return np.max(np.abs(K @ f.ravel() - lap.ravel()))


@pytest.mark.parametrize("order,expect", [(2, 1.8), (4, 3.6)])
def test_laplacian_order(order, expect):
    e1, e2 = _smooth_error(32, order), _smooth_error(64, order)
    assert np.log2(e1 / e2) > expect


def test_spectral_covariant_derivative_plane_wave():
    d = build_torus2(2 * np.pi, 2 * np.pi, 16)
    s = make_spinc(d, 0)
    x, y = d.coords
    v = np.stack([np.exp(1j * (2 * x - y)), np.exp(1j * 3 * y)], -1)
    dx = dirac.spectral_covariant_derivative(d, s.spinor_links, v, 0)
    dy = dirac.spectral_covariant_derivative(d, s.spinor_links, v, 1)
    assert np.allclose(dx[..., 0], 2j * v[..., 0])
    assert np.allclose(dy[..., 1], 3j * v[..., 1])


def test_spectral_derivative_gauge_covariant():
    d = build_torus2(2 * np.pi, 2 * np.pi, 16)
    s = make_spinc(d, 1)
    rng = np.random.default_rng(3)
    v = rng.standard_normal(d.shape + (2,)) + 1j * rng.standard_normal(d.shape + (2,))
    lam = rng.uniform(-1, 1, d.shape)
    s2 = gauge_transform(s, lam)
    g = np.exp(1j * lam)[..., None]
    for mu in range(2):
        a = dirac.spectral_covariant_derivative(d, s.spinor_links, v, mu)
        b = dirac.spectral_covariant_derivative(d, s2.spinor_links, g * v, mu)
        assert np.allclose(b, g * a, atol=1e-12)


def test_spectrum_csv_header(sphere):
    op = dirac.assemble_dsq(sphere, make_spinc(sphere, 0))
    text = dirac.spectrum_csv(dirac.eigenpairs(op, 3))
    lines = text.splitlines()
    assert lines[0] == "index,lambda_sq,lambda_or_nan,chirality_plus_fraction,residual"
    assert len(lines) == 4


def test_torus3_free_kernel():
    d = build_torus3(2 * np.pi, 2 * np.pi, 2 * np.pi, 6)
    pairs = dirac.eigenpairs(dirac.assemble_dsq(d, make_spinc(d, 0)), 3)
    assert np.allclose([p.eigenvalue for p in pairs[:2]], 0, atol=1e-12)


def test_lattice_d_eigenpairs_split_levels():
    d = build_torus3(2 * np.pi, 2 * np.pi, 2 * np.pi, 10)
    s = make_spinc(d, 1)
    dsp = dirac.lattice_d_spectrum(d, s, 5)
    lams = [p.eigenvalue for p in dsp]
    # lowest magnetic level, then the +-lambda pair of the next one
    assert abs(lams[0]) < 1e-8
    assert lams[1] == pytest.approx(-lams[2], rel=1e-6)
    assert lams[1] ** 2 == pytest.approx(1 / np.pi, rel=1e-3)
    for p in dsp:
        assert p.residual < 1e-2
        assert p.eigenspinor.norm() == pytest.approx(1.0)


def test_lattice_d_eigenpairs_needs_lattice(sphere):
    s = make_spinc(sphere, 0)
    pairs = dirac.eigenpairs(dirac.assemble_dsq(sphere, s), 2)
    with pytest.raises(dirac.UnsupportedBackendError):
        dirac.lattice_d_eigenpairs(sphere, s, pairs)
