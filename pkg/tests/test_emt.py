import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from spinc_emt import dirac, emt
from spinc_emt.domains import build_torus2, build_torus3
from spinc_emt.spinc import SpinorField, make_spinc

finite = st.floats(-2, 2, allow_nan=False, allow_infinity=False)


def _sphere_d_pair(sphere, deg, target):
    s = make_spinc(sphere, deg)
    pairs = dirac.eigenpairs(dirac.assemble_d_sphere(sphere, s), 2, shift=target)
    return s, min(pairs, key=lambda p: abs(p.eigenvalue - target))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (4,), elements=finite))
def test_pointwise_algebra_2d(nab, p):
    vals = (p[:2] + 1j * p[2:])[None]
    if np.sum(np.abs(vals) ** 2) < 1e-3:
        return
    nabla = np.stack([(nab[i, :2] + 1j * nab[i, 2:])[None] for i in range(2)])
    dpsi = emt.dirac_from_nabla(nabla, 2)
    u, T, Q, Y, alpha, beta, delta = emt.pointwise_emt(vals, nabla, dpsi, 2)
    assert np.allclose(T, np.swapaxes(T, -1, -2))
    assert np.allclose(Q, -np.swapaxes(Q, -1, -2))
    assert np.allclose(alpha, -T + Q, atol=1e-10)
    # 2 det(T + Q) = (tr T)^2 + |Q|^2 - |T|^2 for any symmetric T and skew Q
    M = T + Q
    lhs = 2 * np.linalg.det(M)
    rhs = np.trace(T, axis1=-2, axis2=-1) ** 2 + np.sum(Q**2, (-2, -1)) - np.sum(T**2, (-2, -1))
    assert np.allclose(lhs, rhs, atol=1e-9 * (1 + np.abs(rhs)))
    # |D psi|^2 / u = (tr T)^2 + |Y|^2 + 2 |Q|^2
    lhs = np.sum(np.abs(dpsi) ** 2, -1) / u
    rhs = np.trace(T, axis1=-2, axis2=-1) ** 2 + np.sum(Y**2, -1) + 2 * np.sum(Q**2, (-2, -1))
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (4, 4), elements=finite), arrays(np.float64, (4,), elements=finite))
def test_pointwise_algebra_3d(nab, p):
    vals = (p[:2] + 1j * p[2:])[None]
    if np.sum(np.abs(vals) ** 2) < 1e-3:
        return
    nabla = np.stack([(nab[i, :2] + 1j * nab[i, 2:])[None] for i in range(3)])
    dpsi = emt.dirac_from_nabla(nabla, 3)
    u, T, Q, Y, alpha, beta, delta = emt.pointwise_emt(vals, nabla, dpsi, 3)
    assert beta is None
    # {psi, e_j psi} is a real basis in 3D, so D psi is fixed by tr T and Y
    lhs = np.sum(np.abs(dpsi) ** 2, -1) / u
    rhs = np.trace(T, axis1=-2, axis2=-1) ** 2 + np.sum(Y**2, -1)
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-9)


def test_reconstruction_on_torus():
    d = build_torus2(2 * np.pi, 2 * np.pi, 16)
    s = make_spinc(d, 1)
    rng = np.random.default_rng(0)
    v = rng.standard_normal(d.shape + (2,)) + 1j * rng.standard_normal(d.shape + (2,)) + 3
    e = emt.compute_emt(d, s, SpinorField(d, v))
    assert emt.reconstruction_residual(e, v) < 1e-12


def test_reconstruction_3d():
    d = build_torus3(2 * np.pi, 2 * np.pi, 2 * np.pi, 6)
    s = make_spinc(d, 1)
    rng = np.random.default_rng(1)
    v = rng.standard_normal(d.shape + (2,)) + 1j * rng.standard_normal(d.shape + (2,)) + 3
    e = emt.compute_emt(d, s, SpinorField(d, v))
    assert emt.reconstruction_residual(e, v) < 1e-12


def test_trace_is_eigenvalue_on_sphere(sphere):
    for deg, target in ((0, 1.0), (0, -1.0), (0, 2.0), (2, np.sqrt(2))):
        s, p = _sphere_d_pair(sphere, deg, target)
        e = emt.compute_emt(sphere, s, p.eigenspinor)
        assert np.max(np.abs(e.trT[e.mask] - p.eigenvalue)) < 1e-9
        assert np.max(np.abs(e.Q[e.mask])) < 1e-9
        assert np.max(np.abs(e.Y[e.mask])) < 1e-9


def test_killing_spinor_emt(sphere):
    s, p = _sphere_d_pair(sphere, 0, 1.0)
    e = emt.compute_emt(sphere, s, p.eigenspinor)
    assert np.allclose(e.T, 0.5 * np.eye(2), atol=1e-12)
    assert np.allclose(e.u, e.u.mean(), atol=1e-12)


def test_integral_of_lap_f_vanishes(sphere):
    # generic element of the lambda = 2 eigenspace: nonconstant density, no zeros
    s = make_spinc(sphere, 0)
    pairs = [p for p in dirac.eigenpairs(dirac.assemble_d_sphere(sphere, s), 4, shift=2.0)]
    w = np.random.default_rng(3).standard_normal(len(pairs)) + 0.5j
    cp = sum(c * p.eigenspinor.coeffs[0] for c, p in zip(w, pairs))
    cm = sum(c * p.eigenspinor.coeffs[1] for c, p in zip(w, pairs))
    vals = sum(c * p.eigenspinor.values for c, p in zip(w, pairs))
    e = emt.compute_emt(sphere, s, SpinorField(sphere, vals, (cp, cm)))
    assert e.u.min() > 1e-3 * e.u.max()
    assert np.max(np.abs(e.lap_f[e.mask])) > 1e-3
    # lap_f is not band limited, so the grid quadrature is only approximate
    assert abs(sphere.integrate(e.lap_f)) < 1e-3 * sphere.integrate(np.abs(e.lap_f))


def test_divergence_identity_sphere(sphere):
    s = make_spinc(sphere, 2)
    pairs = dirac.eigenpairs(dirac.assemble_dsq(sphere, s), 8)
    for p in pairs:
        r, plumb = emt.divergence_identity_check(sphere, s, p.eigenspinor, p.eigenvalue)
        assert r < 1e-9
        assert plumb < 1e-9


def test_divergence_identity_torus_converges():
    res = []
    for N in (16, 32):
        d = build_torus2(2 * np.pi, 2 * np.pi, N)
        s = make_spinc(d, 1)
        p = dirac.eigenpairs(dirac.assemble_dsq(d, s), 2)[1]
        res.append(emt.divergence_identity_check(d, s, p.eigenspinor, p.eigenvalue)[0])
    assert res[1] < 1e-3
    assert np.log2(res[0] / res[1]) > 1.8


def test_zero_field_rejected(torus16):
    s = make_spinc(torus16, 0)
    with pytest.raises(emt.DegenerateInputError):
        emt.compute_emt(torus16, s, SpinorField(torus16, np.zeros(torus16.shape + (2,), complex)))


def test_sphere_needs_coefficients(sphere):
    s = make_spinc(sphere, 0)
    with pytest.raises(emt.DegenerateInputError):
        emt.compute_emt(sphere, s, SpinorField(sphere, np.ones(sphere.shape + (2,), complex)))


def test_masking_reports_fraction(torus16):
    s = make_spinc(torus16, 0)
    v = np.ones(torus16.shape + (2,), complex)
    v[0, 0] = 0
    e = emt.compute_emt(torus16, s, SpinorField(torus16, v), order=2)
    assert e.masked_fraction == pytest.approx(1 / 256)
    assert np.isnan(e.f[0, 0])


def test_field_exports_round_trip(torus16):
    s = make_spinc(torus16, 1)
    p = dirac.eigenpairs(dirac.assemble_dsq(torus16, s), 1)[0]
    e = emt.compute_emt(torus16, s, p.eigenspinor)
    shape, names, table = emt.read_fields_binary(emt.fields_binary(e))
    assert shape == torus16.shape
    assert names[:3] == ["x", "y", "f"]
    assert np.array_equal(table[:, names.index("T12")], e.T[..., 0, 1].ravel())
    text = emt.fields_csv(e)
    assert text.splitlines()[0].startswith("index,x,y,f,Y1,Y2,T11")
    assert len(text.splitlines()) == 1 + torus16.npoints
    with pytest.raises(ValueError):
        emt.read_fields_binary(b"junk" * 4)
