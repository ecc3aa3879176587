"""Surfaces in S^2 x R (and S^3): induced data, Daniel's equations, generalized Killing spinors.

Conventions, all in the induced orthonormal frame (e1, e2) of a chart (u, v):
  A X = -nabla-bar_X nu (so II(X, Y) = <A X, Y>), d/dt = T + f nu,
  spinor connection nabla = X + (1/2) omega12(X) e1 e2 + (i/2) a(X) with da = Omega,
  Omega12 = -f for the line bundle pulled back from S^2.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg
import sympy as sp

from .domains import ChartSpec, Domain, GeometryError, brioschi_curvature, build_patch2, build_sphere_ladder
from .emt import pointwise_emt
from .spinc import E1, E2, OMEGA2
from .verify import Report

STRUCTURAL_TOL = 1e-10
DANIEL_TOL = 1e-9
CHANNELS = ("gauss", "codazzi", "nabla_T", "df")
ROT = np.array([[0.0, -1.0], [1.0, 0.0]])  # J: e1 -> e2, e2 -> -e1
E12 = E1 @ E2

_u, _v = sp.symbols("u v", real=True)


@dataclass
class ImmersionData:
    domain: Domain
    A: np.ndarray  # (N, M, 2, 2) Weingarten operator in the frame
    T: np.ndarray  # (N, M, 2)
    f: np.ndarray  # (N, M)
    G: np.ndarray  # Gauss curvature
    omega: np.ndarray  # (N, M, 2): omega12(e_k)
    a: np.ndarray  # (N, M, 2): line bundle connection a(e_k)
    dA: np.ndarray  # (2, N, M, 2, 2): e_k(A_ij)
    dT: np.ndarray  # (2, N, M, 2)
    df: np.ndarray  # (2, N, M)
    Om: np.ndarray | None = None  # Omega12 = da(e1, e2), when known in closed form
    name: str = "patch"
    analytic: bool = False
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        r = np.max(np.abs(self.f**2 + np.sum(self.T**2, -1) - 1))
        if not r <= STRUCTURAL_TOL:
            raise GeometryError(f"f^2 + |T|^2 = 1 violated by {r:.3e}")
        if np.max(np.abs(self.A - np.swapaxes(self.A, -1, -2))) > STRUCTURAL_TOL:
            raise GeometryError("A is not symmetric in the frame")

    @property
    def H(self) -> np.ndarray:
        return 0.5 * (self.A[..., 0, 0] + self.A[..., 1, 1])

    @property
    def II_norm2(self) -> np.ndarray:
        return np.sum(self.A**2, axis=(-2, -1))

    @property
    def det_A(self) -> np.ndarray:
        return np.linalg.det(self.A)

    @property
    def Omega12(self) -> np.ndarray:
        """Curvature of the line bundle connection a; differences of its chart components if not stored."""
        if self.Om is not None:
            return self.Om
        d = self.domain
        Finv = np.linalg.inv(d.frame)  # coordinate -> frame
        # a_i = a(d_i) = sum_k Finv[i, k] a(e_k)
        ac = np.einsum("...ik,...k->...i", Finv, self.a)
        hu, hv = d.spacing
        curl = np.gradient(ac[..., 1], hu, axis=0, edge_order=2) - np.gradient(ac[..., 0], hv, axis=1, edge_order=2)
        return curl / np.sqrt(np.linalg.det(d.metric))


# ---------------------------------------------------------------------------
# analytic generators


def _frame_sym(E, F, G):
    s = sp.sqrt((E * G - F**2) / E)
    return [[1 / sp.sqrt(E), 0], [-F / (E * s), 1 / s]]


def _brioschi_sym(E, F, G):
    u, v = _u, _v
    Eu, Ev, Fu, Fv, Gu, Gv = (sp.diff(E, u), sp.diff(E, v), sp.diff(F, u), sp.diff(F, v), sp.diff(G, u), sp.diff(G, v))
    m1 = sp.Matrix(
        [
            [-sp.diff(E, v, 2) / 2 + sp.diff(F, u, v) - sp.diff(G, u, 2) / 2, Eu / 2, Fu - Ev / 2],
            [Fv - Gu / 2, E, F],
            [Gv / 2, F, G],
        ]
    )
    m2 = sp.Matrix([[0, Ev / 2, Gu / 2], [Ev / 2, E, F], [Gu / 2, F, G]])
    return (m1.det() - m2.det()) / (E * G - F**2) ** 2


def _eval(expr, U, V):
    fn = sp.lambdify((_u, _v), expr, "numpy")
    with np.errstate(all="ignore"):
        return np.broadcast_to(np.asarray(fn(U, V), dtype=float), U.shape).copy()


def surface_data(X, a: float, b: float, N: int, M: int, name: str = "patch") -> ImmersionData:
    """Induced data of the chart X(u, v) = (p(u, v), t(u, v)) in S^2 x R, u in [0, a], v in [0, b].

    Everything is differentiated symbolically and then sampled, so derivative
    information is exact up to rounding.
    """
    X = [sp.sympify(c) for c in X]
    u, v = _u, _v
    Xu = [sp.diff(c, u) for c in X]
    Xv = [sp.diff(c, v) for c in X]
    dot = lambda p, q: sum(x * y for x, y in zip(p, q))
    E, F, G = dot(Xu, Xu), dot(Xu, Xv), dot(Xv, Xv)
    P = list(X[:3]) + [0]
    rows = sp.Matrix([P, Xu, Xv])
    n = [(-1) ** i * rows[:, [j for j in range(4) if j != i]].det() for i in range(4)]
    # oriented so that horizontal slices over the (colatitude, longitude) chart get f = +1
    nrm = sp.sqrt(sum(c**2 for c in n))
    nu = [-c / nrm for c in n]
    Xd = [[sp.diff(c, u, 2) for c in X], [sp.diff(c, u, v) for c in X], [sp.diff(c, v, 2) for c in X]]
    II = [[dot(Xd[0], nu), dot(Xd[1], nu)], [dot(Xd[1], nu), dot(Xd[2], nu)]]
    Fr = _frame_sym(E, F, G)
    A = [[sum(Fr[i][k] * Fr[j][l] * II[k][l] for k in range(2) for l in range(2)) for j in range(2)] for i in range(2)]
    Tv = [Fr[i][0] * sp.diff(X[3], u) + Fr[i][1] * sp.diff(X[3], v) for i in range(2)]
    f = nu[3]
    efn = lambda k, expr: Fr[k][0] * sp.diff(expr, u) + Fr[k][1] * sp.diff(expr, v)
    Ev1 = [Fr[0][0] * xu + Fr[0][1] * xv for xu, xv in zip(Xu, Xv)]
    Ev2 = [Fr[1][0] * xu + Fr[1][1] * xv for xu, xv in zip(Xu, Xv)]
    omega = [dot([efn(k, c) for c in Ev1], Ev2) for k in range(2)]
    p1, p2, p3 = X[:3]
    # pull-back of cos(theta) dphi from S^2
    a_u = p3 * (p1 * sp.diff(p2, u) - p2 * sp.diff(p1, u)) / (p1**2 + p2**2)
    a_v = p3 * (p1 * sp.diff(p2, v) - p2 * sp.diff(p1, v)) / (p1**2 + p2**2)
    a_fr = [Fr[k][0] * a_u + Fr[k][1] * a_v for k in range(2)]
    Gc = _brioschi_sym(E, F, G)
    Om = (sp.diff(a_v, u) - sp.diff(a_u, v)) / sp.sqrt(E * G - F**2)

    U, V = np.meshgrid(np.linspace(0, a, N), np.linspace(0, b, M), indexing="ij")
    ev = lambda e: _eval(e, U, V)
    chart = ChartSpec(a, b, N, M, ev(E), ev(F), ev(G))
    Gn = ev(Gc)
    dom = replace(build_patch2(chart), curvature=Gn)
    An = np.stack([np.stack([ev(A[i][j]) for j in range(2)], -1) for i in range(2)], -2)
    An = 0.5 * (An + np.swapaxes(An, -1, -2))
    Tn = np.stack([ev(t) for t in Tv], -1)
    fn = ev(f)
    dA = np.stack([np.stack([np.stack([ev(efn(k, A[i][j])) for j in range(2)], -1) for i in range(2)], -2) for k in range(2)])
    dT = np.stack([np.stack([ev(efn(k, t)) for t in Tv], -1) for k in range(2)])
    dfn = np.stack([ev(efn(k, f)) for k in range(2)])
    return ImmersionData(
        dom, An, Tn, fn, Gn, np.stack([ev(w) for w in omega], -1), np.stack([ev(w) for w in a_fr], -1),
        dA, dT, dfn, Om=ev(Om), name=name, analytic=True,
    )


def _sphere_point(th, ph):
    return [sp.sin(th) * sp.cos(ph), sp.sin(th) * sp.sin(ph), sp.cos(th)]


def slice_patch(theta0=0.6, theta1=1.4, phi_span=1.0, N=17, M=17, t0=0.0) -> ImmersionData:
    """Horizontal slice S^2 x {t0} over a colatitude band (avoids the poles)."""
    return surface_data(_sphere_point(theta0 + _u, _v) + [sp.Float(t0)], theta1 - theta0, phi_span, N, M, "slice")


def latitude_cylinder(theta0=np.pi / 3, phi_span=1.0, height=1.0, N=17, M=17) -> ImmersionData:
    """Vertical cylinder over the colatitude-theta0 circle, chart (phi, t)."""
    th = sp.Float(theta0)
    return surface_data(_sphere_point(th, _u) + [_v], phi_span, height, N, M, "latitude_cylinder")


def great_cylinder(phi_span=1.0, height=1.0, N=17, M=17) -> ImmersionData:
    return replace(latitude_cylinder(np.pi / 2, phi_span, height, N, M), name="great_cylinder")


def induced_data_graph(h, theta0=0.6, theta1=1.4, phi_span=1.0, N=17, M=17, name="graph") -> ImmersionData:
    """Induced data of the graph t = h(theta, phi) over a colatitude band of S^2.

    `h` maps sympy symbols (theta, phi) to an expression; a constant gives a slice.
    """
    th, ph = theta0 + _u, _v
    expr = sp.sympify(h(th, ph) if callable(h) else h)
    try:
        with np.errstate(all="ignore"):
            data = surface_data(_sphere_point(th, ph) + [expr], theta1 - theta0, phi_span, N, M, name)
    except (ValueError, ZeroDivisionError, TypeError) as exc:
        raise GeometryError(f"graph data could not be evaluated: {exc}") from None
    fields_ = (data.A, data.T, data.f, data.G, data.dA, data.dT, data.df)
    if not all(np.all(np.isfinite(x)) for x in fields_):
        raise GeometryError("degenerate graph: the height function is not smooth on the patch")
    return data


def tilted_graph(eps=0.1, theta0=0.6, theta1=1.4, phi_span=1.0, N=17, M=17) -> ImmersionData:
    """Graph t = eps cos(theta) over a colatitude band."""
    return induced_data_graph(lambda th, ph: eps * sp.cos(th), theta0, theta1, phi_span, N, M, "tilted_graph")


def latitude_geodesic_curvature(theta0: float) -> float:
    return float(np.cos(theta0) / np.sin(theta0))


# ---------------------------------------------------------------------------
# Daniel's equations


def _cov_A(data: ImmersionData, k: int) -> np.ndarray:
    W = data.omega[..., k][..., None, None] * ROT
    return data.dA[k] + W @ data.A - data.A @ W


def daniel_residuals(data: ImmersionData) -> dict:
    """Residual fields of Gauss, Codazzi, nabla_X T = f A X and X(f) = -g(A X, T)."""
    A, T, f = data.A, data.T, data.f
    gauss = data.G - (np.linalg.det(A) + f**2)
    cod = (_cov_A(data, 0)[..., :, 1] - _cov_A(data, 1)[..., :, 0]) - f[..., None] * np.stack([T[..., 1], -T[..., 0]], -1)
    nT = np.stack(
        [data.dT[k] + data.omega[..., k][..., None] * (T @ ROT.T) - f[..., None] * A[..., :, k] for k in range(2)], -1
    )  # (..., i, k)
    df = np.stack([data.df[k] + np.einsum("...i,...i->...", A[..., :, k], T) for k in range(2)], -1)
    return {"gauss": gauss, "codazzi": cod, "nabla_T": nT, "df": df}


def _linf(r):
    r = np.asarray(r)
    if r.ndim == 2:
        return float(np.max(np.abs(r)))
    return float(np.max(np.sqrt(np.sum(np.abs(r.reshape(r.shape[:2] + (-1,))) ** 2, -1))))


def daniel_check(data: ImmersionData, tol: float = DANIEL_TOL) -> Report:
    res = daniel_residuals(data)
    rep = Report("daniel", meta={"backend": "patch2", "case": data.name, "N": data.domain.shape[0]})
    for k in CHANNELS:
        rep.norms[f"{k}_linf"] = _linf(res[k])
        rep.residual_tols[f"{k}_linf"] = tol
    return rep


def inject_defect(data: ImmersionData, channel: str, eps: float) -> ImmersionData:
    """Perturb only the input entering one Daniel equation.

    gauss: G + eps; codazzi: e_2(A_11) + eps; nabla_T: e_1(T_1) + eps; df: e_1(f) + eps.
    """
    if channel == "gauss":
        return replace(data, G=data.G + eps)
    if channel == "codazzi":
        dA = data.dA.copy()
        dA[1, ..., 0, 0] += eps
        return replace(data, dA=dA)
    if channel == "nabla_T":
        dT = data.dT.copy()
        dT[0, ..., 0] += eps
        return replace(data, dT=dT)
    if channel == "df":
        df = data.df.copy()
        df[0] += eps
        return replace(data, df=df)
    raise ValueError(f"unknown channel {channel!r}")


def perturb_shape_operator(data: ImmersionData, eps: float) -> ImmersionData:
    """A -> A + eps Id (a constant shift, so the derivative jets are unchanged)."""
    return replace(data, A=data.A + eps * np.eye(2))


# ---------------------------------------------------------------------------
# generalized Killing spinors


@dataclass
class GKSField:
    data: ImmersionData
    phi: np.ndarray  # (N, M, 2)
    constraint: np.ndarray  # |T.phi + f phi - phi-bar| / |phi|
    curvature: np.ndarray  # (N-1, M-1) plaquette commutator residual
    warning: str | None = None

    @property
    def constraint_linf(self) -> float:
        return float(np.max(self.constraint))

    @property
    def curvature_linf(self) -> float:
        return float(np.max(self.curvature))


def clifford_vec(V):
    """V . (as a 2x2 matrix field) for a frame vector field V (..., 2)."""
    return V[..., 0, None, None] * E1 + V[..., 1, None, None] * E2


def constraint_operator(T, f):
    """K with K phi = T.phi + f phi - phi-bar."""
    return clifford_vec(T) + f[..., None, None] * np.eye(2) - OMEGA2


def gks_generators(data: ImmersionData):
    """M_i with d_i phi = M_i phi for the equation nabla_X phi = -(1/2) A(X).phi (chart directions)."""
    Fr = data.domain.frame
    Finv = np.linalg.inv(Fr)
    Mk = []
    for k in range(2):
        AX = data.A[..., :, k]
        Mk.append(
            -0.5 * data.omega[..., k][..., None, None] * E12
            - 0.5j * data.a[..., k][..., None, None] * np.eye(2)
            - 0.5 * clifford_vec(AX)
        )
    return [Finv[..., i, 0][..., None, None] * Mk[0] + Finv[..., i, 1][..., None, None] * Mk[1] for i in range(2)]


def _steps(Mi, h, axis):
    """Exponential-midpoint transfer matrices between neighbours along `axis`."""
    lo = [slice(None)] * 2
    hi = [slice(None)] * 2
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    return scipy.linalg.expm(0.5 * h * (Mi[tuple(lo)] + Mi[tuple(hi)]))


def project_constraint(T0, f0, phi0):
    """Orthogonal projection of phi0 onto ker(T.phi + f phi - phi-bar) at one point."""
    K = constraint_operator(np.asarray(T0, float), np.asarray(f0, float))
    return phi0 - np.linalg.pinv(K, rcond=1e-12) @ (K @ phi0)


def integrate_gks(data: ImmersionData, phi0, project: bool = True, daniel_tol: float = DANIEL_TOL) -> GKSField:
    """Propagate phi0 from chart corner (0, 0): along u at v = 0, then along v."""
    phi0 = np.asarray(phi0, dtype=complex)
    if project:
        phi0 = project_constraint(data.T[0, 0], data.f[0, 0], phi0)
    if np.linalg.norm(phi0) < 1e-12:
        raise ValueError("phi0 vanishes after projection")
    hu, hv = data.domain.spacing
    Mu, Mv = gks_generators(data)
    Pu = _steps(Mu, hu, 0)  # (N-1, M, 2, 2)
    Pv = _steps(Mv, hv, 1)  # (N, M-1, 2, 2)
    N, M = data.domain.shape
    phi = np.zeros((N, M, 2), dtype=complex)
    phi[0, 0] = phi0
    for i in range(N - 1):
        phi[i + 1, 0] = Pu[i, 0] @ phi[i, 0]
    for j in range(M - 1):
        phi[:, j + 1] = np.einsum("iab,ib->ia", Pv[:, j], phi[:, j])
    uv = np.einsum("...ab,...bc->...ac", Pv[1:, :], Pu[:, :-1])
    vu = np.einsum("...ab,...bc->...ac", Pu[:, 1:], Pv[:-1, :])
    p = phi[:-1, :-1]
    curv = np.linalg.norm(np.einsum("...ab,...b->...a", uv - vu, p), axis=-1) / np.linalg.norm(p, axis=-1)
    K = constraint_operator(data.T, data.f)
    cons = np.linalg.norm(np.einsum("...ab,...b->...a", K, phi), axis=-1) / np.linalg.norm(phi, axis=-1)
    warn = None
    worst = max(daniel_check(data).norms.values())
    if worst > daniel_tol:
        warn = f"Daniel residual {worst:.3e} above {daniel_tol:.1e}: integration is path dependent"
    return GKSField(data, phi, cons, curv, warn)


def theta_field(phi, T, f):
    """theta = i phi - i f phi-bar + (J T).phi."""
    JT = T @ ROT.T
    bar = phi @ OMEGA2.T
    return 1j * phi - 1j * f[..., None] * bar + np.einsum("...ab,...b->...a", clifford_vec(JT), phi)


def theta_check(field_: GKSField, data: ImmersionData | None = None) -> np.ndarray:
    """|theta|^2 / |phi|^2 per point."""
    data = field_.data if data is None else data
    th = theta_field(field_.phi, data.T, data.f)
    return np.sum(np.abs(th) ** 2, -1) / np.sum(np.abs(field_.phi) ** 2, -1)


def gks_equation_residual(field_: GKSField) -> np.ndarray:
    """|nabla_{e_k} phi + (1/2) A(e_k).phi| / |phi| with second-order differences, max over k."""
    data = field_.data
    d = data.domain
    phi = field_.phi
    hu, hv = d.spacing
    dphi = [np.gradient(phi, hu, axis=0, edge_order=2), np.gradient(phi, hv, axis=1, edge_order=2)]
    out = np.zeros(d.shape)
    for k in range(2):
        ek = d.frame[..., k, 0, None] * dphi[0] + d.frame[..., k, 1, None] * dphi[1]
        nab = ek + 0.5 * data.omega[..., k][..., None] * (phi @ E12.T) + 0.5j * data.a[..., k][..., None] * phi
        r = nab + 0.5 * np.einsum("...ab,...b->...a", clifford_vec(data.A[..., :, k]), phi)
        out = np.maximum(out, np.linalg.norm(r, axis=-1))
    return out / np.linalg.norm(phi, axis=-1)


def recover_data(field_: GKSField):
    """(A, T, f) read back from phi: f = Re<phi-bar, phi>/|phi|^2, T_a = Re<phi-bar, e_a phi>/|phi|^2,
    A_ak = -2 Re<nabla_k phi, e_a phi>/|phi|^2 (differences of second order)."""
    data = field_.data
    d = data.domain
    phi = field_.phi
    n2 = np.sum(np.abs(phi) ** 2, -1)
    bar = phi @ OMEGA2.T
    re = lambda a, b: np.real(np.sum(a * np.conj(b), -1))
    f = re(bar, phi) / n2
    T = np.stack([re(bar, phi @ E.T) for E in (E1, E2)], -1) / n2[..., None]
    hu, hv = d.spacing
    dphi = [np.gradient(phi, hu, axis=0, edge_order=2), np.gradient(phi, hv, axis=1, edge_order=2)]
    A = np.zeros(d.shape + (2, 2))
    for k in range(2):
        ek = d.frame[..., k, 0, None] * dphi[0] + d.frame[..., k, 1, None] * dphi[1]
        nab = ek + 0.5 * data.omega[..., k][..., None] * (phi @ E12.T) + 0.5j * data.a[..., k][..., None] * phi
        for a_, E in enumerate((E1, E2)):
            A[..., a_, k] = -2 * re(nab, phi @ E.T) / n2
    return A, T, f


def restriction_forward_check(case: str = "s2r", data: ImmersionData | None = None, r1: float = np.sqrt(0.5),
                              N: int = 17, tol: float = 1e-8, fd_tol: float = 1e-3) -> Report:
    """Restricted ambient spinors on analytic patches.

    s2r: Omega12 = -f, a GKS field through a constraint-projected base spinor, its
         constraint and plaquette residuals, and recovery of (A, T, f) from it.
    s3:  the product torus S^1(r1) x S^1(r2) in S^3 with the restricted Killing spinor
         phi = exp(x M1 + y M2) phi0; checks nabla phi = -(1/2) II . phi + (1/2) J . phi,
         D^2 phi = (H^2 + 1) phi, T = II / 2, Q = J / 2, Y = 0.
    """
    if case == "s2r":
        data = slice_patch(N=N, M=N) if data is None else data
        rep = Report("restriction_s2r", meta={"backend": "patch2", "case": data.name, "N": data.domain.shape[0]})
        om = data.Omega12
        rep.norms["omega_plus_f_linf"] = float(np.max(np.abs(om + data.f)))
        fld = integrate_gks(data, np.array([1.0, 0.3 + 0.2j]))
        rep.norms["constraint_linf"] = fld.constraint_linf
        rep.norms["plaquette_linf"] = fld.curvature_linf
        rep.norms["gks_equation_linf"] = float(np.max(gks_equation_residual(fld)))
        A, T, f = recover_data(fld)
        rep.norms["recovered_A_linf"] = float(np.max(np.abs(A - data.A)))
        rep.norms["recovered_T_linf"] = float(np.max(np.abs(T - data.T)))
        rep.norms["recovered_f_linf"] = float(np.max(np.abs(f - data.f)))
        rep.residual_tols = {
            "omega_plus_f_linf": tol, "constraint_linf": fd_tol, "plaquette_linf": fd_tol,
            "gks_equation_linf": fd_tol, "recovered_A_linf": fd_tol, "recovered_T_linf": fd_tol, "recovered_f_linf": fd_tol,
        }
        return rep
    if case == "s3":
        return _s3_torus_check(r1, N, tol)
    raise ValueError(f"unknown case {case!r}")


def product_torus_s3(r1: float):
    """Principal curvatures, H and Killing generators of S^1(r1) x S^1(r2) in S^3 (flat, orthonormal x, y)."""
    r2 = np.sqrt(1 - r1**2)
    k1, k2 = r2 / r1, -r1 / r2
    II = np.diag([k1, k2])
    M1 = -0.5 * (k1 * E1) + 0.5 * E2  # -(1/2) II(e1). + (1/2) J(e1).
    M2 = -0.5 * (k2 * E2) - 0.5 * E1
    return II, 0.5 * (k1 + k2), M1, M2


def _s3_torus_check(r1: float, N: int, tol: float) -> Report:
    II, H, M1, M2 = product_torus_s3(r1)
    r2 = np.sqrt(1 - r1**2)
    x = np.linspace(0, 2 * np.pi * r1, N, endpoint=False)
    y = np.linspace(0, 2 * np.pi * r2, N, endpoint=False)
    X, Yc = np.meshgrid(x, y, indexing="ij")
    phi0 = np.array([1.0, 0.4 - 0.3j])
    P = scipy.linalg.expm(X[..., None, None] * M1 + Yc[..., None, None] * M2)
    phi = P @ phi0
    nabla = np.stack([phi @ M1.T, phi @ M2.T])  # exact derivatives of the exponential (commuting generators)
    J = ROT
    resid = 0.0
    for k in range(2):
        target = -0.5 * (phi @ clifford_vec(II[:, k]).T) + 0.5 * (phi @ clifford_vec(J[:, k]).T)
        resid = max(resid, float(np.max(np.abs(nabla[k] - target))))
    B = E1 @ M1 + E2 @ M2  # D phi = B phi
    dpsi = phi @ B.T
    ddpsi = phi @ (E1 @ B @ M1 + E2 @ B @ M2).T
    u, T, Q, Yv, *_ = pointwise_emt(phi, nabla, dpsi, 2)
    rep = Report("restriction_s3", meta={"backend": "analytic", "case": "product_torus", "N": N})
    rep.scalars.update(H=H, r1=r1, gauss_residual=0.0 - (1 + np.linalg.det(II)), commutator=float(np.max(np.abs(M1 @ M2 - M2 @ M1))))
    rep.norms["killing_linf"] = resid
    rep.norms["dsq_linf"] = float(np.max(np.abs(ddpsi - (H**2 + 1) * phi)))
    rep.norms["T_minus_half_II_linf"] = float(np.max(np.abs(T - 0.5 * II)))
    rep.norms["Q_minus_half_J_linf"] = float(np.max(np.abs(Q - 0.5 * J.T)))  # the 2-form g(J., .)
    rep.norms["Y_linf"] = float(np.max(np.abs(Yv)))
    rep.scalars["Q_norm2"] = float(np.mean(np.sum(Q**2, (-2, -1))))
    rep.scalars["II_norm2"] = float(np.sum(II**2))
    rep.residual_tols = {k: tol for k in rep.norms}
    rep.residual_tols.update(gauss_residual=tol, commutator=tol)
    return rep


# ---------------------------------------------------------------------------
# example data for verify_examples


def example_data(case: str, **kw) -> dict:
    """(S, H, II, f, ...) samples for the example identities."""
    if case == "r3_sphere":
        d = build_sphere_ladder(kw.get("l_max", 8))
        shp = d.weights.shape
        return {"S": np.full(shp, 2.0), "H": np.ones(shp), "II": np.broadcast_to(np.eye(2), shp + (2, 2)),
                "weights": d.weights, "chi": 2}
    if case == "clifford_torus":
        II, H, *_ = product_torus_s3(kw.get("r1", np.sqrt(0.5)))
        shp = (kw.get("N", 8),) * 2
        return {"S": np.zeros(shp), "H": np.full(shp, H), "II": np.broadcast_to(II, shp + (2, 2))}
    gen = {"slice": slice_patch, "latitude_cylinder": latitude_cylinder, "great_cylinder": great_cylinder,
           "tilted_graph": tilted_graph}[case]
    data = gen(**kw)
    return {"S": 2 * data.G, "H": data.H, "II": data.A, "f": data.f}


def line_bundle_degree(f, weights) -> float:
    """(1/2 pi) int f dA: an integer on closed surfaces."""
    return float(np.sum(np.asarray(f) * weights) / (2 * np.pi))


# ---------------------------------------------------------------------------
# structured text


_KEYS = ("A11", "A12", "A22", "T1", "T2", "f")


def to_text(data: ImmersionData) -> str:
    d = data.domain
    N, M = d.shape
    doc = {"N": N, "M": M, "a": d.lengths[0], "b": d.lengths[1]}
    cols = {"A11": data.A[..., 0, 0], "A12": data.A[..., 0, 1], "A22": data.A[..., 1, 1],
            "T1": data.T[..., 0], "T2": data.T[..., 1], "f": data.f,
            "g11": d.metric[..., 0, 0], "g12": d.metric[..., 0, 1], "g22": d.metric[..., 1, 1]}
    for k, v in cols.items():
        doc[k] = [repr(float(x)) for x in np.ravel(v)]
    return json.dumps(doc, indent=1) + "\n"


def _fd_frame_derivative(d: Domain, F):
    hu, hv = d.spacing
    gu = np.gradient(F, hu, axis=0, edge_order=2)
    gv = np.gradient(F, hv, axis=1, edge_order=2)
    fr = d.frame
    ext = (...,) + (None,) * (F.ndim - 2)
    return np.stack([fr[..., k, 0][ext] * gu + fr[..., k, 1][ext] * gv for k in range(2)])


def _fd_connection(d: Domain):
    """omega12(e_k) = <nabla_{e_k} e1, e2> from finite-difference Christoffel symbols."""
    g = d.metric
    hu, hv = d.spacing
    dg = np.stack([np.gradient(g, hu, axis=0, edge_order=2), np.gradient(g, hv, axis=1, edge_order=2)], -1)  # g_ij,l
    ginv = np.linalg.inv(g)
    # Gamma^i_jl = 1/2 g^im (g_mj,l + g_ml,j - g_jl,m)
    low = 0.5 * (np.einsum("...mjl->...mjl", dg) + np.einsum("...mlj->...mjl", dg) - np.einsum("...jlm->...mjl", dg))
    Gam = np.einsum("...im,...mjl->...ijl", ginv, low)
    fr = d.frame
    e1, e2 = fr[..., 0, :], fr[..., 1, :]
    de1 = _fd_frame_derivative(d, e1)  # (k, ..., i)
    om = []
    for k in range(2):
        ek = fr[..., k, :]
        v = de1[k] + np.einsum("...ijl,...j,...l->...i", Gam, ek, e1)
        om.append(np.einsum("...i,...ij,...j->...", v, g, e2))
    return np.stack(om, -1)


def from_text(text: str, daniel_ready: bool = True) -> ImmersionData:
    """Ingest sampled data; derivatives by second-order differences, line bundle form in axial gauge."""
    doc = json.loads(text)
    need = {"N", "M", "a", "b", *_KEYS}
    missing = need - set(doc)
    if missing:
        raise GeometryError(f"immersion document is missing {sorted(missing)}")
    N, M = int(doc["N"]), int(doc["M"])

    def arr(k, default=None):
        if k not in doc:
            return default
        x = np.array([float(s) for s in doc[k]], dtype=float)
        if x.size != N * M:
            raise GeometryError(f"{k} has {x.size} samples, expected {N * M}")
        return x.reshape(N, M)

    one, zero = np.ones((N, M)), np.zeros((N, M))
    chart = ChartSpec(float(doc["a"]), float(doc["b"]), N, M, arr("g11", one), arr("g12", zero), arr("g22", one))
    d = build_patch2(chart)
    A = np.stack([np.stack([arr("A11"), arr("A12")], -1), np.stack([arr("A12"), arr("A22")], -1)], -2)
    T = np.stack([arr("T1"), arr("T2")], -1)
    f = arr("f")
    hu, hv = d.spacing
    sqrtg = np.sqrt(np.linalg.det(d.metric))
    # a = a_v dv with d_u a_v = -f sqrt(g): cumulative trapezoid along u
    integrand = -f * sqrtg
    a_v = np.concatenate([np.zeros((1, M)), np.cumsum(0.5 * hu * (integrand[1:] + integrand[:-1]), axis=0)])
    ac = np.stack([np.zeros((N, M)), a_v], -1)
    a_fr = np.einsum("...ki,...i->...k", d.frame, ac)
    G = brioschi_curvature(chart.g11, chart.g12, chart.g22, hu, hv)
    return ImmersionData(
        replace(d, curvature=G), A, T, f, G, _fd_connection(d), a_fr,
        _fd_frame_derivative(d, A), _fd_frame_derivative(d, T), _fd_frame_derivative(d, f), name="ingested",
    )


def save(data: ImmersionData, path) -> None:
    Path(path).write_text(to_text(data), encoding="utf-8")


def load(path) -> ImmersionData:
    return from_text(Path(path).read_text(encoding="utf-8"))
