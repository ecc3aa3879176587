"""Spin^c structures on model domains, Clifford multiplication, chirality and the bar map.

Clifford representation on (psi+, psi-) in two dimensions::

    e1 = [[0, i], [i, 0]],   e2 = [[0, 1], [-1, 0]],   i e1 e2 = diag(1, -1)

and e_k = i sigma_k in three dimensions.  Spinor inner product is
(a, b) = sum_k a_k conj(b_k).

Orientation of the auxiliary curvature: a structure with index n has total flux
int Omega_12 = -4 pi n on the torus (the spinor bundle sees the half connection,
of flux -2 pi n) and int Omega_12 = -2 pi d on the sphere, where d = c1(L) and the
index is d/2.  With this sign the canonical sphere structure (d = 2) has
Omega_12 = -1 and kernels sit in the chirality matching the sign of the index.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .domains import Domain, DomainKindError

E1 = np.array([[0, 1j], [1j, 0]])
E2 = np.array([[0, 1], [-1, 0]], dtype=complex)
GAMMA2 = np.stack([E1, E2])
OMEGA2 = 1j * E1 @ E2  # chirality, diag(1, -1)

SIGMA = np.array(
    [[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]],
    dtype=complex,
)
GAMMA3 = 1j * SIGMA

PAIRS3 = ((0, 1), (0, 2), (1, 2))


class SpincObstructionError(ValueError):
    pass


class StructureError(ValueError):
    pass


def gammas(dim: int) -> np.ndarray:
    return GAMMA2 if dim == 2 else GAMMA3


def c_n(n: int) -> float:
    return 2.0 * np.sqrt(n // 2)


def inner(a, b):
    """Pointwise Hermitian product (a, b), complex valued."""
    return np.sum(a * np.conj(b), axis=-1)


def re_inner(a, b):
    return np.real(inner(a, b))


@dataclass(frozen=True, eq=False)
class SpincStructure:
    domain: Domain
    degree: int
    omega: np.ndarray  # 2D: Omega_12 per point; 3D: (..., 3) with (O12, O13, O23)
    links: np.ndarray | None = None  # L link phases U_mu(x), shape (dim, *shape)
    spinor_links: np.ndarray | None = None  # half-weight links seen by spinors
    weights: tuple | None = None  # sphere: spin weights (s+, s-)
    gauge: np.ndarray | None = None  # pure-gauge phase lambda(x) applied to the links
    extra: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def omega_norm(self) -> np.ndarray:
        if self.dim == 2:
            return np.abs(self.omega)
        return np.sqrt(np.sum(self.omega**2, axis=-1))

    @property
    def index(self) -> int:
        if self.domain.kind == "sphere_ladder":
            return self.degree // 2
        return self.degree

    def total_flux(self) -> float:
        om = self.omega if self.dim == 2 else self.omega[..., 0]
        return self.domain.integrate(om)


@dataclass(frozen=True, eq=False)
class SpinorField:
    domain: Domain
    values: np.ndarray  # (*shape, 2)
    coeffs: tuple | None = None  # sphere: ladder coefficients (c+, c-)

    @property
    def plus(self) -> np.ndarray:
        out = np.zeros_like(self.values)
        out[..., 0] = self.values[..., 0]
        return out

    @property
    def minus(self) -> np.ndarray:
        out = np.zeros_like(self.values)
        out[..., 1] = self.values[..., 1]
        return out

    def density(self) -> np.ndarray:
        return np.sum(np.abs(self.values) ** 2, axis=-1)

    def norm(self) -> float:
        return float(np.sqrt(self.domain.integrate(self.density())))

    def chirality_plus_fraction(self) -> float:
        tot = self.domain.integrate(self.density())
        return self.domain.integrate(np.abs(self.values[..., 0]) ** 2) / tot


def _landau_links(shape, axes, phase, offset=(0.0, 0.0)):
    """Periodic U(1) links with uniform plaquette phase `phase` on the (p, q) plane.

    `phase * n_p * n_q` must be a multiple of 2 pi.  `offset` adds a flat
    (Wilson line) part translating the Landau states by that many cells along p
    and q.  Returns links for axes p and q.
    """
    p, q = axes
    Np, Nq = shape[p], shape[q]
    ip = np.arange(Np).reshape([-1 if k == p else 1 for k in range(len(shape))])
    iq = np.arange(Nq).reshape([-1 if k == q else 1 for k in range(len(shape))])
    Uq = np.broadcast_to(np.exp(1j * phase * (ip - offset[0])), shape).copy()
    Up = np.full(shape, np.exp(1j * phase * offset[1]), dtype=complex)
    last = [slice(None)] * len(shape)
    last[p] = Np - 1
    Up[tuple(last)] *= np.broadcast_to(np.exp(-1j * phase * Np * iq), shape)[tuple(last)]
    return Up, Uq


LANDAU_OFFSET = (0.5, 0.5)


def make_spinc(d: Domain, degree: int, axis: int = 2, offset=LANDAU_OFFSET) -> SpincStructure:
    """Uniform-curvature Spin^c structure of the given degree.

    `axis` selects the flux direction on the 3-torus (flux through the plane
    orthogonal to that axis).  On tori the connection carries a flat part that
    shifts the Landau states by `offset` cells; the default half-cell shift keeps
    the zeros of symmetric eigenspinors off the lattice sites, where the quotients
    by |psi|^2 in the energy-momentum fields would be ill conditioned.
    """
    degree = int(degree)
    if d.kind == "sphere_ladder":
        if degree % 2:
            raise SpincObstructionError(
                f"degree {degree} is odd; c1(L) must be even on the sphere"
            )
        s_plus = (degree - 2) / 4
        return SpincStructure(
            domain=d,
            degree=degree,
            omega=np.full(d.shape, -degree / 2.0),
            weights=(s_plus, s_plus + 1),
        )
    if d.kind == "torus2":
        area = d.lengths[0] * d.lengths[1]
        om12 = -4 * np.pi * degree / area
        half = 0.5 * om12 * d.spacing[0] * d.spacing[1]
        V = np.stack(_landau_links(d.shape, (0, 1), half, offset))
        return SpincStructure(
            domain=d,
            degree=degree,
            omega=np.full(d.shape, om12),
            links=V**2,
            spinor_links=V,
        )
    if d.kind == "torus3":
        plane = tuple(k for k in range(3) if k != axis)
        area = d.lengths[plane[0]] * d.lengths[plane[1]]
        om = -4 * np.pi * degree / area
        half = 0.5 * om * d.spacing[plane[0]] * d.spacing[plane[1]]
        Up, Uq = _landau_links(d.shape, plane, half, offset)
        V = np.ones((3,) + d.shape, dtype=complex)
        V[plane[0]], V[plane[1]] = Up, Uq
        omega = np.zeros(d.shape + (3,))
        omega[..., PAIRS3.index(plane)] = om
        return SpincStructure(domain=d, degree=degree, omega=omega, links=V**2, spinor_links=V)
    raise DomainKindError(f"no Spin^c structures are built on {d.kind} domains")


def plaquette_phases(s: SpincStructure, p: int = 0, q: int = 1, spinor: bool = False) -> np.ndarray:
    U = s.spinor_links if spinor else s.links
    return U[p] * np.roll(U[q], -1, axis=p) * np.conj(np.roll(U[p], -1, axis=q)) * np.conj(U[q])


def gauge_transform(s: SpincStructure, lam: np.ndarray) -> SpincStructure:
    """Apply psi -> exp(i lam) psi to the connection (spinor links see lam, L links 2 lam)."""
    if s.spinor_links is None:
        raise StructureError("gauge transformations act on lattice structures only")
    g = np.exp(1j * lam)
    V = np.stack([g * s.spinor_links[mu] * np.conj(np.roll(g, -1, axis=mu)) for mu in range(s.dim)])
    total = lam if s.gauge is None else s.gauge + lam
    return replace(s, spinor_links=V, links=V**2, gauge=total)


def clifford_mul(X, psi, dim: int | None = None):
    """X . psi for X given by orthonormal-frame components (..., n)."""
    X = np.asarray(X)
    dim = dim or X.shape[-1]
    return np.einsum("...k,kab,...b->...a", X.astype(complex), gammas(dim), psi)


def clifford_e(k: int, psi, dim: int = 2):
    return psi @ gammas(dim)[k].T


def bar(psi: SpinorField) -> SpinorField:
    if psi.domain.dim != 2:
        raise DomainKindError("the bar map is defined on surfaces only")
    vals = psi.values.copy()
    vals[..., 1] *= -1
    coeffs = None if psi.coeffs is None else (psi.coeffs[0], -psi.coeffs[1])
    return SpinorField(psi.domain, vals, coeffs)


def bar_values(v):
    out = np.array(v, dtype=complex, copy=True)
    out[..., 1] *= -1
    return out


def omega_values(omega, v, dim: int = 2):
    """Omega . v = sum_{i<j} Omega_ij e_i e_j v pointwise."""
    if dim == 2:
        return np.asarray(omega)[..., None] * (v @ (E1 @ E2).T)
    g = GAMMA3
    out = np.zeros_like(v, dtype=complex)
    for k, (i, j) in enumerate(PAIRS3):
        out += omega[..., k][..., None] * (v @ (g[i] @ g[j]).T)
    return out


def omega_clifford(s: SpincStructure, psi: SpinorField) -> SpinorField:
    return SpinorField(psi.domain, omega_values(s.omega, psi.values, s.dim))


@dataclass
class CliffordEstimate:
    slack: np.ndarray
    equality: np.ndarray
    equality_residual: float


def clifford_estimate_check(s: SpincStructure, psi: SpinorField, tol: float = 1e-10) -> CliffordEstimate:
    """Slack of (i Omega.psi, psi) >= -(c_n/2)|Omega| |psi|^2, with equality diagnostics."""
    v = psi.values
    om_v = omega_values(s.omega, v, s.dim)
    half_c = c_n(s.dim) / 2
    rho = np.sum(np.abs(v) ** 2, axis=-1)
    slack = re_inner(1j * om_v, v) + half_c * s.omega_norm * rho
    scale = max(float(rho.max()), 1e-300)
    eq = slack < tol * scale
    resid = om_v - 1j * half_c * s.omega_norm[..., None] * v
    res = float(np.sqrt(np.sum(np.abs(resid[eq]) ** 2) / scale)) if eq.any() else 0.0
    return CliffordEstimate(slack=slack, equality=eq, equality_residual=res)
