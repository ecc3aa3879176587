"""Energy-Momentum tensor and the frame decomposition of nabla psi.

With u = |psi|^2 and an orthonormal frame (e_i), all tensors are frame components:

    ell_ij   = Re(e_i . nabla_j psi, psi) / u       T = sym(ell), Q = skew(ell)
    Y_i      = Re(D psi, e_i . psi) / u
    f        = 1/2 ln u
    nabla_X psi = delta(X) psi + sum_j alpha_j(X) e_j . psi [+ beta(X) e_1 e_2 . psi]

so delta = du / 2u, alpha_j(e_i) = -T_ij + Q_ij and beta(X) = Re(nabla_X psi, e1e2 psi)/u.
In three dimensions {psi, e_j psi} already spans the spinor space; the psi-component
is called eta.  Laplacians are positive (Delta = -div grad).
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from . import swsh
from .dirac import (
    DERIV_STENCILS,
    LAPLACE_STENCILS,
    covariant_derivative,
    spectral_covariant_derivative,
    spectral_derivative,
)
from .domains import Domain, DomainKindError
from .spinc import E1, E2, SpincStructure, SpinorField, gammas, omega_values, re_inner

EPS_ZERO = 1e-8


class DegenerateInputError(ValueError):
    pass


@dataclass
class EMTData:
    domain: Domain
    u: np.ndarray
    mask: np.ndarray  # True where |psi|^2 > EPS_ZERO max |psi|^2
    f: np.ndarray
    Y: np.ndarray  # (..., n)
    T: np.ndarray  # (..., n, n)
    Q: np.ndarray  # (..., n, n), skew
    delta: np.ndarray  # (..., n); eta in 3D
    alpha: np.ndarray  # (..., i, j) = alpha_j(e_i)
    beta: np.ndarray | None  # (..., n), 2D only
    du: np.ndarray  # (..., n)
    lap_u: np.ndarray
    div_xi: np.ndarray
    div_Y: np.ndarray
    dpsi: np.ndarray  # D psi values
    nabla: np.ndarray  # (n, ..., 2) frame covariant derivatives
    omega_term: np.ndarray  # Re((i/2) Omega . psi, psi) / u
    extra: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.T.shape[-1]

    @property
    def Q12(self) -> np.ndarray:
        return self.Q[..., 0, 1]

    @property
    def ell(self) -> np.ndarray:
        return self.T

    @property
    def eta(self) -> np.ndarray:
        return self.delta

    @property
    def trT(self) -> np.ndarray:
        return np.trace(self.T, axis1=-2, axis2=-1)

    @property
    def T_norm2(self) -> np.ndarray:
        return np.sum(self.T**2, axis=(-2, -1))

    @property
    def Q_norm2(self) -> np.ndarray:
        return np.sum(self.Q**2, axis=(-2, -1))

    @property
    def Y_norm2(self) -> np.ndarray:
        return np.sum(self.Y**2, axis=-1)

    @property
    def grad_f(self) -> np.ndarray:
        return self.du / (2 * self.u[..., None])

    @property
    def lap_f(self) -> np.ndarray:
        return self.lap_u / (2 * self.u) + np.sum(self.du**2, axis=-1) / (2 * self.u**2)

    @property
    def Yf(self) -> np.ndarray:
        return np.sum(self.Y * self.grad_f, axis=-1)

    @property
    def masked_fraction(self) -> float:
        return 1.0 - float(np.mean(self.mask))


def pointwise_emt(values, nabla, dpsi, dim: int):
    """T, Q, Y, alpha, beta and the psi-component of nabla psi from pointwise data.

    `nabla` has shape (n, ..., 2) with nabla[i] = nabla_{e_i} psi.
    """
    g = gammas(dim)
    u = np.sum(np.abs(values) ** 2, axis=-1)
    safe = np.where(u > 0, u, 1.0)
    eps = [values @ g[j].T for j in range(dim)]  # e_j psi
    ell = np.empty(u.shape + (dim, dim))
    alpha = np.empty(u.shape + (dim, dim))
    for i in range(dim):
        for j in range(dim):
            ell[..., i, j] = re_inner(nabla[j] @ g[i].T, values) / safe
            alpha[..., i, j] = re_inner(nabla[i], eps[j]) / safe
    T = 0.5 * (ell + np.swapaxes(ell, -1, -2))
    Q = 0.5 * (ell - np.swapaxes(ell, -1, -2))
    Y = np.stack([re_inner(dpsi, eps[i]) / safe for i in range(dim)], -1)
    delta = np.stack([re_inner(nabla[i], values) / safe for i in range(dim)], -1)
    beta = None
    if dim == 2:
        e12 = values @ (E1 @ E2).T
        beta = np.stack([re_inner(nabla[i], e12) / safe for i in range(dim)], -1)
    return u, T, Q, Y, alpha, beta, delta


def dirac_from_nabla(nabla, dim: int):
    g = gammas(dim)
    return sum(nabla[i] @ g[i].T for i in range(dim))


def reconstruct_nabla(e: EMTData, values) -> np.ndarray:
    """nabla_{e_i} psi rebuilt from (delta, alpha, beta)."""
    g = gammas(e.dim)
    out = []
    for i in range(e.dim):
        v = e.delta[..., i][..., None] * values
        for j in range(e.dim):
            v = v + e.alpha[..., i, j][..., None] * (values @ g[j].T)
        if e.beta is not None:
            v = v + e.beta[..., i][..., None] * (values @ (E1 @ E2).T)
        out.append(v)
    return np.stack(out)


def reconstruction_residual(e: EMTData, values) -> float:
    diff = reconstruct_nabla(e, values) - e.nabla
    scale = np.sqrt(e.u.max())
    return float(np.max(np.abs(diff[:, e.mask])) / scale)


# ---------------------------------------------------------------------------
# lattice backend


def _scalar_deriv(d: Domain, F, mu: int, order):
    if order == "spectral":
        return spectral_derivative(d, F, mu)
    out = np.zeros_like(F, dtype=float)
    for k, c in enumerate(DERIV_STENCILS[order], start=1):
        if c:
            out += c * (np.roll(F, -k, axis=mu) - np.roll(F, k, axis=mu))
    return out / d.spacing[mu]


def _scalar_laplacian(d: Domain, F, order):
    """Positive Laplacian -sum_mu d_mu^2 F."""
    if order == "spectral":
        return -sum(spectral_derivative(d, spectral_derivative(d, F, mu), mu) for mu in range(d.dim))
    c0, c1, c2 = LAPLACE_STENCILS[order]
    out = np.zeros_like(F, dtype=float)
    for mu in range(d.dim):
        acc = c0 * F
        for k, c in ((1, c1), (2, c2)):
            if c:
                acc = acc + c * (np.roll(F, -k, axis=mu) + np.roll(F, k, axis=mu))
        out += acc / d.spacing[mu] ** 2
    return out


def _lattice_nabla(d: Domain, s: SpincStructure, psi: SpinorField, order):
    v = psi.values
    if order == "spectral":
        return np.stack([spectral_covariant_derivative(d, s.spinor_links, v, mu) for mu in range(d.dim)])
    return np.stack([covariant_derivative(d, s.spinor_links, v, mu, order) for mu in range(d.dim)])


# ---------------------------------------------------------------------------
# sphere backend


def _sphere_eth_pair(s_w, L, c):
    """Coefficients of (eth c, ethb c) on their ladders."""
    return swsh.apply_eth(s_w, L, c), swsh.apply_ethbar(s_w, L, c)


def sphere_bochner(s_w, L, c):
    """nabla^* nabla = -(eth ethb + ethb eth)/2 on the weight-s ladder, by composition."""
    up, dn = _sphere_eth_pair(s_w, L, c)
    return -0.5 * (swsh.apply_eth(s_w - 1, L, dn) + swsh.apply_ethbar(s_w + 1, L, up))


def sphere_dirac_coeffs(s: SpincStructure, coeffs):
    """Ladder coefficients of D psi = (-i ethb psi-, -i eth psi+)."""
    sp_, sm = s.weights
    L = s.domain.l_max
    cp, cm = coeffs
    return (-1j * swsh.apply_ethbar(sm, L, cm), -1j * swsh.apply_eth(sp_, L, cp))


def _sphere_values(s: SpincStructure, coeffs, th, ph):
    sp_, sm = s.weights
    L = s.domain.l_max
    return np.stack([swsh.evaluate(sp_, L, coeffs[0], th, ph), swsh.evaluate(sm, L, coeffs[1], th, ph)], -1)


def _sphere_nabla(s: SpincStructure, coeffs, th, ph):
    sp_, sm = s.weights
    L = s.domain.l_max
    a1, a2 = swsh.frame_derivatives(sp_, L, coeffs[0], th, ph)
    b1, b2 = swsh.frame_derivatives(sm, L, coeffs[1], th, ph)
    return np.stack([np.stack([a1, b1], -1), np.stack([a2, b2], -1)])


# ---------------------------------------------------------------------------


def compute_emt(
    d: Domain,
    s: SpincStructure,
    psi: SpinorField,
    dpsi: SpinorField | None = None,
    order="spectral",
) -> EMTData:
    """EMT fields of psi.  D psi is built from the covariant derivatives unless supplied.

    On lattices `order` selects the derivative scheme: "spectral" (Fourier
    differentiation in axial gauge, the default) or a centered stencil order 2 or 4.
    Near zeros of order two and higher only the spectral scheme keeps the quotients
    by |psi|^2 accurate.
    """
    v = psi.values
    u_raw = np.sum(np.abs(v) ** 2, axis=-1)
    if not np.any(u_raw > 0):
        raise DegenerateInputError("psi vanishes identically")
    dim = d.dim
    g = gammas(dim)
    if d.kind == "sphere_ladder":
        if psi.coeffs is None:
            raise DegenerateInputError("sphere spinors need ladder coefficients")
        th, ph = d.coords
        sp_, sm = s.weights
        L = d.l_max
        nabla = _sphere_nabla(s, psi.coeffs, th, ph)
        dcoef = sphere_dirac_coeffs(s, psi.coeffs)
        dvals = _sphere_values(s, dcoef, th, ph) if dpsi is None else dpsi.values
        du = np.stack([2 * re_inner(nabla[i], v) for i in range(2)], -1)
        boch = _sphere_values(
            s, (sphere_bochner(sp_, L, psi.coeffs[0]), sphere_bochner(sm, L, psi.coeffs[1])), th, ph
        )
        grad_sq = np.sum(np.abs(nabla) ** 2, axis=(0, -1))
        lap_u = 2 * re_inner(boch, v) - 2 * grad_sq
        nabla_d = _sphere_nabla(s, dcoef, th, ph)
        div_xi = sum(re_inner(nabla_d[i], v @ g[i].T) + re_inner(dvals, nabla[i] @ g[i].T) for i in range(2))
        div_Y = None
    elif d.kind in ("torus2", "torus3"):
        nabla = _lattice_nabla(d, s, psi, order)
        dvals = dirac_from_nabla(nabla, dim) if dpsi is None else dpsi.values
        du = np.stack([_scalar_deriv(d, u_raw, mu, order) for mu in range(dim)], -1)
        lap_u = _scalar_laplacian(d, u_raw, order)
        xi = np.stack([re_inner(dvals, v @ g[i].T) for i in range(dim)], -1)
        div_xi = sum(_scalar_deriv(d, xi[..., i], i, order) for i in range(dim))
        div_Y = "stencil"
    else:
        raise DomainKindError(f"compute_emt does not handle {d.kind}; use pointwise_emt")
    u, T, Q, Y, alpha, beta, delta = pointwise_emt(v, nabla, dvals, dim)
    mask = u > EPS_ZERO * u.max()
    safe = np.where(mask, u, 1.0)
    f = np.where(mask, 0.5 * np.log(safe), np.nan)
    if div_Y == "stencil":
        div_Y = sum(_scalar_deriv(d, Y[..., i], i, order) for i in range(dim))
    else:
        # sphere: Leibniz form of the divergence of Y = xi / u
        div_Y = div_xi / safe - np.sum(Y * du, axis=-1) / safe
    om = re_inner(0.5j * omega_values(s.omega, v, dim), v) / safe
    return EMTData(
        domain=d, u=u, mask=mask, f=f, Y=Y, T=T, Q=Q, delta=delta, alpha=alpha, beta=beta,
        du=du, lap_u=lap_u, div_xi=div_xi, div_Y=div_Y, dpsi=dvals, nabla=nabla, omega_term=om,
    )


def det_TQ(e: EMTData) -> np.ndarray:
    if e.dim != 2:
        raise DomainKindError("det(T + Q) is defined for surfaces")
    M = e.T + e.Q
    return M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]


def det_identity_residual(e: EMTData) -> float:
    """max |2 det(T+Q) - ((tr T)^2 + |Q|^2 - |T|^2)|."""
    r = 2 * det_TQ(e) - (e.trT**2 + e.Q_norm2 - e.T_norm2)
    return float(np.max(np.abs(r)))


def _masked_l2(d: Domain, r, mask):
    w = d.weights * mask
    return float(np.sqrt(np.sum(w * r**2) / np.sum(w)))


def divergence_identity_check(d: Domain, s: SpincStructure, psi: SpinorField, lam_sq: float, e: EMTData | None = None, order="spectral"):
    """Residual of lambda^2 + div(xi)/|psi|^2 = (tr T)^2 + |Y|^2 + 2|Q|^2, xi = |psi|^2 Y.

    Returns (L2 residual over unmasked points, L2 residual of the plumbing identity
    div(xi)/|psi|^2 = div Y + 2 Y(f)).
    """
    if e is None:
        e = compute_emt(d, s, psi, order=order)
    safe = np.where(e.mask, e.u, 1.0)
    r = lam_sq + e.div_xi / safe - (e.trT**2 + e.Y_norm2 + 2 * e.Q_norm2)
    plumb = e.div_xi / safe - (e.div_Y + 2 * e.Yf)
    return _masked_l2(d, r, e.mask), _masked_l2(d, plumb, e.mask)


def dirac_norm_residual(e: EMTData) -> float:
    """max over unmasked points of | |D psi|^2/u - ((tr T)^2 + |Y|^2 + 2|Q|^2) |."""
    safe = np.where(e.mask, e.u, 1.0)
    lhs = np.sum(np.abs(e.dpsi) ** 2, axis=-1) / safe
    r = lhs - (e.trT**2 + e.Y_norm2 + 2 * e.Q_norm2)
    return float(np.max(np.abs(r[e.mask])))


# ---------------------------------------------------------------------------
# export


def _columns(e: EMTData):
    d = e.domain
    n = e.dim
    names, cols = [], []
    for k, c in zip("xyz", d.coords):
        names.append(k)
        cols.append(c.ravel())
    names.append("f")
    cols.append(e.f.ravel())
    for i in range(n):
        names.append(f"Y{i + 1}")
        cols.append(e.Y[..., i].ravel())
    for i in range(n):
        for j in range(i, n):
            names.append(f"T{i + 1}{j + 1}")
            cols.append(e.T[..., i, j].ravel())
    for i in range(n):
        for j in range(i + 1, n):
            names.append(f"Q{i + 1}{j + 1}")
            cols.append(e.Q[..., i, j].ravel())
    return names, np.stack(cols, -1)


def fields_csv(e: EMTData) -> str:
    names, table = _columns(e)
    buf = io.StringIO()
    buf.write(",".join(["index"] + names) + "\n")
    for k, row in enumerate(table):
        buf.write(str(k) + "," + ",".join(f"{x:.12e}" for x in row) + "\n")
    return buf.getvalue()


MAGIC = b"SPCEMT01"


def fields_binary(e: EMTData) -> bytes:
    """Little-endian dump: magic, rank, grid shape, column count, column names, float64 table."""
    names, table = _columns(e)
    shape = e.domain.shape
    head = MAGIC + struct.pack("<q", len(shape)) + struct.pack(f"<{len(shape)}q", *shape)
    head += struct.pack("<q", len(names))
    blob = ",".join(names).encode()
    head += struct.pack("<q", len(blob)) + blob
    return head + table.astype("<f8").tobytes()


def read_fields_binary(data: bytes):
    if data[:8] != MAGIC:
        raise ValueError("not an EMT field dump")
    pos = 8
    (rank,) = struct.unpack_from("<q", data, pos)
    pos += 8
    shape = struct.unpack_from(f"<{rank}q", data, pos)
    pos += 8 * rank
    (ncol,) = struct.unpack_from("<q", data, pos)
    pos += 8
    (nb,) = struct.unpack_from("<q", data, pos)
    pos += 8
    names = data[pos : pos + nb].decode().split(",")
    pos += nb
    table = np.frombuffer(data, dtype="<f8", offset=pos).reshape(int(np.prod(shape)), ncol)
    return tuple(shape), names, table
