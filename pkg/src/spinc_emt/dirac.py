"""Dirac operators and their squares, plus the eigensolver.

On lattices D^2 is assembled from nabla^* nabla + S/4 + (i/2) Omega (S = 0 on flat
tori) with the magnetic Laplacian built from the spinor links; no first-order
lattice D is formed, which keeps the spectrum free of doublers.  On the sphere the
spinor components are ladders of spin weights (s+, s+ + 1) and

    D psi      = (-i ethb psi-, -i eth psi+)
    Dtilde psi = (-ethb psi-,    eth psi+)

both exact on the ladder.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import swsh
from .domains import Domain, DomainKindError
from .spinc import GAMMA3, OMEGA2, PAIRS3, SpincStructure, SpinorField, gammas

DENSE_LIMIT = 5000


class AssemblyError(ValueError):
    pass


class UnsupportedBackendError(DomainKindError):
    pass


class SolverError(RuntimeError):
    def __init__(self, msg, best_residual=np.inf):
        super().__init__(f"{msg} (best residual {best_residual:.3e})")
        self.best_residual = best_residual


@dataclass(frozen=True, eq=False)
class OperatorHandle:
    which: str  # "D", "D2" or "Dtilde"
    backend: str
    dimension: int
    matrix: object  # scipy sparse or dense ndarray
    domain: Domain
    structure: SpincStructure
    order: int = 0  # lattice stencil order, 0 for the exact ladder

    def apply(self, x):
        return self.matrix @ x

    def dense(self) -> np.ndarray:
        if self.dimension > DENSE_LIMIT:
            raise MemoryError(f"dense form refused for dimension {self.dimension}")
        m = self.matrix
        return m.toarray() if sp.issparse(m) else np.asarray(m)

    def to_field(self, vec) -> SpinorField:
        return vector_to_field(self.domain, self.structure, vec)


@dataclass
class Eigenpair:
    eigenvalue: float
    eigenspinor: SpinorField
    residual: float
    vector: np.ndarray


def _check(d: Domain, s: SpincStructure):
    if s.domain is not d and s.domain.shape != d.shape:
        raise AssemblyError("structure was built on a different domain")


# centered second-derivative weights for hops 0, 1, 2 (2nd and 4th order)
LAPLACE_STENCILS = {2: (2.0, -1.0, 0.0), 4: (5.0 / 2, -4.0 / 3, 1.0 / 12)}
# centered first-derivative weights for hops 1, 2
DERIV_STENCILS = {2: (0.5, 0.0), 4: (2.0 / 3, -1.0 / 12)}


def hop_links(links, mu: int, k: int):
    """Parallel transport from x + k e_mu back to x (product of k links)."""
    out = np.ones_like(links[mu])
    for j in range(k):
        out = out * np.roll(links[mu], -j, axis=mu)
    return out


def lattice_laplacian(d: Domain, links: np.ndarray, order: int = 4) -> sp.csr_matrix:
    """Magnetic (Bochner) Laplacian nabla^* nabla on scalars with the given links.

    order 2 is the nearest-neighbour (5-point / 7-point) stencil; order 4 adds
    next-nearest hops transported by products of links.
    """
    c0, c1, c2 = LAPLACE_STENCILS[order]
    n = d.npoints
    idx = np.arange(n).reshape(d.shape)
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    for mu in range(d.dim):
        h2 = d.spacing[mu] ** 2
        for k, c in ((1, c1), (2, c2)):
            if c == 0.0:
                continue
            fwd = np.roll(idx, -k, axis=mu).ravel()
            U = hop_links(links, mu, k).ravel()
            rows += [idx.ravel(), fwd]
            cols += [fwd, idx.ravel()]
            vals += [c * U / h2, c * np.conj(U) / h2]
        diag += c0 / h2
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.astype(complex))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def covariant_derivative(d: Domain, links: np.ndarray, values: np.ndarray, mu: int, order: int = 4):
    """Centered covariant derivative along axis mu of fields (*shape, ...) on a periodic lattice."""
    extra = values.ndim - d.dim
    out = np.zeros_like(values, dtype=complex)
    for k, c in enumerate(DERIV_STENCILS[order], start=1):
        if c == 0.0:
            continue
        Uf = hop_links(links, mu, k)
        Ub = np.conj(np.roll(Uf, k, axis=mu))
        Uf = Uf.reshape(Uf.shape + (1,) * extra)
        Ub = Ub.reshape(Ub.shape + (1,) * extra)
        out += c * (Uf * np.roll(values, -k, axis=mu) - Ub * np.roll(values, k, axis=mu))
    return out / d.spacing[mu]


def _fft_derivative(g, L, axis):
    n = g.shape[axis]
    k = 2 * np.pi * np.fft.fftfreq(n, d=L / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    shape = [1] * g.ndim
    shape[axis] = n
    return np.fft.ifft(1j * k.reshape(shape) * np.fft.fft(g, axis=axis), axis=axis)


def spectral_covariant_derivative(d: Domain, links: np.ndarray, values: np.ndarray, mu: int):
    """Covariant derivative along axis mu by Fourier differentiation in axial gauge.

    Along each lattice line the field is transported to the line's first site; the
    result is smooth up to the holonomy phase exp(i theta t / L), which is removed
    before the FFT and differentiated exactly.
    """
    extra = values.ndim - d.dim
    n = d.shape[mu]
    L = d.lengths[mu]
    U = np.moveaxis(links[mu], mu, -1)
    P = np.concatenate([np.ones(U.shape[:-1] + (1,), complex), np.cumprod(U, axis=-1)[..., :-1]], -1)
    theta = np.angle(P[..., -1] * U[..., -1])[..., None]
    t = np.arange(n) * (L / n)
    ph = np.exp(1j * theta * t / L)
    vals = np.moveaxis(values, mu, d.dim - 1)
    exp_axes = (1,) * extra
    P_, ph_ = P.reshape(P.shape + exp_axes), ph.reshape(ph.shape + exp_axes)
    chi = P_ * vals
    g = chi / ph_
    dchi = _fft_derivative(g, L, d.dim - 1) * ph_ + (1j * theta / L).reshape(theta.shape + exp_axes) * chi
    return np.moveaxis(np.conj(P_) * dchi, d.dim - 1, mu)


def spectral_derivative(d: Domain, F: np.ndarray, mu: int):
    """Fourier derivative of a periodic real field along axis mu."""
    return np.real(_fft_derivative(F, d.lengths[mu], mu))


def curvature_term_blocks(s: SpincStructure) -> np.ndarray:
    """Pointwise 2x2 matrices of S/4 + (i/2) Omega."""
    d = s.domain
    if s.dim == 2:
        blocks = 0.5 * s.omega[..., None, None] * OMEGA2
    else:
        blocks = np.zeros(d.shape + (2, 2), dtype=complex)
        for k, (i, j) in enumerate(PAIRS3):
            blocks = blocks + 0.5j * s.omega[..., k][..., None, None] * (GAMMA3[i] @ GAMMA3[j])
    return blocks + (d.scalar_curvature / 4)[..., None, None] * np.eye(2)


def _sphere_blocks(s: SpincStructure):
    sp_, sm = s.weights
    L = s.domain.l_max
    lp, lm = swsh.labels(sp_, L), swsh.labels(sm, L)
    return sp_, sm, L, lp, lm


def sphere_dsq_diagonal(s: SpincStructure) -> np.ndarray:
    """Ladder diagonal of nabla^*nabla + S/4 + (i/2) Omega; nabla^*nabla = l(l+1) - s^2."""
    sp_, sm, L, lp, lm = _sphere_blocks(s)
    om = float(s.omega.flat[0])
    plus = [l * (l + 1) - sp_**2 + 0.5 + 0.5 * om for l, _ in lp]
    minus = [l * (l + 1) - sm**2 + 0.5 - 0.5 * om for l, _ in lm]
    return np.array(plus + minus)


def assemble_dsq(d: Domain, s: SpincStructure, order: int = 4) -> OperatorHandle:
    _check(d, s)
    if d.kind == "sphere_ladder":
        if s.weights is None:
            raise AssemblyError("sphere structure lacks ladder weights")
        diag = sphere_dsq_diagonal(s)
        return OperatorHandle("D2", d.kind, diag.size, sp.diags(diag).tocsr().astype(complex), d, s)
    if d.kind in ("torus2", "torus3"):
        if s.spinor_links is None:
            raise AssemblyError("lattice structure lacks link phases")
        if order not in LAPLACE_STENCILS:
            raise AssemblyError(f"unsupported stencil order {order}")
        K = lattice_laplacian(d, s.spinor_links, order)
        blocks = curvature_term_blocks(s).reshape(-1, 2, 2)
        M = sp.kron(K, sp.identity(2), format="csr") + sp.block_diag(list(blocks), format="csr")
        return OperatorHandle("D2", d.kind, M.shape[0], M.tocsr(), d, s, order)
    raise AssemblyError(f"no D^2 assembly for {d.kind}")


def _sphere_first_order(d: Domain, s: SpincStructure, cp: complex, cm: complex, which: str):
    if d.kind != "sphere_ladder":
        raise UnsupportedBackendError(f"first-order {which} is only exact on the sphere ladder")
    sp_, sm, L, lp, lm = _sphere_blocks(s)
    npl = len(lp)
    n = npl + len(lm)
    pos_m = {lab: k for k, lab in enumerate(lm)}
    pos_p = {lab: k for k, lab in enumerate(lp)}
    rows, cols, vals = [], [], []
    for k, (l, m) in enumerate(lp):  # eth: psi+ -> psi-
        if (l, m) in pos_m:
            rows.append(npl + pos_m[(l, m)])
            cols.append(k)
            vals.append(cm * swsh.eth_factor(sp_, l))
    for k, (l, m) in enumerate(lm):  # ethbar: psi- -> psi+
        if (l, m) in pos_p:
            rows.append(pos_p[(l, m)])
            cols.append(npl + k)
            vals.append(cp * swsh.ethbar_factor(sm, l))
    M = sp.csr_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(n, n))
    return OperatorHandle(which, d.kind, n, M, d, s)


def assemble_d_sphere(d: Domain, s: SpincStructure) -> OperatorHandle:
    return _sphere_first_order(d, s, -1j, -1j, "D")


def assemble_dtilde_sphere(d: Domain, s: SpincStructure) -> OperatorHandle:
    return _sphere_first_order(d, s, -1.0, 1.0, "Dtilde")


def sphere_chirality(s: SpincStructure) -> np.ndarray:
    _, _, _, lp, lm = _sphere_blocks(s)
    return np.concatenate([np.ones(len(lp)), -np.ones(len(lm))])


# ---------------------------------------------------------------------------
# vectors <-> spinor fields


def split_sphere_vector(s: SpincStructure, vec):
    _, _, _, lp, _ = _sphere_blocks(s)
    return vec[: len(lp)], vec[len(lp):]


def vector_to_field(d: Domain, s: SpincStructure, vec) -> SpinorField:
    vec = np.asarray(vec, dtype=complex)
    if d.kind == "sphere_ladder":
        cp, cm = split_sphere_vector(s, vec)
        th, ph = d.coords
        vals = np.stack(
            [
                swsh.evaluate(s.weights[0], d.l_max, cp, th, ph),
                swsh.evaluate(s.weights[1], d.l_max, cm, th, ph),
            ],
            -1,
        )
        return SpinorField(d, vals, (cp.copy(), cm.copy()))
    return SpinorField(d, vec.reshape(d.shape + (2,)))


def field_to_vector(psi: SpinorField) -> np.ndarray:
    if psi.coeffs is not None:
        return np.concatenate(psi.coeffs)
    return psi.values.reshape(-1)


def apply_to_field(op: OperatorHandle, psi: SpinorField) -> SpinorField:
    return op.to_field(op.apply(field_to_vector(psi)))


def _weighted_normalise(op: OperatorHandle, vec):
    """Scale a vector so that its spinor field has unit L2 norm on the domain."""
    if op.backend == "sphere_ladder":
        return vec / np.linalg.norm(vec)
    w = op.domain.weights.reshape(-1)
    nrm = np.sqrt(np.sum(np.abs(vec.reshape(-1, 2)) ** 2 * w[:, None]))
    return vec / nrm


def _dense_nearest(op, k, shift):
    vals, vecs = np.linalg.eigh(op.dense())
    order = np.argsort(np.abs(vals - shift), kind="stable")[:k]
    return vals[order], vecs[:, order]


def _lanczos_nearest(op, k, shift, seed, tol, maxiter):
    n = op.dimension
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    # Lanczos can drop copies of a repeated eigenvalue; a padded request and a wide
    # Krylov basis recover full multiplicities in the levels that are returned
    kk = min(n - 2, max(2 * k, k + 8))
    ncv = min(n - 1, max(2 * kk + 1, 60))
    try:
        if op.which == "D2" and shift <= 0:
            # bottom of a positive semidefinite spectrum: plain Lanczos, no factorization
            vals, vecs = spla.eigsh(op.matrix, k=kk, which="SA", v0=v0, tol=tol, maxiter=maxiter, ncv=ncv)
        else:
            vals, vecs = spla.eigsh(
                sp.csc_matrix(op.matrix), k=kk, sigma=shift, which="LM", v0=v0, tol=tol, maxiter=maxiter, ncv=ncv
            )
    except spla.ArpackNoConvergence as exc:
        best = np.inf
        if exc.eigenvalues.size:
            r = op.matrix @ exc.eigenvectors - exc.eigenvectors * exc.eigenvalues
            best = float(np.min(np.linalg.norm(r, axis=0)))
        raise SolverError("Lanczos did not converge", best) from exc
    vals = np.real(vals)
    keep = np.argsort(np.abs(vals - shift), kind="stable")[:k]
    return vals[keep], vecs[:, keep]


def eigenpairs(
    op: OperatorHandle,
    k: int,
    shift: float = 0.0,
    seed: int = 0,
    tol: float = 1e-12,
    maxiter: int | None = None,
    dense: bool | None = None,
) -> list[Eigenpair]:
    """k eigenpairs nearest `shift`, ascending by eigenvalue.

    Ladder operators are solved densely.  Lattice operators use implicitly
    restarted Lanczos (ARPACK) with a seeded start vector: directly on D^2 for the
    bottom of the spectrum, shift-invert otherwise.  A dense solve is the fallback
    when Lanczos fails and the dimension is at most DENSE_LIMIT.  `dense` forces
    either path.
    """
    n = op.dimension
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    if dense is None:
        dense = op.backend == "sphere_ladder" or k >= n - 1
    if dense:
        vals, vecs = _dense_nearest(op, k, shift)
    else:
        try:
            vals, vecs = _lanczos_nearest(op, k, shift, seed, tol, maxiter)
        except SolverError:
            if n > DENSE_LIMIT:
                raise
            vals, vecs = _dense_nearest(op, k, shift)
    order = np.argsort(vals, kind="stable")
    out = []
    for j in order:
        v = vecs[:, j]
        # fix the global phase deterministically
        a = int(np.argmax(np.abs(v)))
        v = v * np.exp(-1j * np.angle(v[a]))
        lam = float(np.real(vals[j]))
        res = float(np.linalg.norm(op.apply(v) - lam * v) / np.linalg.norm(v))
        v = _weighted_normalise(op, v)
        out.append(Eigenpair(lam, op.to_field(v), res, v))
    return out


def lattice_dirac_values(d: Domain, s: SpincStructure, values: np.ndarray) -> np.ndarray:
    """First-order D psi on a lattice by Fourier covariant derivatives."""
    g = gammas(d.dim)
    return sum(spectral_covariant_derivative(d, s.spinor_links, values, mu) @ g[mu].T for mu in range(d.dim))


def lattice_d_eigenpairs(d: Domain, s: SpincStructure, pairs: list[Eigenpair], cluster_tol: float = 1e-3) -> list[Eigenpair]:
    """D-eigenspinors from D^2 eigenpairs on a lattice.

    D^2 eigenvectors in a repeated level may mix the +lambda and -lambda eigenspaces
    of D.  Levels closer than cluster_tol * max(1, mu) are grouped and D is
    diagonalized on each group.  The returned eigenvalues are the signed lambda; the
    residual is |D psi - lambda psi| / |psi|, which also exposes groups cut off at
    the end of the computed spectrum.
    """
    if d.kind not in ("torus2", "torus3"):
        raise UnsupportedBackendError("lattice_d_eigenpairs needs a lattice domain")
    w = d.weights[..., None]
    mus = [p.eigenvalue for p in pairs]
    groups, cur = [], [0]
    for j in range(1, len(pairs)):
        if abs(mus[j] - mus[cur[-1]]) <= cluster_tol * max(1.0, abs(mus[j])):
            cur.append(j)
        else:
            groups.append(cur)
            cur = [j]
    if pairs:
        groups.append(cur)
    out = []
    for grp in groups:
        V = [pairs[j].eigenspinor.values for j in grp]
        DV = [lattice_dirac_values(d, s, v) for v in V]
        G = np.array([[np.sum(w * np.conj(a) * b) for b in V] for a in V])
        H = np.array([[np.sum(w * np.conj(a) * b) for b in DV] for a in V])
        # generalized problem H c = lam G c; G is close to the identity
        L = np.linalg.cholesky(G)
        Li = np.linalg.inv(L)
        lam, C = np.linalg.eigh(Li @ (0.5 * (H + H.conj().T)) @ Li.conj().T)
        C = Li.conj().T @ C
        for k in np.argsort(lam, kind="stable"):
            vals = sum(c * v for c, v in zip(C[:, k], V))
            a = np.unravel_index(int(np.argmax(np.abs(vals))), vals.shape)
            vals = vals * np.exp(-1j * np.angle(vals[a]))
            vals = vals / np.sqrt(np.sum(w * np.abs(vals) ** 2))
            res = float(np.sqrt(np.sum(w * np.abs(lattice_dirac_values(d, s, vals) - lam[k] * vals) ** 2)))
            out.append(Eigenpair(float(lam[k]), SpinorField(d, vals), res, vals.reshape(-1)))
    return out


def lattice_d_spectrum(d: Domain, s: SpincStructure, k: int, seed: int = 0, pad: int = 4,
                       max_residual: float = 1e-2) -> list[Eigenpair]:
    """The k D-eigenpairs of smallest |lambda| on a lattice, ordered by (lambda^2, lambda).

    `pad` extra D^2 levels are computed so that the last repeated level is complete;
    eigenpairs whose D-residual exceeds max_residual (cut-off groups) are dropped.
    """
    pairs = eigenpairs(assemble_dsq(d, s), min(k + pad, 2 * d.npoints - 2), seed=seed)
    good = [p for p in lattice_d_eigenpairs(d, s, pairs) if p.residual < max_residual]
    good.sort(key=lambda p: (round(p.eigenvalue**2, 9), p.eigenvalue))
    if len(good) < k:
        raise SolverError(f"only {len(good)} complete D-eigenpairs among {len(pairs)} levels; raise pad")
    return good[:k]


def self_adjointness_defect(op: OperatorHandle, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    n = op.dimension
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    y = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    lhs = np.vdot(y, op.apply(x))
    rhs = np.vdot(op.apply(y), x)
    return float(abs(lhs - rhs) / (np.linalg.norm(x) * np.linalg.norm(y)))


def spectrum_csv(pairs: list[Eigenpair], signed: Callable | None = None) -> str:
    """Spectrum export: index, lambda_sq, lambda_or_nan, chirality_plus_fraction, residual."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "lambda_sq", "lambda_or_nan", "chirality_plus_fraction", "residual"])
    for i, p in enumerate(pairs):
        lam_sq = p.eigenvalue if signed is None else p.eigenvalue**2
        lam = p.eigenvalue if signed is not None else float("nan")
        w.writerow(
            [i, f"{lam_sq:.12e}", f"{lam:.12e}", f"{p.eigenspinor.chirality_plus_fraction():.12e}", f"{p.residual:.6e}"]
        )
    return buf.getvalue()
