"""Verifiers: both sides of each identity or inequality, residuals, slacks, equality diagnostics.

Tolerances: the ladder backend uses SPECTRAL_TOL; lattices use tol(N) = LATTICE_C h^2.
Equality diagnostics run when a slack falls below EQUALITY_FACTOR * tol.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import emt as emt_mod
from .dirac import Eigenpair, assemble_d_sphere, eigenpairs
from .domains import Domain, DomainKindError
from .spinc import SpincStructure, SpinorField, c_n, gammas, omega_values

SPECTRAL_TOL = 1e-8
LATTICE_C = 0.05
EQUALITY_FACTOR = 10.0
MAX_MASKED = 0.01


def default_tol(d: Domain) -> float:
    if d.kind == "sphere_ladder":
        return SPECTRAL_TOL
    return LATTICE_C * max(d.spacing) ** 2


def _f(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x)
    if isinstance(x, str) or x is None:
        return x
    return float(x)


@dataclass
class Report:
    name: str
    scalars: dict = field(default_factory=dict)
    norms: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    residual_tols: dict = field(default_factory=dict)  # residual name -> tolerance
    slack_tols: dict = field(default_factory=dict)  # slack name -> tolerance
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        values = {**self.scalars, **self.norms, **self.diagnostics}
        for k, tol in self.residual_tols.items():
            v = values[k]
            if not (np.isfinite(v) and abs(v) < tol):
                return False
        for k, tol in self.slack_tols.items():
            v = values[k]
            if not (np.isfinite(v) and v >= -tol):
                return False
        return True

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "scalars": {k: _f(v) for k, v in sorted(self.scalars.items())},
            "norms": {k: _f(v) for k, v in sorted(self.norms.items())},
            "diagnostics": {k: _f(v) for k, v in sorted(self.diagnostics.items())},
            "residual_tols": {k: _f(v) for k, v in sorted(self.residual_tols.items())},
            "slack_tols": {k: _f(v) for k, v in sorted(self.slack_tols.items())},
            "meta": {k: _f(v) if not isinstance(v, (list, tuple)) else [_f(x) for x in v] for k, v in sorted(self.meta.items())},
            "verdict": "pass" if self.passed else "fail",
        }

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Report":
        d = json.loads(text)
        return cls(
            d["name"], d["scalars"], d["norms"], d["diagnostics"], d["residual_tols"], d["slack_tols"], d["meta"]
        )


def aggregate_csv(reports) -> str:
    """One row per report: name, meta, verdict and every scalar as name=value pairs."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "backend", "case", "N", "degree", "level", "verdict", "lhs", "rhs", "slack", "residual"])
    for r in reports:
        s = {**r.scalars, **r.norms}
        m = r.meta

        def g(k):
            v = s.get(k)
            return "" if v is None else f"{float(v):.12e}"

        w.writerow(
            [r.name, m.get("backend", ""), m.get("surface", m.get("case", "")), m.get("N", ""), m.get("degree", ""), m.get("level", ""),
             "pass" if r.passed else "fail", g("lhs"), g("rhs"), g("slack"), g("residual_l2") or g("residual")]
        )
    return buf.getvalue()


def _meta(d: Domain, s: SpincStructure | None = None, level=None, **kw):
    m = {"backend": d.kind}
    if d.kind == "sphere_ladder":
        m["N"] = d.l_max
    else:
        m["N"] = d.shape[0]
    if s is not None:
        m["degree"] = s.degree
    if level is not None:
        m["level"] = level
    m.update(kw)
    return m


def _norms(d: Domain, r, mask, prefix="residual"):
    w = d.weights * mask
    l2 = float(np.sqrt(np.sum(w * r**2) / np.sum(w)))
    linf = float(np.max(np.abs(r[mask]))) if mask.any() else 0.0
    return {f"{prefix}_l2": l2, f"{prefix}_linf": linf}


def thm31_residual_field(d: Domain, s: SpincStructure, e, lam_sq: float):
    """lambda^2 - [S/4 + |T|^2 + |Q|^2 + Delta f + |Y|^2 - 2 Y(f) + ((i/2) Omega.psi, psi)/|psi|^2]."""
    rhs = d.scalar_curvature / 4 + e.T_norm2 + e.Q_norm2 + e.lap_f + e.Y_norm2 - 2 * e.Yf + e.omega_term
    r = lam_sq - rhs
    return np.where(e.mask, r, 0.0)


def verify_thm31(d: Domain, s: SpincStructure, pair: Eigenpair, tol: float | None = None, level=None) -> Report:
    tol = default_tol(d) if tol is None else tol
    e = emt_mod.compute_emt(d, s, pair.eigenspinor)
    r = thm31_residual_field(d, s, e, pair.eigenvalue)
    rep = Report("thm31", meta=_meta(d, s, level))
    rep.scalars["lambda_sq"] = pair.eigenvalue
    rep.norms.update(_norms(d, r, e.mask))
    rep.diagnostics["masked_fraction"] = e.masked_fraction
    rep.diagnostics["omega_term_mean"] = d.integrate(np.where(e.mask, e.omega_term, 0)) / d.area
    rep.residual_tols = {"residual_l2": tol}
    rep.diagnostics["masked_excess"] = max(0.0, e.masked_fraction - MAX_MASKED)
    rep.residual_tols["masked_excess"] = 1e-300
    return rep


def convergence_orders(values, ratio: float = 2.0):
    v = np.asarray(values, dtype=float)
    return list(np.log(v[:-1] / v[1:]) / np.log(ratio))


def verify_rem32(d: Domain, s: SpincStructure, pair: Eigenpair, tol: float | None = None, level=None) -> Report:
    """For a D-eigenspinor: lambda^2 = S/4 + |T|^2 + Delta f + ((i/2) Omega.psi, psi)/|psi|^2, Y = Q = 0."""
    tol = default_tol(d) if tol is None else tol
    lam = pair.eigenvalue
    e = emt_mod.compute_emt(d, s, pair.eigenspinor)
    r = lam**2 - (d.scalar_curvature / 4 + e.T_norm2 + e.lap_f + e.omega_term)
    r = np.where(e.mask, r, 0.0)
    rep = Report("rem32", meta=_meta(d, s, level))
    rep.scalars["lambda"] = lam
    rep.norms.update(_norms(d, r, e.mask))
    rep.norms["Y_linf"] = float(np.max(np.sqrt(e.Y_norm2[e.mask])))
    rep.norms["Q_linf"] = float(np.max(np.sqrt(e.Q_norm2[e.mask])))
    rep.norms["trT_minus_lambda_linf"] = float(np.max(np.abs(e.trT[e.mask] - lam)))
    rep.diagnostics["integral_lap_f"] = d.integrate(np.where(e.mask, e.lap_f, 0.0))
    rep.diagnostics["lap_f_linf"] = float(np.max(np.abs(e.lap_f[e.mask])))
    # int Delta f = 0 only when psi has no zeros; zeros carry point masses
    rep.residual_tols = {"residual_l2": tol, "Y_linf": tol, "Q_linf": tol}
    return rep


def verify_det_bound(d: Domain, s: SpincStructure, pair: Eigenpair, tol: float | None = None, level=None) -> Report:
    """int det(T + Q) >= pi chi / 2 - (1/4) int |Omega|, with equality diagnostics."""
    if d.dim != 2:
        raise DomainKindError("the determinant bound is a surface statement")
    tol = default_tol(d) if tol is None else tol
    e = emt_mod.compute_emt(d, s, pair.eigenspinor)
    det = np.where(e.mask, emt_mod.det_TQ(e), 0.0)
    lhs = d.integrate(det)
    int_abs_om = d.integrate(s.omega_norm)
    rhs = np.pi * d.chi / 2 - int_abs_om / 4
    rep = Report("det_bound", meta=_meta(d, s, level))
    rep.scalars.update(lhs=lhs, rhs=rhs, slack=lhs - rhs, integral_abs_omega=int_abs_om)
    rep.slack_tols = {"slack": tol}
    om = s.omega if s.dim == 2 else s.omega[..., 0]
    rep.diagnostics["omega_sign_variation"] = float(om.max() > 0 and om.min() < 0)
    rep.diagnostics["omega_constant_sign"] = float(not (om.max() > 0 and om.min() < 0))
    rep.diagnostics["chirality_plus_fraction"] = pair.eigenspinor.chirality_plus_fraction()
    cp = pair.eigenspinor.chirality_plus_fraction()
    rep.diagnostics["chirality_impurity"] = min(cp, 1 - cp)
    rep.diagnostics["int_abs_omega_minus_2pi_chi"] = int_abs_om - 2 * np.pi * d.chi
    rep.diagnostics["det_identity_residual"] = emt_mod.det_identity_residual(e) if e.mask.all() else float(
        np.max(np.abs((2 * emt_mod.det_TQ(e) - (e.trT**2 + e.Q_norm2 - e.T_norm2))[e.mask]))
    )
    rep.diagnostics["equality_triggered"] = float(abs(lhs - rhs) < EQUALITY_FACTOR * tol)
    return rep


def killing_residual(d: Domain, s: SpincStructure, psi: SpinorField, lam: float, e=None) -> float:
    """max_i sup_x |nabla_{e_i} psi + (lam/2) e_i . psi| / sup |psi|."""
    if e is None:
        e = emt_mod.compute_emt(d, s, psi)
    g = gammas(d.dim)
    scale = np.sqrt(np.max(e.u))
    worst = 0.0
    for i in range(d.dim):
        r = e.nabla[i] + 0.5 * lam * (psi.values @ g[i].T)
        worst = max(worst, float(np.max(np.abs(r))))
    return worst / scale


def clifford_equality_residual(s: SpincStructure, psi: SpinorField) -> float:
    """sup |Omega.psi - i (c_n/2)|Omega| psi| / sup |psi|."""
    v = psi.values
    r = omega_values(s.omega, v, s.dim) - 1j * (c_n(s.dim) / 2) * s.omega_norm[..., None] * v
    return float(np.max(np.abs(r)) / np.sqrt(np.max(np.sum(np.abs(v) ** 2, -1))))


def verify_bar_bound(d: Domain, s: SpincStructure, spectrum: list[Eigenpair], signed: bool = False,
                     tol: float | None = None, killing_tol: float | None = None) -> Report:
    """lambda_1^2 >= 2 pi chi / Area - (1/Area) int |Omega|; Killing diagnostics at equality.

    `spectrum` holds D^2 eigenpairs, or D eigenpairs when `signed` is set.
    """
    if d.dim != 2:
        raise DomainKindError("the Bar-type bound is a surface statement")
    tol = default_tol(d) if tol is None else tol
    killing_tol = (1e-9 if d.kind == "sphere_ladder" else tol) if killing_tol is None else killing_tol
    sq = [p.eigenvalue**2 if signed else p.eigenvalue for p in spectrum]
    j = int(np.argmin(sq))
    lam1_sq = float(sq[j])
    area = d.area
    int_abs_om = d.integrate(s.omega_norm)
    rhs = 2 * np.pi * d.chi / area - int_abs_om / area
    slack = lam1_sq - rhs
    rep = Report("bar_bound", meta=_meta(d, s))
    rep.scalars.update(lambda1_sq=lam1_sq, lhs=lam1_sq, rhs=rhs, slack=slack, integral_abs_omega=int_abs_om)
    rep.slack_tols = {"slack": tol}
    equality = abs(slack) < EQUALITY_FACTOR * tol
    rep.diagnostics["equality_triggered"] = float(equality)
    if equality:
        p = spectrum[j]
        if signed:
            lams = [p.eigenvalue]
        else:
            r = np.sqrt(max(lam1_sq, 0.0))
            lams = [r, -r]
            if d.kind == "sphere_ladder" and r > 0:
                # a D^2 eigenvector may mix +r and -r; use a D eigenspinor instead
                dp = eigenpairs(assemble_d_sphere(d, s), 2, shift=r)
                p = min(dp, key=lambda q: abs(abs(q.eigenvalue) - r))
                lams = [p.eigenvalue]
        e = emt_mod.compute_emt(d, s, p.eigenspinor)
        kill = min(killing_residual(d, s, p.eigenspinor, lam, e) for lam in lams)
        rep.diagnostics["killing_residual"] = kill
        rep.diagnostics["clifford_equality_residual"] = clifford_equality_residual(s, p.eigenspinor)
        rep.residual_tols.update(killing_residual=killing_tol, clifford_equality_residual=killing_tol)
    return rep


def verify_thm41(d: Domain, s: SpincStructure, spectrum: list[Eigenpair], pair: Eigenpair,
                 tol: float | None = None, rel_equality_tol: float = 1e-5, level=None, signed: bool = False) -> Report:
    """lambda^2 <= (1/vol) int (|T|^2 + S/4 + |Omega|/2) on a closed 3-manifold.

    The bound holds for D-eigenspinors.  With `signed` the pairs are D-eigenpairs
    (see dirac.lattice_d_spectrum); otherwise D^2 eigenpairs, which in a repeated
    level may mix +lambda and -lambda and then violate the bound.
    """
    if d.dim != 3:
        raise DomainKindError("the upper bound is checked on three-dimensional domains")
    tol = default_tol(d) if tol is None else tol
    e = emt_mod.compute_emt(d, s, pair.eigenspinor)
    vol = d.area
    dens = np.where(e.mask, e.T_norm2, 0.0) + d.scalar_curvature / 4 + s.omega_norm / 2
    rhs = d.integrate(dens) / vol
    lam_sq = pair.eigenvalue**2 if signed else pair.eigenvalue
    slack = rhs - lam_sq
    rep = Report("thm41", meta=_meta(d, s, level))
    rep.scalars.update(lhs=lam_sq, rhs=rhs, slack=slack, relative_slack=slack / max(abs(rhs), tol))
    rep.scalars["lambda1_sq"] = min(p.eigenvalue**2 if signed else p.eigenvalue for p in spectrum)
    if signed:
        rep.scalars["lambda"] = pair.eigenvalue
        rep.diagnostics["d_eigen_residual"] = pair.residual
    u = e.u
    rep.diagnostics["density_variation"] = float(np.std(u) / np.mean(u))
    rep.diagnostics["clifford_equality_residual"] = clifford_equality_residual(s, pair.eigenspinor)
    rep.diagnostics["masked_fraction"] = e.masked_fraction
    rep.diagnostics["equality_triggered"] = float(abs(slack) < EQUALITY_FACTOR * tol)
    rep.slack_tols = {"slack": tol}
    rep.meta["rel_equality_tol"] = rel_equality_tol
    return rep


def thm41_equality_report(rep: Report, rel_tol: float = 1e-5) -> Report:
    """Equality-case assertion: relative slack, density variation and Clifford equality below rel_tol."""
    out = Report("thm41_equality", scalars=dict(rep.scalars), diagnostics=dict(rep.diagnostics), meta=dict(rep.meta))
    out.residual_tols = {"relative_slack": rel_tol, "density_variation": rel_tol, "clifford_equality_residual": rel_tol}
    return out


def verify_fk_spin(d: Domain, s: SpincStructure, pair: Eigenpair, tol: float | None = None, signed: bool = True) -> Report:
    """lambda^2 = pi chi / Area + (1/Area) int |T|^2 for a D-eigenspinor of a spin structure."""
    if s.degree != 0:
        raise ValueError("the spin identity needs the trivial structure (degree 0)")
    tol = default_tol(d) if tol is None else tol
    lam_sq = pair.eigenvalue**2 if signed else pair.eigenvalue
    e = emt_mod.compute_emt(d, s, pair.eigenspinor)
    area = d.area
    int_T2 = d.integrate(np.where(e.mask, e.T_norm2, 0.0))
    rhs = np.pi * d.chi / area + int_T2 / area
    int_det = d.integrate(np.where(e.mask, emt_mod.det_TQ(e) - 0.5 * e.Q_norm2, 0.0))
    rep = Report("fk_spin", meta=_meta(d, s))
    rep.scalars.update(lhs=lam_sq, rhs=rhs, residual=lam_sq - rhs, mean_T2=int_T2 / area)
    rep.scalars["integral_det_T"] = int_det
    rep.diagnostics["det_T_minus_pi_chi"] = int_det - np.pi * d.chi
    rep.diagnostics["det_T_minus_pi_chi_half"] = int_det - np.pi * d.chi / 2
    rep.residual_tols = {"residual": tol}
    return rep


def verify_examples(case: str, data: dict, tol: float = 1e-9) -> Report:
    """Example identities on immersed surfaces.

    data: S, H, II (..., 2, 2), optional f, weights, chi, area.
      r3_cmc:      H^2 = pi chi / Area + (1/4 Area) int |II|^2   (integrated)
      s3_cmc:      H^2 + 1/2 = S/4 + |II|^2 / 4                  (pointwise)
      s2r_surface: H^2 = S/4 + |II|^2 / 4 - f^2 / 2              (pointwise)
    """
    II = np.asarray(data["II"], dtype=float)
    II2 = np.sum(II**2, axis=(-2, -1))
    H = np.asarray(data["H"], dtype=float)
    S = np.asarray(data["S"], dtype=float)
    rep = Report(f"example_{case}", meta={"backend": "analytic", "case": case})
    if case == "r3_cmc":
        w = np.asarray(data["weights"], dtype=float)
        area = float(np.sum(w))
        lhs = float(np.sum(w * H**2) / area)
        rhs = np.pi * data["chi"] / area + float(np.sum(w * II2)) / (4 * area)
        rep.scalars.update(lhs=lhs, rhs=rhs, residual=lhs - rhs)
    elif case == "s3_cmc":
        r = H**2 + 0.5 - (S / 4 + II2 / 4)
        rep.scalars.update(lhs=float(np.mean(H**2 + 0.5)), rhs=float(np.mean(S / 4 + II2 / 4)),
                           residual=float(np.max(np.abs(r))))
    elif case == "s2r_surface":
        f = np.asarray(data["f"], dtype=float)
        r = H**2 - (S / 4 + II2 / 4 - f**2 / 2)
        rep.scalars.update(lhs=float(np.mean(H**2)), rhs=float(np.mean(S / 4 + II2 / 4 - f**2 / 2)),
                           residual=float(np.max(np.abs(r))))
    else:
        raise ValueError(f"unknown example case {case!r}")
    rep.residual_tols = {"residual": tol}
    return rep
