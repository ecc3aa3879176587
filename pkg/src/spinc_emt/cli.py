"""Batch front end: spectrum, verify, immerse, report.

Every flag may also come from the environment as SPINC_EMT_<FLAG> (CONFIG, OUT, SEED,
TOL); an explicit flag wins.  Exit codes: 0 all verdicts pass, 1 a verdict failed or
a solver error occurred, 2 invalid configuration.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import dirac, immersion, verify
from .domains import build_sphere_ladder, build_torus2, build_torus3
from .spinc import SpincObstructionError, make_spinc

log = logging.getLogger("spinc_emt")

ENV_PREFIX = "SPINC_EMT_"
BACKENDS = ("sphere", "torus2", "torus3")
VERIFIERS = {
    "thm31": ("sphere", "torus2", "torus3"),
    "rem32": ("sphere",),
    "det_bound": ("sphere", "torus2"),
    "bar_bound": ("sphere", "torus2"),
    "fk_spin": ("sphere",),
    "thm41": ("torus3",),
}
CASES = ("slice", "great_cylinder", "latitude_cylinder", "tilted_graph", "clifford_torus")
MAX_POINTS = 200_000


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    backend: str = "sphere"
    L: float = 2 * np.pi
    N: int | None = None
    l_max: int | None = None
    degrees: list = field(default_factory=lambda: [0])
    k: int = 6
    levels: list = field(default_factory=lambda: [0])
    resolutions: list = field(default_factory=list)
    verifiers: list = field(default_factory=list)
    cases: list = field(default_factory=list)
    defect_eps: float = 1e-3
    patch_N: int = 17
    tol: float | None = None
    seed: int = 0
    out: str | None = None
    input: str | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**doc)

    def validate(self, command: str) -> None:
        if command in ("spectrum", "verify"):
            if self.backend not in BACKENDS:
                raise ConfigError(f"backend must be one of {BACKENDS}")
            if self.backend == "sphere":
                if not isinstance(self.l_max, int) or not 1 <= self.l_max <= 64:
                    raise ConfigError("sphere backend needs integer l_max in [1, 64]")
                bad = [d for d in self.degrees if int(d) % 2]
                if bad:
                    raise ConfigError(f"odd degrees {bad} are obstructed on the sphere")
            else:
                if not isinstance(self.N, int) or self.N < 4:
                    raise ConfigError(f"{self.backend} backend needs integer N >= 4")
                dim = 2 if self.backend == "torus2" else 3
                if self.N**dim > MAX_POINTS:
                    raise ConfigError(f"N = {self.N} exceeds the supported size")
            if not self.degrees or not all(isinstance(d, int) for d in self.degrees):
                raise ConfigError("degrees must be a non-empty list of integers")
            if not isinstance(self.k, int) or self.k < 1:
                raise ConfigError("k must be a positive integer")
            if not all(isinstance(j, int) and 0 <= j < self.k for j in self.levels):
                raise ConfigError("levels must be integers in [0, k)")
            if not all(isinstance(n, int) and n >= 4 for n in self.resolutions):
                raise ConfigError("resolutions must be integers >= 4")
        if command == "verify":
            if not self.verifiers:
                raise ConfigError("verify needs a non-empty verifiers list")
            for v in self.verifiers:
                if v not in VERIFIERS:
                    raise ConfigError(f"unknown verifier {v!r}; known: {sorted(VERIFIERS)}")
                if self.backend not in VERIFIERS[v]:
                    raise ConfigError(f"verifier {v} does not run on the {self.backend} backend")
        if command == "immerse":
            if not self.cases:
                raise ConfigError("immerse needs a non-empty cases list")
            for c in self.cases:
                if c not in CASES:
                    raise ConfigError(f"unknown case {c!r}; known: {CASES}")
            if not isinstance(self.patch_N, int) or self.patch_N < 5:
                raise ConfigError("patch_N must be an integer >= 5")
        if self.tol is not None and not (isinstance(self.tol, (int, float)) and self.tol > 0):
            raise ConfigError("tol must be positive")


PRESETS = {
    "canonical_sphere": {"backend": "sphere", "l_max": 16, "degrees": [2], "k": 6,
                         "verifiers": ["thm31", "rem32", "det_bound", "bar_bound"]},
    "spin_sphere": {"backend": "sphere", "l_max": 16, "degrees": [0], "k": 6,
                    "verifiers": ["thm31", "rem32", "det_bound", "bar_bound", "fk_spin"]},
    "torus_sweep": {"backend": "torus2", "N": 32, "degrees": [-3, -2, -1, 0, 1, 2, 3], "k": 10,
                    "verifiers": ["bar_bound"]},
    "torus3_flux": {"backend": "torus3", "N": 16, "degrees": [1], "k": 6, "levels": [0, 1, 2, 3, 4, 5],
                    "verifiers": ["thm41"]},
    "immersion_suite": {"cases": list(CASES)},
}


def load_config(path: str | None, overrides: dict) -> ExperimentConfig:
    if path is None:
        doc = {}
    elif path in PRESETS:
        doc = dict(PRESETS[path])
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    cfg = ExperimentConfig.from_dict(doc)
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    return cfg


# ---------------------------------------------------------------------------
# deterministic SVG


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def svg_plot(series, title: str, xlabel: str, ylabel: str, width=640, height=400) -> str:
    """Scatter/line plot; series = [(label, xs, ys, connect)]. Fixed viewBox and decimals."""
    xs = np.concatenate([np.asarray(s[1], float) for s in series]) if series else np.zeros(0)
    ys = np.concatenate([np.asarray(s[2], float) for s in series]) if series else np.zeros(0)
    ok = np.isfinite(xs) & np.isfinite(ys)
    x0, x1 = (float(xs[ok].min()), float(xs[ok].max())) if ok.any() else (0.0, 1.0)
    y0, y1 = (float(ys[ok].min()), float(ys[ok].max())) if ok.any() else (0.0, 1.0)
    if x1 - x0 < 1e-12:
        x0, x1 = x0 - 1, x1 + 1
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 1, y1 + 1
    m = 60
    sx = lambda x: m + (x - x0) / (x1 - x0) * (width - 2 * m)
    sy = lambda y: height - m - (y - y0) / (y1 - y0) * (height - 2 * m)
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}" width="{width}" height="{height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="16">{title}</text>',
        f'<line x1="{m}" y1="{height - m}" x2="{width - m}" y2="{height - m}" stroke="black"/>',
        f'<line x1="{m}" y1="{m}" x2="{m}" y2="{height - m}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 15}" text-anchor="middle" font-size="13">{xlabel}</text>',
        f'<text x="15" y="{height / 2:.1f}" text-anchor="middle" font-size="13" transform="rotate(-90 15 {height / 2:.1f})">{ylabel}</text>',
    ]
    for t in np.linspace(0, 1, 5):
        xv, yv = x0 + t * (x1 - x0), y0 + t * (y1 - y0)
        out.append(f'<text x="{_fmt(sx(xv))}" y="{height - m + 16}" text-anchor="middle" font-size="10">{xv:.4g}</text>')
        out.append(f'<text x="{m - 6}" y="{_fmt(sy(yv) + 3)}" text-anchor="end" font-size="10">{yv:.4g}</text>')
    for n, (label, sxs, sys_, connect) in enumerate(series):
        c = colors[n % len(colors)]
        pts = [(sx(float(a)), sy(float(b))) for a, b in zip(sxs, sys_) if np.isfinite(a) and np.isfinite(b)]
        if connect and len(pts) > 1:
            out.append(f'<polyline fill="none" stroke="{c}" points="' + " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in pts) + '"/>')
        for a, b in pts:
            out.append(f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="3" fill="{c}"/>')
        out.append(f'<text x="{width - m + 5}" y="{m + 14 * n}" font-size="10" fill="{c}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# runners


def _domain(cfg: ExperimentConfig, N=None):
    if cfg.backend == "sphere":
        return build_sphere_ladder(cfg.l_max)
    N = cfg.N if N is None else N
    if cfg.backend == "torus2":
        return build_torus2(cfg.L, cfg.L, N)
    return build_torus3(cfg.L, cfg.L, cfg.L, N)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def _d2_pairs(d, s, k, seed):
    n = 2 * d.npoints if d.kind != "sphere_ladder" else None
    kk = k if n is None else min(k, n - 2)
    return dirac.eigenpairs(dirac.assemble_dsq(d, s), kk, seed=seed)


def run_spectrum(cfg: ExperimentConfig, out: Path) -> int:
    d = _domain(cfg)
    rows = []
    for deg in cfg.degrees:
        s = make_spinc(d, deg)
        pairs = _d2_pairs(d, s, cfg.k, cfg.seed)
        _write(out / f"spectrum_d{deg}.csv", dirac.spectrum_csv(pairs))
        rows += [(deg, i, p.eigenvalue, p.eigenspinor.chirality_plus_fraction()) for i, p in enumerate(pairs)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["degree", "index", "lambda_sq", "chirality_plus_fraction"])
    for deg, i, lam, ch in rows:
        w.writerow([deg, i, f"{lam:.12e}", f"{ch:.12e}"])
    _write(out / "spectrum.csv", buf.getvalue())
    ser = [("lambda^2", [r[0] for r in rows], [r[2] for r in rows], False)]
    _write(out / "spectrum.svg", svg_plot(ser, f"D^2 spectrum ({cfg.backend})", "degree", "lambda^2"))
    return 0


def _reports_for_degree(cfg, d, s, tol):
    deg = s.degree
    reps = []
    need_d2 = {"thm31", "bar_bound", "det_bound"} & set(cfg.verifiers)
    pairs = _d2_pairs(d, s, cfg.k, cfg.seed) if need_d2 else []
    dpairs = []
    if d.kind == "sphere_ladder" and {"rem32", "det_bound", "fk_spin"} & set(cfg.verifiers):
        dpairs = dirac.eigenpairs(dirac.assemble_d_sphere(d, s), cfg.k, shift=0.0)
        dpairs.sort(key=lambda p: (abs(p.eigenvalue), p.eigenvalue))
    for v in cfg.verifiers:
        if v == "thm31":
            reps += [verify.verify_thm31(d, s, pairs[j], tol, level=j) for j in cfg.levels if j < len(pairs)]
        elif v == "rem32":
            reps += [verify.verify_rem32(d, s, dpairs[j], tol, level=j) for j in cfg.levels]
        elif v == "det_bound":
            if d.kind == "sphere_ladder":
                reps.append(verify.verify_det_bound(d, s, dpairs[0], tol, level=0))
            elif abs(pairs[0].eigenvalue) < 10 * verify.default_tol(d):
                # kernel states of D^2 are D-eigenspinors
                reps.append(verify.verify_det_bound(d, s, pairs[0], tol, level=0))
        elif v == "bar_bound":
            reps.append(verify.verify_bar_bound(d, s, pairs, tol=tol))
        elif v == "fk_spin" and deg == 0:
            reps.append(verify.verify_fk_spin(d, s, dpairs[0], tol))
        elif v == "thm41":
            dsp = dirac.lattice_d_spectrum(d, s, cfg.k, cfg.seed)
            reps += [verify.verify_thm41(d, s, dsp, dsp[j], tol, level=j, signed=True) for j in cfg.levels if j < len(dsp)]
    return reps


def _report_filename(r: verify.Report) -> str:
    m = r.meta
    parts = [r.name]
    for key in ("case", "surface", "degree", "N", "level", "channel"):
        if key in m:
            parts.append(f"{key}{m[key]}")
    return "_".join(str(p) for p in parts).replace("-", "m") + ".json"


def write_reports(reports, out: Path) -> None:
    for r in reports:
        _write(out / "reports" / _report_filename(r), r.to_text())
    _write(out / "aggregate.csv", verify.aggregate_csv(reports))
    plot_reports(reports, out)


def plot_reports(reports, out: Path) -> list[str]:
    if not reports:
        log.warning("no reports to plot")
        return []
    written = []
    bar = [r for r in reports if r.name == "bar_bound"]
    if bar:
        xs = [r.meta["degree"] for r in bar]
        ser = [("slack", xs, [r.scalars["slack"] for r in bar], True)]
        _write(out / "bar_slack.svg", svg_plot(ser, "Bar-type bound slack", "degree", "slack"))
        written.append("bar_slack.svg")
    conv = [r for r in reports if r.name == "thm31_convergence"]
    if conv:
        ser = []
        for r in conv:
            Ns = r.meta["resolutions"]
            vals = [r.norms[f"residual_l2_N{n}"] for n in Ns]
            ser.append((f"d={r.meta['degree']} k={r.meta['level']}", np.log2(Ns), np.log10(vals), True))
        _write(out / "convergence.svg", svg_plot(ser, "identity residual vs resolution", "log2 N", "log10 L2 residual"))
        written.append("convergence.svg")
    xs = list(range(len(reports)))
    ser = [("pass", [x for x, r in zip(xs, reports) if r.passed], [1.0] * sum(r.passed for r in reports), False),
           ("fail", [x for x, r in zip(xs, reports) if not r.passed], [0.0] * sum(not r.passed for r in reports), False)]
    _write(out / "verdicts.svg", svg_plot(ser, "verdicts", "report", "pass"))
    written.append("verdicts.svg")
    return written


def _convergence_reports(cfg, tol):
    reps = []
    for deg in cfg.degrees:
        res = {j: [] for j in cfg.levels}
        for N in cfg.resolutions:
            d = _domain(cfg, N)
            s = make_spinc(d, deg)
            pairs = _d2_pairs(d, s, cfg.k, cfg.seed)
            for j in cfg.levels:
                res[j].append(verify.verify_thm31(d, s, pairs[j], tol).norms["residual_l2"])
        for j, vals in res.items():
            r = verify.Report("thm31_convergence", meta={"backend": cfg.backend, "degree": deg, "level": j,
                                                        "resolutions": list(cfg.resolutions)})
            for N, v in zip(cfg.resolutions, vals):
                r.norms[f"residual_l2_N{N}"] = v
            orders = verify.convergence_orders(vals, cfg.resolutions[1] / cfg.resolutions[0]) if len(vals) > 1 else []
            for n, o in enumerate(orders):
                r.scalars[f"order_{n}"] = o
            reps.append(r)
    return reps


def run_verify(cfg: ExperimentConfig, out: Path) -> int:
    d = _domain(cfg)
    reps = []
    for deg in cfg.degrees:
        reps += _reports_for_degree(cfg, d, make_spinc(d, deg), cfg.tol)
    if cfg.resolutions and "thm31" in cfg.verifiers:
        reps += _convergence_reports(cfg, cfg.tol)
    write_reports(reps, out)
    for r in reps:
        log.info("%s %s", _report_filename(r), "pass" if r.passed else "fail")
    return 0 if all(r.passed for r in reps) else 1


def defect_report(data, channel: str, eps: float, clean_tol: float = 1e-6) -> verify.Report:
    """Inject a defect into one Daniel equation: it must show in that channel only."""
    base = immersion.daniel_check(immersion.inject_defect(data, channel, eps))
    r = verify.Report("defect", meta={"backend": "patch2", "case": data.name, "channel": channel})
    for ch in immersion.CHANNELS:
        v = base.norms[f"{ch}_linf"]
        if ch == channel:
            r.scalars["detected_margin"] = v - 0.5 * eps
            r.slack_tols["detected_margin"] = 0.0
        else:
            r.norms[f"{ch}_linf"] = v
            r.residual_tols[f"{ch}_linf"] = clean_tol
    return r


def immersion_reports(cfg: ExperimentConfig) -> tuple[list, dict]:
    reps, exports = [], {}
    gens = {"slice": immersion.slice_patch, "great_cylinder": immersion.great_cylinder,
            "latitude_cylinder": immersion.latitude_cylinder, "tilted_graph": immersion.tilted_graph}
    for case in cfg.cases:
        if case == "clifford_torus":
            reps.append(immersion.restriction_forward_check("s3", N=cfg.patch_N))
            ex = verify.verify_examples("s3_cmc", immersion.example_data("clifford_torus"))
            ex.meta["surface"] = case
            reps.append(ex)
            continue
        data = gens[case](N=cfg.patch_N, M=cfg.patch_N)
        exports[case] = immersion.to_text(data)
        reps.append(immersion.daniel_check(data))
        reps += [defect_report(data, ch, cfg.defect_eps) for ch in immersion.CHANNELS]
        reps.append(immersion.restriction_forward_check("s2r", data))
        fld = immersion.integrate_gks(data, np.array([1.0, 0.3 + 0.2j]))
        g = verify.Report("gks", meta={"backend": "patch2", "case": case, "N": cfg.patch_N})
        g.norms.update(constraint_linf=fld.constraint_linf, plaquette_linf=fld.curvature_linf,
                       theta_linf=float(np.max(immersion.theta_check(fld))))
        g.residual_tols = {"theta_linf": max(1e-12, 10 * fld.constraint_linf**2)}
        reps.append(g)
        ex = verify.verify_examples("s2r_surface", immersion.example_data(case, N=cfg.patch_N, M=cfg.patch_N))
        ex.meta["surface"] = case
        reps.append(ex)
    return reps, exports


def run_immerse(cfg: ExperimentConfig, out: Path) -> int:
    reps, exports = immersion_reports(cfg)
    for case, text in exports.items():
        _write(out / "immersion" / f"{case}.json", text)
    write_reports(reps, out)
    return 0 if all(r.passed for r in reps) else 1


def run_report(cfg: ExperimentConfig, out: Path) -> int:
    src = Path(cfg.input) if cfg.input else out
    files = sorted((src / "reports").glob("*.json"))
    reps = [verify.Report.from_text(p.read_text(encoding="utf-8")) for p in files]
    if not reps:
        log.warning("no reports found under %s", src / "reports")
        return 0
    _write(out / "aggregate.csv", verify.aggregate_csv(reps))
    plot_reports(reps, out)
    return 0 if all(r.passed for r in reps) else 1


RUNNERS = {"spectrum": run_spectrum, "verify": run_verify, "immerse": run_immerse, "report": run_report}


def _env(name, cast=str):
    v = os.environ.get(ENV_PREFIX + name)
    return None if v is None else cast(v)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spinc-emt", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(RUNNERS))
    p.add_argument("--config", help="JSON config file or preset name: " + ", ".join(sorted(PRESETS)))
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = args.config or _env("CONFIG")
        seed = args.seed if args.seed is not None else _env("SEED", int)
        tol = args.tol if args.tol is not None else _env("TOL", float)
        out_flag = args.out or _env("OUT")
        cfg = load_config(config, {"seed": seed, "tol": tol, "out": out_flag})
        cfg.validate(args.command)
        if cfg.out is None:
            raise ConfigError("no output directory: pass --out, set SPINC_EMT_OUT or 'out' in the config")
    except (ConfigError, TypeError, ValueError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    try:
        return RUNNERS[args.command](cfg, out)
    except (SpincObstructionError, dirac.SolverError, verify.DomainKindError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
