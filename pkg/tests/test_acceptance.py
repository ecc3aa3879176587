"""Acceptance criteria, each at its stated tolerance.  One pass/fail line per criterion
is printed and collected into the terminal summary."""
import json
import time

import numpy as np

from spinc_emt import cli, dirac, emt, verify
from spinc_emt import immersion as im
from spinc_emt.domains import build_sphere_ladder, build_torus2, build_torus3
from spinc_emt.spinc import make_spinc

TWO_PI = 2 * np.pi


def _sphere_d_pair(d, s, target):
    dp = dirac.eigenpairs(dirac.assemble_d_sphere(d, s), 2, shift=target)
    return min(dp, key=lambda p: abs(p.eigenvalue - target))


def test_c1_canonical_sphere(criterion):
    t0 = time.perf_counter()
    d = build_sphere_ladder(16)
    s = make_spinc(d, 2)
    pairs = dirac.eigenpairs(dirac.assemble_dsq(d, s), 4)
    r = verify.verify_bar_bound(d, s, pairs, killing_tol=1e-10)
    dt = time.perf_counter() - t0
    lam1 = r.scalars["lambda1_sq"]
    ok = (abs(lam1) < 1e-10 and abs(r.scalars["rhs"]) < 1e-12 and r.diagnostics["equality_triggered"] == 1.0
          and r.diagnostics["killing_residual"] < 1e-10 and r.passed and dt < 5.0)
    criterion(1, ok, f"lambda1^2={lam1:.2e} rhs={r.scalars['rhs']:.2e} "
                     f"parallel residual={r.diagnostics['killing_residual']:.2e} runtime={dt:.2f}s")
    assert ok


def test_c2_spin_sphere(criterion):
    d = build_sphere_ladder(16)
    s = make_spinc(d, 0)
    pairs = dirac.eigenpairs(dirac.assemble_dsq(d, s), 4)
    bar = verify.verify_bar_bound(d, s, pairs)
    fk = verify.verify_fk_spin(d, s, _sphere_d_pair(d, s, 1.0))
    lam1 = bar.scalars["lambda1_sq"]
    ok = (abs(lam1 - 1) < 1e-10 and bar.diagnostics["equality_triggered"] == 1.0
          and bar.diagnostics["killing_residual"] < 1e-9 and abs(fk.scalars["residual"]) < 1e-9
          and abs(fk.scalars["mean_T2"] - 0.5) < 1e-9)
    criterion(2, ok, f"lambda1^2-1={lam1 - 1:.2e} Killing={bar.diagnostics['killing_residual']:.2e} "
                     f"fk residual={fk.scalars['residual']:.2e} mean|T|^2={fk.scalars['mean_T2']:.12f}")
    assert ok


def test_c3_torus_index_sweep(criterion):
    details, ok = [], True
    for deg in (1, 2, 3):
        d = build_torus2(TWO_PI, TWO_PI, 32)
        s = make_spinc(d, deg)
        pairs = dirac.eigenpairs(dirac.assemble_dsq(d, s), deg + 4)
        thr = 1e-3 * TWO_PI * deg / d.area
        kernel = sum(abs(p.eigenvalue) < thr for p in pairs)
        r = verify.verify_bar_bound(d, s, pairs)
        target = TWO_PI * deg / d.area
        rel = abs(r.scalars["slack"] - target) / target
        ok &= kernel == deg and rel <= 0.02
        details.append(f"d={deg}: ker={kernel} slack={r.scalars['slack']:.4f} target={target:.4f} rel.err={rel:.2%}")
    criterion(3, ok, "; ".join(details))
    assert ok


def test_c4_identity_convergence(criterion):
    t0 = time.perf_counter()
    res = []
    for N in (16, 32, 64):
        d = build_torus2(TWO_PI, TWO_PI, N)
        s = make_spinc(d, 1)
        pairs = dirac.eigenpairs(dirac.assemble_dsq(d, s), 6)
        res.append([verify.verify_thm31(d, s, p).norms["residual_l2"] for p in pairs])
    res = np.array(res)
    dt = time.perf_counter() - t0
    orders = np.log2(res[:-1] / res[1:])
    ok = bool(np.all(res[-1] < 1e-3) and np.all(orders >= 1.8) and dt < 60)
    criterion(4, ok, f"max L2 at N=64={res[-1].max():.2e} min order={orders.min():.2f} runtime={dt:.1f}s")
    assert ok


def test_c5_determinant_bound(criterion):
    d = build_sphere_ladder(16)
    s2 = make_spinc(d, 2)
    canon = verify.verify_det_bound(d, s2, _sphere_d_pair(d, s2, 0.0))
    s0 = make_spinc(d, 0)
    fk = verify.verify_fk_spin(d, s0, _sphere_d_pair(d, s0, 1.0))
    t = build_torus2(TWO_PI, TWO_PI, 32)
    st = make_spinc(t, 0)
    tp = dirac.eigenpairs(dirac.assemble_dsq(t, st), 1)[0]
    tor = verify.verify_det_bound(t, st, tp)
    det_T = fk.scalars["integral_det_T"]
    ok = (abs(canon.scalars["lhs"]) < 1e-8 and abs(canon.scalars["rhs"]) < 1e-8
          and canon.diagnostics["omega_constant_sign"] == 1.0 and abs(det_T - np.pi) < 1e-6
          and abs(tor.scalars["lhs"]) < verify.default_tol(t) and abs(tor.scalars["rhs"]) < 1e-12)
    criterion(5, ok, f"canonical lhs={canon.scalars['lhs']:.1e} rhs={canon.scalars['rhs']:.1e}; "
                     f"spin int det T - pi={det_T - np.pi:.1e} (pi chi gap {fk.diagnostics['det_T_minus_pi_chi']:.4f}); "
                     f"torus lhs={tor.scalars['lhs']:.1e} rhs={tor.scalars['rhs']:.1e}")
    assert ok


def test_c6_upper_bound_three_torus(criterion):
    t0 = time.perf_counter()
    d = build_torus3(TWO_PI, TWO_PI, TWO_PI, 24)
    s = make_spinc(d, 1, axis=2)
    dsp = dirac.lattice_d_spectrum(d, s, 6)
    reps = [verify.verify_thm41(d, s, dsp, p, signed=True) for p in dsp]
    eq = verify.thm41_equality_report(reps[0], rel_tol=1e-5)
    excited = [r.scalars["slack"] for r in reps[1:]]
    dt = time.perf_counter() - t0
    ok = eq.passed and all(x > 0 for x in excited) and dt < 120
    criterion(6, ok, f"ground rel.slack={reps[0].scalars['relative_slack']:.3e} "
                     f"density var={reps[0].diagnostics['density_variation']:.3f} "
                     f"Clifford={reps[0].diagnostics['clifford_equality_residual']:.1e}; "
                     f"excited slacks min={min(excited):.4f} runtime={dt:.1f}s")
    assert ok


def test_c7_immersion_suite(criterion):
    surfaces = {"slice": im.slice_patch(), "great_cylinder": im.great_cylinder(),
                "latitude_cylinder": im.latitude_cylinder()}
    ok, worst_clean, worst_cross = True, 0.0, 0.0
    for data in surfaces.values():
        base = im.daniel_check(data)
        worst_clean = max(worst_clean, *base.norms.values())
        ok &= all(v < 1e-9 for v in base.norms.values())
        for ch in im.CHANNELS:
            r = im.daniel_check(im.inject_defect(data, ch, 1e-3)).norms
            ok &= r[f"{ch}_linf"] > 1e-9
            cross = max(v for k, v in r.items() if k != f"{ch}_linf")
            worst_cross = max(worst_cross, cross)
            ok &= cross < 1e-6
    fld = im.integrate_gks(surfaces["slice"], np.array([1.0, 0.3 + 0.2j]))
    ok &= fld.constraint_linf < 1e-8
    theta = 0.0
    for data in surfaces.values():
        f = im.integrate_gks(data, np.array([0.7, 0.2 - 0.5j]))
        held = f.constraint < 1e-8
        theta = max(theta, float(np.max(im.theta_check(f)[held])))
        ok &= bool(held.any())
    ok &= theta < 1e-12
    criterion(7, ok, f"Daniel max={worst_clean:.1e} defect cross-talk max={worst_cross:.1e} "
                     f"slice constraint={fld.constraint_linf:.1e} |theta|^2 max={theta:.1e}")
    assert ok


def test_c8_example_identities(criterion):
    cases = [("r3_cmc", "r3_sphere"), ("s3_cmc", "clifford_torus"), ("s2r_surface", "slice"),
             ("s2r_surface", "latitude_cylinder")]
    parts, ok = [], True
    for case, surf in cases:
        r = verify.verify_examples(case, im.example_data(surf), tol=1e-9)
        ok &= r.passed
        parts.append(f"{surf}: {r.scalars['lhs']:.6f}={r.scalars['rhs']:.6f} (res {abs(r.scalars['residual']):.1e})")
    criterion(8, ok, "; ".join(parts))
    assert ok


def _suite(tmp, out):
    cfgs = {
        "sphere": {"backend": "sphere", "l_max": 10, "degrees": [-2, 0, 2], "k": 4, "levels": [0, 1],
                   "verifiers": ["thm31", "rem32", "det_bound", "bar_bound", "fk_spin"]},
        "torus": {"backend": "torus2", "N": 16, "degrees": [0, 1, 2], "k": 4, "levels": [0, 1],
                  "resolutions": [8, 16], "verifiers": ["thm31", "det_bound", "bar_bound"]},
        "torus3": {"backend": "torus3", "N": 8, "degrees": [1], "k": 3, "levels": [0, 1, 2], "verifiers": ["thm41"]},
    }
    codes = []
    for name, doc in cfgs.items():
        p = tmp / f"{name}.json"
        p.write_text(json.dumps(doc))
        codes.append(cli.main(["spectrum", "--config", str(p), "--out", str(out / name), "--seed", "11"]))
        codes.append(cli.main(["verify", "--config", str(p), "--out", str(out / name), "--seed", "11"]))
    codes.append(cli.main(["immerse", "--config", "immersion_suite", "--out", str(out / "immersion"), "--seed", "11"]))
    return codes


def test_c9_determinism(tmp_path, criterion):
    trees = []
    for run in ("a", "b"):
        out = tmp_path / run
        _suite(tmp_path, out)
        trees.append({str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
    kinds = {k.rsplit(".", 1)[-1] for k in trees[0]}
    same = trees[0] == trees[1]
    ok = same and {"csv", "json", "svg"} <= kinds
    criterion(9, ok, f"{len(trees[0])} files ({', '.join(sorted(kinds))}) byte-identical={same}")
    assert ok


def test_fields_export_deterministic(tmp_path):
    d = build_torus2(TWO_PI, TWO_PI, 16)
    s = make_spinc(d, 1)
    p = dirac.eigenpairs(dirac.assemble_dsq(d, s), 1)[0]
    e = emt.compute_emt(d, s, p.eigenspinor)
    assert emt.fields_binary(e) == emt.fields_binary(emt.compute_emt(d, s, p.eigenspinor))
