import json

import pytest

from spinc_emt import cli, verify

SMALL = {"backend": "sphere", "l_max": 6, "degrees": [0, 2], "k": 4,
         "verifiers": ["thm31", "rem32", "det_bound", "bar_bound"]}


def _cfg(tmp_path, doc, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def _tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_spectrum_outputs(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["spectrum", "--config", _cfg(tmp_path, SMALL), "--out", str(out)]) == 0
    rows = (out / "spectrum.csv").read_text().splitlines()
    assert rows[0] == "degree,index,lambda_sq,chirality_plus_fraction"
    assert len(rows) == 1 + 2 * 4
    assert (out / "spectrum_d2.csv").exists()
    assert (out / "spectrum.svg").read_text().startswith("<svg")


def test_verify_then_report(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["verify", "--config", _cfg(tmp_path, SMALL), "--out", str(out)]) == 0
    reps = sorted((out / "reports").glob("*.json"))
    assert reps
    for p in reps:
        r = verify.Report.from_text(p.read_text())
        assert r.passed
    assert cli.main(["report", "--out", str(out)]) == 0
    lines = (out / "aggregate.csv").read_text().splitlines()
    assert len(lines) == 1 + len(reps)
    for name in ("bar_slack.svg", "verdicts.svg"):
        assert (out / name).exists()


def test_torus_verify(tmp_path):
    doc = {"backend": "torus2", "N": 16, "degrees": [1], "k": 3, "levels": [0, 1],
           "resolutions": [8, 16], "verifiers": ["thm31", "bar_bound", "det_bound"]}
    out = tmp_path / "o"
    assert cli.main(["verify", "--config", _cfg(tmp_path, doc), "--out", str(out)]) == 0
    assert (out / "convergence.svg").exists()


def test_immerse(tmp_path):
    out = tmp_path / "o"
    doc = {"cases": ["slice", "clifford_torus"], "patch_N": 9}
    assert cli.main(["immerse", "--config", _cfg(tmp_path, doc), "--out", str(out)]) == 0
    assert (out / "immersion" / "slice.json").exists()
    assert any("defect" in p.name for p in (out / "reports").glob("*.json"))


def test_failing_verdict_exits_one(tmp_path):
    doc = dict(SMALL, degrees=[0], verifiers=["rem32", "thm31"], tol=1e-30)
    out = tmp_path / "o"
    assert cli.main(["verify", "--config", _cfg(tmp_path, doc), "--out", str(out)]) == 1


@pytest.mark.parametrize("doc", [
    {"backend": "sphere", "l_max": 6, "degrees": [1], "verifiers": ["thm31"]},
    {"backend": "sphere", "l_max": 6, "verifiers": ["thm41"]},
    {"backend": "torus2", "N": 2, "verifiers": ["thm31"]},
    {"backend": "torus3", "N": 100, "verifiers": ["thm41"]},
    {"backend": "sphere", "l_max": 6, "verifiers": []},
    {"backend": "sphere", "l_max": 6, "verifiers": ["thm31"], "colour": "red"},
    {"backend": "sphere", "l_max": 6, "verifiers": ["thm31"], "tol": -1},
    [1, 2, 3],
])
def test_invalid_config_exit_two(tmp_path, doc):
    out = tmp_path / "o"
    assert cli.main(["verify", "--config", _cfg(tmp_path, doc), "--out", str(out)]) == 2
    assert not out.exists()


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert cli.main(["verify", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["verify", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_missing_out_dir(tmp_path, monkeypatch):
    monkeypatch.delenv("SPINC_EMT_OUT", raising=False)
    assert cli.main(["verify", "--config", _cfg(tmp_path, SMALL)]) == 2


def test_environment_variables(tmp_path, monkeypatch):
    out = tmp_path / "env"
    monkeypatch.setenv("SPINC_EMT_CONFIG", _cfg(tmp_path, dict(SMALL, degrees=[0], verifiers=["rem32", "thm31"])))
    monkeypatch.setenv("SPINC_EMT_OUT", str(out))
    monkeypatch.setenv("SPINC_EMT_TOL", "1e-30")
    assert cli.main(["verify"]) == 1
    # explicit flag beats the environment
    assert cli.main(["verify", "--tol", "1e-6", "--out", str(tmp_path / "flag")]) == 0


def test_presets_known():
    for name, doc in cli.PRESETS.items():
        cfg = cli.ExperimentConfig.from_dict(doc)
        cmd = "immerse" if name == "immersion_suite" else "verify"
        cfg.validate(cmd)


def test_deterministic_outputs(tmp_path):
    trees = []
    for run in ("a", "b"):
        out = tmp_path / run
        cfg = _cfg(tmp_path, SMALL)
        assert cli.main(["spectrum", "--config", cfg, "--out", str(out), "--seed", "7"]) == 0
        assert cli.main(["verify", "--config", cfg, "--out", str(out), "--seed", "7"]) == 0
        assert cli.main(["report", "--out", str(out)]) == 0
        trees.append(_tree(out))
    assert trees[0] == trees[1]


def test_svg_plot_deterministic():
    s = [("a", [0, 1, 2], [1.0, 0.5, 0.25], True), ("b", [0, 1], [float("nan"), 2.0], False)]
    a = cli.svg_plot(s, "t", "x", "y")
    assert a == cli.svg_plot(s, "t", "x", "y")
    assert a.startswith("<svg") and a.rstrip().endswith("</svg>")
    assert "nan" not in a
