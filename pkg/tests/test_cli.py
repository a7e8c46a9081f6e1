import json

import pytest

from ssolab.cli import main
from ssolab.fixtures import fixture_path

SHORT = ["--no-pow", "--duration", "4", "--window", "1:3.5"]


def run_cli(capsys, *argv):
    rc = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return rc, out, err


def files_of(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def assert_plot_pairs(d):
    svgs = list(d.rglob("*.svg"))
    assert svgs
    for s in svgs:
        assert s.with_suffix(".csv").exists(), s.name


# ---------------------------------------------------------------- analyze

def test_analyze_def_fixture(capsys, tmp_path):
    rc, out, _ = run_cli(capsys, "analyze", "def", fixture_path("def_synthetic.csv"), "--band", "18:20",
                         "--window", "0.5:5.5", "--out", tmp_path)
    assert rc == 0
    assert "def sources: G1,G2" in out
    assert (tmp_path / "def_report.csv").exists()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["sources"] == ["G1", "G2"]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"][:3] == ["ssolab", "analyze", "def"]
    assert len(manifest["input_sha256"]) == 1
    assert_plot_pairs(tmp_path)


def test_analyze_modes_constant_signal(capsys, tmp_path):
    rc, _, err = run_cli(capsys, "analyze", "modes", fixture_path("constant.csv"), "--band", "18:20",
                         "--out", tmp_path)
    assert rc == 3
    assert "no in-band mode" in err


def test_analyze_spectrogram(capsys, tmp_path):
    rc, out, _ = run_cli(capsys, "analyze", "spectrogram", fixture_path("def_synthetic.csv"), "--band", "15:25",
                         "--channel", "G1_p_pu", "--out", tmp_path)
    assert rc == 0
    assert "band peak 19.0" in out
    assert_plot_pairs(tmp_path)


@pytest.mark.parametrize("argv", [
    ["analyze", "def", "missing.csv"],
    ["analyze", "def", str(fixture_path("def_synthetic.csv")), "--band", "25:10"],
    ["analyze", "def", str(fixture_path("def_synthetic.csv")), "--band", "abc"],
    ["sim", "run", "kauai-mini", "--set", "devices.IBR1.pll_kp=-5"],
    ["sim", "run", "kauai-mini", "--set", "devices.IBR9.pll_kp=0.1"],
    ["nonsense"],
])
def test_input_errors_exit_2(capsys, tmp_path, argv):
    rc, _, _ = run_cli(capsys, *argv, *(["--out", tmp_path] if argv[0] != "nonsense" else []))
    assert rc == 2


def test_out_dir_from_environment(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("SSOLAB_OUT", str(tmp_path / "envout"))
    rc, _, _ = run_cli(capsys, "analyze", "def", fixture_path("def_synthetic.csv"), "--band", "18:20",
                       "--window", "0.5:5.5")
    assert rc == 0
    assert (tmp_path / "envout" / "def_report.csv").exists()


# ---------------------------------------------------------------- sim

def test_scr_without_plant(capsys, tmp_path):
    rc, out, _ = run_cli(capsys, "sim", "scr", "kauai-mini", "--bus", "IBR2", "--without", "plantA",
                         "--out", tmp_path)
    assert rc == 0
    assert "2.678" in out
    res = json.loads((tmp_path / "scr.json").read_text())
    assert res["scr"] == pytest.approx(2.678, abs=1e-3)


def test_run_is_reproducible(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(capsys, "sim", "run", "kauai-mini", *SHORT, "--out", a)[0] == 0
    assert run_cli(capsys, "sim", "run", "kauai-mini", *SHORT, "--out", b)[0] == 0
    fa, fb = files_of(a), files_of(b)
    assert fa.keys() == fb.keys()
    assert [k for k in fa if fa[k] != fb[k]] == ["manifest.json"]
    assert (a / "study.json").exists() and (a / "data" / "IBR1.csv").exists()
    assert_plot_pairs(a)


def test_run_divergence_exit_4(capsys, tmp_path):
    rc, _, err = run_cli(capsys, "sim", "run", "kauai-mini", "--no-pow", "--duration", "0.5", "--window",
                         "0.1:0.4", "--set", "devices.IBR1.droop_pf=0.05", "--out", tmp_path)
    assert rc == 4
    assert "diverged at t =" in err


def test_sweep(capsys, tmp_path):
    spec = tmp_path / "sweep.toml"
    spec.write_text('metric = "band_mode_zeta"\n[[param]]\n'
                    'paths = ["devices.IBR1.droop_pf", "devices.IBR2.droop_pf"]\nvalues = [3.0, 4.0]\n')
    rc, _, _ = run_cli(capsys, "sim", "sweep", "kauai-mini", spec, *SHORT, "--out", tmp_path / "o")
    assert rc == 0
    rows = json.loads((tmp_path / "o" / "sweep.json").read_text())["rows"]
    assert [r["values"] for r in rows] == [[3.0], [4.0]]
    assert rows[1]["metric"] > rows[0]["metric"]
    assert_plot_pairs(tmp_path / "o")


def test_mitigate(capsys, tmp_path):
    rc, out, _ = run_cli(capsys, "sim", "mitigate", "kauai-mini", "--method", "method2", *SHORT,
                         "--out", tmp_path)
    assert rc == 0
    res = json.loads((tmp_path / "mitigation.json").read_text())
    assert res["method"] == "method2_pll"
    assert res["deltas"]["zeta"] > 0
    assert_plot_pairs(tmp_path)
