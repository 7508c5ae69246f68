import json
import subprocess
import sys

import pytest

from fraclane._jsonio import read_json, write_json
from fraclane.cli import main

PARAMS = {"N": 1, "s": 0.25, "p": 1.2, "q": 1.4, "rho": 0.01, "tau": 0.01}


def config(path, **kw):
    doc = {"params": dict(PARAMS), "resolution": 64, "modes": 64, "linking_n": 10,
           "geometry_samples": 200, "samples": 2000, "stages": ["minimal"]}
    doc.update(kw)
    write_json(path, doc)
    return str(path)


@pytest.fixture(scope="module")
def minimal_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = config(root / "cfg.json")
    assert main(["solve-minimal", "--config", cfg, "--out", str(root / "run"),
                 "--green-cache", str(root / "g.bin")]) == 0
    return root


def test_solve_minimal_writes_outputs(minimal_run):
    run = minimal_run / "run"
    assert (run / "minimal_u.csv").exists() and (minimal_run / "g.bin").exists()
    assert read_json(run / "manifest.json")["stages"]["minimal"]["status"] == "completed"


def test_check_stability_and_second(minimal_run, tmp_path, capsys):
    run = str(minimal_run / "run")
    assert main(["check-stability", "--solution", run, "--modes", "64",
                 "--out", str(tmp_path / "stab")]) == 0
    assert json.loads(capsys.readouterr().out)["stable"]
    assert main(["solve-second", "--minimal", run, "--n", "10", "--out", str(tmp_path / "sec"),
                 "--trace"]) == 0
    assert json.loads(capsys.readouterr().out)["accepted"]
    assert (tmp_path / "sec" / "trajectory.json").exists()
    assert (tmp_path / "sec" / "second_u.csv").exists()


def test_verify_kernel_json_lines(minimal_run, tmp_path, capsys):
    cfg = str(minimal_run / "cfg.json")
    assert main(["verify-kernel", "--config", cfg, "--estimates", "TwoSided,ThreeG",
                 "--samples", "2000", "--refine", "0", "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert sorted(json.loads(x)["estimate_id"] for x in lines) == ["ThreeG", "TwoSided"]
    assert main(["verify-kernel", "--config", cfg, "--estimates", "Nope"]) == 2


def test_scan_threshold(minimal_run, capsys):
    cfg = str(minimal_run / "cfg.json")
    assert main(["scan-threshold", "--config", cfg, "--points", "12"]) == 0
    out = json.loads(capsys.readouterr().out)
    lo, hi = out["bracket"]
    assert 0 < lo < hi <= 1.1 * lo


def test_compare_golden_exit_codes(minimal_run, tmp_path):
    run = minimal_run / "run"
    assert main(["compare-golden", str(run), str(run)]) == 0
    bad = tmp_path / "bad"
    bad.mkdir()
    for p in run.iterdir():
        (bad / p.name).write_bytes(p.read_bytes())
    doc = read_json(bad / "minimal.json")
    doc["iterations"] += 1
    write_json(bad / "minimal.json", doc)
    assert main(["compare-golden", str(run), str(bad)]) == 3
    doc["unexpected"] = 0
    write_json(bad / "minimal.json", doc)
    assert main(["compare-golden", str(run), str(bad)]) == 2


def test_report(minimal_run, tmp_path, capsys):
    assert main(["report", str(minimal_run / "run"), "--out", str(tmp_path / "r.md")]) == 0
    assert capsys.readouterr().out == (tmp_path / "r.md").read_text()


def test_exit_codes(tmp_path):
    bad = config(tmp_path / "bad.json", stages=["second"])
    assert main(["run", "--config", bad, "--out", str(tmp_path / "o")]) == 2
    assert main(["solve-minimal", "--config", str(tmp_path / "missing.json"),
                 "--out", str(tmp_path / "o")]) == 4
    diverge = config(tmp_path / "div.json", params={**PARAMS, "rho": 1.0, "tau": 1.0})
    assert main(["solve-minimal", "--config", diverge, "--out", str(tmp_path / "d")]) == 3
    assert main(["check-stability", "--solution", str(tmp_path / "nowhere")]) == 4


def test_thread_cap_env(tmp_path, monkeypatch):
    cfg = config(tmp_path / "c.json", stages=[])
    monkeypatch.setenv("FRACLANE_THREADS", "x")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    monkeypatch.setenv("FRACLANE_THREADS", "1")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0


def test_module_entry_point(tmp_path):
    cfg = config(tmp_path / "c.json", stages=[])
    proc = subprocess.run([sys.executable, "-m", "fraclane", "run", "--config", cfg,
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout) == {}
