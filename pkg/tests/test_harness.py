import json
import math

import numpy as np
import pytest

from fraclane import harness
from fraclane._jsonio import dumps, read_grid_csv, read_json, write_grid_csv, write_json
from fraclane.harness import (ConfigError, ExperimentConfig, SchemaMismatch, compare_golden,
                              load_manifest, load_minimal, render_report, run_pipeline)

PARAMS = {"N": 1, "s": 0.25, "p": 1.2, "q": 1.4, "rho": 0.01, "tau": 0.01}


def small(stages, **kw):
    base = dict(params=dict(PARAMS), resolution=64, stages=list(stages), modes=64,
                linking_n=10, geometry_samples=200, samples=2000)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def golden(tmp_path_factory):
    out = tmp_path_factory.mktemp("golden")
    manifest = run_pipeline(small(["minimal", "stability", "second"]), out)
    assert manifest.ok
    return out


# --- serialization ------------------------------------------------------------

def test_floats_roundtrip_with_17_digits(tmp_path):
    rng = np.random.default_rng(0)
    vals = rng.standard_normal(200) * 10.0 ** rng.integers(-30, 30, 200)
    write_json(tmp_path / "a.json", {"x": vals, "q": 1.4})
    back = read_json(tmp_path / "a.json")
    assert np.array_equal(np.array(back["x"]), vals)
    assert back["q"] == 1.4
    assert "1.3999999999999999" in (tmp_path / "a.json").read_text()


def test_nonfinite_and_key_order():
    text = dumps({"b": math.nan, "a": math.inf, "c": [1, 2.0, True, None]})
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    back = json.loads(text)
    assert math.isnan(back["b"]) and back["a"] == math.inf
    assert back["c"] == [1, 2.0, True, None]
    with pytest.raises(TypeError):
        dumps({"x": object()})


def test_atomic_write_leaves_no_temporary(tmp_path):
    write_json(tmp_path / "sub" / "a.json", {"k": 1})
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["a.json"]


def test_grid_csv_roundtrip(tmp_path):
    nodes = np.linspace(-1, 1, 9)[:, None]
    vals = np.sin(nodes[:, 0]) / 3
    write_grid_csv(tmp_path / "f.csv", nodes, {"value": vals})
    cols = read_grid_csv(tmp_path / "f.csv")
    assert set(cols) == {"node", "x", "value"}
    assert np.array_equal(cols["value"], vals)


# --- configuration ------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError, match="requires"):
        small(["second"])
    with pytest.raises(ConfigError, match="unknown stages"):
        small(["bogus"])
    with pytest.raises(ConfigError, match="missing"):
        ExperimentConfig(params={"N": 1})
    with pytest.raises(ConfigError):
        small([], resolution=4)
    with pytest.raises(ConfigError):
        small([], mu={"kind": "gaussian"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**small([]).to_dict(), "extra": 1})
    with pytest.raises(ConfigError):
        small([], params={**PARAMS, "s": 0.7})


def test_config_roundtrip_and_digest(tmp_path):
    cfg = small(["minimal"])
    write_json(tmp_path / "c.json", cfg.to_dict())
    back = ExperimentConfig.load(tmp_path / "c.json")
    assert back == cfg and back.digest() == cfg.digest()
    assert small(["minimal"], seed=1).digest() != cfg.digest()


def test_error_codes():
    assert harness.error_code(FileNotFoundError()) == harness.EXIT_IO
    assert harness.error_code(ArithmeticError()) == harness.EXIT_NUMERIC
    assert harness.error_code(np.linalg.LinAlgError()) == harness.EXIT_NUMERIC
    assert harness.error_code(ConfigError()) == harness.EXIT_VALIDATION
    assert harness.error_code(KeyError()) == harness.EXIT_VALIDATION


# --- pipeline -----------------------------------------------------------------

def test_empty_stage_list(tmp_path):
    manifest = run_pipeline(small([]), tmp_path)
    assert manifest.stages == {} and manifest.ok and manifest.exit_code == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["config.json", "manifest.json"]


def test_minimal_only_run(tmp_path):
    manifest = run_pipeline(small(["minimal"]), tmp_path)
    assert manifest.stages["minimal"]["status"] == "completed"
    assert set(manifest.outputs["minimal"]) == {"minimal.json", "minimal_u.csv", "minimal_v.csv"}
    u = read_grid_csv(tmp_path / "minimal_u.csv")
    assert len(u["value"]) == 64 and np.all(u["value"] > 0)
    assert load_manifest(tmp_path).config_hash == small(["minimal"]).digest()
    ctx, rep = load_minimal(tmp_path)
    assert rep.converged and np.array_equal(rep.u.values, u["value"])


def test_divergent_minimal_skips_dependents(tmp_path):
    cfg = small(["minimal", "stability", "second"], params={**PARAMS, "rho": 1.0, "tau": 1.0})
    manifest = run_pipeline(cfg, tmp_path)
    assert manifest.stages["minimal"]["code"] == harness.EXIT_NUMERIC
    assert manifest.stages["stability"]["status"] == "skipped"
    assert manifest.stages["second"]["status"] == "skipped"
    assert not manifest.ok and manifest.exit_code == harness.EXIT_NUMERIC


def test_swapped_labels_are_restored(tmp_path):
    plain = tmp_path / "plain"
    swapped = tmp_path / "swapped"
    run_pipeline(small(["minimal"], params={**PARAMS, "tau": 0.02}), plain)
    run_pipeline(small(["minimal"], params={**PARAMS, "p": 1.4, "q": 1.2, "rho": 0.02}), swapped)
    assert read_json(swapped / "minimal.json")["labelled_swapped"]
    a = read_grid_csv(plain / "minimal_u.csv")["value"]
    b = read_grid_csv(swapped / "minimal_v.csv")["value"]
    assert np.array_equal(a, b)


def test_load_minimal_requires_stage_output(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_minimal(tmp_path)


def test_full_run_outputs(golden):
    names = {p.name for p in golden.iterdir()}
    assert {"minimal.json", "stability.json", "critical_point.json", "second.json",
            "second_u.csv", "second_v.csv", "manifest.json"} <= names
    second = read_json(golden / "second.json")
    assert second["converged"] and second["certificate"]["strict_dominance"]
    assert read_json(golden / "stability.json")["stable"]


def test_self_comparison_has_no_drift(golden):
    rep = compare_golden(golden, golden)
    assert rep["ok"] and rep["drifts"] == [] and "second_u.csv" in rep["files"]


def test_perturbed_golden_is_localized(golden, tmp_path):
    bad = tmp_path / "bad"
    bad.mkdir()
    for p in golden.iterdir():
        (bad / p.name).write_bytes(p.read_bytes())
    doc = read_json(bad / "minimal.json")
    doc["norms"]["u_L1"] *= 1.01
    write_json(bad / "minimal.json", doc)
    rep = compare_golden(golden, bad)
    assert not rep["ok"] and len(rep["drifts"]) == 1
    d = rep["drifts"][0]
    assert d["file"] == "minimal.json" and d["path"] == "/norms/u_L1"
    assert d["rel"] == pytest.approx(0.01 / 1.01, rel=1e-6)


def test_schema_mismatch(golden, tmp_path):
    bad = tmp_path / "bad"
    bad.mkdir()
    for p in golden.iterdir():
        (bad / p.name).write_bytes(p.read_bytes())
    doc = read_json(bad / "minimal.json")
    doc["extra"] = 1
    write_json(bad / "minimal.json", doc)
    with pytest.raises(SchemaMismatch):
        compare_golden(golden, bad)
    other = tmp_path / "other"
    run_pipeline(small(["minimal"], resolution=32), other)
    with pytest.raises(SchemaMismatch):
        compare_golden(other, golden)


def test_determinism(golden, tmp_path):
    run_pipeline(small(["minimal", "stability", "second"]), tmp_path)
    for p in golden.iterdir():
        if p.name == "manifest.json":
            continue
        assert (tmp_path / p.name).read_bytes() == p.read_bytes(), p.name
    a, b = read_json(tmp_path / "manifest.json"), read_json(golden / "manifest.json")
    a.pop("wall_times"), b.pop("wall_times")
    assert a == b


def test_grid_doubling_drift_within_rate_budget(tmp_path):
    norms = {}
    for n in (64, 128, 256):
        run_pipeline(small(["minimal"], resolution=n), tmp_path / str(n))
        norms[n] = read_json(tmp_path / str(n) / "minimal.json")["norms"]
    for key in norms[64]:
        d1 = abs(norms[128][key] - norms[64][key]) / norms[128][key]
        d2 = abs(norms[256][key] - norms[128][key]) / norms[256][key]
        # first-order convergence budget: the drift at least shrinks by 0.6 per doubling
        assert d2 <= 0.6 * d1 and d2 < 0.02, key


def test_report_rendering(golden, tmp_path):
    md = render_report(golden, tmp_path / "report.md")
    assert md == (tmp_path / "report.md").read_text()
    assert md.index("minimal") < md.index("second")
    prof = read_grid_csv(golden / "profiles.csv")
    assert {"u_minimal", "v_minimal", "u_second", "v_second"} <= set(prof)
