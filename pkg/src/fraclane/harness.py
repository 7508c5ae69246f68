"""Experiment configuration, staged pipeline, persistence and golden comparison.

A run directory holds one JSON report per stage, CSV tables of grid functions,
the Green matrix in binary form and ``manifest.json``, which is written last
and atomically.  All JSON is produced by :mod:`fraclane._jsonio`, so identical
inputs give byte-identical reports; wall times live only in the manifest.
"""
from __future__ import annotations

import hashlib
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._jsonio import dumps, read_grid_csv, read_json, write_grid_csv, write_json
from .core import (GridFunction, Measure, build_grid, dirac, lebesgue, make_params, power_density,
                   zero_measure)
from .green import assemble_green, load_green, save_green, spectral_decompose
from .kernel_verify import run_all
from .linking import (assemble_second_solution, build_problem, calibrate_geometry, cerami_monitor,
                      find_critical_point, verify_geometry)
from .minimal import SolveReport, check_leub, picard_iterate, solution_norms, threshold_scan
from .stability import apriori_check, check_stability

STAGES = ("kernel-verify", "minimal", "stability", "second")
REQUIRES = {"stability": ("minimal",), "second": ("minimal",)}
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
ESTIMATE_FILES = ("kernel_report.json",)


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class SchemaMismatch(ValueError):
    """Golden and run outputs do not have the same structure."""


def error_code(exc: BaseException) -> int:
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (ArithmeticError, np.linalg.LinAlgError, RuntimeError)):
        return EXIT_NUMERIC
    if isinstance(exc, (ValueError, TypeError, KeyError)):
        return EXIT_VALIDATION
    return EXIT_NUMERIC


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    params: dict
    mu: dict = field(default_factory=lambda: {"kind": "lebesgue"})
    nu: dict = field(default_factory=lambda: {"kind": "lebesgue"})
    radius: float = 1.0
    resolution: int = 256
    refine: int | None = None
    stages: list = field(default_factory=list)
    seed: int = 0
    tol: float = 1e-10
    max_iter: int = 20_000
    samples: int = 10_000
    modes: int = 200
    linking_n: int = 40
    geometry_samples: int = 1000

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        missing = {"N", "s", "p", "q"} - set(self.params)
        if missing:
            raise ConfigError(f"params missing {sorted(missing)}")
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown stages {unknown}")
        for stage in self.stages:
            for dep in REQUIRES.get(stage, ()):
                if dep not in self.stages:
                    raise ConfigError(f"stage {stage!r} requires {dep!r}")
        if self.resolution < 8:
            raise ConfigError("resolution must be at least 8")
        if not self.tol > 0 or self.max_iter < 1:
            raise ConfigError("tol must be positive and max_iter at least 1")
        for m in (self.mu, self.nu):
            if m.get("kind") not in ("lebesgue", "power", "dirac", "zero"):
                raise ConfigError(f"unknown measure kind {m.get('kind')!r}")
        try:
            self.system()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def system(self):
        P = self.params
        return make_params(P["N"], P["s"], P["p"], P["q"], P.get("rho", 0.0), P.get("tau", 0.0))

    def ordered_stages(self) -> list:
        return [s for s in STAGES if s in self.stages]

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(dumps(self.to_dict()).encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(read_json(path))


def reference_config(stages=("minimal",)) -> ExperimentConfig:
    """N=1, s=0.25, p=1.2, q=1.4, normalized Lebesgue data, n=256 (kernel checks refined to 512)."""
    return ExperimentConfig(params={"N": 1, "s": 0.25, "p": 1.2, "q": 1.4, "rho": 0.01, "tau": 0.01},
                            refine=512, stages=list(stages))


def build_measure(grid, spec: dict, s: float) -> Measure:
    """Measure from its declarative description; ``normalize`` (default true) gives unit delta^s mass."""
    kind = spec.get("kind")
    norm = s if spec.get("normalize", True) else None
    if kind == "zero":
        return zero_measure(grid)
    if kind == "lebesgue":
        return lebesgue(grid, norm)
    if kind == "power":
        return power_density(grid, float(spec["exponent"]), norm)
    if kind == "dirac":
        point = spec.get("point", [0.0] * grid.dim)
        return dirac(grid, point, float(spec.get("mass", 1.0)), norm)
    raise ConfigError(f"unknown measure kind {kind!r}")


# ---------------------------------------------------------------------------
# stage context
# ---------------------------------------------------------------------------

class Context:
    """Shared objects of one configuration: grid, Green matrix, measures (canonical order)."""

    def __init__(self, config: ExperimentConfig, green_cache=None):
        self.config = config
        self.green_cache = None if green_cache is None else Path(green_cache)
        self.params = config.system()
        self.grid = build_grid(self.params.N, config.radius, config.resolution)
        self._G = None
        self._spec = None
        mu = build_measure(self.grid, config.mu, self.params.s)
        nu = build_measure(self.grid, config.nu, self.params.s)
        # the canonical form has p <= q; exchanging the equations exchanges the data
        self.mu, self.nu = (nu, mu) if self.params.swapped else (mu, nu)

    @property
    def G(self):
        if self._G is None:
            cache = self.green_cache
            if cache is not None and cache.exists():
                G = load_green(cache, self.grid)
                if abs(G.s - self.params.s) > 1e-15:
                    raise ValueError("cached Green matrix has a different s")
                self._G = G
            else:
                self._G = assemble_green(self.grid, self.params)
                if cache is not None:
                    save_green(self._G, cache)
        return self._G

    @property
    def spec(self):
        if self._spec is None:
            self._spec = spectral_decompose(self.G, min(self.config.modes, self.grid.resolution))
        return self._spec

    def labelled(self, u, v):
        """(u, v) in the user's labelling of the equations."""
        return (v, u) if self.params.swapped else (u, v)


def _write_pair(out: Path, stem: str, grid, u, v) -> list:
    """One CSV per component: node index, coordinates, value."""
    return [write_grid_csv(out / f"{stem}_u.csv", grid.nodes, {"value": u}),
            write_grid_csv(out / f"{stem}_v.csv", grid.nodes, {"value": v})]


def _read_pair(run: Path, stem: str):
    return read_grid_csv(run / f"{stem}_u.csv")["value"], read_grid_csv(run / f"{stem}_v.csv")["value"]


def stage_kernel(ctx: Context, out: Path) -> list:
    G = ctx.G
    refined = None
    if ctx.config.refine:
        g2 = build_grid(ctx.params.N, ctx.config.radius, ctx.config.refine)
        refined = assemble_green(g2, ctx.params)
    reports = run_all(G, ctx.params, refined, ctx.config.samples, ctx.config.seed)
    save_green(G, out / "green.bin")
    payload = {"n": G.grid.resolution, "assembly_error": G.assembly_error,
               "reports": [asdict(r) for r in reports]}
    return [write_json(out / "kernel_report.json", payload), out / "green.bin"]


def solve_minimal(ctx: Context) -> SolveReport:
    cfg = ctx.config
    rep = picard_iterate(ctx.G, ctx.mu, ctx.nu, ctx.params, cfg.tol, cfg.max_iter)
    if not rep.converged:
        raise ArithmeticError(f"minimal solution: iteration {rep.status} after {rep.iterations} steps")
    check_leub(rep, ctx.G, ctx.mu, ctx.nu)
    return rep


def stage_minimal(ctx: Context, out: Path, state: dict) -> list:
    rep = solve_minimal(ctx)
    state["minimal"] = rep
    u, v = ctx.labelled(rep.u.values, rep.v.values)
    payload = rep.to_dict()
    payload["labelled_swapped"] = ctx.params.swapped
    return [write_json(out / "minimal.json", payload)] + _write_pair(out, "minimal", ctx.grid, u, v)


def stage_stability(ctx: Context, out: Path, state: dict) -> list:
    rep = state["minimal"]
    st = check_stability(rep, ctx.spec)
    state["stability"] = st
    payload = st.to_dict()
    if ctx.params.p > 1 and ctx.params.q > 1:
        payload["apriori"] = apriori_check(rep, ctx.spec, ctx.G, ctx.mu, ctx.nu)
    return [write_json(out / "stability.json", payload)]


def solve_second(ctx: Context, minimal: SolveReport, n: int, seed: int = 0):
    """Geometry, saddle search and assembled second solution."""
    problem = build_problem(minimal, ctx.spec, n)
    geom = calibrate_geometry(problem, ctx.config.geometry_samples, seed)
    georep = verify_geometry(geom, problem, ctx.config.geometry_samples, seed)
    if not georep.accepted:
        raise ArithmeticError(f"linking geometry rejected: {georep.violations}")
    cp = find_critical_point(problem, geom, seed=seed)
    if not cp.accepted:
        raise ArithmeticError(f"no critical point accepted (grad {cp.grad_norm:.3e})")
    second, cert = assemble_second_solution(cp, minimal, ctx.G, ctx.mu, ctx.nu)
    return problem, geom, georep, cp, second, cert


def stage_second(ctx: Context, out: Path, state: dict, trace: bool = False) -> list:
    minimal = state["minimal"]
    problem, geom, georep, cp, second, cert = solve_second(ctx, minimal, ctx.config.linking_n,
                                                            ctx.config.seed)
    cp_payload = cp.to_dict()
    cp_payload["geometry"] = geom.to_dict()
    cp_payload["geometry_check"] = georep.to_dict()
    cp_payload["terms"] = problem.terms.to_dict()
    cp_payload["cerami"] = cerami_monitor(cp.z, problem)
    files = [write_json(out / "critical_point.json", cp_payload)]
    payload = second.to_dict()
    payload["certificate"] = cert
    files.append(write_json(out / "second.json", payload))
    u, v = ctx.labelled(second.u.values, second.v.values)
    files += _write_pair(out, "second", ctx.grid, u, v)
    if trace:
        files.append(write_json(out / "trajectory.json",
                                {"points": [np.asarray(z).tolist() for z in cp.trajectory]}))
    return files


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    config_hash: str
    version: str
    stages: dict
    wall_times: dict
    outputs: dict

    @property
    def ok(self) -> bool:
        return all(v["status"] == "completed" for v in self.stages.values())

    @property
    def exit_code(self) -> int:
        codes = [v.get("code", 0) for v in self.stages.values() if v["status"] == "failed"]
        return codes[0] if codes else EXIT_OK

    def to_dict(self) -> dict:
        return asdict(self)


def run_pipeline(config: ExperimentConfig, out_dir, trace: bool = False,
                 green_cache=None) -> RunManifest:
    """Run the configured stages in dependency order and write the manifest last."""
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", config.to_dict())
    ctx = Context(config, green_cache)
    state: dict = {}
    stages, walls, outputs = {}, {}, {}
    failed = False
    runners = {"kernel-verify": lambda: stage_kernel(ctx, out),
               "minimal": lambda: stage_minimal(ctx, out, state),
               "stability": lambda: stage_stability(ctx, out, state),
               "second": lambda: stage_second(ctx, out, state, trace)}
    for name in config.ordered_stages():
        if failed and name in REQUIRES:
            stages[name] = {"status": "skipped", "code": 0, "reason": "dependency failed"}
            continue
        t0 = time.perf_counter()
        try:
            files = runners[name]()
        except Exception as exc:  # recorded with a machine-readable code
            stages[name] = {"status": "failed", "code": error_code(exc),
                            "error": f"{type(exc).__name__}: {exc}"}
            if name == "minimal":
                failed = True
        else:
            stages[name] = {"status": "completed", "code": 0}
            outputs[name] = [Path(p).name for p in files]
        walls[name] = time.perf_counter() - t0
    manifest = RunManifest(config.digest(), __version__, stages, walls, outputs)
    write_json(out / "manifest.json", manifest.to_dict())
    return manifest


def load_manifest(run_dir) -> RunManifest:
    return RunManifest(**read_json(Path(run_dir) / "manifest.json"))


def load_minimal(run_dir, green_cache=None) -> tuple[Context, SolveReport]:
    """Rebuild the context and the converged minimal report of a run directory."""
    run = Path(run_dir)
    if not (run / "minimal.json").exists():
        raise FileNotFoundError(f"{run} holds no minimal solution")
    config = ExperimentConfig.load(run / "config.json")
    if green_cache is None and (run / "green.bin").exists():
        green_cache = run / "green.bin"
    ctx = Context(config, green_cache)
    meta = read_json(run / "minimal.json")
    u, v = _read_pair(run, "minimal")
    if ctx.params.swapped:
        u, v = v, u
    g = ctx.grid
    rep = SolveReport(meta["iterations"], meta["final_residual"], meta["monotone"],
                      meta["converged"], GridFunction(g, u), GridFunction(g, v),
                      solution_norms(u, v, ctx.G, ctx.params), meta.get("sup_bound_K"),
                      meta.get("status", "converged"), meta.get("clamped", 0), ctx.params)
    return ctx, rep


def scan(config: ExperimentConfig, grid_points: int = 12, start: float = 0.01) -> dict:
    ctx = Context(config)
    res = threshold_scan(ctx.G, ctx.mu, ctx.nu, ctx.params, grid_points, start,
                         tol=config.tol, max_iter=config.max_iter)
    return res.to_dict()


# ---------------------------------------------------------------------------
# golden comparison
# ---------------------------------------------------------------------------

def _compare(a, b, path, tol, drifts):
    if isinstance(b, dict):
        if not isinstance(a, dict) or set(a) != set(b):
            raise SchemaMismatch(f"key mismatch at {path or '/'}")
        for k in sorted(b):
            _compare(a[k], b[k], f"{path}/{k}", tol, drifts)
    elif isinstance(b, list):
        if not isinstance(a, list) or len(a) != len(b):
            raise SchemaMismatch(f"list shape mismatch at {path}")
        for i, (x, y) in enumerate(zip(a, b)):
            _compare(x, y, f"{path}[{i}]", tol, drifts)
    elif isinstance(b, bool) or b is None or isinstance(b, str):
        if a != b:
            if type(a) is not type(b):
                raise SchemaMismatch(f"type mismatch at {path}")
            drifts.append({"path": path, "golden": b, "actual": a, "rel": math.inf})
    elif isinstance(b, (int, float)):
        if isinstance(a, bool) or not isinstance(a, (int, float)):
            raise SchemaMismatch(f"type mismatch at {path}")
        if a == b or (math.isnan(a) and math.isnan(b)):
            return
        rel = abs(a - b) / max(abs(b), 1e-300)
        if rel > tol:
            drifts.append({"path": path, "golden": b, "actual": a, "rel": rel})
    else:
        raise SchemaMismatch(f"unsupported value at {path}")


def compare_golden(run_dir, golden_dir, rel_tol: float = 1e-6, estimate_tol: float = 0.10) -> dict:
    """Field-by-field comparison of every JSON and CSV output of a golden run.

    Estimate constants (kernel report) use ``estimate_tol``; everything else
    ``rel_tol``.  Wall times and the manifest's timing block are ignored.
    """
    run, gold = Path(run_dir), Path(golden_dir)
    files = sorted(p.name for p in gold.iterdir() if p.suffix in (".json", ".csv")
                   and not p.name.endswith(".bin.json"))
    drifts = []
    for name in files:
        if not (run / name).exists():
            raise SchemaMismatch(f"{name} missing from the run")
        tol = estimate_tol if name in ESTIMATE_FILES else rel_tol
        found: list = []
        if name.endswith(".json"):
            a, b = read_json(run / name), read_json(gold / name)
            if name == "manifest.json":
                a = {k: v for k, v in a.items() if k != "wall_times"}
                b = {k: v for k, v in b.items() if k != "wall_times"}
            _compare(a, b, "", tol, found)
        else:
            a, b = read_grid_csv(run / name), read_grid_csv(gold / name)
            if set(a) != set(b) or any(len(a[k]) != len(b[k]) for k in b):
                raise SchemaMismatch(f"{name}: column layout differs")
            _compare({k: a[k].tolist() for k in a}, {k: b[k].tolist() for k in b}, "", tol, found)
        for d in found:
            d["file"] = name
        drifts.extend(found)
    return {"files": files, "drifts": drifts, "ok": not drifts,
            "rel_tol": rel_tol, "estimate_tol": estimate_tol}


# ---------------------------------------------------------------------------
# markdown report
# ---------------------------------------------------------------------------

def render_report(run_dir, out_path=None) -> str:
    """Markdown summary of a run directory, plus ``profiles.csv`` with plot data."""
    run = Path(run_dir)
    manifest = read_json(run / "manifest.json")
    config = read_json(run / "config.json")
    lines = ["# Run summary", "", f"- config hash: `{manifest['config_hash'][:16]}`",
             f"- version: {manifest['version']}",
             f"- parameters: " + ", ".join(f"{k}={v}" for k, v in sorted(config["params"].items())),
             f"- resolution: {config['resolution']}", "", "## Stages", "",
             "| stage | status | wall time (s) |", "|---|---|---|"]
    for name in [s for s in STAGES if s in manifest["stages"]]:
        st = manifest["stages"][name]
        wall = manifest["wall_times"].get(name, float("nan"))
        lines.append(f"| {name} | {st['status']} | {wall:.2f} |")
    if (run / "kernel_report.json").exists():
        kr = read_json(run / "kernel_report.json")
        lines += ["", "## Kernel estimates", "", "| estimate | constant | stable |", "|---|---|---|"]
        for r in kr["reports"]:
            lines.append(f"| {r['estimate_id']} | {r['extracted_constant']:.4g} | {r['stable']} |")
    if (run / "minimal.json").exists():
        m = read_json(run / "minimal.json")
        lines += ["", "## Minimal solution", "",
                  f"- iterations: {m['iterations']}, residual: {m['final_residual']:.3e}, "
                  f"monotone: {m['monotone']}, K: {m['sup_bound_K']}"]
    if (run / "stability.json").exists():
        st = read_json(run / "stability.json")
        lines += ["", "## Stability", "", f"- gap_u = {st['gap_u']:.6f}, gap_v = {st['gap_v']:.6f}, "
                  f"stable: {st['stable']}"]
    if (run / "second.json").exists():
        s2 = read_json(run / "second.json")
        cp = read_json(run / "critical_point.json")
        lines += ["", "## Second solution", "",
                  f"- level: {cp['energy']:.8f} (window [{cp['geometry']['sigma']:.4g}, "
                  f"{cp['geometry']['R1'] ** 2:.4g}])",
                  f"- residual: {s2['final_residual']:.3e}, separation: "
                  f"{s2['certificate']['separation']:.4g}"]
    columns = {}
    nodes = None
    for stem in ("minimal", "second"):
        if (run / f"{stem}_u.csv").exists():
            cols = read_grid_csv(run / f"{stem}_u.csv")
            nodes = np.column_stack([cols[c] for c in ("x", "y") if c in cols])
            columns[f"u_{stem}"], columns[f"v_{stem}"] = _read_pair(run, stem)
    if columns:
        write_grid_csv(run / "profiles.csv", nodes, columns)
        lines += ["", "Plot data: `profiles.csv` (one row per node)."]
    text = "\n".join(lines) + "\n"
    if out_path is not None:
        Path(out_path).write_text(text, encoding="utf-8")
    return text
