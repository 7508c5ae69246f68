"""Command-line interface: ``fraclane <subcommand>`` or ``python -m fraclane``.

Exit codes: 0 success, 2 validation error, 3 numeric failure, 4 I/O error.
``FRACLANE_THREADS`` caps the BLAS thread pool.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import nullcontext
from dataclasses import asdict
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import harness
from ._jsonio import dumps, write_json
from .kernel_verify import ESTIMATE_IDS, run_all


def _load_config(path, stages=None) -> harness.ExperimentConfig:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if stages is not None:
        data["stages"] = list(stages)
    return harness.ExperimentConfig.from_dict(data)


def _emit(obj) -> None:
    sys.stdout.write(dumps(obj))


def cmd_verify_kernel(args) -> int:
    cfg = _load_config(args.config, [])
    ctx = harness.Context(cfg, args.green_cache)
    refined = None
    refine = args.refine if args.refine is not None else cfg.refine
    if refine:
        from .core import build_grid
        from .green import assemble_green
        refined = assemble_green(build_grid(ctx.params.N, cfg.radius, refine), ctx.params)
    wanted = None if args.estimates == "all" else set(args.estimates.split(","))
    if wanted is not None and not wanted <= set(ESTIMATE_IDS):
        raise ValueError(f"unknown estimates {sorted(wanted - set(ESTIMATE_IDS))}")
    reports = run_all(ctx.G, ctx.params, refined, args.samples, args.seed)
    lines = [r.to_json() for r in reports if wanted is None or r.estimate_id in wanted]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "kernel_estimates.jsonl").write_text(text, encoding="utf-8")
    return 0


def cmd_solve_minimal(args) -> int:
    cfg = _load_config(args.config, ["minimal"])
    manifest = harness.run_pipeline(cfg, args.out, green_cache=args.green_cache)
    _emit(manifest.stages)
    return manifest.exit_code


def cmd_check_stability(args) -> int:
    ctx, rep = harness.load_minimal(args.solution, args.green_cache)
    ctx.config.modes = args.modes
    state = {"minimal": rep}
    out = Path(args.out) if args.out else Path(args.solution)
    files = harness.stage_stability(ctx, out, state)
    _emit(state["stability"].to_dict())
    return 0 if files else 3


def cmd_solve_second(args) -> int:
    ctx, rep = harness.load_minimal(args.minimal, args.green_cache)
    if args.config:
        cfg = _load_config(args.config, [])
        if cfg.system() != ctx.params:
            raise ValueError("config parameters differ from the minimal run")
    ctx.config.linking_n = args.n
    ctx.config.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.stage_second(ctx, out, {"minimal": rep}, trace=args.trace)
    from ._jsonio import read_json
    cp = read_json(out / "critical_point.json")
    _emit({k: cp[k] for k in ("energy", "grad_norm", "n", "accepted")})
    return 0


def cmd_scan_threshold(args) -> int:
    cfg = _load_config(args.config, [])
    result = harness.scan(cfg, args.points, args.start)
    if args.out:
        write_json(Path(args.out) / "threshold.json", result)
    _emit(result)
    return 0


def cmd_compare_golden(args) -> int:
    result = harness.compare_golden(args.run, args.golden, args.rel_tol, args.estimate_tol)
    _emit(result)
    return 0 if result["ok"] else 3


def cmd_report(args) -> int:
    text = harness.render_report(args.run, args.out)
    sys.stdout.write(text)
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args.config, args.stages.split(",") if args.stages is not None else None)
    manifest = harness.run_pipeline(cfg, args.out, trace=args.trace, green_cache=args.green_cache)
    _emit(asdict(manifest)["stages"])
    return manifest.exit_code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fraclane", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--green-cache", default=None, help="binary Green matrix to reuse or create")

    p = sub.add_parser("verify-kernel", help="estimate reports as JSON lines")
    common(p)
    p.add_argument("--estimates", default="all", help="'all' or comma-separated estimate ids")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--refine", type=int, default=None, help="resolution of the refined grid (default: config refine, 0 disables)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify_kernel)

    p = sub.add_parser("solve-minimal", help="minimal solution by monotone iteration")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve_minimal)

    p = sub.add_parser("check-stability", help="stability gaps of a stored minimal solution")
    common(p, config=False)
    p.add_argument("--solution", required=True, help="run directory of solve-minimal")
    p.add_argument("--modes", type=int, default=200)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_check_stability)

    p = sub.add_parser("solve-second", help="linking critical point and second solution")
    common(p, config=False)
    p.add_argument("--config", default=None)
    p.add_argument("--minimal", required=True, help="run directory of solve-minimal")
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", action="store_true", help="also write the search trajectory")
    p.set_defaults(func=cmd_solve_second)

    p = sub.add_parser("scan-threshold", help="bracket the divergence threshold in rho = tau")
    common(p)
    p.add_argument("--points", type=int, default=12)
    p.add_argument("--start", type=float, default=0.01)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_scan_threshold)

    p = sub.add_parser("compare-golden", help="field-by-field drift against a golden run")
    p.add_argument("run")
    p.add_argument("golden")
    p.add_argument("--rel-tol", type=float, default=1e-6)
    p.add_argument("--estimate-tol", type=float, default=0.10)
    p.set_defaults(func=cmd_compare_golden)

    p = sub.add_parser("report", help="markdown summary and plot CSV of a run directory")
    p.add_argument("run")
    p.add_argument("--out", default=None, help="markdown file (stdout only if omitted)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="run the configured stages and write a manifest")
    common(p)
    p.add_argument("--stages", default=None, help="comma-separated override of the config stages")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", action="store_true")
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get("FRACLANE_THREADS")
    try:
        limit = threadpool_limits(int(threads)) if threads else nullcontext()
    except ValueError:
        print("fraclane: FRACLANE_THREADS must be an integer", file=sys.stderr)
        return harness.EXIT_VALIDATION
    try:
        with limit:
            return args.func(args)
    except Exception as exc:
        code = harness.error_code(exc)
        print(f"fraclane: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
