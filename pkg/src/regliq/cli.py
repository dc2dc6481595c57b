"""Batch front door: solve, bound, extrapolate, simulate, verify, report.

Every run writes its artifacts plus a manifest under --out.  Numeric
artifacts are byte-identical across reruns with the same config, flags
and seed, independent of --threads; only the manifest's wall-clock
duration varies.  Exit codes: 0 on success/PASS, 1 on validation
failure (with a JSON error object on stderr), 2 when a verdict fails.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import montecarlo
from .errors import RegliqError
from .model import MarketModel, load_model
from .simulate import evolve_state, product_formula_path
from .singular_solver import (
    blowup_profile,
    extrapolate_singular,
    verify_sandwich,
)
from .truncated_solver import LadderResult, TimeGrid, grid_for_model, solve_ladder, solve_truncated

DEFAULT_STEPS = 4096
DEFAULT_LADDER = tuple(float(2**k) for k in range(11))  # 1, 2, 4, ..., 1024
DEFAULT_PATHS = 100_000


@dataclass
class RunManifest:
    """Record of one CLI run: inputs, resolved parameters, outputs."""

    command: str
    config: str
    parameters: dict
    out_dir: str
    artifacts: list[str] = field(default_factory=list)
    duration_s: float = 0.0
    started: float = field(default_factory=time.perf_counter)

    def add(self, path: Path) -> Path:
        self.artifacts.append(path.name)
        return path

    def write(self, out: Path) -> Path:
        target = out / f"manifest_{self.command}.json"
        payload = {
            "command": self.command,
            "config": self.config,
            "parameters": self.parameters,
            "out_dir": self.out_dir,
            "artifacts": self.artifacts,
            "duration_s": self.duration_s,
        }
        target.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        return target


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _parse_levels(text: str) -> tuple[float, ...]:
    try:
        levels = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad ladder spec '{text}'") from exc
    if not levels:
        raise argparse.ArgumentTypeError("ladder spec is empty")
    return levels


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regliq",
        description="Regime-switching liquidation lab: backward solves, "
        "bound envelopes, limit extrapolation and Monte Carlo verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, paths_cmd: bool = False) -> None:
        p.add_argument("--config", required=True, help="model config JSON")
        p.add_argument("--out", default="out", help="artifact directory")
        p.add_argument("--steps", type=int, default=DEFAULT_STEPS)
        p.add_argument(
            "--L",
            type=_parse_levels,
            default=DEFAULT_LADDER,
            help="comma-separated penalization ladder",
        )
        p.add_argument("--refinement", type=float, default=1.35,
                       help="geometric tail ratio of the solver grid")
        p.add_argument("--epsilon-eval", type=float, default=None,
                       help="evaluation cutoff before the horizon (default 1e-4*T)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        if paths_cmd:
            p.add_argument("--paths", type=int, default=DEFAULT_PATHS)
            p.add_argument("--epsilon-sim", type=float, default=None,
                           help="simulation cutoff (default: epsilon-eval)")

    common(sub.add_parser("solve", help="solve the penalization ladder, write CSVs"))
    common(sub.add_parser("bounds", help="bound envelope CSV plus sandwich verdict"))
    common(sub.add_parser("converge", help="limit extrapolation and blow-up profile"))
    p_sim = sub.add_parser("simulate", help="Monte Carlo cost estimate vs prediction")
    common(p_sim, paths_cmd=True)
    p_sim.add_argument("--dump-paths", type=int, nargs="?", const=10, default=0,
                       help="dump the first N scenario paths as CSV")
    p_sim.add_argument("--perturb-xi", type=float, default=1.0,
                       help="scale the market-order rate (1.0 = optimal feedback)")
    p_sim.add_argument("--penalized", type=float, default=None, metavar="L",
                       help="penalized mode at this level instead of singular mode")
    p_ver = sub.add_parser("verify", help="run the full verification suite")
    common(p_ver, paths_cmd=True)
    p_rep = sub.add_parser("report", help="aggregate prior artifacts in --out")
    p_rep.add_argument("--out", default="out")
    return parser


def _setup(args) -> tuple[MarketModel, TimeGrid, float, RunManifest, Path]:
    model = load_model(args.config)
    eps_eval = args.epsilon_eval
    if eps_eval is None:
        eps_eval = 1e-4 * model.horizon
    grid = grid_for_model(
        model,
        args.steps,
        refinement=args.refinement,
        extra=(model.horizon - eps_eval,),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        command=args.command,
        config=str(args.config),
        parameters={
            "steps": args.steps,
            "grid_nodes": grid.n_nodes,
            "levels": list(args.L),
            "refinement": args.refinement,
            "epsilon_eval": eps_eval,
            "seed": args.seed,
            "threads": args.threads,
            **(
                {"paths": args.paths, "epsilon_sim": getattr(args, "epsilon_sim", None)}
                if hasattr(args, "paths")
                else {}
            ),
        },
        out_dir=str(out),
    )
    return model, grid, eps_eval, manifest, out


def _solve_ladder(model: MarketModel, grid: TimeGrid, levels) -> LadderResult:
    return solve_ladder(model, levels, grid)


def cmd_solve(args) -> int:
    model, grid, _, manifest, out = _setup(args)
    ladder = _solve_ladder(model, grid, args.L)
    for sol in ladder.solutions:
        sol.to_csv(manifest.add(out / f"ladder_L{sol.L:g}.csv"))
    return _finish(manifest, out, 0)


def cmd_bounds(args) -> int:
    model, grid, eps_eval, manifest, out = _setup(args)
    ladder = _solve_ladder(model, grid, args.L)
    sing = extrapolate_singular(ladder, eps_eval)
    env = sing.envelope
    path = manifest.add(out / "envelope.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("t,lower,upper\n")
        for k, t in enumerate(env.grid.nodes):
            fh.write(f"{t!r},{float(env.lower[k])!r},{float(env.upper[k])!r}\n")
    report = verify_sandwich(sing)
    _write_json(manifest.add(out / "sandwich_verdict.json"), report.to_dict())
    return _finish(manifest, out, 0 if report.passed else 2)


def cmd_converge(args) -> int:
    model, grid, eps_eval, manifest, out = _setup(args)
    ladder = _solve_ladder(model, grid, args.L)
    sing = extrapolate_singular(ladder, eps_eval)
    sing.to_csv(manifest.add(out / "singular.csv"))
    profile = blowup_profile(sing)
    profile.to_csv(manifest.add(out / "blowup_profile.csv"))
    summary = {
        "passed": profile.passed,
        "empirical_limit": [float(v) for v in profile.empirical_limit],
        "fallback_nodes": int(sing.fallback.sum()),
        "max_ladder_gap": float(sing.ladder_gap.max()),
    }
    _write_json(manifest.add(out / "converge_summary.json"), summary)
    return _finish(manifest, out, 0 if profile.passed else 2)


def cmd_simulate(args) -> int:
    model, grid, eps_eval, manifest, out = _setup(args)
    eps_sim = args.epsilon_sim if args.epsilon_sim is not None else eps_eval
    if args.penalized is not None:
        sol = solve_truncated(model, args.penalized, grid)
        sim_grid = grid
    else:
        ladder = _solve_ladder(model, grid, args.L)
        sol = extrapolate_singular(ladder, eps_eval)
        sim_grid = sol.grid.truncate(model.horizon - eps_sim)
    report = montecarlo.estimate_value(
        model,
        sol,
        n_paths=args.paths,
        seed=args.seed,
        grid=sim_grid,
        threads=args.threads,
        xi_scale=args.perturb_xi,
    )
    _write_json(manifest.add(out / "mc_report.json"), report.to_dict())
    if args.dump_paths:
        path = manifest.add(out / "paths.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("scenario,t,X,xi,regime,cost\n")
            for i in range(min(args.dump_paths, args.paths)):
                regime, fills = montecarlo.draw_scenario(model, args.seed, i)
                sp = evolve_state(
                    model, sol, regime, fills, sim_grid, xi_scale=args.perturb_xi
                )
                for k in range(len(sp.times)):
                    fh.write(
                        f"{i},{float(sp.times[k])!r},{float(sp.X[k])!r},"
                        f"{float(sp.xi[k])!r},{int(sp.regimes[k])},"
                        f"{float(sp.cost_nodes[k])!r}\n"
                    )
    return _finish(manifest, out, 0 if report.passed else 2)


def cmd_verify(args) -> int:
    model, grid, eps_eval, manifest, out = _setup(args)
    checks: list[dict] = []

    def record(name: str, passed: bool, detail: dict | None = None, **extra) -> None:
        merged = dict(detail or {})
        merged.update(extra)
        merged.pop("passed", None)
        checks.append({"name": name, "passed": bool(passed), **merged})

    ladder = _solve_ladder(model, grid, args.L)
    worst_env = max(max(s.envelope_gap()) for s in ladder.solutions)
    record("ladder_envelope", worst_env <= max(1e-6 * (1 + L) for L in ladder.levels),
           worst_gap=worst_env)
    mono = ladder.max_monotonicity_violation()
    record("ladder_monotone", mono <= 1e-9, worst_violation=mono)

    sing = extrapolate_singular(ladder, eps_eval)
    sandwich = verify_sandwich(sing)
    record("singular_sandwich", sandwich.passed, sandwich.to_dict())
    profile = blowup_profile(sing)
    record("blowup_profile", profile.passed,
           empirical_limit=[float(v) for v in profile.empirical_limit])
    sup_deficit = float(np.max(ladder.stacked()[:, :, : sing.grid.n_nodes] - sing.Y))
    record("limit_dominates_ladder", sup_deficit <= 0.0, max_deficit=sup_deficit)

    mid = ladder.solutions[len(ladder.solutions) // 2]
    rep_pen = montecarlo.estimate_value(
        model, mid, n_paths=args.paths, seed=args.seed, threads=args.threads
    )
    record("value_identity_penalized", rep_pen.passed, rep_pen.to_dict())
    eps_sim = args.epsilon_sim if args.epsilon_sim is not None else eps_eval
    sim_grid = sing.grid.truncate(model.horizon - eps_sim)
    rep_sing = montecarlo.estimate_value(
        model, sing, n_paths=args.paths, seed=args.seed, grid=sim_grid,
        threads=args.threads,
    )
    record("value_identity_singular", rep_sing.passed, rep_sing.to_dict())

    n_small = min(args.paths, 1000)
    worst_gap = 0.0
    monotone_ok = True
    for i in range(n_small):
        regime, fills = montecarlo.draw_scenario(model, args.seed, i)
        p1 = evolve_state(model, sing, regime, fills, sim_grid)
        p2 = product_formula_path(model, sing, regime, fills, sim_grid)
        rel = np.max(np.abs(p1.X - p2.X) / np.maximum(np.abs(p1.X), 1e-300))
        worst_gap = max(worst_gap, float(rel))
        if (
            np.any(np.diff(p1.X) > 0.0)
            or p1.X.min() < 0.0
            or p1.X.max() > model.initial_position * (1 + 1e-12)
        ):
            monotone_ok = False
    record("product_formula_gap", worst_gap <= 1e-10, max_rel_gap=worst_gap)
    record("state_monotone", monotone_ok, n_paths=n_small)

    scaling = montecarlo.quadratic_scaling_check(
        model, sing, 2.0, n_paths=n_small, seed=args.seed, grid=sim_grid,
        threads=args.threads,
    )
    record("quadratic_scaling", scaling.passed, scaling.to_dict())
    mart = montecarlo.martingale_check(
        model, sing, n_paths=min(args.paths, 10_000), seed=args.seed,
        grid=sim_grid, threads=args.threads,
    )
    record("martingale_checkpoints", mart.passed, mart.to_dict())
    sub = montecarlo.policy_suboptimality(
        model, sing, 1.5, n_paths=min(args.paths, 10_000), seed=args.seed,
        grid=sim_grid, threads=args.threads,
    )
    record("suboptimality_nonnegative", sub.nonnegative, sub.to_dict())

    passed = all(c["passed"] for c in checks)
    _write_json(
        manifest.add(out / "verify_summary.json"),
        {"passed": passed, "checks": checks},
    )
    return _finish(manifest, out, 0 if passed else 2)


def cmd_report(args) -> int:
    out = Path(args.out)
    manifests = sorted(out.glob("manifest_*.json"))
    runs = []
    verdicts = []
    for mpath in manifests:
        data = json.loads(mpath.read_text(encoding="utf-8"))
        missing = [a for a in data["artifacts"] if not (out / a).exists()]
        entry = {"manifest": mpath.name, "command": data["command"],
                 "artifacts": data["artifacts"], "missing": missing}
        for name in data["artifacts"]:
            if name.endswith(".json"):
                payload = json.loads((out / name).read_text(encoding="utf-8"))
                if "passed" in payload:
                    verdicts.append({"artifact": name, "passed": payload["passed"]})
                elif "verdict" in payload:
                    verdicts.append(
                        {"artifact": name, "passed": payload["verdict"] == "PASS"}
                    )
        runs.append(entry)
    passed = all(v["passed"] for v in verdicts) and all(not r["missing"] for r in runs)
    summary = {"passed": passed, "runs": runs, "verdicts": verdicts}
    _write_json(out / "report.json", summary)
    for run in runs:
        print(f"{run['command']}: {len(run['artifacts'])} artifacts"
              + (f", MISSING {run['missing']}" if run["missing"] else ""))
    for v in verdicts:
        print(f"{v['artifact']}: {'PASS' if v['passed'] else 'FAIL'}")
    print(f"overall: {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 2


def _finish(manifest: RunManifest, out: Path, status: int) -> int:
    manifest.duration_s = time.perf_counter() - manifest.started
    manifest.write(out)
    return status


_HANDLERS = {
    "solve": cmd_solve,
    "bounds": cmd_bounds,
    "converge": cmd_converge,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; map to the validation code.
        return 0 if exc.code in (0, None) else 1
    try:
        return _HANDLERS[args.command](args)
    except RegliqError as exc:
        _emit_error(type(exc).__name__, str(exc), {"command": args.command})
        return 1
    except (OSError, ValueError) as exc:
        _emit_error(type(exc).__name__, str(exc), {"command": args.command})
        return 1


def _emit_error(code: str, message: str, context: dict) -> None:
    sys.stderr.write(
        json.dumps({"code": code, "message": message, "context": context}) + "\n"
    )


if __name__ == "__main__":
    sys.exit(main())
