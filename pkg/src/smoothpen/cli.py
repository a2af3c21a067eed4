"""Batch runner: one JSON plan in, ``report.json`` and ``data.csv`` out.

Exit codes: 0 success, 2 invalid plan, 3 experiment failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import diagnostics as dg
from .expr import ExprError
from .penalty import PenaltyConfig, PenaltyConfigError
from .problem import (
    CORPUS,
    DistanceApproximationError,
    Problem,
    ProblemConfigError,
    load_problem,
)
from .solver import (
    AllStartsFailedError,
    ContinuationError,
    SolveSettings,
    StartPointError,
    multi_start,
)

__all__ = ["ExperimentPlan", "PlanError", "list_corpus", "load_plan", "main", "run", "run_plan"]

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 2, 3

EXPERIMENTS = ("solve", "threshold", "calmness", "subregularity", "exactness", "gradcheck")

# defaults for each experiment's "params" block
PARAM_DEFAULTS: dict[str, dict[str, Any]] = {
    "solve": {},
    "threshold": {"lambda_max": 10.0, "bisect_tol": 1e-3, "tol_eps": 1e-8, "tol_x": 1e-4},
    "calmness": {"mu_min": 1e-5, "mu_max": 1e-1, "n_mu": 9},
    "subregularity": {"radii": list(dg.DEFAULT_RADII), "n_samples": 200},
    "exactness": {"lambda_max": 10.0, "bisect_tol": 1e-3, "tol_eps": 1e-8, "tol_x": 1e-4,
                  "radii": list(dg.DEFAULT_RADII), "n_samples": 200, "lipschitz_pairs": 500},
    "gradcheck": {"n_points": 100, "tol": 1e-6},
}

NEEDS_SOLUTION = ("threshold", "subregularity", "exactness")


class PlanError(ValueError):
    """The plan failed validation; nothing has been computed."""


class ExperimentFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentPlan:
    problem: Problem
    problem_doc: dict
    penalty: PenaltyConfig
    solver: SolveSettings
    experiment: str
    params: dict
    output_dir: Path
    seed: int

    def resolved(self) -> dict:
        """Plan with every default filled in.  Worker count is left out: it never changes results."""
        solver = self.solver.to_dict()
        solver.pop("workers")
        return {
            "problem": self.problem_doc,
            "penalty": self.penalty.to_dict(),
            "solver": solver,
            "experiment": self.experiment,
            "params": self.params,
            "seed": self.seed,
        }


def _positive_number(params: dict, key: str) -> float:
    v = params[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0 or not math.isfinite(v):
        raise PlanError(f"params.{key} must be a positive number")
    return float(v)


def _positive_int(params: dict, key: str) -> int:
    v = params[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise PlanError(f"params.{key} must be a positive integer")
    return v


def _check_params(experiment: str, params: dict, p: Problem, cfg: PenaltyConfig) -> dict:
    defaults = PARAM_DEFAULTS[experiment]
    extra = set(params) - set(defaults)
    if extra:
        raise PlanError(f"unexpected params for {experiment!r}: {sorted(extra)}")
    out = {**defaults, **params}
    for key in out:
        if key in ("radii",):
            r = out[key]
            if not isinstance(r, list) or not r or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0 for v in r
            ):
                raise PlanError("params.radii must be a non-empty list of positive numbers")
            out[key] = [float(v) for v in r]
        elif key in ("n_mu", "n_samples", "lipschitz_pairs", "n_points"):
            out[key] = _positive_int(out, key)
        else:
            out[key] = _positive_number(out, key)
    if experiment == "calmness":
        if out["mu_min"] >= out["mu_max"] and out["n_mu"] > 1:
            raise PlanError("params.mu_min must be below params.mu_max")
        if out["mu_max"] > cfg.eps_bar:
            raise PlanError(f"params.mu_max exceeds penalty.eps_bar={cfg.eps_bar}")
    if experiment in NEEDS_SOLUTION and p.x_star is None:
        raise PlanError(f"experiment {experiment!r} needs a problem with a known solution")
    return out


def load_plan(doc: dict, *, plan_dir: Path = Path("."), output_dir: Optional[str] = None,
              seed: Optional[int] = None, workers: Optional[int] = None) -> ExperimentPlan:
    """Validate a decoded plan document.  Raises :class:`PlanError`."""
    if not isinstance(doc, dict):
        raise PlanError("plan must be a JSON object")
    allowed = {"problem", "penalty", "solver", "experiment", "params", "output_dir", "seed"}
    extra = set(doc) - allowed
    if extra:
        raise PlanError(f"unexpected plan fields: {sorted(extra)}")
    for key in ("problem", "penalty", "experiment"):
        if key not in doc:
            raise PlanError(f"missing required field {key!r}")
    experiment = doc["experiment"]
    if experiment not in EXPERIMENTS:
        raise PlanError(f"experiment must be one of {', '.join(EXPERIMENTS)}; got {experiment!r}")

    seed = doc.get("seed", 0) if seed is None else seed
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise PlanError("seed must be an integer in [0, 2**64)")

    prob_doc = doc["problem"]
    if isinstance(prob_doc, str):
        prob_doc = {"builtin": prob_doc}
    try:
        problem = load_problem(prob_doc)
    except (ProblemConfigError, ExprError) as exc:
        raise PlanError(f"problem: {exc}") from None

    try:
        cfg = PenaltyConfig.from_dict(doc["penalty"])
        cfg.shift(problem.m)
    except (PenaltyConfigError, ValueError, TypeError) as exc:
        raise PlanError(f"penalty: {exc}") from None

    solver_doc = dict(doc.get("solver", {}))
    if not isinstance(doc.get("solver", {}), dict):
        raise PlanError("solver must be a JSON object")
    solver_doc["rng_seed"] = seed
    if workers is not None:
        solver_doc["workers"] = workers
    try:
        settings = SolveSettings.from_dict(solver_doc)
    except (ValueError, TypeError) as exc:
        raise PlanError(f"solver: {exc}") from None

    params = doc.get("params", {})
    if not isinstance(params, dict):
        raise PlanError("params must be a JSON object")
    params = _check_params(experiment, params, problem, cfg)

    out = output_dir if output_dir is not None else doc.get("output_dir", "out")
    if not isinstance(out, str) or not out:
        raise PlanError("output_dir must be a non-empty string")
    out_path = Path(out)
    if not out_path.is_absolute() and output_dir is None:
        out_path = plan_dir / out_path
    return ExperimentPlan(problem, prob_doc, cfg, settings, experiment, params, out_path, seed)


# ---------------------------------------------------------------------------
# Experiments: each returns (report dict, csv header, csv rows, summary lines)


def _x_cols(n: int) -> list[str]:
    return [f"x{i + 1}" for i in range(n)]


def _exp_solve(plan: ExperimentPlan):
    p = plan.problem
    ms = multi_start(p, plan.penalty, plan.solver)
    by_index = {r.start_index: r for r in ms.results}
    rows = []
    for i in range(plan.solver.n_starts):
        r = by_index.get(i)
        if r is None:
            continue
        x_err = None if p.x_star is None else float(np.linalg.norm(r.x_star - p.x_star))
        rows.append([i, r.eps_star, r.value, r.projected_grad_norm, r.iters, r.converged,
                     r.status, x_err, *r.x_star.tolist()])
    best = ms.best
    report = {
        "best": best.to_dict(),
        "results": [r.to_dict() for r in ms.results],
        "failures": [{"start_index": i, "error": msg} for i, msg in ms.failures],
    }
    if p.x_star is not None:
        report["best"]["x_error"] = float(np.linalg.norm(best.x_star - p.x_star))
    header = ["start_index", "eps_star", "value", "projected_grad_norm", "iters", "converged",
              "status", "x_error", *_x_cols(p.n)]
    summary = [f"best start {best.start_index}: x* = {best.x_star.tolist()}, "
               f"eps* = {best.eps_star:.3g}, value = {best.value:.10g}"]
    return report, header, rows, summary


def _probe_rows(probes):
    return [[i, pr.lam, pr.eps_star, pr.x_error, pr.exact] for i, pr in enumerate(probes)]


PROBE_HEADER = ["probe", "lambda", "eps_star", "x_error", "exact"]


def _exp_threshold(plan: ExperimentPlan):
    q = plan.params
    th = dg.empirical_lambda_threshold(plan.problem, plan.penalty, plan.solver, q["lambda_max"],
                                       q["bisect_tol"], tol_eps=q["tol_eps"], tol_x=q["tol_x"])
    report = {"empirical_threshold": th.threshold, "found": th.found, "monotone": th.monotone}
    shown = "not found" if th.threshold is None else f"{th.threshold:.6g}"
    summary = [f"empirical threshold: {shown} (lambda_max = {q['lambda_max']:g})"]
    return report, PROBE_HEADER, _probe_rows(th.probes), summary


def _exp_calmness(plan: ExperimentPlan):
    q = plan.params
    grid = np.geomspace(q["mu_min"], q["mu_max"], q["n_mu"])
    hs = dg.optimal_value_samples(plan.problem, plan.penalty, grid, plan.solver)
    cr = dg.calmness_from_below(hs, (plan.penalty.beta_coeff, plan.penalty.sigma))
    report = {"samples": hs.to_dict(), "calmness": cr.to_dict()}
    rows = [[float(m), float(h), float(qq), c, f]
            for m, h, qq, c, f in zip(hs.mu_grid, hs.h_values, cr.quotients, hs.converged, hs.failed)]
    summary = [f"calm from below: {cr.calm_from_below_verdict}; "
               f"quotient at mu = {grid[0]:.3g}: {cr.quotients[0]:.6g}"]
    return report, ["mu", "h", "quotient", "converged", "failed"], rows, summary


def _exp_subregularity(plan: ExperimentPlan):
    q = plan.params
    est = dg.estimate_subregularity(plan.problem, plan.problem.x_star, q["radii"], q["n_samples"],
                                    plan.seed)
    rows = [[r, a] for r, a in zip(est.radii, est.trend)]
    summary = [f"a_hat = {est.a_hat:.6g}, failure_flag = {est.failure_flag}"]
    return est.to_dict(), ["radius", "a_hat"], rows, summary


def _exp_exactness(plan: ExperimentPlan):
    q = plan.params
    v = dg.exactness_experiment(
        plan.problem, plan.penalty, plan.solver, lambda_max=q["lambda_max"],
        bisect_tol=q["bisect_tol"], radii=q["radii"], n_samples=q["n_samples"],
        lipschitz_pairs=q["lipschitz_pairs"], seed=plan.seed, tol_eps=q["tol_eps"], tol_x=q["tol_x"],
    )
    shown = "not found" if v.empirical_threshold is None else f"{v.empirical_threshold:.6g}"
    summary = [
        f"L_hat = {v.L_hat:.6g}, a_hat = {v.a_hat:.6g}, bound = {v.theoretical_bound:.6g}",
        f"empirical threshold: {shown}; exact = {v.exact}",
    ]
    return v.to_dict(), PROBE_HEADER, _probe_rows(v.probes), summary


def _exp_gradcheck(plan: ExperimentPlan):
    p, q = plan.problem, plan.params
    rows = [[i, e, v, err, *x.tolist()]
            for i, (x, e, v, err) in enumerate(dg.gradient_check_points(p, plan.penalty, q["n_points"], plan.seed))]
    if len(rows) < q["n_points"]:
        raise ExperimentFailure(f"found only {len(rows)} Interior points for the gradient check")
    worst = max(r[3] for r in rows)
    passed = worst <= q["tol"]
    report = {"n_points": len(rows), "max_relative_error": worst, "passed": passed}
    summary = [f"{len(rows)} points, max relative error {worst:.3g} ({'pass' if passed else 'FAIL'})"]
    return report, ["point", "eps", "value", "relative_error", *_x_cols(p.n)], rows, summary


EXPERIMENT_RUNNERS: dict[str, Callable] = {
    "solve": _exp_solve,
    "threshold": _exp_threshold,
    "calmness": _exp_calmness,
    "subregularity": _exp_subregularity,
    "exactness": _exp_exactness,
    "gradcheck": _exp_gradcheck,
}


# ---------------------------------------------------------------------------
# Output


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def render_csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        # JSON has no infinity; keep it readable
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return None
        return v
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    return v


def run_plan(plan: ExperimentPlan) -> tuple[dict, str, list[str]]:
    """Execute an experiment; returns (report, csv text, summary lines)."""
    try:
        result, header, rows, summary = EXPERIMENT_RUNNERS[plan.experiment](plan)
    except (AllStartsFailedError, ContinuationError, DistanceApproximationError,
            StartPointError, ExperimentFailure) as exc:
        raise ExperimentFailure(f"{plan.experiment}: {exc}") from exc
    report = {"status": "ok", "plan": plan.resolved(), "result": _jsonable(result)}
    return report, render_csv(header, rows), summary


def run(plan_file: str, *, output_dir: Optional[str] = None, seed: Optional[int] = None,
        quiet: bool = False, workers: Optional[int] = None,
        out=None, err=None) -> int:
    """Run one plan file; returns the process exit code."""
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    path = Path(plan_file)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        print(f"error: cannot read plan: {exc}", file=err)
        return EXIT_INVALID
    except json.JSONDecodeError as exc:
        print(f"error: plan is not valid JSON: {exc}", file=err)
        return EXIT_INVALID
    try:
        plan = load_plan(doc, plan_dir=path.parent, output_dir=output_dir, seed=seed, workers=workers)
    except PlanError as exc:
        print(f"error: invalid plan: {exc}", file=err)
        return EXIT_INVALID
    try:
        report, data, summary = run_plan(plan)
    except ExperimentFailure as exc:
        print(f"error: experiment failed: {exc}", file=err)
        return EXIT_FAILED

    plan.output_dir.mkdir(parents=True, exist_ok=True)
    (plan.output_dir / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (plan.output_dir / "data.csv").write_text(data, encoding="utf-8", newline="")
    if not quiet:
        print(f"{plan.experiment} on {plan.problem.name} ({plan.penalty.family.value}, "
              f"lambda = {plan.penalty.lam:g}, seed = {plan.seed})", file=out)
        for line in summary:
            print("  " + line, file=out)
        print(f"  wrote {plan.output_dir / 'report.json'} and {plan.output_dir / 'data.csv'}", file=out)
    return EXIT_OK


def list_corpus() -> str:
    lines = []
    for name, entry in CORPUS.items():
        p = entry.problem
        lines.append(f"{name}  [{', '.join(entry.tags)}]  n={p.n} m={p.m}  "
                     f"oracles: {', '.join(entry.oracles) or 'none'}")
    return "\n".join(lines)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smoothpen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment plan")
    r.add_argument("plan", help="path to the plan JSON file")
    r.add_argument("--output-dir", help="directory for report.json and data.csv (overrides the plan)")
    r.add_argument("--seed", type=int, help="random seed (overrides the plan)")
    r.add_argument("--workers", type=int, help="threads for multi-start (results do not depend on it)")
    r.add_argument("--quiet", action="store_true", help="suppress the summary")
    sub.add_parser("list-corpus", help="list the built-in problems")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    if args.command == "list-corpus":
        print(list_corpus())
        return EXIT_OK
    return run(args.plan, output_dir=args.output_dir, seed=args.seed, quiet=args.quiet,
               workers=args.workers)


if __name__ == "__main__":
    sys.exit(main())
