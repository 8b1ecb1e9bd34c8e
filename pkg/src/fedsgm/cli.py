"""Command line entry point: ``fedsgm run|sweep|verify``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .analysis import AnalysisError, averaged_iterate, skewness_diagnostics, verdict
from .config import ConfigError, Experiment, RunSpec, prepare
from .engine import DivergenceError, RunTrace, run
from .problems import DatasetError, ProblemError
from . import rng as rngmod

log = logging.getLogger("fedsgm")

EXIT_OK, EXIT_ABORT, EXIT_CONFIG = 0, 1, 2


def summarize(exp: Experiment, trace: RunTrace) -> dict:
    problem, cfg = exp.problem, exp.config
    final_w = trace.final_state.w
    a_size = sum(r.in_A for r in trace.records)
    try:
        w_bar = averaged_iterate(trace)
        v = verdict(problem, w_bar, exp.epsilon).to_dict()
        v["g_value"] = v["violation"]
    except AnalysisError as exc:
        v = {"error": str(exc)}
    G = problem.lipschitz_G
    drift_bound = cfg.eta * cfg.eta * cfg.E**3 * G * G / 3.0
    worst_drift = max((max(r.drift_sq_sums) for r in trace.records), default=0.0)
    skew = skewness_diagnostics(problem, final_w)
    return {
        "config": exp.spec.to_dict(),
        "seed": cfg.seed,
        "final_f": problem.global_f(final_w),
        "final_g": problem.global_g(final_w),
        "epsilon": exp.epsilon,
        "eta": exp.eta,
        "gamma": exp.theorem.gamma if exp.theorem else None,
        "A_size": a_size,
        "w_bar_verdict": v,
        "rounds_run": len(trace.records),
        "snapshots_thinned": trace.thinned,
        "param_notes": exp.notes,
        "diagnostics": {
            "lipschitz_G": G,
            "max_drift_sq_sum": worst_drift,
            "drift_bound": drift_bound,
            "max_grad_norm": max((r.max_grad_norm for r in trace.records), default=0.0),
            "skewness_at_final": {
                "K_glob_frob": skew.K_glob_frob,
                "K_loc_frob": skew.K_loc_frob,
                "V_f": skew.V_f,
                "V_g": skew.V_g,
                "bound_gap": skew.bound_gap,
            },
        },
    }


def execute(spec: RunSpec, output_dir: Path, base_dir: Path | None = None) -> dict:
    exp = prepare(spec, base_dir)
    trace = run(exp.config, exp.problem)
    output_dir.mkdir(parents=True, exist_ok=True)
    trace.write_csv(output_dir / "trace.csv")
    summary = summarize(exp, trace)
    (output_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def _apply_flags(spec: RunSpec, args) -> RunSpec:
    raw = spec.to_dict()
    if args.output_dir is not None:
        raw["output_dir"] = str(args.output_dir)
    if args.seed is not None:
        raw["rounds"]["seed"] = args.seed
    if args.snapshot_cadence is not None:
        raw["snapshot_cadence"] = args.snapshot_cadence
    return RunSpec.from_dict(raw)


def cmd_run(args) -> int:
    try:
        spec = _apply_flags(RunSpec.load(args.config), args)
        summary = execute(spec, Path(spec.output_dir), Path(args.config).parent)
    except (ConfigError, DatasetError, ProblemError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    v = summary["w_bar_verdict"]
    print(f"final f={summary['final_f']:.6g} g={summary['final_g']:.6g} |A|={summary['A_size']} "
          f"eps={summary['epsilon']:.6g} verdict={v.get('is_eps_solution', v.get('error'))}")
    print(f"wrote {spec.output_dir}/trace.csv and summary.json")
    return EXIT_OK


INDEX_METRICS = ("status", "seed", "final_f", "final_g", "epsilon", "eta", "A_size", "is_eps_solution")


def cmd_sweep(args) -> int:
    try:
        spec = _apply_flags(RunSpec.load(args.config), args)
        cells = spec.sweep_cells()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    root = Path(spec.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    keys = list(spec.sweep)
    rows = []
    failures = 0
    for index, (overrides, cell) in enumerate(cells):
        raw = cell.to_dict()
        raw["rounds"]["seed"] = rngmod.derive_seed(spec.rounds.seed, "cell", index)
        cell = RunSpec.from_dict(raw)
        out = root / f"cell_{index:03d}"
        row = {k: overrides[k] for k in keys}
        row["cell"] = index
        row["seed"] = cell.rounds.seed
        try:
            summary = execute(cell, out, Path(args.config).parent)
        except (ConfigError, DatasetError, ProblemError, DivergenceError) as exc:
            failures += 1
            row["status"] = f"aborted: {exc}"
            log.warning("cell %d aborted: %s", index, exc)
        else:
            row.update(status="ok", final_f=summary["final_f"], final_g=summary["final_g"],
                       epsilon=summary["epsilon"], eta=summary["eta"], A_size=summary["A_size"],
                       is_eps_solution=summary["w_bar_verdict"].get("is_eps_solution", ""))
        rows.append(row)
        print(f"cell {index}: {overrides} -> {row['status']}")
    with (root / "index.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, ["cell", *keys, *INDEX_METRICS], lineterminator="\n", restval="")
        writer.writeheader()
        writer.writerows(rows)
    print(f"{len(rows)} cells, {failures} aborted; index at {root / 'index.csv'}")
    return EXIT_OK if failures == 0 else EXIT_ABORT


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(quick=not args.full)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_ABORT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsgm", description="Federated switching-gradient simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, helptext in (("run", cmd_run, "run one experiment"),
                                 ("sweep", cmd_sweep, "run the Cartesian product of sweep overrides")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="YAML run config")
        p.add_argument("--output-dir", type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--snapshot-cadence", type=int)
        p.set_defaults(func=func)
    p = sub.add_parser("verify", help="run the built-in invariant checks")
    p.add_argument("--full", action="store_true", help="use the larger sample sizes")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
