"""Command-line entry points.

Subcommands:

  run     full iteration from a JSON config; writes snapshots, stage
          reports, and the norm CSV (columns q,t,term,norm,value)
  step    one perturbation step on the configured scenario triple
  sweep   ladder-axis sweep of the defect-term norms with slope fits
  mikado  measured tube constants and concentration-scaling report
  lemmas  antidivergence diagnostics (residuals and measured bounds)

Exit codes: 0 success, 2 the run completed but a stage is PARTIAL
(smallness targets bounded by resolution, binding constraint reported),
1 error.
"""

import argparse
import csv
import json
import sys

import numpy as np

from .grid import Grid, ScalarField
from . import spectral
from .mikado import build_mikado, measure_constants, scaling_report
from .antidiv import improved_antidiv, holder_gap, mean_osc_bound
from .driver import Scenario, IterationSchedule, make_scenario, run_iterations, sweep
from .scheme import perturb_step, DefectTriple

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARTIAL = 2


def _load_config(path):
    with open(path) as fh:
        return json.load(fh)


def _scenario_from_config(cfg):
    g = cfg.get("grid", {})
    grid = Grid(int(g.get("d", 3)), int(g.get("n", 64)))
    n_t = int(cfg.get("timegrid", {}).get("n_t", 16))
    sc = cfg.get("scenario", {})
    return make_scenario(
        grid, n_t,
        amplitude=float(sc.get("amplitude", 1.0)),
        modes=sc.get("modes"),
        t0=float(sc.get("t0", 0.25)),
        t1=float(sc.get("t1", 0.75)),
    )


def _schedule_from_config(cfg):
    s = cfg.get("schedule", {})
    return IterationSchedule(
        Q=int(s.get("Q", 2)),
        mode=cfg.get("mode", "rho-close"),
        epsilon=float(cfg.get("epsilon", 0.1)),
        ratio=float(s.get("ratio", 0.25)),
        delta_scale=float(s.get("delta_scale", 1.0)),
        deltas=s.get("deltas"),
    )


def _print_stage(rep):
    print(f"stage q={rep['q']}: status={rep['status']} "
          f"tau={rep['tau']:.4g} lam=({rep['params']['lam1']},{rep['params']['lam2']}) "
          f"mu=({rep['params']['mu1']:.3g},{rep['params']['mu2']:.3g}) "
          f"pde_residual={rep['pde_residual']:.3e}")
    for name, val in sorted(rep["term_norms_max"].items()):
        print(f"  term {name:12s} max_t L1 = {val:.6e}")
    if rep["binding_constraint"]:
        print(f"  binding constraint: {rep['binding_constraint']}")


def cmd_run(args):
    cfg = _load_config(args.config)
    scenario = _scenario_from_config(cfg)
    schedule = _schedule_from_config(cfg)
    tol = cfg.get("tolerances", {})
    result = run_iterations(
        scenario, schedule,
        margin=float(tol.get("margin", 1.0)),
        substeps=int(tol.get("substeps", 4)),
        outdir=args.out,
    )
    for rep in result["stages"]:
        _print_stage(rep)
    print(f"run status: {result['status']} "
          f"(M={result['M']:.4g}, delta_-1={result['delta_m1']:.4g}, "
          f"exact_outside={result['exact_outside']})")
    if args.out is None and args.csv:
        _write_rows(args.csv, result["rows"])
    return EXIT_OK if result["status"] == "COMPLETE" else EXIT_PARTIAL


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["q", "t", "term", "norm", "value"])
        writer.writerows(rows)


def cmd_step(args):
    cfg = _load_config(args.config)
    scenario = _scenario_from_config(cfg)
    st = cfg.get("step", {})
    tol = cfg.get("tolerances", {})
    delta_m1 = max(
        spectral.lp_norm(scenario.R0.snapshot(k), 1)
        for k in range(scenario.n_t + 1)
    )
    triple, rep = perturb_step(
        scenario.rho0, scenario.u0, scenario.R0,
        p=float(st.get("p", 1.0)),
        eta=float(st.get("eta", 1.0)),
        delta=float(st.get("delta", 0.25 * delta_m1)),
        margin=float(tol.get("margin", 1.0)),
        substeps=int(tol.get("substeps", 4)),
    )
    rep["q"] = 0
    _print_stage(rep)
    if args.out is not None:
        from . import snapshot_io
        snapshot_io.save_triple(args.out, triple, "stage01")
        with open(f"{args.out}/report.json", "w") as fh:
            json.dump(rep, fh, indent=2, default=str)
    return EXIT_OK if rep["status"] == "COMPLETE" else EXIT_PARTIAL


def cmd_sweep(args):
    cfg = _load_config(args.config) if args.config else {}
    scenario = _scenario_from_config(cfg)
    values = [float(v) for v in args.values.split(",")]
    out = sweep(scenario, args.axis, values,
                eta=args.eta, tau=args.tau, base_mu=args.base_mu)
    print(f"axis={out['axis']} values={out['values']}")
    for name, fit in sorted(out["slopes"].items()):
        print(f"  {name:12s} slope={fit['slope']:+.3f} "
              f"halfwidth={fit['halfwidth']:.3f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["axis", "value", "term", "norm", "value_norm"])
            for name, ys in out["terms"].items():
                for v, y in zip(out["values"], ys):
                    writer.writerow([args.axis, v, name, "L1", y])
    return EXIT_OK


def cmd_mikado(args):
    grid = Grid(args.d, args.n)
    mus = [float(v) for v in args.mus.split(",")]
    pairs = [build_mikado(j, mu, grid) for mu in mus for j in range(1, args.d + 1)]
    consts = measure_constants(pairs)
    print(f"M0={consts['M0']:.6g} M1={consts['M1']:.6g} M={consts['M']:.6g} "
          f"sum_bound_ok={consts['sum_bound_ok']}")
    rep = scaling_report(grid, mus)
    for entry in rep:
        print(f"  {entry['field']:6s} k={entry['k']} r={entry['r']:>3s} "
              f"slope={entry['slope']:+.3f} predicted={entry['predicted']:+.3f}")
    return EXIT_OK


def cmd_lemmas(args):
    grid = Grid(args.d, args.n)
    pair = build_mikado(1, args.mu, grid)
    g = pair.theta()
    mesh = grid.meshgrid()
    f = ScalarField(grid, np.sin(2 * np.pi * mesh[0]) * np.cos(2 * np.pi * mesh[1]) + 0 * mesh[2])
    res = improved_antidiv(f, g, args.lam)
    print(f"improved antidivergence: achieved residual = {res.achieved_residual:.3e}")
    for key, val in res.bound_ledger.items():
        print(f"  {key:10s} = {val:.6g}")
    hg = holder_gap(f, g, args.lam, p=1.0)
    print(f"Holder gap (p=1): lhs={hg['lhs']:.6g} bound={hg['bound']:.6g} gap={hg['gap']:.6g}")
    mo = mean_osc_bound(f, g, args.lam)
    print(f"mean oscillation: lhs={mo['lhs']:.6g} bound={mo['bound']:.6g}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mikadoflow",
        description="Convex-integration construction of non-unique "
                    "continuity-equation solutions on the periodic torus",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="full iteration from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--csv", default=None, help="norm rows CSV path")
    p_run.set_defaults(fn=cmd_run)

    p_step = sub.add_parser("step", help="one perturbation step")
    p_step.add_argument("--config", required=True)
    p_step.add_argument("--out", default=None)
    p_step.set_defaults(fn=cmd_step)

    p_sw = sub.add_parser("sweep", help="ladder-axis norm sweep")
    p_sw.add_argument("--config", default=None)
    p_sw.add_argument("--axis", required=True,
                      choices=["lambda", "lambda2", "mu", "tau"])
    p_sw.add_argument("--values", required=True, help="comma-separated")
    p_sw.add_argument("--eta", type=float, default=1.0)
    p_sw.add_argument("--tau", type=float, default=0.25)
    p_sw.add_argument("--base-mu", type=float, default=8.0, dest="base_mu")
    p_sw.add_argument("--csv", default=None)
    p_sw.set_defaults(fn=cmd_sweep)

    p_mk = sub.add_parser("mikado", help="tube constants and scaling report")
    p_mk.add_argument("--d", type=int, default=3)
    p_mk.add_argument("--n", type=int, default=64)
    p_mk.add_argument("--mus", default="8,16")
    p_mk.set_defaults(fn=cmd_mikado)

    p_lm = sub.add_parser("lemmas", help="antidivergence diagnostics")
    p_lm.add_argument("--d", type=int, default=3)
    p_lm.add_argument("--n", type=int, default=64)
    p_lm.add_argument("--mu", type=float, default=8.0)
    p_lm.add_argument("--lam", type=int, default=4)
    p_lm.set_defaults(fn=cmd_lemmas)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # surface a clean one-line error, exit 1
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
