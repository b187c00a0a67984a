"""Command-line interface: ``homopt {solve,sweep,budget-curve,inspect-tree,selftest}``.

Exit codes: 0 success, 1 configuration or usage error, 2 I/O error,
3 selftest failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ParseError, TreeError
from .tree import load_tree, save_tree

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_SELFTEST = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; that code is reserved for I/O errors here
    def error(self, message):
        raise _UsageError(message)


def _common(p: argparse.ArgumentParser, config_required: bool) -> None:
    p.add_argument("--config", type=Path, required=config_required, help="experiment config file")
    p.add_argument("--seed", type=int, help="override [experiment] base_seed")
    p.add_argument("--out", type=Path, help="output directory (default: $HOMOPT_OUTPUT_DIR or ./homopt-out)")
    p.add_argument("--verbose", "-v", action="store_true", help="log solver and driver progress")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="homopt", description="Homotopy optimization experiments.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="run one algorithm on one goal problem")
    _common(p, True)
    p.add_argument("--algorithm", default="pho", help="pho, rho, liho or one_depth (default pho)")
    p.add_argument("--trace", action="store_true", help="echo every solver query to stderr")

    p = sub.add_parser("sweep", help="success-map sweep over sampled goal parameters")
    _common(p, True)

    p = sub.add_parser("budget-curve", help="success rate and best cost against budget")
    _common(p, True)

    p = sub.add_parser("inspect-tree", help="pretty-print a saved optimization tree")
    p.add_argument("tree", type=Path)
    p.add_argument("--verbose", "-v", action="store_true", help="also print solution vectors")

    p = sub.add_parser("selftest", help="synthetic-manifold property suite")
    p.add_argument("--check", action="append", help="run only this check (repeatable)")
    p.add_argument("--no-cartpole", action="store_true", help="skip the cart-pole case of the invariant check")
    p.add_argument("--verbose", "-v", action="store_true")
    return ap


def _load(args):
    from .bench.config import load_config

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg = cfg.with_output(args.out)
    return cfg


def _kv(out, pairs) -> None:
    w = csv.writer(out, delimiter="\t", lineterminator="\n")
    for k, v in pairs:
        w.writerow([k, v])


def cmd_solve(args, out) -> int:
    from .algorithms import ALGORITHMS, write_query_log
    from .bench.experiment import _prepare_output, build_problem, export_trajectory_evolution, run_one

    if args.algorithm not in ALGORITHMS:
        raise ConfigurationError(f"unknown algorithm {args.algorithm!r}; choose from {', '.join(ALGORITHMS)}")
    cfg = _load(args)
    dest = _prepare_output(cfg.resolved_output())
    problem = build_problem(cfg)
    theta = cfg.sample_goals()[0]
    seed = cfg.run_seed(0, 0)
    res = run_one(cfg, problem, theta, args.algorithm, seed, trace=sys.stderr if args.trace else None)
    files = {"query_log": dest / "query_log.csv"}
    write_query_log(res, files["query_log"])
    if res.tree is not None:
        files["tree"] = dest / "run.tree"
        save_tree(res.tree, files["tree"])
    if res.solved and cfg.problem.kind == "cartpole":
        pm = problem.param_map(theta, cfg.map)
        if args.algorithm == "liho":
            pm = pm.scalar()
        files.update(export_trajectory_evolution(res.tree, problem.nlp, pm, dest / "trajectory"))
    _kv(out, [("algorithm", res.algorithm), ("status", res.status.value), ("seed", seed),
              *[(f"theta_{n}", f"{v:.10g}") for n, v in zip(problem.names, theta)],
              ("goal_solutions", len(res.goal_solutions)), ("best_objective", f"{res.best_objective:.10g}"),
              ("solver_queries", res.solver_queries), ("wall_time", f"{res.wall_time:.3f}"),
              ("tree_nodes", len(res.tree.nodes) if res.tree is not None else 0),
              *[(f"file_{k}", str(v)) for k, v in files.items()]])
    return EXIT_OK


def cmd_sweep(args, out) -> int:
    from .bench.experiment import run_sweep

    cfg = _load(args)

    def progress(row):
        logging.getLogger("homopt.sweep").info("theta %d %s seed %d: %s (%d queries, %.1fs)", row.theta_index,
                                               row.algorithm, row.seed_index, row.status, row.queries,
                                               row.wall_time)

    rep = run_sweep(cfg, progress=progress)
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["algorithm", "solved", "runs", "success_rate"])
    counts, rates = rep.success_counts(), rep.success_rates()
    for a in rep.algorithms:
        w.writerow([a, counts[a], len(rep.thetas) * rep.n_seeds, f"{rates[a]:.4f}"])
    for k, v in rep.files.items():
        out.write(f"# {k}: {v}\n")
    return EXIT_OK


def cmd_budget_curve(args, out) -> int:
    from .bench.experiment import run_budget_curve

    curve = run_budget_curve(_load(args))
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["algorithm", "checkpoint", "unit", "success_rate", "mean_best_objective"])
    for a in curve.algorithms:
        for c, s, m in zip(curve.checkpoints, curve.success_rate[a], curve.mean_best[a]):
            w.writerow([a, f"{c:g}", curve.unit, f"{s:.4f}", f"{m:.10g}"])
    for k, v in curve.files.items():
        out.write(f"# {k}: {v}\n")
    return EXIT_OK


def cmd_inspect_tree(args, out) -> int:
    tree = load_tree(args.tree)
    goal = tree.goal_id
    _kv(out, [("dim", tree.dim), ("nodes", len(tree.nodes)), ("params", len(tree.params)),
              ("attempts", len(tree.attempts)), ("solve_sample_ratio", f"{tree.solve_sample_ratio():.4f}"),
              ("goal_solutions", len(tree.goal_nodes())), ("similarity_tol", tree.similarity_tol)])
    out.write("\n")
    depth = {}
    for n in tree.nodes:
        depth[n.id] = 0 if n.parent_id is None else depth[n.parent_id] + 1
        lam = np.array2string(tree.lam(n.lambda_id), precision=4, separator=" ")
        mark = "  *goal" if n.lambda_id == goal else ""
        line = f"{'  ' * depth[n.id]}node {n.id} lambda={lam} f={n.objective:.6g}{mark}"
        if args.verbose:
            line += " x=" + np.array2string(n.x_star, precision=4, threshold=12)
        out.write(line + "\n")
    return EXIT_OK


def cmd_selftest(args, out) -> int:
    from .bench import selftest

    known = [name for name, _ in selftest.CHECKS]
    bad = [c for c in args.check or [] if c not in known]
    if bad:
        raise ConfigurationError(f"unknown check {bad[0]!r}; choose from {', '.join(known)}")
    rep = selftest.run_selftest(out, only=args.check, include_cartpole=not args.no_cartpole)
    out.write(f"selftest {'passed' if rep.passed else 'FAILED'}: "
              f"{sum(r.passed for r in rep.results)}/{len(rep.results)} checks\n")
    return EXIT_OK if rep.passed else EXIT_SELFTEST


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "budget-curve": cmd_budget_curve,
            "inspect-tree": cmd_inspect_tree, "selftest": cmd_selftest}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        sys.stderr.write(f"{parser.format_usage()}homopt: error: {e}\n")
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args, out)
    except (ConfigurationError, ParseError) as e:
        sys.stderr.write(f"homopt: configuration error: {e}\n")
        return EXIT_CONFIG
    except TreeError as e:
        sys.stderr.write(f"homopt: {e}\n")
        return EXIT_CONFIG
    except OSError as e:
        sys.stderr.write(f"homopt: I/O error: {e}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
