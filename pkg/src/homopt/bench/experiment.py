"""Experiment runner: sweeps, budget curves and trajectory-evolution exports."""

from __future__ import annotations

import csv
import logging
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..algorithms import Budget, RunResult, RunStatus, best_so_far, run_algorithm, write_query_log
from ..errors import ConfigurationError, TreeError
from ..nlp import ParamMap, ParamNLP, map_params
from ..problems.cartpole import (PARAM_NAMES, TranscriptionSettings, build_cartpole_nlp, count_swings,
                                 write_trajectory_csv)
from ..problems.synthetic import make_synthetic
from ..tree import OptimizationTree, save_tree
from .config import ExperimentConfig

log = logging.getLogger(__name__)

DETERMINISTIC = ("liho", "one_depth")


@dataclass
class Problem:
    nlp: ParamNLP
    theta_easy: np.ndarray
    x0: np.ndarray
    names: tuple
    oracle: Optional[object] = None

    def param_map(self, theta_goal, kind="per_parameter") -> ParamMap:
        pm = ParamMap.per_parameter(self.theta_easy, theta_goal)
        if kind == "scalar" or self.theta_easy.size == 1:
            pm = pm.scalar()
        return pm


def build_problem(cfg: ExperimentConfig) -> Problem:
    pc = cfg.problem
    if pc.kind == "cartpole":
        nlp = build_cartpole_nlp(TranscriptionSettings(pc.horizon, pc.knots, pc.gravity))
        names, oracle = PARAM_NAMES, None
        x0 = np.zeros(nlp.n_vars)
    else:
        extra = {k: getattr(pc, k) for k in ("tilt", "asymmetry", "bump", "amplitude")
                 if getattr(pc, k) is not None}
        sp = make_synthetic(pc.kind, **extra)
        nlp, names, oracle, x0 = sp.nlp, ("lam",), sp.oracle, sp.x0
    if pc.x0 == "zeros":
        x0 = np.zeros(nlp.n_vars)
    elif pc.x0 != "default":
        try:
            x0 = np.array([float(v) for v in pc.x0.split()])
        except ValueError:
            raise ConfigurationError(f"problem.x0 must be 'zeros', 'default' or numbers, got {pc.x0!r}") from None
        if x0.size != nlp.n_vars:
            raise ConfigurationError(f"problem.x0 has {x0.size} values, the problem has {nlp.n_vars} variables")
    return Problem(nlp, np.asarray(cfg.theta_easy, dtype=float), x0, names, oracle)


def run_one(cfg: ExperimentConfig, problem: Problem, theta_goal, algorithm: str, seed: int,
            budget: Optional[Budget] = None, trace=None) -> RunResult:
    pm = problem.param_map(theta_goal, cfg.map)
    return run_algorithm(algorithm, problem.nlp, pm, problem.x0, budget=budget or cfg.budget, seed=seed,
                         settings=cfg.solver, feas_tol=cfg.feasibility, pho=cfg.pho, rho=cfg.rho,
                         liho=cfg.liho, trace=trace)


@dataclass
class SweepRow:
    theta_index: int
    theta: np.ndarray
    algorithm: str
    seed_index: int
    seed: int
    status: str
    queries: int
    wall_time: float
    best_objective: float
    n_goal_solutions: int
    error: str = ""


@dataclass
class SweepReport:
    thetas: np.ndarray
    names: tuple
    algorithms: tuple
    n_seeds: int
    rows: list = field(default_factory=list)
    files: dict = field(default_factory=dict)

    def success_counts(self) -> dict:
        return {a: sum(r.status == RunStatus.SOLVED.value for r in self.rows if r.algorithm == a)
                for a in self.algorithms}

    def success_rates(self) -> dict:
        n = len(self.thetas) * self.n_seeds
        return {a: (c / n if n else 0.0) for a, c in self.success_counts().items()}


def _prepare_output(path: Path) -> Path:
    """Create the output directory and prove it is writable before any computation."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    probe = path / ".write-test"
    probe.write_text("")
    probe.unlink()
    return path


ROW_HEADER = ("theta_index", "algorithm", "seed_index", "seed", "status", "queries", "wall_time",
              "best_objective", "n_goal_solutions", "error")


def _theta_cols(names):
    return [f"theta_{n}" for n in names]


def run_sweep(cfg: ExperimentConfig, out: Optional[Path] = None, progress=None) -> SweepReport:
    """Run every configured algorithm on every sampled goal and seed.

    Writes ``sweep_rows.csv``, ``sweep_summary.csv``, ``success_map.csv``,
    ``query_log.csv``, persisted trees and figures into the output directory.
    Exceptions inside a run become ``Failed`` rows with the error text.
    """
    out = _prepare_output(out or cfg.resolved_output())
    problem = build_problem(cfg)
    thetas = cfg.sample_goals()
    report = SweepReport(thetas, problem.names, tuple(cfg.algorithms), cfg.n_seeds)
    results = []
    tree_dir = out / "trees"
    for i, theta in enumerate(thetas):
        for alg in cfg.algorithms:
            cached = None
            for j in range(cfg.n_seeds):
                seed = cfg.run_seed(i, j)
                if cached is not None:
                    res = cached
                else:
                    try:
                        res = run_one(cfg, problem, theta, alg, seed)
                    except Exception as e:  # a crashing run must not abort the sweep
                        log.warning("run theta=%d %s seed=%d crashed: %s", i, alg, seed, e)
                        log.debug(traceback.format_exc())
                        report.rows.append(SweepRow(i, theta, alg, j, seed, RunStatus.FAILED.value, 0, 0.0,
                                                    float("inf"), 0, f"{type(e).__name__}: {e}"))
                        continue
                    if alg in DETERMINISTIC:
                        cached = res
                report.rows.append(SweepRow(i, theta, alg, j, seed, res.status.value, res.solver_queries,
                                            res.wall_time, res.best_objective, len(res.goal_solutions)))
                results.append((i, alg, j, seed, res))
                if res.tree is not None and (cfg.save_trees == "all"
                                             or (cfg.save_trees == "solved" and res.solved)):
                    tree_dir.mkdir(exist_ok=True)
                    save_tree(res.tree, tree_dir / f"theta{i:04d}_{alg}_seed{j:02d}.tree")
                if progress is not None:
                    progress(report.rows[-1])
    report.files = write_sweep_files(report, results, out)
    return report


def write_sweep_files(report: SweepReport, results, out: Path) -> dict:
    from . import plots

    files = {"rows": out / "sweep_rows.csv", "summary": out / "sweep_summary.csv",
             "success_map": out / "success_map.csv", "query_log": out / "query_log.csv"}
    tcols = _theta_cols(report.names)
    with open(files["rows"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([ROW_HEADER[0], *tcols, *ROW_HEADER[1:]])
        for r in report.rows:
            w.writerow([r.theta_index, *[f"{v:.10g}" for v in r.theta], r.algorithm, r.seed_index, r.seed,
                        r.status, r.queries, f"{r.wall_time:.4f}", f"{r.best_objective:.10g}",
                        r.n_goal_solutions, r.error])
    with open(files["summary"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algorithm", "runs", "solved", "success_rate", "mean_queries", "mean_wall_time",
                    "mean_best_objective"])
        for a in report.algorithms:
            rows = [r for r in report.rows if r.algorithm == a]
            solved = [r for r in rows if r.status == RunStatus.SOLVED.value]
            w.writerow([a, len(rows), len(solved),
                        f"{len(solved) / len(rows):.4f}" if rows else "nan",
                        f"{np.mean([r.queries for r in rows]):.2f}" if rows else "nan",
                        f"{np.mean([r.wall_time for r in rows]):.4f}" if rows else "nan",
                        f"{np.mean([r.best_objective for r in solved]):.10g}" if solved else "nan"])
    with open(files["success_map"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta_index", *tcols, *[f"success_{a}" for a in report.algorithms]])
        for i, theta in enumerate(report.thetas):
            frac = []
            for a in report.algorithms:
                rows = [r for r in report.rows if r.theta_index == i and r.algorithm == a]
                frac.append(f"{np.mean([r.status == RunStatus.SOLVED.value for r in rows]):.4g}")
            w.writerow([i, *[f"{v:.10g}" for v in theta], *frac])
    write_query_log([res for *_, res in results], files["query_log"],
                    labels={"theta_index": [i for i, *_ in results], "algorithm": [a for _, a, *_ in results],
                            "seed_index": [j for _, _, j, *_ in results]})
    files.update(plots.sweep_figures(report, out))
    return files


# -- budget curves --------------------------------------------------------------

@dataclass
class BudgetCurve:
    algorithms: tuple
    checkpoints: tuple
    unit: str
    success_rate: dict  # algorithm -> list per checkpoint
    mean_best: dict
    best_curves: dict = field(default_factory=dict)  # algorithm -> list of (queries, best) per seed
    files: dict = field(default_factory=dict)


def _best_at(res: RunResult, limit: float, unit: str) -> float:
    best = np.inf
    for r in res.query_log:
        used = r.queries if unit == "queries" else r.seconds
        if used > limit:
            break
        if r.admitted and np.all(r.lam == 1.0):
            best = min(best, r.objective)
    return best


def run_budget_curve(cfg: ExperimentConfig, out: Optional[Path] = None) -> BudgetCurve:
    """Success rate and mean best objective at each checkpoint, over ``n_seeds`` runs on
    the first sampled goal. Runs use the final checkpoint as their budget."""
    if not cfg.checkpoints:
        raise ConfigurationError("budget-curve needs [experiment] checkpoints")
    out = _prepare_output(out or cfg.resolved_output())
    problem = build_problem(cfg)
    theta = cfg.sample_goals()[0] if cfg.n_theta_samples else np.asarray(
        [v if isinstance(v, float) else v.lo for v in cfg.theta_goal])
    last = cfg.checkpoints[-1]
    budget = (Budget(max_solver_queries=int(last)) if cfg.checkpoint_unit == "queries"
              else Budget(max_wall_time=float(last)))
    rates, means, curves = {}, {}, {}
    runs = {}
    for alg in cfg.algorithms:
        runs[alg] = [run_one(cfg, problem, theta, alg, cfg.run_seed(0, j), budget) for j in range(cfg.n_seeds)]
        rates[alg], means[alg] = [], []
        for c in cfg.checkpoints:
            bests = np.array([_best_at(r, c, cfg.checkpoint_unit) for r in runs[alg]])
            ok = np.isfinite(bests)
            rates[alg].append(float(ok.mean()))
            means[alg].append(float(bests[ok].mean()) if ok.any() else float("nan"))
        curves[alg] = [best_so_far(r) for r in runs[alg]]
    curve = BudgetCurve(tuple(cfg.algorithms), tuple(cfg.checkpoints), cfg.checkpoint_unit, rates, means, curves)
    path = out / "budget_curve.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algorithm", "checkpoint", "unit", "success_rate", "mean_best_objective"])
        for alg in curve.algorithms:
            for c, s, m in zip(curve.checkpoints, rates[alg], means[alg]):
                w.writerow([alg, f"{c:g}", curve.unit, f"{s:.4f}", f"{m:.10g}"])
    from . import plots
    curve.files = {"budget_curve": path, **plots.budget_figure(curve, out)}
    return curve


# -- trajectory evolution ---------------------------------------------------------

def export_trajectory_evolution(tree: OptimizationTree, nlp: ParamNLP, pmap: ParamMap, path,
                                goal_node: Optional[int] = None) -> dict:
    """Write every trajectory on the tree path from the root to a goal node.

    The goal node defaults to the lowest-objective one. Produces
    ``step_XX_node_YY.csv`` per node, ``swings.csv`` and a figure of the pole
    angle along the path.
    """
    goals = tree.goal_nodes()
    if goal_node is None:
        if not goals:
            raise TreeError("tree has no goal node; nothing to export")
        goal_node = min(goals, key=lambda n: n.objective).id
    elif tree.node(goal_node).lambda_id != tree.goal_id:
        raise TreeError(f"node {goal_node} is not a goal node")
    out = _prepare_output(Path(path))
    nodes = tree.path_to(goal_node)
    # a tree whose easy and goal problems coincide stores the root alone
    if len(nodes) > 1 and np.array_equal(pmap.theta_easy, pmap.theta_goal):
        nodes = nodes[:1]
    rows, files = [], {}
    for k, n in enumerate(nodes):
        lam = tree.lam(n.lambda_id)
        theta = map_params(pmap, lam)
        f = out / f"step_{k:02d}_node_{n.id:04d}.csv"
        write_trajectory_csv(nlp, n.x_star, f)
        files[f"step_{k}"] = f
        rows.append((k, n.id, lam, theta, n.objective, count_swings(nlp, n.x_star)))
    summary = out / "swings.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh)
        d = tree.dim
        w.writerow(["step", "node_id", *[f"lambda_{i}" for i in range(d)],
                    *[f"theta_{n}" for n in PARAM_NAMES[: len(rows[0][3])]], "objective", "swings"])
        for k, nid, lam, theta, obj, sw in rows:
            w.writerow([k, nid, *[f"{v:.10g}" for v in lam], *[f"{v:.10g}" for v in theta], f"{obj:.10g}", sw])
    files["swings"] = summary
    from . import plots
    files.update(plots.trajectory_figure(nlp, [n.x_star for n in nodes], [r[5] for r in rows], out))
    return files
