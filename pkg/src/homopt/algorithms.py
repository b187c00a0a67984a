"""Homotopy drivers: probabilistic (P-HO), linear incremental (LIHO),
randomized nearest-node (RHO) and the one-depth baseline.

Every driver roots itself by solving the easy problem ``theta(0_d)`` from
``x0`` and spends one solver query per attempted solve. Randomness comes only
from ``numpy.random.default_rng(seed)``, so a run is a pure function of its
inputs and seed (wall-clock budgets aside).
"""

from __future__ import annotations

import csv
import enum
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, TextIO

import numpy as np

from .errors import ConfigurationError, TreeInitError
from .nlp import FeasibilityTolerance, ParamMap, ParamNLP, is_feasible, map_params
from .solver import SolverSettings, solve
from .tree import OptimizationTree, init_tree


class RunStatus(str, enum.Enum):
    SOLVED = "Solved"
    BUDGET_EXHAUSTED = "BudgetExhausted"
    FAILED = "Failed"


@dataclass(frozen=True)
class PhoHyperparams:
    """``goal_bias`` is the probability of attempting the goal parameter,
    ``solve_ratio`` the attempts/(nodes*params) threshold above which a new
    parameter is sampled, ``max_iters`` the iteration cap ``q``."""

    goal_bias: float = 0.3
    solve_ratio: float = 1.0
    max_iters: int = 10_000
    similarity_tol: float = 1e-3
    # stop as soon as a goal solution is admitted (budget-saving option)
    stop_at_first_goal: bool = False

    def __post_init__(self):
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ConfigurationError("goal_bias must lie in [0, 1]")
        if self.solve_ratio <= 0:
            raise ConfigurationError("solve_ratio must be positive")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be at least 1")
        if self.similarity_tol <= 0:
            raise ConfigurationError("similarity_tol must be positive")


@dataclass(frozen=True)
class RhoHyperparams:
    goal_bias: float = 0.3
    max_iters: int = 10_000

    def __post_init__(self):
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ConfigurationError("goal_bias must lie in [0, 1]")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be at least 1")


@dataclass(frozen=True)
class LihoHyperparams:
    """Step-size adaptation: after ``k1`` consecutive successes the step is
    multiplied by ``c1``; after ``k2`` consecutive failures by ``c2``.

    With ``rollback`` (default) a failed step leaves the homotopy parameter
    where it was; ``rollback=False`` advances it regardless of the outcome.
    """

    k1: int = 2
    k2: int = 1
    c1: float = 1.5
    c2: float = 0.3
    eps: float = 1e-9
    step0: float = 1e-2
    rollback: bool = True

    def __post_init__(self):
        if self.k1 < 1 or self.k2 < 1:
            raise ConfigurationError("k1 and k2 must be at least 1")
        if self.c1 <= 1.0:
            raise ConfigurationError("c1 must exceed 1")
        if not 0.0 < self.c2 < 1.0:
            raise ConfigurationError("c2 must lie in (0, 1)")
        if self.eps <= 0:
            raise ConfigurationError("eps must be positive")
        if not 0.0 < self.step0 <= 1.0:
            raise ConfigurationError("step0 must lie in (0, 1]")


@dataclass(frozen=True)
class Budget:
    max_solver_queries: Optional[int] = None
    max_wall_time: Optional[float] = None

    def __post_init__(self):
        if self.max_solver_queries is not None and self.max_solver_queries < 1:
            raise ConfigurationError("max_solver_queries must be at least 1")
        if self.max_wall_time is not None and self.max_wall_time <= 0:
            raise ConfigurationError("max_wall_time must be positive")


@dataclass(frozen=True)
class QueryRecord:
    iteration: int
    phase: str  # "root", "solve", "goal" or "sample"
    lam: np.ndarray
    status: str  # solver status, "Infeasible", or "" for sample phases
    objective: float
    violation: float
    queries: int
    seconds: float
    admitted: bool = False  # the solution entered the tree as a new node


@dataclass
class RunResult:
    algorithm: str
    status: RunStatus
    goal_solutions: list
    best_objective: float
    best_solution: Optional[np.ndarray]
    solver_queries: int
    wall_time: float
    tree: Optional[OptimizationTree]
    query_log: list
    seed: Optional[int]
    step_trace: list = field(default_factory=list)

    @property
    def solved(self) -> bool:
        return self.status is RunStatus.SOLVED


class _Driver:
    """Solver access with budget accounting and query logging."""

    def __init__(self, nlp: ParamNLP, pmap: ParamMap, budget: Budget, settings: SolverSettings,
                 feas_tol: FeasibilityTolerance, trace: Optional[TextIO]):
        if pmap.theta_easy.size != nlp.param_dim:
            raise ConfigurationError(
                f"parameter map has {pmap.theta_easy.size} parameters, problem expects {nlp.param_dim}")
        self.nlp, self.pmap, self.budget = nlp, pmap, budget
        self.settings, self.feas_tol, self.trace = settings, feas_tol, trace
        self.queries = 0
        self.log: list[QueryRecord] = []
        self.t0 = time.perf_counter()

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.t0

    def exhausted(self) -> bool:
        b = self.budget
        return ((b.max_solver_queries is not None and self.queries >= b.max_solver_queries)
                or (b.max_wall_time is not None and self.elapsed >= b.max_wall_time))

    def query(self, lam, x_init, iteration, phase):
        """One solver call; returns ``(x, objective)`` for a feasible converged solve, else None."""
        lam = np.asarray(lam, dtype=float)
        theta = map_params(self.pmap, lam)
        rep = solve(self.nlp, theta, x_init, self.settings)
        self.queries += 1
        ok = rep.converged and is_feasible(self.nlp, rep.x_star, theta, self.feas_tol)
        status = rep.status.value if ok or not rep.converged else "Infeasible"
        self.log.append(QueryRecord(iteration, phase, lam.copy(), status, rep.objective,
                                    rep.constraint_violation, self.queries, self.elapsed))
        if self.trace is not None:
            self.trace.write(f"[{phase}] iter={iteration} lambda={np.array2string(lam, precision=4)} "
                             f"{status} f={rep.objective:.6g} queries={self.queries}\n")
        return (rep.x_star, rep.objective) if ok else None

    def admit(self, tree, x, lambda_id, parent_id, objective, require_unique=True) -> bool:
        """Offer the last query's solution to the tree and flag its log record if accepted."""
        ok = tree.admit_node(x, lambda_id, parent_id, objective, require_unique=require_unique)
        if ok:
            self.log[-1] = replace(self.log[-1], admitted=True)
        return ok

    def note_sample(self, iteration, lam):
        self.log.append(QueryRecord(iteration, "sample", np.asarray(lam, dtype=float).copy(), "",
                                    np.nan, np.nan, self.queries, self.elapsed))

    def root(self, x0, similarity_tol=1e-3):
        d = self.pmap.dim
        sol = self.query(np.zeros(d), x0, 0, "root")
        if sol is None:
            return None
        return init_tree(sol[0], sol[1], d, similarity_tol,
                         scale=self.nlp.variable_scale(self.pmap.theta_easy))

    def result(self, algorithm, status, tree, seed, goal_solutions=None, step_trace=None):
        if goal_solutions is None:
            goal_solutions = tree.solutions_at_goal() if tree is not None else []
        best, best_x = np.inf, None
        for x, f in goal_solutions:
            if f < best:
                best, best_x = f, x
        return RunResult(algorithm, status, goal_solutions, float(best), best_x,
                         self.queries, self.elapsed, tree, self.log, seed, step_trace or [])


def _setup(nlp, pmap, budget, settings, feas_tol, trace):
    return _Driver(nlp, pmap, budget or Budget(), settings or SolverSettings(),
                   feas_tol or FeasibilityTolerance(), trace)


def sample_attempt(tree: OptimizationTree, goal_bias: float, rng: np.random.Generator):
    """Pick an untried ``(node_id, lambda_id)`` pair.

    With probability ``goal_bias`` the goal parameter is paired with a node that
    has not attempted it; if no such node exists, or otherwise, the pair is
    drawn uniformly from all untried pairs. A node is never paired with its own
    parameter. Returns None when every pair has been attempted.
    """
    tried = tree.attempt_matrix()
    own = np.array([n.lambda_id for n in tree.nodes])
    tried[np.arange(len(tree.nodes)), own] = True
    if rng.random() < goal_bias:
        gid = tree.goal_id
        cand = np.flatnonzero(~tried[:, gid])
        if cand.size:
            return int(rng.choice(cand)), gid
    rows, cols = np.nonzero(~tried)
    if rows.size == 0:
        return None
    k = int(rng.integers(rows.size))
    return int(rows[k]), int(cols[k])


def run_pho(nlp: ParamNLP, pmap: ParamMap, x0, hyper: PhoHyperparams = PhoHyperparams(),
            budget: Optional[Budget] = None, seed: Optional[int] = None,
            settings: Optional[SolverSettings] = None, feas_tol: Optional[FeasibilityTolerance] = None,
            trace: Optional[TextIO] = None, observer: Optional[Callable] = None) -> RunResult:
    """Probabilistic homotopy optimization over a tree of local minima.

    Each iteration either attempts an untried (node, parameter) solve or, when
    the attempt ratio exceeds ``solve_ratio`` or no untried pair is left, draws
    a new parameter uniformly from the hypercube. Runs until ``max_iters`` or
    the budget is spent and keeps every distinct goal solution.
    ``observer(iteration, tree)``, if given, is called after every iteration.
    """
    drv = _setup(nlp, pmap, budget, settings, feas_tol, trace)
    rng = np.random.default_rng(seed)
    tree = drv.root(x0, hyper.similarity_tol)
    if tree is None:
        return drv.result("pho", RunStatus.FAILED, None, seed)
    stopped_by_budget = False
    for it in range(1, hyper.max_iters + 1):
        pair = None
        if tree.solve_sample_ratio() <= hyper.solve_ratio:
            pair = sample_attempt(tree, hyper.goal_bias, rng)
        if pair is None:
            lam = rng.random(tree.dim)
            tree.add_param(lam)
            drv.note_sample(it, lam)
            if observer is not None:
                observer(it, tree)
            continue
        if drv.exhausted():
            stopped_by_budget = True
            break
        node_id, lid = pair
        tree.record_attempt(node_id, lid)
        phase = "goal" if lid == tree.goal_id else "solve"
        sol = drv.query(tree.lam(lid), tree.node(node_id).x_star, it, phase)
        if sol is not None:
            drv.admit(tree, sol[0], lid, node_id, sol[1])
        if observer is not None:
            observer(it, tree)
        if sol is not None and hyper.stop_at_first_goal and tree.goal_nodes():
            break
    if tree.goal_nodes():
        status = RunStatus.SOLVED
    else:
        status = RunStatus.BUDGET_EXHAUSTED if stopped_by_budget else RunStatus.FAILED
    return drv.result("pho", status, tree, seed)


def run_rho(nlp: ParamNLP, pmap: ParamMap, x0, hyper: RhoHyperparams = RhoHyperparams(),
            budget: Optional[Budget] = None, seed: Optional[int] = None,
            settings: Optional[SolverSettings] = None, feas_tol: Optional[FeasibilityTolerance] = None,
            trace: Optional[TextIO] = None, observer: Optional[Callable] = None) -> RunResult:
    """Randomized homotopy: sample a parameter (the goal with probability
    ``goal_bias``), solve it from the nearest node in parameter space, and
    return at the first goal solution. Every iteration counts toward ``max_iters``.
    """
    drv = _setup(nlp, pmap, budget, settings, feas_tol, trace)
    rng = np.random.default_rng(seed)
    tree = drv.root(x0)
    if tree is None:
        return drv.result("rho", RunStatus.FAILED, None, seed)
    goal = np.ones(tree.dim)
    for it in range(1, hyper.max_iters + 1):
        if drv.exhausted():
            return drv.result("rho", RunStatus.BUDGET_EXHAUSTED, tree, seed)
        at_goal = rng.random() < hyper.goal_bias
        lam = goal if at_goal else rng.random(tree.dim)
        lid = tree.add_param(lam)
        node_id = tree.nearest_node(lam)
        if not tree.attempted(node_id, lid):
            tree.record_attempt(node_id, lid)
        sol = drv.query(lam, tree.node(node_id).x_star, it, "goal" if at_goal else "solve")
        if sol is not None:
            drv.admit(tree, sol[0], lid, node_id, sol[1], require_unique=False)
        if observer is not None:
            observer(it, tree)
        if sol is not None and at_goal:
            return drv.result("rho", RunStatus.SOLVED, tree, seed)
    return drv.result("rho", RunStatus.FAILED, tree, seed)


class StepController:
    """Adaptive step size of the incremental homotopy.

    ``update(success)`` consumes one solve outcome and returns the step to use next.
    """

    def __init__(self, hyper: LihoHyperparams):
        self.h = hyper
        self.step = hyper.step0
        self.successes = 0
        self.failures = 0

    def update(self, success: bool) -> float:
        if success:
            self.failures = 0
            self.successes += 1
            if self.successes >= self.h.k1:
                self.step *= self.h.c1
                self.successes = 0
        else:
            self.successes = 0
            self.failures += 1
            if self.failures >= self.h.k2:
                self.step *= self.h.c2
                self.failures = 0
        return self.step

    @property
    def terminated(self) -> bool:
        return self.step < self.h.eps


def run_liho(nlp: ParamNLP, pmap: ParamMap, x0, hyper: LihoHyperparams = LihoHyperparams(),
             budget: Optional[Budget] = None, seed: Optional[int] = None,
             settings: Optional[SolverSettings] = None, feas_tol: Optional[FeasibilityTolerance] = None,
             trace: Optional[TextIO] = None) -> RunResult:
    """Linear incremental homotopy along a scalar parameter.

    Deterministic; ``seed`` is only recorded. ``step_trace`` lists the step
    used by each continuation query. Fails once the step drops below ``eps``.
    """
    if pmap.dim != 1:
        raise ConfigurationError("the incremental homotopy needs a scalar (d = 1) parameter map")
    drv = _setup(nlp, pmap, budget, settings, feas_tol, trace)
    tree = drv.root(x0)
    if tree is None:
        return drv.result("liho", RunStatus.FAILED, None, seed)
    ctrl = StepController(hyper)
    lam = 0.0
    node_id = 0
    steps = []
    it = 0
    while True:
        if drv.exhausted():
            return drv.result("liho", RunStatus.BUDGET_EXHAUSTED, tree, seed, step_trace=steps)
        it += 1
        target = min(lam + ctrl.step, 1.0)
        steps.append(ctrl.step)
        sol = drv.query([target], tree.node(node_id).x_star, it, "goal" if target == 1.0 else "solve")
        if sol is not None:
            lid = tree.add_param([target])
            if not tree.attempted(node_id, lid):
                tree.record_attempt(node_id, lid)
            drv.admit(tree, sol[0], lid, node_id, sol[1], require_unique=False)
            node_id = len(tree.nodes) - 1
            lam = target
            if lam == 1.0:
                return drv.result("liho", RunStatus.SOLVED, tree, seed, step_trace=steps)
        elif not hyper.rollback:
            lam = target
            if lam == 1.0:
                return drv.result("liho", RunStatus.FAILED, tree, seed, step_trace=steps)
        ctrl.update(sol is not None)
        if ctrl.terminated:
            return drv.result("liho", RunStatus.FAILED, tree, seed, step_trace=steps)


def run_one_depth(nlp: ParamNLP, pmap: ParamMap, x0, budget: Optional[Budget] = None,
                  seed: Optional[int] = None, settings: Optional[SolverSettings] = None,
                  feas_tol: Optional[FeasibilityTolerance] = None,
                  trace: Optional[TextIO] = None) -> RunResult:
    """Solve the easy problem, then the goal problem from its solution (two queries)."""
    drv = _setup(nlp, pmap, budget, settings, feas_tol, trace)
    tree = drv.root(x0)
    if tree is None:
        return drv.result("one_depth", RunStatus.FAILED, None, seed)
    sol = drv.query(np.ones(tree.dim), tree.node(0).x_star, 1, "goal")
    tree.record_attempt(0, tree.goal_id)
    if sol is None:
        return drv.result("one_depth", RunStatus.FAILED, tree, seed)
    drv.admit(tree, sol[0], tree.goal_id, 0, sol[1], require_unique=False)
    return drv.result("one_depth", RunStatus.SOLVED, tree, seed)


ALGORITHMS = ("pho", "rho", "liho", "one_depth")


def run_algorithm(name: str, nlp: ParamNLP, pmap: ParamMap, x0, *, budget=None, seed=None,
                  settings=None, feas_tol=None, pho=PhoHyperparams(), rho=RhoHyperparams(),
                  liho=LihoHyperparams(), trace=None, observer=None) -> RunResult:
    """Dispatch by name; LIHO runs on the scalar version of ``pmap``.
    ``observer`` is passed to the tree-growing algorithms (P-HO and RHO)."""
    common = dict(budget=budget, seed=seed, settings=settings, feas_tol=feas_tol, trace=trace)
    if name == "pho":
        return run_pho(nlp, pmap, x0, pho, observer=observer, **common)
    if name == "rho":
        return run_rho(nlp, pmap, x0, rho, observer=observer, **common)
    if name == "liho":
        return run_liho(nlp, pmap.scalar(), x0, liho, **common)
    if name == "one_depth":
        return run_one_depth(nlp, pmap, x0, **common)
    raise ConfigurationError(f"unknown algorithm {name!r}; choose from {', '.join(ALGORITHMS)}")


def best_so_far(result: RunResult) -> tuple[np.ndarray, np.ndarray]:
    """Best admitted goal objective after each solver query (inf before the first goal solution)."""
    q, best = [], []
    cur = np.inf
    for r in result.query_log:
        if r.phase == "sample":
            continue
        if r.admitted and np.all(r.lam == 1.0):
            cur = min(cur, r.objective)
        q.append(r.queries)
        best.append(cur)
    return np.asarray(q, dtype=int), np.asarray(best)


def write_query_log(results, path_or_stream, labels: Optional[dict] = None) -> None:
    """CSV of every logged query; ``results`` is a RunResult or an iterable of them.

    ``labels`` maps extra leading column names to one value per result.
    """
    if isinstance(results, RunResult):
        results = [results]
    results = list(results)
    labels = labels or {}
    if any(len(v) != len(results) for v in labels.values()):
        raise ConfigurationError("every label column needs one value per result")
    d = max((r.lam.size for res in results for r in res.query_log), default=1)
    own = isinstance(path_or_stream, (str, bytes)) or hasattr(path_or_stream, "__fspath__")
    fh = open(path_or_stream, "w", newline="") if own else path_or_stream
    try:
        w = csv.writer(fh)
        w.writerow([*labels, "seed", "iter", "phase", *[f"lambda_{k}" for k in range(d)], "status", "admitted",
                    "objective", "violation", "queries", "seconds"])
        for k, res in enumerate(results):
            head = [v[k] for v in labels.values()]
            for r in res.query_log:
                lam = [f"{v:.17g}" for v in r.lam] + [""] * (d - r.lam.size)
                w.writerow([*head, "" if res.seed is None else res.seed, r.iteration, r.phase, *lam, r.status, int(r.admitted),
                            f"{r.objective:.12g}", f"{r.violation:.6g}", r.queries, f"{r.seconds:.6f}"])
    finally:
        if own:
            fh.close()


__all__ = [
    "RunStatus", "PhoHyperparams", "RhoHyperparams", "LihoHyperparams", "Budget", "QueryRecord",
    "RunResult", "sample_attempt", "run_pho", "run_rho", "run_liho", "run_one_depth",
    "StepController", "run_algorithm", "best_so_far", "write_query_log", "ALGORITHMS",
    "TreeInitError",
]
