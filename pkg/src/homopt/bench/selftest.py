"""Property suite on the synthetic Solution-Manifold problems.

Each check returns a :class:`CheckResult`; :func:`run_selftest` runs them all
and prints one ``PASS``/``FAIL`` line per check.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass
from functools import partial
from typing import Callable, Optional, TextIO

import numpy as np

from ..algorithms import (Budget, LihoHyperparams, RunResult, StepController, best_so_far,
                          run_algorithm, write_query_log)
from ..nlp import FeasibilityTolerance, ParamMap, is_feasible, map_params
from ..problems.cartpole import EASY_THETA, TranscriptionSettings, build_cartpole_nlp
from ..problems.synthetic import KINDS, make_synthetic
from ..tree import deserialize, serialize

ORACLE_TOL = 1e-3

# double well whose goal minima have distinct costs and whose right well
# vanishes mid-path, so a single continuation rarely reaches the cheaper one
ASYMMETRIC_DOUBLE_WELL = dict(asymmetry=0.3, bump=2.5)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(name: str, fn: Callable[[], tuple]) -> CheckResult:
    t0 = time.perf_counter()
    passed, detail = fn()
    return CheckResult(name, bool(passed), detail, time.perf_counter() - t0)


def _matches(x: float, minima, tol: float = ORACLE_TOL) -> bool:
    return any(abs(x - m.x) <= tol for m in minima)


# -- individual checks --------------------------------------------------------

def bifurcation_diversity(seeds=range(30), budget: int = 60):
    """RHO ends with exactly one goal solution; P-HO finds both goal branches."""
    sp = make_synthetic("bifurcation")
    goal_minima = sp.oracle(1.0)
    rho_counts, pho_both = [], 0
    for s in seeds:
        rho = run_algorithm("rho", sp.nlp, sp.pmap, sp.x0, seed=s, budget=Budget(budget))
        rho_counts.append(len(rho.goal_solutions))
        pho = run_algorithm("pho", sp.nlp, sp.pmap, sp.x0, seed=s, budget=Budget(budget))
        found = [x[0] for x, _ in pho.goal_solutions]
        pho_both += all(any(abs(x - m.x) <= ORACLE_TOL for x in found) for m in goal_minima)
    n = len(rho_counts)
    rho_ok = all(c == 1 for c in rho_counts)
    frac = pho_both / n if n else 0.0
    return (len(goal_minima) == 2 and rho_ok and frac >= 0.9,
            f"oracle goal minima {len(goal_minima)}, RHO single-solution runs "
            f"{sum(c == 1 for c in rho_counts)}/{n}, P-HO both-branch runs {pho_both}/{n} ({frac:.0%})")


def quality_dominance(seeds=range(30), budget: int = 60):
    """P-HO's mean best goal cost is no worse than RHO's; best-so-far never increases."""
    sp = make_synthetic("double_well", **ASYMMETRIC_DOUBLE_WELL)
    costs = sorted(m.objective for m in sp.oracle(1.0))
    pho_best, rho_best, monotone = [], [], True
    for s in seeds:
        pho = run_algorithm("pho", sp.nlp, sp.pmap, sp.x0, seed=s, budget=Budget(budget))
        rho = run_algorithm("rho", sp.nlp, sp.pmap, sp.x0, seed=s, budget=Budget(budget))
        pho_best.append(pho.best_objective)
        rho_best.append(rho.best_objective)
        _, curve = best_so_far(pho)
        monotone &= bool(np.all(curve[1:] <= curve[:-1]))
    mp, mr = float(np.mean(pho_best)), float(np.mean(rho_best))
    distinct = len(costs) == 2 and costs[1] - costs[0] > 1e-3
    return (distinct and mp <= mr and monotone,
            f"oracle goal costs {', '.join(f'{c:.4f}' for c in costs)}; mean best P-HO {mp:.4f} "
            f"vs RHO {mr:.4f}; P-HO best-so-far non-increasing: {monotone}")


def liho_step_trace():
    """Scripted success/success/failure sequence and the termination threshold."""
    h = LihoHyperparams()
    ctrl = StepController(h)
    trace = [ctrl.step]
    for outcome in (True, True, False):
        trace.append(ctrl.update(outcome))
    expected = [0.01, 0.01, 0.015, 0.0045]
    trace_ok = np.allclose(trace, expected, rtol=1e-12, atol=0.0)
    # from 1e-2, failures shrink by 0.3; 0.01 * 0.3**n < 1e-9 first at n = 14
    ctrl = StepController(h)
    n = 0
    while not ctrl.terminated:
        ctrl.update(False)
        n += 1
    expected_n = int(np.ceil(np.log(h.eps / h.step0) / np.log(h.c2)))
    term_ok = n == expected_n and ctrl.step < h.eps and ctrl.step / h.c2 >= h.eps
    return (trace_ok and term_ok,
            f"trace {[round(v, 6) for v in trace]}, terminated after {n} failures "
            f"(expected {expected_n}) at step {ctrl.step:.3g}")


def _fingerprint(res: RunResult) -> tuple:
    """Everything a seeded run produces except wall-clock times."""
    buf = io.StringIO()
    write_query_log(res, buf)
    log = [line.rsplit(",", 1)[0] for line in buf.getvalue().splitlines()]
    tree = serialize(res.tree) if res.tree is not None else None
    return log, tree, repr(res.best_objective), res.status


def _invariant_problems(include_cartpole: bool):
    for kind in KINDS:
        sp = make_synthetic(kind)
        yield kind, sp.nlp, sp.pmap, sp.x0, 40, sp.oracle
    if include_cartpole:
        nlp = build_cartpole_nlp(TranscriptionSettings(knots=41))
        easy = EASY_THETA.as_array()
        goal = easy.copy()
        goal[1] = 5.0  # heavier pole, reachable from the easy solution
        yield "cartpole", nlp, ParamMap.per_parameter(easy, goal), np.zeros(nlp.n_vars), 12, None


def structural_invariants(include_cartpole: bool = True, seed: int = 7):
    """Ratio bounds at every iteration, no duplicate attempts, feasible goal solutions,
    oracle agreement on synthetics, tree round trip and bitwise-reproducible runs."""
    tol = FeasibilityTolerance()
    problems = []
    failures = []
    for kind, nlp, pmap, x0, queries, oracle in _invariant_problems(include_cartpole):
        for alg in ("pho", "rho", "liho", "one_depth"):
            ratios = []

            def watch(it, tree):
                ratios.append(tree.solve_sample_ratio())

            pm = pmap.scalar() if alg == "liho" else pmap
            runs = [run_algorithm(alg, nlp, pm, x0, seed=seed, budget=Budget(queries),
                                  observer=watch if k == 0 else None) for k in range(2)]
            res: RunResult = runs[0]
            tag = f"{kind}/{alg}"
            problems.append(tag)
            if any(not 0.0 <= r <= 1.0 for r in ratios):
                failures.append(f"{tag}: ratio outside [0, 1]")
            tree = res.tree
            if tree is None:
                failures.append(f"{tag}: root solve failed")
                continue
            if len(tree.attempts) != len(set(tree.attempts)):
                failures.append(f"{tag}: duplicate attempts")
            if not 0.0 <= tree.solve_sample_ratio() <= 1.0:
                failures.append(f"{tag}: final ratio outside [0, 1]")
            theta_goal = map_params(pmap, np.ones(pmap.dim))
            for x, _ in res.goal_solutions:
                if not is_feasible(nlp, x, theta_goal, tol):
                    failures.append(f"{tag}: infeasible goal solution")
            if oracle is not None:
                for n in tree.nodes:
                    lam = float(tree.lam(n.lambda_id)[0])
                    if not _matches(float(n.x_star[0]), oracle(lam)):
                        failures.append(f"{tag}: node {n.id} at lambda={lam:.4g} is not an oracle minimum")
            if deserialize(io.StringIO(serialize(tree))) != tree:
                failures.append(f"{tag}: tree round trip differs")
            if _fingerprint(runs[0]) != _fingerprint(runs[1]):
                failures.append(f"{tag}: seeded runs differ")
    detail = f"{len(problems)} problem/algorithm pairs"
    if failures:
        detail += "; " + "; ".join(failures[:5]) + (" ..." if len(failures) > 5 else "")
    return not failures, detail


CHECKS = (
    ("bifurcation-diversity", bifurcation_diversity),
    ("quality-dominance", quality_dominance),
    ("liho-step-trace", liho_step_trace),
    ("structural-invariants", structural_invariants),
)


@dataclass
class SelftestReport:
    results: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)


def run_selftest(out: Optional[TextIO] = None, only: Optional[list] = None,
                 include_cartpole: bool = True) -> SelftestReport:
    """Run the checks (or those named in ``only``), echoing a line per check to ``out``."""
    results = []
    for name, fn in CHECKS:
        if only and name not in only:
            continue
        if fn is structural_invariants:
            fn = partial(structural_invariants, include_cartpole=include_cartpole)
        r = _timed(name, fn)
        results.append(r)
        if out is not None:
            out.write(r.line() + "\n")
            out.flush()
    return SelftestReport(results)
