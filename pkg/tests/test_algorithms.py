import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chisquare

from homopt.algorithms import (ALGORITHMS, Budget, LihoHyperparams, PhoHyperparams, RhoHyperparams, RunStatus,
                               StepController, best_so_far, run_algorithm, run_liho, run_one_depth, run_pho,
                               run_rho, sample_attempt, write_query_log)
from homopt.errors import ConfigurationError
from homopt.nlp import ParamMap, ParamNLP, is_feasible
from homopt.problems.synthetic import make_synthetic
from homopt.tree import init_tree


def convex(dim=1):
    # (x - theta)^2 summed; theta-dependent minimizer, one global basin
    return ParamNLP(n_vars=dim, n_eq=0, objective=lambda x, th: float(np.sum((x - th) ** 2)), eq_constraints=None,
                    lower_bounds=-10.0, upper_bounds=10.0, param_dim=dim,
                    gradient=lambda x, th: 2 * (x - th), lagrangian_hessian=lambda x, th, s, w: 2 * s * np.eye(dim))


def degenerate_map(dim=1):
    return ParamMap.per_parameter(np.full(dim, 0.7), np.full(dim, 0.7))


@pytest.mark.parametrize("alg", ALGORITHMS)
def test_degenerate_map_is_solved(alg):
    res = run_algorithm(alg, convex(2), degenerate_map(2), np.zeros(2), seed=0, budget=Budget(20),
                        liho=LihoHyperparams(step0=1.0))
    assert res.status is RunStatus.SOLVED
    assert len(res.goal_solutions) >= 1
    assert res.solver_queries <= 20


def test_degenerate_one_depth_and_liho_use_two_queries():
    assert run_one_depth(convex(), degenerate_map(), np.zeros(1)).solver_queries == 2
    res = run_liho(convex(), degenerate_map(), np.zeros(1), LihoHyperparams(step0=1.0))
    assert res.solved and res.solver_queries == 2


def test_degenerate_rho_stops_on_first_goal_proposal():
    res = run_rho(convex(), degenerate_map(), np.zeros(1), RhoHyperparams(goal_bias=1.0), seed=3)
    assert res.solved and res.solver_queries == 2 and len(res.goal_solutions) == 1


def test_one_depth_convex_family():
    pm = ParamMap.per_parameter([-3.0], [4.0])
    res = run_one_depth(convex(), pm, np.zeros(1))
    assert res.solved and res.solver_queries == 2
    assert res.goal_solutions[0][0][0] == pytest.approx(4.0, abs=1e-6)


def test_liho_needs_scalar_map():
    with pytest.raises(ConfigurationError):
        run_liho(convex(2), ParamMap.per_parameter([0, 0], [1, 1]), np.zeros(2))


def test_unsolvable_root_is_failed():
    nlp = ParamNLP(n_vars=1, n_eq=2, objective=lambda x, th: 0.0,
                   eq_constraints=lambda x, th: np.array([x[0] - 1, x[0] + 1]),
                   lower_bounds=-5.0, upper_bounds=5.0, param_dim=1)
    for alg in ALGORITHMS:
        res = run_algorithm(alg, nlp, ParamMap([0.0], [1.0]), np.zeros(1), seed=0, budget=Budget(5))
        assert res.status is RunStatus.FAILED and res.tree is None and res.solver_queries == 1


# -- sample_attempt ----------------------------------------------------------

def grid_tree():
    """3 nodes x 3 params: root at 0, a node at the goal and one at 0.5."""
    t = init_tree(np.zeros(1), 0.0, 1)
    mid = t.add_param([0.5])
    t.admit_node([1.0], t.goal_id, 0, 0.0)
    t.admit_node([2.0], mid, 0, 0.0)
    return t


def test_goal_branch_forced():
    t = grid_tree()
    t.record_attempt(0, t.goal_id)
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert sample_attempt(t, 1.0, rng) == (2, t.goal_id)


def test_goal_branch_falls_back_when_empty():
    t = grid_tree()
    t.record_attempt(0, t.goal_id)
    t.record_attempt(2, t.goal_id)
    rng = np.random.default_rng(0)
    for _ in range(20):
        n, lid = sample_attempt(t, 1.0, rng)
        assert lid != t.goal_id and not t.attempted(n, lid)


def test_exhausted_returns_none():
    t = init_tree(np.zeros(1), 0.0, 1)
    t.record_attempt(0, t.goal_id)
    assert sample_attempt(t, 0.5, np.random.default_rng(0)) is None


def test_uniform_branch_chi_square():
    t = grid_tree()
    rng = np.random.default_rng(12345)
    counts = {}
    for _ in range(10_000):
        pair = sample_attempt(t, 0.0, rng)
        counts[pair] = counts.get(pair, 0) + 1
    # a node is never paired with its own parameter, leaving 6 of the 9 cells
    assert len(counts) == 6
    assert all(t.nodes[n].lambda_id != lid for n, lid in counts)
    assert chisquare(list(counts.values())).pvalue > 0.01


@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_sample_attempt_returns_untried_pair(seed, pg):
    t = grid_tree()
    rng = np.random.default_rng(seed)
    while (pair := sample_attempt(t, pg, rng)) is not None:
        assert not t.attempted(*pair)
        t.record_attempt(*pair)
    assert len(t.attempts) == 6


# -- step controller and LIHO ---------------------------------------------------

def test_step_controller_table_values():
    c = StepController(LihoHyperparams())
    assert c.update(True) == 0.01
    assert c.update(True) == pytest.approx(0.015)
    c = StepController(LihoHyperparams())
    assert c.update(False) == pytest.approx(0.003)


@given(st.lists(st.booleans(), max_size=60))
def test_step_controller_closed_form(outcomes):
    # with k2 = 1 every failure multiplies by c2; successes multiply by c1 in pairs
    h = LihoHyperparams()
    c = StepController(h)
    expected, run = h.step0, 0
    for ok in outcomes:
        c.update(ok)
        if ok:
            run += 1
            if run == 2:
                expected *= h.c1
                run = 0
        else:
            run = 0
            expected *= h.c2
    assert c.step == pytest.approx(expected, rel=1e-12)
    assert c.terminated == (c.step < h.eps)


def banded_nlp(lo=0.015, hi=0.021):
    # infeasible (inconsistent equalities) for lambda in (lo, hi)
    def cons(x, th):
        bad = lo < th[0] < hi
        return np.array([x[0] - th[0], x[0] - th[0] + (1.0 if bad else 0.0)])
    return ParamNLP(n_vars=1, n_eq=2, objective=lambda x, th: float(x[0] ** 2), eq_constraints=cons,
                    lower_bounds=-5.0, upper_bounds=5.0, param_dim=1)


def test_liho_rollback_and_compatibility_flag():
    pm = ParamMap([0.0], [1.0])
    strict = run_liho(banded_nlp(), pm, np.zeros(1))
    assert strict.status is RunStatus.FAILED
    lams = [float(r.lam[0]) for r in strict.query_log[1:]]
    assert lams[:3] == pytest.approx([0.01, 0.02, 0.013])
    assert max(lams) < 0.021
    loose = run_liho(banded_nlp(), pm, np.zeros(1), LihoHyperparams(rollback=False))
    assert loose.solved
    assert [float(r.lam[0]) for r in loose.query_log[1:4]] == pytest.approx([0.01, 0.02, 0.023])


def test_liho_deterministic():
    sp = make_synthetic("fold")
    logs = []
    for _ in range(2):
        buf = io.StringIO()
        write_query_log(run_liho(sp.nlp, sp.pmap, sp.x0), buf)
        logs.append([l.rsplit(",", 1)[0] for l in buf.getvalue().splitlines()])
    assert logs[0] == logs[1]


# -- P-HO / RHO properties -------------------------------------------------------

@given(st.sampled_from(["pho", "rho"]), st.integers(0, 1000), st.integers(1, 25),
       st.sampled_from(["bifurcation", "double_well", "fold"]))
def test_budget_compliance_and_result_invariants(alg, seed, budget, kind):
    sp = make_synthetic(kind)
    res = run_algorithm(alg, sp.nlp, sp.pmap, sp.x0, seed=seed, budget=Budget(budget))
    assert res.solver_queries <= budget
    if res.solved:
        assert res.goal_solutions
        assert res.best_objective == min(f for _, f in res.goal_solutions)
        for x, _ in res.goal_solutions:
            assert is_feasible(sp.nlp, x, [1.0])
    if alg == "rho" and res.solved:
        assert len(res.goal_solutions) == 1
    _, curve = best_so_far(res)
    assert np.all(curve[1:] <= curve[:-1])


def test_seeded_runs_identical():
    sp = make_synthetic("bifurcation")
    for alg in ("pho", "rho"):
        a, b = (run_algorithm(alg, sp.nlp, sp.pmap, sp.x0, seed=11, budget=Budget(30)) for _ in range(2))
        assert a.tree == b.tree and a.best_objective == b.best_objective
        assert [(r.phase, r.status, r.objective) for r in a.query_log] == \
               [(r.phase, r.status, r.objective) for r in b.query_log]


def test_pho_keeps_going_after_first_goal_and_finds_both_branches():
    sp = make_synthetic("bifurcation")
    res = run_pho(sp.nlp, sp.pmap, sp.x0, seed=1, budget=Budget(60))
    assert res.solver_queries == 60
    xs = sorted(x[0] for x, _ in res.goal_solutions)
    oracle = sorted(m.x for m in sp.oracle(1.0))
    assert len(xs) >= 2
    assert xs[0] == pytest.approx(oracle[0], abs=1e-3) and xs[-1] == pytest.approx(oracle[-1], abs=1e-3)


def test_pho_stop_at_first_goal_option():
    sp = make_synthetic("double_well")
    res = run_pho(sp.nlp, sp.pmap, sp.x0, PhoHyperparams(stop_at_first_goal=True), seed=0, budget=Budget(60))
    assert res.solved and res.solver_queries < 60


def test_pho_iteration_cap():
    sp = make_synthetic("double_well")
    res = run_pho(sp.nlp, sp.pmap, sp.x0, PhoHyperparams(max_iters=3), seed=0)
    assert res.solver_queries <= 4


def test_observer_sees_every_iteration():
    sp = make_synthetic("fold")
    seen = []
    run_pho(sp.nlp, sp.pmap, sp.x0, PhoHyperparams(max_iters=25), seed=2,
            observer=lambda it, tree: seen.append((it, tree.solve_sample_ratio())))
    assert [i for i, _ in seen] == list(range(1, 26))
    assert all(0 <= r <= 1 for _, r in seen)


def test_query_log_csv():
    sp = make_synthetic("double_well")
    res = run_rho(sp.nlp, sp.pmap, sp.x0, seed=4, budget=Budget(10))
    buf = io.StringIO()
    write_query_log([res, res], buf)
    rows = buf.getvalue().splitlines()
    assert rows[0] == "seed,iter,phase,lambda_0,status,admitted,objective,violation,queries,seconds"
    assert len(rows) == 1 + 2 * len(res.query_log)


@pytest.mark.parametrize("cls,kw", [
    (PhoHyperparams, dict(goal_bias=1.5)), (PhoHyperparams, dict(solve_ratio=0.0)),
    (PhoHyperparams, dict(max_iters=0)), (RhoHyperparams, dict(goal_bias=-0.1)),
    (LihoHyperparams, dict(c1=1.0)), (LihoHyperparams, dict(c2=1.0)), (LihoHyperparams, dict(eps=0.0)),
    (LihoHyperparams, dict(step0=0.0)), (LihoHyperparams, dict(k1=0)), (Budget, dict(max_solver_queries=0)),
    (Budget, dict(max_wall_time=-1.0)),
])
def test_hyperparameter_validation(cls, kw):
    with pytest.raises(ConfigurationError):
        cls(**kw)


def test_unknown_algorithm():
    sp = make_synthetic("fold")
    with pytest.raises(ConfigurationError):
        run_algorithm("bfs", sp.nlp, sp.pmap, sp.x0)
