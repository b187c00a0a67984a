import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from homopt.algorithms import Budget, run_algorithm
from homopt.errors import ConfigurationError
from homopt.problems.synthetic import KINDS, enumerate_minima, make_synthetic

# (s, t) of f = (x^2 - s)^2 + t x for each kind, restated independently of the module
FAMILIES = {
    "bifurcation": lambda l: (l - 0.5, 0.5 * l * (1 - l) * (4 * l - 2)),
    "double_well": lambda l: (1.0, 0.0),
    "fold": lambda l: (1.0, 3.0 * (2 * l - 1)),
    "disconnected": lambda l: (1.0, 3.0 * 16 * l**2 * (1 - l) ** 2),
    "abbreviated_path": lambda l: (1.0, 0.0),
}
UPPER = {"abbreviated_path": lambda l: 2 - 2.5 * l}


def root_oracle(kind, lam):
    """Interior minima from the real roots of f' = 4x^3 - 4 s x + t with f'' > 0,
    plus bound minima from the sign of f' at the box ends."""
    s, t = FAMILIES[kind](lam)
    lo, hi = -3.0, UPPER.get(kind, lambda l: 3.0)(lam)
    r = np.roots([4.0, 0.0, -4.0 * s, t])
    r = np.sort(r[np.abs(r.imag) < 1e-9].real)
    xs = [x for x in r if lo < x < hi and 12 * x * x - 4 * s > 0]
    def df(x):
        return 4 * x**3 - 4 * s * x + t
    if df(lo) > 0:
        xs.insert(0, lo)
    if df(hi) < 0:
        xs.append(hi)
    return xs


def test_bifurcation_examples():
    sp = make_synthetic("bifurcation")
    m0 = sp.oracle(0.0)
    assert len(m0) == 1 and m0[0].x == pytest.approx(0.0, abs=1e-6)
    m1 = sp.oracle(1.0)
    assert [m.x for m in m1] == pytest.approx([-np.sqrt(0.5), np.sqrt(0.5)], abs=1e-6)


@pytest.mark.parametrize("lam", [0.0, 0.3, 0.7, 1.0])
def test_double_well_minima(lam):
    assert [m.x for m in make_synthetic("double_well").oracle(lam)] == pytest.approx([-1.0, 1.0], abs=1e-6)


def test_asymmetric_double_well_goal_costs_differ():
    m = make_synthetic("double_well", asymmetry=0.3, bump=2.5).oracle(1.0)
    assert len(m) == 2 and abs(m[0].objective - m[1].objective) > 0.1
    # the right well disappears mid-path
    assert len(make_synthetic("double_well", asymmetry=0.3, bump=2.5).oracle(0.5)) == 1


def test_fold_branch_turns_back():
    sp = make_synthetic("fold")
    counts = [len(sp.oracle(l)) for l in np.linspace(0, 1, 21)]
    assert counts[0] == 1 and counts[-1] == 1 and max(counts) == 2
    assert sp.oracle(0.0)[0].x > 0 > sp.oracle(1.0)[0].x


def test_disconnected_right_branch_reappears():
    sp = make_synthetic("disconnected")
    right = [any(m.x > 0 for m in sp.oracle(l)) for l in (0.0, 0.5, 1.0)]
    assert right == [True, False, True]


def test_abbreviated_path_ends_on_bound():
    sp = make_synthetic("abbreviated_path")
    assert any(m.on_bound for m in sp.oracle(0.5))
    assert all(m.x < 0 for m in sp.oracle(1.0))


@given(st.sampled_from(KINDS), st.floats(0, 1))
def test_grid_oracle_agrees_with_polynomial_roots(kind, lam):
    grid = [m.x for m in make_synthetic(kind).oracle(lam)]
    roots = root_oracle(kind, lam)
    # minima that merge at a fold or bifurcation are degenerate; skip the knife edge
    s, t = FAMILIES[kind](lam)
    disc = -4 * (4.0 * (-4 * s) ** 3) - 27 * 16 * t * t
    if abs(disc) < 1e-3 or abs(s) < 1e-3:
        return
    assert len(grid) == len(roots)
    assert grid == pytest.approx(roots, abs=1e-5)


def test_oracle_completeness_against_algorithm_runs():
    # every minimum an algorithm lands on is one the oracle lists
    for kind in KINDS:
        sp = make_synthetic(kind)
        for alg in ("pho", "rho"):
            res = run_algorithm(alg, sp.nlp, sp.pmap, sp.x0, seed=5, budget=Budget(30))
            for n in res.tree.nodes:
                lam = float(res.tree.lam(n.lambda_id)[0])
                assert min(abs(n.x_star[0] - m.x) for m in sp.oracle(lam)) <= 1e-3


def test_unknown_kind_and_oracle_domain():
    with pytest.raises(ConfigurationError):
        make_synthetic("saddle")
    from homopt.problems.cartpole import build_cartpole_nlp
    with pytest.raises(ConfigurationError):
        enumerate_minima(build_cartpole_nlp(), np.ones(5))


def test_problem_unpacks():
    nlp, pmap, oracle = make_synthetic("fold")
    assert nlp.n_vars == 1 and pmap.dim == 1 and callable(oracle)
