import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from homopt.errors import ConfigurationError
from homopt.nlp import is_feasible
from homopt.problems.cartpole import (EASY_THETA, CartPoleParams, TranscriptionSettings, build_cartpole_nlp,
                                      cartpole_dynamics, count_swings, simulate, trajectory_table,
                                      transcription_of, write_trajectory_csv)
from homopt.problems.synthetic import make_synthetic
from homopt.solver import SolveStatus, check_gradients, solve

# easy-endpoint optimum from an independent interior-point solve of the same transcription
EASY_OBJECTIVE_ORACLE = 7171.091367518962
G = 9.81


def energy(s, th):
    """Total mechanical energy of the cart with a point-mass pole hanging at phi = 0."""
    M, m, _, l, _ = th
    x, xd, phi, w = s
    return 0.5 * (M + m) * xd**2 + m * l * np.cos(phi) * xd * w + 0.5 * m * l**2 * w**2 - m * G * l * np.cos(phi)


def energy_gradient(s, th, h=1e-30):
    # complex-step differentiation: exact to round-off
    g = np.zeros(4)
    for i in range(4):
        z = np.array(s, dtype=complex)
        z[i] += 1j * h
        g[i] = energy(z, th).imag / h
    return g


def test_dimensions(cartpole):
    assert cartpole.n_vars == 505
    tr = transcription_of(cartpole)
    assert tr.n_defect == 400 and cartpole.n_eq == 408


@pytest.mark.parametrize("phi", [0.0, np.pi])
def test_equilibria(phi):
    # sin(pi) is 1.2e-16 in floating point, hence the round-off allowance
    np.testing.assert_allclose(cartpole_dynamics(np.array([0.3, 0, phi, 0]), 0.0, EASY_THETA), 0.0, atol=1e-14)


@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.floats(1, 60), st.floats(0.6, 2), st.floats(5, 30))
def test_energy_conserved_without_force(state, m_pole, l_pole, m_cart):
    th = np.array([m_cart, m_pole, 100.0, l_pole, 1.6])
    f = cartpole_dynamics(np.array(state), 0.0, th)
    assert abs(energy_gradient(state, th) @ f) <= 1e-10 * max(1.0, m_pole * l_pole * 100)


def test_force_does_work_on_cart():
    th = EASY_THETA.as_array()
    s = np.array([0.0, 0.7, 1.1, -0.4])
    f = cartpole_dynamics(s, 5.0, th)
    assert energy_gradient(s, th) @ f == pytest.approx(5.0 * 0.7, rel=1e-10)


def test_batched_dynamics_matches_single():
    rng = np.random.default_rng(0)
    S, F = rng.normal(size=(7, 4)), rng.normal(size=7)
    batch = cartpole_dynamics(S, F, EASY_THETA)
    for k in range(7):
        np.testing.assert_allclose(batch[k], cartpole_dynamics(S[k], F[k], EASY_THETA), rtol=1e-14)


def test_transcription_derivatives(small_cartpole):
    rng = np.random.default_rng(3)
    z = rng.normal(size=small_cartpole.n_vars)
    chk = check_gradients(small_cartpole, EASY_THETA.as_array(), z, rel_tol=1e-4)
    assert chk.ok, chk.flagged[:5]


def test_bounds_follow_theta(cartpole):
    th = np.array([20.0, 30.0, 100.0, 1.3, 1.6])
    lo, hi = cartpole.bounds(th)
    S_lo, F_lo = transcription_of(cartpole).split(lo)
    assert np.all(S_lo[:, 0] == -1.6) and np.all(np.isinf(S_lo[:, 1:]))
    assert np.all(F_lo == -100.0) and np.array_equal(hi, -lo)


def test_easy_root(cartpole, easy_solution):
    th = EASY_THETA.as_array()
    assert easy_solution.objective == pytest.approx(EASY_OBJECTIVE_ORACLE, rel=1e-6)
    S, F = transcription_of(cartpole).split(easy_solution.x_star)
    tol = 1e-6
    np.testing.assert_allclose(S[0], 0.0, atol=tol)
    assert abs(np.mod(S[-1, 2], 2 * np.pi) - np.pi) <= tol
    np.testing.assert_allclose(S[-1, [0, 1, 3]], 0.0, atol=tol)
    assert np.max(np.abs(F)) <= 200.0 + 1e-9 and np.max(np.abs(S[:, 0])) <= 1.6 + 1e-9
    assert is_feasible(cartpole, easy_solution.x_star, th)


def test_collocation_consistency():
    th = EASY_THETA.as_array()
    errors = []
    for n in (51, 101, 201):
        nlp = build_cartpole_nlp(TranscriptionSettings(knots=n))
        rep = solve(nlp, th, np.zeros(nlp.n_vars))
        assert rep.converged
        S, _ = transcription_of(nlp).split(rep.x_star)
        errors.append(np.max(np.abs(simulate(nlp, rep.x_star, th) - S[-1])))
    assert errors[0] > errors[1] > errors[2]
    # trapezoidal collocation is second order: doubling N cuts the error about 4x
    assert errors[1] / errors[2] > 3.0


def test_hard_theta_from_zeros_not_converged(cartpole):
    hard = CartPoleParams(m_cart=20.0, m_pole=60.0, F_max=100.0, l_pole=2.0, x_max=1.6).as_array()
    assert solve(cartpole, hard, np.zeros(cartpole.n_vars)).status is not SolveStatus.CONVERGED


def test_count_swings(small_cartpole):
    tr = transcription_of(small_cartpole)
    t = tr.times()
    # three rate reversals while swinging, then a still upright finish
    w = np.where(t < 4.0, np.sin(np.pi * t), 0.0)
    phi = np.where(t < 4.0, 1.0, np.pi)
    S = np.column_stack([np.zeros_like(t), np.zeros_like(t), phi, w])
    z = tr.pack(S, np.zeros_like(t))
    assert count_swings(small_cartpole, z) == 3
    assert count_swings(small_cartpole, tr.pack(np.tile([0, 0, np.pi, 0], (tr.N, 1)), np.zeros(tr.N))) == 0


def test_trajectory_export(tmp_path, cartpole, easy_solution):
    tab = trajectory_table(cartpole, easy_solution.x_star)
    assert tab.shape == (101, 6) and tab[-1, 0] == pytest.approx(5.0)
    write_trajectory_csv(cartpole, easy_solution.x_star, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,x,xd,phi,phid,F" and len(lines) == 102


def test_param_validation():
    with pytest.raises(ConfigurationError):
        CartPoleParams(20.0, 0.0, 200.0, 0.6, 1.6)
    with pytest.raises(ConfigurationError):
        TranscriptionSettings(knots=1)
    with pytest.raises(ConfigurationError):
        transcription_of(make_synthetic("fold").nlp)
    assert CartPoleParams.from_array(EASY_THETA.as_array()) == EASY_THETA
