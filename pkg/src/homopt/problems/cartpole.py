"""Cart-pole swing-up as a parameterized NLP (trapezoidal direct collocation).

Decision vector layout: ``[x_0, xd_0, phi_0, phid_0, ..., x_{N-1}, ..., phid_{N-1},
F_0, ..., F_{N-1}]``. ``phi = 0`` is hanging down, ``phi = pi`` upright.
Parameters ``theta = (m_cart, m_pole, F_max, l_pole, x_max)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from ..errors import ConfigurationError
from ..nlp import ParamNLP

PARAM_NAMES = ("m_cart", "m_pole", "F_max", "l_pole", "x_max")


@dataclass(frozen=True)
class CartPoleParams:
    m_cart: float
    m_pole: float
    F_max: float
    l_pole: float
    x_max: float

    def __post_init__(self):
        if min(self.as_array()) <= 0:
            raise ConfigurationError("cart-pole parameters must be strictly positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.m_cart, self.m_pole, self.F_max, self.l_pole, self.x_max], dtype=float)

    @classmethod
    def from_array(cls, theta) -> "CartPoleParams":
        return cls(*np.asarray(theta, dtype=float).tolist())


# the easy endpoint used throughout the cart-pole study
EASY_THETA = CartPoleParams(m_cart=20.0, m_pole=1.0, F_max=200.0, l_pole=0.6, x_max=1.6)


@dataclass(frozen=True)
class TranscriptionSettings:
    horizon: float = 5.0
    knots: int = 101
    gravity: float = 9.81

    def __post_init__(self):
        if self.knots < 2 or self.horizon <= 0:
            raise ConfigurationError("need knots >= 2 and horizon > 0")

    @property
    def dt(self) -> float:
        return self.horizon / (self.knots - 1)


def _accelerations(phi, omega, force, theta, g):
    m_cart, m_pole, _, l, _ = theta
    sn, cs = np.sin(phi), np.cos(phi)
    den = m_cart + m_pole * sn**2
    a = force + m_pole * l * sn * omega**2 + m_pole * g * sn * cs
    b = force * cs + m_pole * l * omega**2 * sn * cs + (m_cart + m_pole) * g * sn
    return a / den, -b / (l * den)


def cartpole_dynamics(state, force, p, gravity=9.81):
    """Time derivative of ``[x, xd, phi, phid]`` for a frictionless point-mass pole.

    ``state`` may be a single state or an ``(N, 4)`` stack with matching forces.
    """
    theta = p.as_array() if isinstance(p, CartPoleParams) else np.asarray(p)
    s = np.asarray(state)
    xdd, phidd = _accelerations(s[..., 2], s[..., 3], force, theta, gravity)
    return np.stack([s[..., 1], xdd, s[..., 3], phidd], axis=-1)


def _dynamics_jacobian(S, F, theta, g):
    """Per-knot Jacobian of the dynamics w.r.t. ``(x, xd, phi, phid, F)``, shape (N, 4, 5)."""
    m_cart, m_pole, _, l, _ = theta
    phi, om = S[:, 2], S[:, 3]
    sn, cs = np.sin(phi), np.cos(phi)
    c2 = cs * cs - sn * sn
    den = m_cart + m_pole * sn**2
    dden = 2 * m_pole * sn * cs
    a = F + m_pole * l * sn * om**2 + m_pole * g * sn * cs
    b = F * cs + m_pole * l * om**2 * sn * cs + (m_cart + m_pole) * g * sn
    a_phi = m_pole * l * cs * om**2 + m_pole * g * c2
    a_om = 2 * m_pole * l * sn * om
    b_phi = -F * sn + m_pole * l * om**2 * c2 + (m_cart + m_pole) * g * cs
    b_om = 2 * m_pole * l * om * sn * cs
    J = np.zeros(F.shape + (4, 5), dtype=np.result_type(S, F))
    J[:, 0, 1] = 1.0
    J[:, 2, 3] = 1.0
    J[:, 1, 2] = (a_phi * den - a * dden) / den**2
    J[:, 1, 3] = a_om / den
    J[:, 1, 4] = 1.0 / den
    J[:, 3, 2] = -(b_phi * den - b * dden) / (l * den**2)
    J[:, 3, 3] = -b_om / (l * den)
    J[:, 3, 4] = -cs / (l * den)
    return J


class CartPoleTranscription:
    """Sparse evaluators for the collocation NLP; see :func:`build_cartpole_nlp`."""

    def __init__(self, settings: TranscriptionSettings):
        self.settings = settings
        N = self.N = settings.knots
        self.dt = settings.dt
        self.g = settings.gravity
        self.n = 5 * N
        self.n_defect = 4 * (N - 1)
        self.m = self.n_defect + 8
        self.x_goal = np.array([0.0, 0.0, np.pi, 0.0])

        knot = np.concatenate([4 * np.arange(N)[:, None] + np.arange(4), 4 * N + np.arange(N)[:, None]], axis=1)
        self.knot_index = knot  # (N, 5) positions of (x, xd, phi, phid, F) for each knot
        rows = 4 * np.arange(N - 1)[:, None, None] + np.arange(4)[None, :, None]
        r = np.broadcast_to(rows, (N - 1, 4, 5))
        b = self.n_defect
        self._jrows = np.concatenate([r.ravel(), r.ravel(), b + np.arange(8)])
        self._jcols = np.concatenate([
            np.broadcast_to(knot[:-1, None, :], (N - 1, 4, 5)).ravel(),
            np.broadcast_to(knot[1:, None, :], (N - 1, 4, 5)).ravel(),
            np.arange(4), 4 * (N - 1) + np.arange(4),
        ])
        self._hrows = np.broadcast_to(knot[:, :, None], (N, 5, 5)).ravel()
        self._hcols = np.broadcast_to(knot[:, None, :], (N, 5, 5)).ravel()
        self._eye = np.zeros((4, 5))
        self._eye[:, :4] = np.eye(4)

    def split(self, z):
        N = self.N
        return z[: 4 * N].reshape(N, 4), z[4 * N:]

    def pack(self, states, forces):
        return np.concatenate([np.asarray(states, dtype=float).ravel(), np.asarray(forces, dtype=float)])

    # objective: dt * sum F^2
    def objective(self, z, theta):
        F = z[4 * self.N:]
        return self.dt * float(F @ F)

    def gradient(self, z, theta):
        g = np.zeros(self.n)
        g[4 * self.N:] = 2.0 * self.dt * z[4 * self.N:]
        return g

    def constraints(self, z, theta):
        S, F = self.split(z)
        f = cartpole_dynamics(S, F, theta, self.g)
        d = S[1:] - S[:-1] - 0.5 * self.dt * (f[1:] + f[:-1])
        return np.concatenate([d.ravel(), S[0], S[-1] - self.x_goal])

    def jacobian(self, z, theta):
        S, F = self.split(z)
        Jk = _dynamics_jacobian(S, F, np.asarray(theta, dtype=float), self.g)
        A = -0.5 * self.dt * Jk[:-1] - self._eye
        B = -0.5 * self.dt * Jk[1:] + self._eye
        vals = np.concatenate([A.ravel(), B.ravel(), np.ones(8)])
        return sp.csr_matrix((vals, (self._jrows, self._jcols)), shape=(self.m, self.n))

    def lagrangian_hessian(self, z, theta, obj_factor, w):
        S, F = self.split(z)
        theta = np.asarray(theta, dtype=float)
        V = np.asarray(w[: self.n_defect]).reshape(self.N - 1, 4)
        W = np.zeros((self.N, 4))
        W[:-1] += V
        W[1:] += V
        # complex-step derivative of W_k^T J_k along (phi, phid, F); the dynamics
        # are linear in x and xd
        h = 1e-30
        Hk = np.zeros((self.N, 5, 5))
        for i in (2, 3, 4):
            Sc = S.astype(complex)
            Fc = F.astype(complex)
            if i < 4:
                Sc[:, i] += 1j * h
            else:
                Fc = Fc + 1j * h
            Jc = _dynamics_jacobian(Sc, Fc, theta, self.g)
            Hk[:, :, i] = np.einsum("nrj,nr->nj", Jc.imag, W) / h
        Hk = -0.5 * self.dt * 0.5 * (Hk + Hk.transpose(0, 2, 1))
        Hk[:, 4, 4] += obj_factor * 2.0 * self.dt
        return sp.csr_matrix((Hk.ravel(), (self._hrows, self._hcols)), shape=(self.n, self.n))

    def lower_bounds(self, theta):
        lo = np.full(self.n, -np.inf)
        lo[0: 4 * self.N: 4] = -theta[4]
        lo[4 * self.N:] = -theta[2]
        return lo

    def upper_bounds(self, theta):
        return -self.lower_bounds(theta)

    def x_scale(self, theta):
        xs = np.ones(self.n)
        xs[4 * self.N:] = theta[2]
        return xs

    def obj_scale(self, theta):
        return 1.0 / (self.settings.horizon * theta[2] ** 2)

    def times(self):
        return np.linspace(0.0, self.settings.horizon, self.N)


def build_cartpole_nlp(settings: TranscriptionSettings = TranscriptionSettings()) -> ParamNLP:
    tr = CartPoleTranscription(settings)
    nlp = ParamNLP(
        n_vars=tr.n,
        n_eq=tr.m,
        objective=tr.objective,
        eq_constraints=tr.constraints,
        lower_bounds=tr.lower_bounds,
        upper_bounds=tr.upper_bounds,
        param_dim=5,
        gradient=tr.gradient,
        jacobian=tr.jacobian,
        lagrangian_hessian=tr.lagrangian_hessian,
        x_scale=tr.x_scale,
        obj_scale=tr.obj_scale,
        name=f"cartpole-N{settings.knots}",
    )
    object.__setattr__(nlp, "transcription", tr)
    return nlp


def transcription_of(nlp: ParamNLP) -> CartPoleTranscription:
    try:
        return nlp.transcription
    except AttributeError:
        raise ConfigurationError(f"{nlp.name} is not a cart-pole transcription") from None


def trajectory_table(nlp: ParamNLP, z):
    """Rows ``(t, x, xd, phi, phid, F)`` of a decision vector."""
    tr = transcription_of(nlp)
    S, F = tr.split(np.asarray(z, dtype=float))
    return np.column_stack([tr.times(), S, F])


def write_trajectory_csv(nlp: ParamNLP, z, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "xd", "phi", "phid", "F"])
        for row in trajectory_table(nlp, z):
            w.writerow([f"{v:.10g}" for v in row])


def count_swings(nlp: ParamNLP, z, upright_tol: float = 0.5) -> int:
    """Sign changes of the pole rate before the final upright interval.

    The final interval starts at the last knot from which ``|phi - pi|`` stays
    below ``upright_tol`` until the end of the horizon.
    """
    tr = transcription_of(nlp)
    S, _ = tr.split(np.asarray(z, dtype=float))
    far = np.abs(S[:, 2] - np.pi) >= upright_tol
    end = int(np.flatnonzero(far)[-1]) + 1 if far.any() else 0
    om = S[:end, 3]
    sgn = np.sign(om[np.abs(om) > 1e-6])
    return int(np.count_nonzero(sgn[1:] != sgn[:-1]))


def simulate(nlp: ParamNLP, z, theta, rtol=1e-10, atol=1e-10):
    """Integrate the dynamics under the linearly interpolated force profile.

    Returns the simulated final state; compare with the transcribed final knot.
    """
    tr = transcription_of(nlp)
    S, F = tr.split(np.asarray(z, dtype=float))
    t = tr.times()
    theta = np.asarray(theta, dtype=float)

    def rhs(ti, s):
        return cartpole_dynamics(s, np.interp(ti, t, F), theta, tr.g)

    sol = solve_ivp(rhs, (t[0], t[-1]), S[0], rtol=rtol, atol=atol, method="DOP853")
    return sol.y[:, -1]
