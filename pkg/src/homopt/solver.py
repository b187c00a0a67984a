"""Solver for box-bounded, equality-constrained NLPs built on the augmented Lagrangian.

Two methods share the scaling, bound handling and linear algebra:

``sqp`` (default)
    Newton steps on the KKT system, globalized by a line search on the
    augmented Lagrangian ``f + mu^T c + rho/2 |c|^2`` over both ``x`` and the
    multipliers. ``rho`` grows whenever the step is not a descent direction
    for that merit, or the line search fails.
``al``
    The classic method of multipliers: bound-constrained subproblems solved by
    projected Newton (or projected gradient), then ``mu <- mu + rho * c(x)`` and
    tenfold penalty growth when the violation does not drop tenfold.

Bounds are handled with a Bertsekas-style epsilon-active set and projection
onto the box; indefinite Hessians are shifted until a banded Cholesky (under
a reverse Cuthill-McKee ordering) succeeds.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from typing import Optional, TextIO

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.sparse.linalg import spsolve

from .errors import ConfigurationError
from .nlp import ParamNLP, fd_gradient, fd_jacobian

log = logging.getLogger(__name__)


class SolveStatus(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERATIONS = "MaxIterations"
    DIVERGED = "Diverged"
    NON_FINITE = "NonFinite"


@dataclass(frozen=True)
class SolverSettings:
    max_outer_iters: int = 50
    max_inner_iters: int = 2000
    kkt_tol: float = 1e-4
    eq_tol: float = 1e-6
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e10
    inner_step_tol: float = 1e-12
    armijo_slope: float = 1e-4
    armijo_factor: float = 0.5
    # "sqp": Newton-KKT steps with an augmented-Lagrangian merit (default);
    # "al": nested augmented Lagrangian with bound-constrained subproblems
    method: str = "sqp"
    max_iters: int = 200
    regularization: float = 1e6
    inner_method: str = "newton"
    # "least_squares": initial multipliers minimize the free-variable Lagrangian gradient
    multiplier_init: str = "least_squares"
    # cap on Newton/gradient steps summed over all outer iterations; 0 = no cap
    max_total_inner: int = 0
    # at first-order points, step along negative curvature instead of stopping at saddles
    second_order: bool = True

    def __post_init__(self):
        if min(self.kkt_tol, self.eq_tol, self.inner_step_tol) <= 0:
            raise ConfigurationError("solver tolerances must be positive")
        if self.penalty_growth <= 1:
            raise ConfigurationError("penalty_growth must exceed 1")
        if not 0 < self.penalty_init <= self.penalty_max:
            raise ConfigurationError("need 0 < penalty_init <= penalty_max")
        if self.max_outer_iters < 1 or self.max_inner_iters < 1:
            raise ConfigurationError("iteration limits must be at least 1")
        if self.method not in ("sqp", "al"):
            raise ConfigurationError(f"unknown method {self.method!r}")
        if self.max_iters < 1 or self.regularization <= 0:
            raise ConfigurationError("need max_iters >= 1 and regularization > 0")
        if self.inner_method not in ("newton", "gradient"):
            raise ConfigurationError(f"unknown inner_method {self.inner_method!r}")
        if self.multiplier_init not in ("zero", "least_squares"):
            raise ConfigurationError(f"unknown multiplier_init {self.multiplier_init!r}")


@dataclass
class SolveReport:
    status: SolveStatus
    x_star: np.ndarray
    objective: float
    constraint_violation: float
    outer_iters: int
    inner_iters_total: int
    wall_time: float
    stationarity: float = float("inf")
    multipliers: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def converged(self) -> bool:
        return self.status is SolveStatus.CONVERGED


class _NonFinite(Exception):
    pass


def _finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise _NonFinite


class _BandedFactor:
    """Banded Cholesky of a symmetric sparse matrix under a fixed RCM ordering."""

    def __init__(self, pattern):
        self.perm = reverse_cuthill_mckee(sp.csr_matrix(pattern), symmetric_mode=True)
        self.iperm = np.empty_like(self.perm)
        self.iperm[self.perm] = np.arange(self.perm.size)

    def solve(self, H, g, fixed, delta_prev):
        """Solve ``(H_ff + delta I) d = -g`` on free variables, shifting as needed.

        Returns ``(d, delta)``; entries at ``fixed`` are zero in ``d``.
        """
        n = g.size
        H = H.tocoo()
        r = self.iperm[H.row]
        c = self.iperm[H.col]
        keep = (c >= r) & ~fixed[H.row] & ~fixed[H.col]
        r, c, v = r[keep], c[keep], H.data[keep]
        bw = int(np.max(c - r)) if r.size else 0
        ab = np.zeros((bw + 1, n))
        np.add.at(ab, (bw + r - c, c), v)
        fixed_p = fixed[self.perm]
        ab[bw, fixed_p] = 1.0
        scale = max(1.0, float(np.max(np.abs(ab[bw]))))
        rhs = np.where(fixed, 0.0, -g)[self.perm]
        delta = 0.0
        while True:
            trial = ab.copy()
            trial[bw, ~fixed_p] += delta
            try:
                ch = cholesky_banded(trial)
                break
            except LinAlgError:
                if delta == 0.0:
                    delta = 1e-4 if delta_prev == 0.0 else max(1e-20, delta_prev / 3.0)
                else:
                    delta *= 8.0
                if delta > 1e12 * scale:
                    raise _NonFinite from None
        dp = cho_solve_banded((ch, False), rhs)
        d = dp[self.iperm]
        d[fixed] = 0.0
        return d, delta


class _Scaled:
    """The NLP expressed in scaled variables ``y = x / xs`` and objective ``s * f``."""

    def __init__(self, nlp: ParamNLP, theta):
        self.nlp = nlp
        self.theta = np.asarray(theta, dtype=float)
        self.xs = nlp.variable_scale(self.theta)
        self.fs = nlp.objective_scale(self.theta)
        lo, hi = nlp.bounds(self.theta)
        self.lo = lo / self.xs
        self.hi = hi / self.xs

    def f(self, y):
        return self.fs * self.nlp.objective(y * self.xs, self.theta)

    def g(self, y):
        return self.fs * self.nlp.objective_gradient(y * self.xs, self.theta) * self.xs

    def c(self, y):
        return self.nlp.constraints(y * self.xs, self.theta)

    def J(self, y):
        return _scale_cols(self.nlp.constraint_jacobian(y * self.xs, self.theta), self.xs)

    def H(self, y, w):
        H = _scale_cols(self.nlp.hessian(y * self.xs, self.theta, self.fs, w), self.xs)
        H.data *= np.repeat(self.xs, np.diff(H.indptr))
        return H


def _scale_cols(A, v):
    # in-place on a private CSR copy; cheaper than a product with a diagonal matrix
    A = sp.csr_matrix(A, copy=True)
    A.data *= v[A.indices]
    return A


def _ls_multipliers(P, y):
    # fit on interior variables only: a variable on its bound carries a bound
    # multiplier of unknown sign and would bias the fit
    g = P.g(y)
    J = P.J(y)
    free = (y > P.lo) & (y < P.hi)
    Jf = J[:, free]
    A = (Jf @ Jf.T).tocsc()
    A = A + 1e-8 * max(1.0, abs(A).max()) * sp.eye(A.shape[0], format="csc")
    mu = spsolve(A, -(Jf @ g[free]))
    return np.asarray(mu, dtype=float) if np.all(np.isfinite(mu)) else np.zeros(J.shape[0])


def _project(y, lo, hi):
    return np.minimum(np.maximum(y, lo), hi)


def solve(nlp: ParamNLP, theta, x_init, settings: SolverSettings = SolverSettings(),
          trace: Optional[TextIO] = None) -> SolveReport:
    """Minimize ``nlp`` at parameters ``theta`` starting from ``x_init``.

    The result is a pure function of the inputs (apart from ``wall_time``).
    Only ``Converged`` reports carry usable solutions.
    """
    t_start = time.perf_counter()
    x_init = np.asarray(x_init, dtype=float)
    if x_init.shape != (nlp.n_vars,):
        raise ConfigurationError(f"x_init has shape {x_init.shape}, expected ({nlp.n_vars},)")
    if not np.all(np.isfinite(x_init)):
        raise ConfigurationError("x_init must be finite")

    P = _Scaled(nlp, theta)
    run = _Run(P, settings, trace)
    run.y = _project(x_init / P.xs, P.lo, P.hi)
    run.mu = np.zeros(nlp.n_eq)
    try:
        if nlp.n_eq and settings.multiplier_init == "least_squares":
            run.mu = _ls_multipliers(P, run.y)
        if settings.method == "sqp":
            run.status = _sqp(run)
        else:
            run.status = _nested(run)
    except _NonFinite:
        run.status = SolveStatus.NON_FINITE

    x = run.y * P.xs
    with np.errstate(all="ignore"):
        fval = float(nlp.objective(x, P.theta))
        c_end = nlp.constraints(x, P.theta)
    viol = float(np.max(np.abs(c_end), initial=0.0))
    status = run.status
    if status is SolveStatus.CONVERGED and not np.isfinite(fval):
        status = SolveStatus.NON_FINITE
    if status is SolveStatus.NON_FINITE:
        viol = viol if np.isfinite(viol) else float("inf")
    report = SolveReport(
        status=status,
        x_star=x,
        objective=fval,
        constraint_violation=viol,
        outer_iters=run.outer,
        inner_iters_total=run.inner,
        wall_time=time.perf_counter() - t_start,
        stationarity=run.stat,
        multipliers=run.mu,
    )
    log.debug("solve %s: %s after %d/%d iterations, f=%.6g, viol=%.2e",
              nlp.name, status.value, run.outer, run.inner, fval, viol)
    return report


class _Run:
    """Mutable iterate shared by the two solve methods."""

    def __init__(self, P, settings, trace):
        self.P = P
        self.s = settings
        self.trace = trace
        self.y = None
        self.mu = None
        self.outer = 0
        self.inner = 0
        self.stat = float("inf")
        self.status = SolveStatus.MAX_ITERATIONS
        self.factor = None
        self.delta = 0.0

    def newton_direction(self, K, rhs, active):
        """Shifted Newton step on the free variables for a symmetric sparse ``K``."""
        K = sp.csr_matrix(K)
        _finite(K.data)
        if self.factor is None:
            self.factor = _BandedFactor(K + sp.eye(K.shape[0]))
        d, self.delta = self.factor.solve(K, rhs, active, self.delta)
        return d

    def log(self, viol, penalty):
        if self.trace is not None:
            P = self.P
            self.trace.write(
                f"iter={self.outer} inner_total={self.inner} objective={P.f(self.y) / P.fs:.10g} "
                f"violation={viol:.3e} stationarity={self.stat:.3e} penalty={penalty:.3e}\n")


def _kkt_measures(P, y, mu):
    c = P.c(y)
    g = P.g(y)
    J = P.J(y)
    gl = g + J.T @ mu if c.size else g
    _finite(c, gl)
    viol = float(np.max(np.abs(c), initial=0.0))
    stat = float(np.max(np.abs(_project(y - gl, P.lo, P.hi) - y), initial=0.0))
    return c, J, gl, viol, stat


def _sqp(run: _Run) -> SolveStatus:
    """SQP iterations with an augmented-Lagrangian merit over the primal-dual pair.

    The step solves ``(H + r J^T J) d = -(grad L + r J^T c)`` on the free
    variables, i.e. the KKT system with its constraint block regularized by
    ``1/r``; the multiplier step is ``r (c + J d)``. The merit penalty rises
    whenever the step is not a sufficient descent direction for
    ``f + mu^T c + rho/2 |c|^2``.
    """
    P, s = run.P, run.s
    lo, hi = P.lo, P.hi
    rho = s.penalty_init
    r = s.regularization

    def merit(yy, mm):
        cc = P.c(yy)
        return P.f(yy) + mm @ cc + 0.5 * rho * (cc @ cc)

    for run.outer in range(s.max_iters + 1):
        y, mu = run.y, run.mu
        c, J, gl, viol, run.stat = _kkt_measures(P, y, mu)
        run.log(viol, rho)
        eps = min(1e-2, max(run.stat, viol))
        active = ((y <= lo + eps) & (gl > 0)) | ((y >= hi - eps) & (gl < 0))
        Hl = P.H(y, mu)
        if viol <= s.eq_tol and run.stat <= s.kkt_tol:
            if not s.second_order or not _escape_saddle(run, Hl + r * (J.T @ J), gl, active, merit):
                return SolveStatus.CONVERGED
            continue
        if run.outer == s.max_iters:
            break
        K = Hl + r * (J.T @ J) if c.size else Hl
        rhs = gl + r * (J.T @ c) if c.size else gl
        for _ in range(8):
            d = run.newton_direction(K, rhs, active)
            # a free variable on its bound that the step pushes outward would be
            # clipped by the projection and bend the step off the linearization
            blocked = ~active & (((y <= lo) & (d < 0)) | ((y >= hi) & (d > 0)))
            if not blocked.any():
                break
            active = active | blocked
        d[active] = np.where(y[active] <= lo[active] + eps, lo[active], hi[active]) - y[active]
        Jd = J @ d
        dmu = r * (c + Jd)
        # merit slope: base + rho * c^T J d, with c^T J d < 0 away from feasibility
        base = gl @ d + c @ dmu
        cJd = c @ Jd
        curv = max(0.5 * (d @ (Hl @ d) + run.delta * (d @ d)), 0.0)
        if cJd < 0:
            need = (base + curv) / -cJd
            if rho < need:
                rho = max(2.0 * need, s.penalty_growth * rho)
        if rho > s.penalty_max:
            return SolveStatus.DIVERGED
        slope = min(base + rho * cJd, 0.0)
        m0 = merit(y, mu)
        alpha = 1.0
        while True:
            run.inner += 1
            y_new = _project(y + alpha * d, lo, hi)
            m_new = merit(y_new, mu + alpha * dmu)
            if np.isfinite(m_new) and m_new <= m0 + s.armijo_slope * alpha * slope:
                break
            alpha *= s.armijo_factor
            if alpha < 1e-10:
                y_new = None
                break
        if y_new is None:
            rho *= s.penalty_growth
            if rho > s.penalty_max:
                return SolveStatus.DIVERGED
            continue
        if not np.all(np.isfinite(P.c(y_new))):
            raise _NonFinite
        run.y = y_new
        run.mu = mu + alpha * dmu
    return SolveStatus.MAX_ITERATIONS


def _escape_saddle(run: _Run, K, gl, active, merit) -> bool:
    """Take a descent step along negative curvature of ``K`` on the free variables.

    Returns False when ``K`` is positive semidefinite there (a local minimum)
    or no decrease is found along the curvature direction.
    """
    K = sp.csr_matrix(K)
    free = ~active
    if not free.any():
        return False
    if run.factor is None:
        run.factor = _BandedFactor(K + sp.eye(K.shape[0]))
    _, delta = run.factor.solve(K, np.zeros(K.shape[0]), active, 0.0)
    if delta == 0.0:
        return False
    Kff = K[free][:, free].toarray()
    w, V = np.linalg.eigh(Kff)
    if w[0] >= -1e-8 * max(1.0, float(np.max(np.abs(Kff.diagonal())))):
        return False
    v = np.zeros(K.shape[0])
    v[free] = V[:, 0]
    slope = float(gl @ v)
    if slope > 0 or (slope == 0 and v[np.argmax(np.abs(v))] < 0):
        v = -v
    P, s = run.P, run.s
    m0 = merit(run.y, run.mu)
    alpha = 1.0
    while alpha >= 1e-8:
        run.inner += 1
        y_new = _project(run.y + alpha * v, P.lo, P.hi)
        m_new = merit(y_new, run.mu)
        if np.isfinite(m_new) and m_new < m0 + 0.5 * s.armijo_slope * alpha**2 * w[0]:
            run.y = y_new
            return True
        alpha *= s.armijo_factor
    return False


def _nested(run: _Run) -> SolveStatus:
    """Classic augmented Lagrangian: bound-constrained subproblems, then multiplier update."""
    P, s = run.P, run.s
    lo, hi = P.lo, P.hi
    m = P.c(run.y).size
    rho = s.penalty_init
    kkt = s.kkt_tol
    omega = kkt if m == 0 else max(1e-2, kkt)
    best_viol = np.inf

    def merit(yy, mu):
        cc = P.c(yy)
        return P.f(yy) + mu @ cc + 0.5 * rho * (cc @ cc), cc

    phi, cc = merit(run.y, run.mu)
    _finite(phi, cc)
    for run.outer in range(1, s.max_outer_iters + 1):
        y, mu = run.y, run.mu
        for _ in range(s.max_inner_iters):
            w = mu + rho * cc
            J = P.J(y)
            g = P.g(y) + (J.T @ w if m else 0.0)
            _finite(g)
            pg_norm = float(np.max(np.abs(_project(y - g, lo, hi) - y), initial=0.0))
            if pg_norm <= omega:
                break
            if s.max_total_inner and run.inner >= s.max_total_inner:
                run.y = y
                return SolveStatus.MAX_ITERATIONS
            eps = min(1e-2, pg_norm)
            active = ((y <= lo + eps) & (g > 0)) | ((y >= hi - eps) & (g < 0))
            if s.inner_method == "newton":
                H = P.H(y, w)
                if m:
                    H = H + rho * (J.T @ J)
                d = run.newton_direction(H, g, active)
                hd = sp.csr_matrix(H).diagonal()
                d[active] = -g[active] / np.where(hd[active] > 0, hd[active], 1.0)
            else:
                d = -g
            alpha = 1.0
            while True:
                y_new = _project(y + alpha * d, lo, hi)
                phi_new, cc_new = merit(y_new, mu)
                if np.isfinite(phi_new) and phi_new <= phi + s.armijo_slope * (g @ (y_new - y)):
                    break
                alpha *= s.armijo_factor
                if alpha < 1e-14:
                    y_new = None
                    break
            run.inner += 1
            if y_new is None:
                break
            step = float(np.max(np.abs(y_new - y), initial=0.0))
            y, phi, cc = y_new, phi_new, cc_new
            _finite(cc)
            if step <= s.inner_step_tol:
                break
        run.y = y
        viol = float(np.max(np.abs(cc), initial=0.0))
        run.mu = mu + rho * cc
        _, _, _, _, run.stat = _kkt_measures(P, y, run.mu)
        run.log(viol, rho)
        if viol <= s.eq_tol and run.stat <= kkt:
            return SolveStatus.CONVERGED
        if viol > 0.1 * best_viol:
            rho *= s.penalty_growth
            if rho > s.penalty_max:
                return SolveStatus.DIVERGED
        else:
            omega = max(0.1 * omega, 0.5 * kkt)
        if viol <= s.eq_tol:
            omega = 0.5 * kkt
        best_viol = min(best_viol, viol)
        phi, cc = merit(y, run.mu)
        _finite(phi)
    return SolveStatus.MAX_ITERATIONS


@dataclass
class GradientCheck:
    objective_max_error: float
    jacobian_max_error: float
    flagged: list  # ("objective", j) or ("jacobian", i, j)
    rel_tol: float

    @property
    def ok(self) -> bool:
        return not self.flagged


def check_gradients(nlp: ParamNLP, theta, x, rel_tol: float = 1e-4) -> GradientCheck:
    """Compare supplied derivatives against central finite differences.

    Errors are ``|analytic - fd| / max(1, |fd|)`` per entry.
    """
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    flagged = []
    g_fd = fd_gradient(lambda z: nlp.objective(z, theta), x)
    g_an = nlp.objective_gradient(x, theta)
    eg = np.abs(g_an - g_fd) / np.maximum(1.0, np.abs(g_fd))
    flagged += [("objective", int(j)) for j in np.flatnonzero(eg > rel_tol)]
    ej_max = 0.0
    if nlp.n_eq:
        J_an = nlp.constraint_jacobian(x, theta).toarray()
        J_fd = fd_jacobian(lambda z: nlp.constraints(z, theta), x, nlp.n_eq)
        ej = np.abs(J_an - J_fd) / np.maximum(1.0, np.abs(J_fd))
        ej_max = float(ej.max())
        flagged += [("jacobian", int(i), int(j)) for i, j in zip(*np.nonzero(ej > rel_tol))]
    return GradientCheck(float(eg.max(initial=0.0)), ej_max, flagged, rel_tol)
