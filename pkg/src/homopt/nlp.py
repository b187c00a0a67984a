"""Parameterized nonlinear programs, homotopy parameter maps and feasibility."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError

Array = np.ndarray
BoundSpec = Union[Array, Callable[[Array], Array]]


def _fd_step(x):
    return 1e-6 * (1.0 + np.abs(x))


def fd_gradient(fun, x):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    h = _fd_step(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        g[i] = (fun(xp) - fun(xm)) / (2.0 * h[i])
    return g


def fd_jacobian(fun, x, m):
    """Central finite-difference Jacobian (dense, shape ``(m, n)``)."""
    x = np.asarray(x, dtype=float)
    J = np.empty((m, x.size))
    h = _fd_step(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        J[:, i] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2.0 * h[i])
    return J


@dataclass(frozen=True)
class ParamNLP:
    """A family of NLPs ``min f(x, theta) s.t. c(x, theta) = 0, lb <= x <= ub``.

    Bounds may be fixed arrays or callables of ``theta`` (the cart-pole force
    and track limits are themselves homotopy parameters). Derivative callables
    are optional; missing ones fall back to central finite differences.

    ``lagrangian_hessian(x, theta, obj_factor, w)`` must return the Hessian of
    ``obj_factor * f + w @ c`` with respect to ``x`` (dense or sparse).
    ``x_scale`` and ``obj_scale`` are hints used by the solver to rescale
    variables and the objective; they do not change the problem.
    """

    n_vars: int
    n_eq: int
    objective: Callable[[Array, Array], float]
    eq_constraints: Callable[[Array, Array], Array]
    lower_bounds: BoundSpec
    upper_bounds: BoundSpec
    param_dim: int
    gradient: Optional[Callable[[Array, Array], Array]] = None
    jacobian: Optional[Callable[[Array, Array], object]] = None
    lagrangian_hessian: Optional[Callable[..., object]] = None
    x_scale: Optional[Callable[[Array], Array]] = None
    obj_scale: Optional[Callable[[Array], float]] = None
    name: str = "nlp"

    def bounds(self, theta) -> tuple[Array, Array]:
        lo = self.lower_bounds(theta) if callable(self.lower_bounds) else self.lower_bounds
        hi = self.upper_bounds(theta) if callable(self.upper_bounds) else self.upper_bounds
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (self.n_vars,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (self.n_vars,))
        if np.any(lo > hi):
            raise ConfigurationError(f"{self.name}: lower bound exceeds upper bound")
        return lo, hi

    def constraints(self, x, theta) -> Array:
        if self.n_eq == 0:
            return np.zeros(0)
        return np.asarray(self.eq_constraints(x, theta), dtype=float).reshape(self.n_eq)

    def objective_gradient(self, x, theta) -> Array:
        if self.gradient is not None:
            return np.asarray(self.gradient(x, theta), dtype=float)
        return fd_gradient(lambda z: self.objective(z, theta), x)

    def constraint_jacobian(self, x, theta):
        """Constraint Jacobian as a sparse CSR matrix of shape ``(n_eq, n_vars)``."""
        if self.n_eq == 0:
            return sp.csr_matrix((0, self.n_vars))
        if self.jacobian is not None:
            return sp.csr_matrix(self.jacobian(x, theta))
        return sp.csr_matrix(fd_jacobian(lambda z: self.constraints(z, theta), x, self.n_eq))

    def hessian(self, x, theta, obj_factor, w):
        """Hessian of ``obj_factor * f + w @ c``; finite differences if not supplied."""
        if self.lagrangian_hessian is not None:
            return sp.csr_matrix(self.lagrangian_hessian(x, theta, obj_factor, w))

        def grad_l(z):
            g = obj_factor * self.objective_gradient(z, theta)
            if self.n_eq:
                g = g + self.constraint_jacobian(z, theta).T @ w
            return g

        H = fd_jacobian(grad_l, x, self.n_vars)
        return sp.csr_matrix(0.5 * (H + H.T))

    def variable_scale(self, theta) -> Array:
        if self.x_scale is None:
            return np.ones(self.n_vars)
        return np.asarray(self.x_scale(theta), dtype=float)

    def objective_scale(self, theta) -> float:
        return 1.0 if self.obj_scale is None else float(self.obj_scale(theta))


@dataclass(frozen=True)
class FeasibilityTolerance:
    eq_tol: float = 1e-6
    bound_tol: float = 1e-8

    def __post_init__(self):
        if not (self.eq_tol > 0 and self.bound_tol > 0):
            raise ConfigurationError("feasibility tolerances must be strictly positive")


def objective_value(nlp: ParamNLP, x, theta) -> float:
    """Evaluate ``f(x, theta)``.

    Non-finite results are returned as-is (``nan``/``inf``) so callers can
    detect them with :func:`numpy.isfinite`; they are never clamped.
    """
    with np.errstate(all="ignore"):
        return float(nlp.objective(np.asarray(x, dtype=float), np.asarray(theta, dtype=float)))


def constraint_violation(nlp: ParamNLP, x, theta) -> float:
    """Infinity norm of the equality residual (0 for unconstrained problems)."""
    c = nlp.constraints(x, theta)
    return float(np.max(np.abs(c))) if c.size else 0.0


def bound_violation(nlp: ParamNLP, x, theta) -> float:
    lo, hi = nlp.bounds(theta)
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore"):
        v = np.maximum(lo - x, x - hi)
    return float(np.max(v, initial=0.0))


def is_feasible(nlp: ParamNLP, x, theta, tol: FeasibilityTolerance = FeasibilityTolerance()) -> bool:
    x = np.asarray(x, dtype=float)
    if x.shape != (nlp.n_vars,) or not np.all(np.isfinite(x)):
        return False
    with np.errstate(all="ignore"):
        c = nlp.constraints(x, theta)
    if not np.all(np.isfinite(c)):
        return False
    if c.size and np.max(np.abs(c)) > tol.eq_tol:
        return False
    return bound_violation(nlp, x, theta) <= tol.bound_tol


def check_homotopy_point(lam, d: Optional[int] = None) -> Array:
    """Validate a homotopy parameter: a vector in the unit hypercube."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if lam.ndim != 1:
        raise ConfigurationError("homotopy point must be a vector")
    if d is not None and lam.size != d:
        raise ConfigurationError(f"homotopy point has dimension {lam.size}, expected {d}")
    if not np.all((lam >= 0.0) & (lam <= 1.0)):
        raise ConfigurationError(f"homotopy point {lam} outside [0, 1]^d")
    return lam


@dataclass(frozen=True)
class ParamMap:
    """Componentwise linear map from ``[0, 1]^d`` to problem parameters.

    ``assignment[k]`` is the homotopy component driving parameter ``k``; the
    default assigns every parameter to component 0 (a scalar homotopy).
    """

    theta_easy: Array
    theta_goal: Array
    assignment: Sequence[int] = field(default=None)

    def __post_init__(self):
        t0 = np.asarray(self.theta_easy, dtype=float).ravel()
        t1 = np.asarray(self.theta_goal, dtype=float).ravel()
        if t0.shape != t1.shape:
            raise ConfigurationError("theta_easy and theta_goal differ in length")
        a = np.zeros(t0.size, dtype=int) if self.assignment is None else np.asarray(self.assignment, dtype=int)
        if a.shape != t0.shape:
            raise ConfigurationError("assignment must cover every parameter exactly once")
        if a.size and (a.min() < 0 or set(range(a.max() + 1)) - set(a.tolist())):
            raise ConfigurationError("assignment must use homotopy components 0..d-1 without gaps")
        object.__setattr__(self, "theta_easy", t0)
        object.__setattr__(self, "theta_goal", t1)
        object.__setattr__(self, "assignment", a)

    @property
    def dim(self) -> int:
        return int(self.assignment.max()) + 1 if self.assignment.size else 0

    @classmethod
    def per_parameter(cls, theta_easy, theta_goal) -> "ParamMap":
        """One homotopy component per parameter."""
        n = np.asarray(theta_easy).size
        return cls(theta_easy, theta_goal, np.arange(n))

    def scalar(self) -> "ParamMap":
        """The same endpoints driven jointly by a single component."""
        return ParamMap(self.theta_easy, self.theta_goal, np.zeros(self.theta_easy.size, dtype=int))

    def __call__(self, lam) -> Array:
        return map_params(self, lam)


def map_params(pmap: ParamMap, lam) -> Array:
    lam = check_homotopy_point(lam, pmap.dim)
    t = lam[pmap.assignment]
    # written so that t == 0 and t == 1 reproduce the endpoints bit-exactly
    return (1.0 - t) * pmap.theta_easy + t * pmap.theta_goal
