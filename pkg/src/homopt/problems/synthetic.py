"""One-dimensional problem families with known homotopy pitfalls.

Every family has the form ``f(x, lam) = (x^2 - s(lam))^2 + t(lam) * x`` on a
box, with ``theta = lam`` (so the parameter map is the identity on [0, 1]):

``bifurcation``
    ``s = lam - 1/2``: one well at 0 for ``lam < 1/2``, two wells at
    ``+-sqrt(lam - 1/2)`` after. A small tilt ``tilt * lam (1 - lam) (4 lam - 2)``
    vanishes at both ends, changes sign at the bifurcation and unfolds the
    symmetric pitchfork, so the branch a path lands on is decided by where it
    crosses ``lam = 1/2`` rather than by round-off.
``double_well``
    ``s = 1``, ``t = asymmetry * lam + bump * 16 lam^2 (1 - lam)^2``. The
    defaults give minima at +-1 for every ``lam``; a bump above ~1.54 wipes out
    the right well mid-path and ``asymmetry`` gives the goal wells distinct costs.
``fold``
    ``s = 1``, ``t = amplitude * (2 lam - 1)``: the right branch turns back at a
    limit point and the path must jump to the left well.
``disconnected``
    ``double_well`` with only the bump: the right branch has no minimum over a
    band of ``lam`` and reappears after it.
``abbreviated_path``
    ``s = 1`` with the upper bound ``2 - 2.5 lam``: the right branch is pushed
    onto the bound and ends once the bound crosses 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from ..errors import ConfigurationError
from ..nlp import ParamMap, ParamNLP

KINDS = ("bifurcation", "double_well", "fold", "disconnected", "abbreviated_path")

X_LO, X_HI = -3.0, 3.0


@dataclass(frozen=True)
class Minimum:
    x: float
    objective: float
    on_bound: bool


@dataclass(frozen=True)
class SyntheticProblem:
    """Unpacks as ``(nlp, pmap, oracle)``; ``x0`` is the suggested start."""

    kind: str
    nlp: ParamNLP
    pmap: ParamMap
    oracle: Callable[[float], list]
    x0: np.ndarray

    def __iter__(self):
        return iter((self.nlp, self.pmap, self.oracle))


def _family(kind, tilt, asymmetry, bump, amplitude):
    def bump_t(lam):
        return bump * 16.0 * lam**2 * (1.0 - lam) ** 2

    if kind == "bifurcation":
        return (lambda lam: lam - 0.5), (lambda lam: tilt * lam * (1.0 - lam) * (4.0 * lam - 2.0))
    if kind in ("double_well", "disconnected"):
        a = asymmetry if kind == "double_well" else 0.0
        return (lambda lam: 1.0), (lambda lam: a * lam + bump_t(lam))
    if kind == "fold":
        return (lambda lam: 1.0), (lambda lam: amplitude * (2.0 * lam - 1.0))
    if kind == "abbreviated_path":
        return (lambda lam: 1.0), (lambda lam: 0.0)
    raise ConfigurationError(f"unknown synthetic kind {kind!r}; choose from {', '.join(KINDS)}")


def make_synthetic(kind: str, *, tilt: float = 0.5, asymmetry: float = 0.0, bump: float = None,
                   amplitude: float = 3.0) -> SyntheticProblem:
    """Build a pitfall family; see the module docstring for the constructions.

    ``bump`` defaults to 0 for ``double_well`` and 3 for ``disconnected``.
    """
    if bump is None:
        bump = 3.0 if kind == "disconnected" else 0.0
    s_fn, t_fn = _family(kind, tilt, asymmetry, bump, amplitude)

    def parts(theta):
        lam = float(np.asarray(theta).ravel()[0])
        return s_fn(lam), t_fn(lam)

    def objective(x, theta):
        s, t = parts(theta)
        return float((x[0] ** 2 - s) ** 2 + t * x[0])

    def gradient(x, theta):
        s, t = parts(theta)
        return np.array([4.0 * x[0] * (x[0] ** 2 - s) + t])

    def hessian(x, theta, obj_factor, w):
        s, _ = parts(theta)
        return np.array([[obj_factor * (12.0 * x[0] ** 2 - 4.0 * s)]])

    upper = X_HI
    if kind == "abbreviated_path":
        def upper(theta):
            return np.array([2.0 - 2.5 * float(np.asarray(theta).ravel()[0])])

    nlp = ParamNLP(
        n_vars=1, n_eq=0, objective=objective, eq_constraints=None,
        lower_bounds=np.array([X_LO]), upper_bounds=upper, param_dim=1,
        gradient=gradient, lagrangian_hessian=hessian, name=f"synthetic-{kind}",
    )
    pmap = ParamMap(np.zeros(1), np.ones(1))

    def oracle(lam):
        return enumerate_minima(nlp, np.array([float(lam)]))

    x0 = np.array([0.5]) if kind in ("double_well", "disconnected", "fold", "abbreviated_path") else np.zeros(1)
    return SyntheticProblem(kind, nlp, pmap, oracle, x0)


def enumerate_minima(nlp: ParamNLP, theta, grid: int = 20001, merge_tol: float = 1e-6) -> list:
    """All local minima of a one-variable problem by dense grid search plus
    bounded scalar refinement (bound minima are reported at the bound)."""
    if nlp.n_vars != 1 or nlp.n_eq != 0:
        raise ConfigurationError("the grid oracle handles unconstrained one-variable problems")
    lo, hi = (float(b[0]) for b in nlp.bounds(theta))

    def f(v):
        return nlp.objective(np.array([v]), theta)

    xs = np.linspace(lo, hi, grid)
    fs = np.array([f(v) for v in xs])
    found = []
    if fs[0] < fs[1]:
        found.append(Minimum(lo, fs[0], True))
    for i in np.flatnonzero((fs[1:-1] <= fs[:-2]) & (fs[1:-1] < fs[2:])) + 1:
        res = minimize_scalar(f, bounds=(xs[i - 1], xs[i + 1]), method="bounded",
                              options={"xatol": 1e-12})
        found.append(Minimum(float(res.x), float(res.fun), False))
    if fs[-1] < fs[-2]:
        found.append(Minimum(hi, fs[-1], True))
    out = []
    for m in found:
        if not out or abs(m.x - out[-1].x) > merge_tol:
            out.append(m)
    return out
