"""Experiment configuration files.

The format is INI-style text read with :mod:`configparser`: ``[section]``
headers, ``key = value`` lines and ``#`` comments. Unknown sections and keys
are errors. Vectors are whitespace-separated numbers; a goal parameter given
as ``lo .. hi`` is a sweep range sampled uniformly. Example::

    [experiment]
    algorithms = pho rho liho one_depth
    n_theta_samples = 50
    base_seed = 0

    [problem]
    kind = cartpole

    [theta_goal]
    m_pole = 1 .. 60
    l_pole = 0.6 .. 2
    F_max = 100

    [budget]
    max_solver_queries = 200
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..algorithms import ALGORITHMS, Budget, LihoHyperparams, PhoHyperparams, RhoHyperparams
from ..errors import ConfigurationError, ParseError
from ..nlp import FeasibilityTolerance
from ..problems.cartpole import EASY_THETA, PARAM_NAMES
from ..problems.synthetic import KINDS as SYNTHETIC_KINDS
from ..solver import SolverSettings

OUTPUT_ENV = "HOMOPT_OUTPUT_DIR"
PROBLEM_KINDS = ("cartpole",) + SYNTHETIC_KINDS


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "homopt-out"))


@dataclass(frozen=True)
class ParamRange:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ConfigurationError(f"empty sweep range {self.lo} .. {self.hi}")


@dataclass(frozen=True)
class ProblemConfig:
    kind: str = "cartpole"
    knots: int = 101
    horizon: float = 5.0
    gravity: float = 9.81
    # synthetic family parameters; None keeps the family default
    tilt: Optional[float] = None
    asymmetry: Optional[float] = None
    bump: Optional[float] = None
    amplitude: Optional[float] = None
    # "zeros", "default" or explicit values
    x0: str = "default"


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    theta_easy: tuple = ()
    theta_goal: tuple = ()  # floats or ParamRange per parameter
    map: str = "per_parameter"
    algorithms: tuple = ALGORITHMS
    pho: PhoHyperparams = PhoHyperparams()
    rho: RhoHyperparams = RhoHyperparams()
    liho: LihoHyperparams = LihoHyperparams()
    budget: Budget = Budget(max_solver_queries=200)
    solver: SolverSettings = SolverSettings()
    feasibility: FeasibilityTolerance = FeasibilityTolerance()
    n_theta_samples: int = 1
    n_seeds: int = 10
    base_seed: int = 0
    output_dir: Optional[Path] = None
    checkpoints: tuple = ()
    checkpoint_unit: str = "queries"
    save_trees: str = "solved"
    source: Optional[str] = None

    def __post_init__(self):
        if self.n_seeds < 1:
            raise ConfigurationError("n_seeds must be at least 1")
        if self.n_theta_samples < 0:
            raise ConfigurationError("n_theta_samples must be non-negative")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad or not self.algorithms:
            raise ConfigurationError(f"unknown algorithms {bad}; choose from {', '.join(ALGORITHMS)}")
        if self.map not in ("per_parameter", "scalar"):
            raise ConfigurationError("map must be 'per_parameter' or 'scalar'")
        if len(self.theta_easy) != len(self.theta_goal):
            raise ConfigurationError("theta_easy and theta_goal differ in length")
        if any(b <= a for a, b in zip(self.checkpoints, self.checkpoints[1:])):
            raise ConfigurationError("checkpoints must be strictly increasing")
        if self.checkpoint_unit not in ("queries", "seconds"):
            raise ConfigurationError("checkpoint_unit must be 'queries' or 'seconds'")
        if self.save_trees not in ("solved", "all", "none"):
            raise ConfigurationError("save_trees must be 'solved', 'all' or 'none'")

    @property
    def has_ranges(self) -> bool:
        return any(isinstance(v, ParamRange) for v in self.theta_goal)

    def sample_goals(self) -> np.ndarray:
        """Goal parameters for the sweep, from a stream that depends only on ``base_seed``."""
        rng = np.random.default_rng(np.random.SeedSequence(self.base_seed, spawn_key=(0,)))
        out = np.empty((self.n_theta_samples, len(self.theta_goal)))
        for i in range(self.n_theta_samples):
            for k, v in enumerate(self.theta_goal):
                out[i, k] = rng.uniform(v.lo, v.hi) if isinstance(v, ParamRange) else v
        return out

    def run_seed(self, theta_index: int, seed_index: int) -> int:
        """Per-run algorithm seed, independent of the sweep size."""
        ss = np.random.SeedSequence(self.base_seed, spawn_key=(1, theta_index, seed_index))
        return int(ss.generate_state(1, dtype=np.uint32)[0])

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, base_seed=int(seed))

    def with_output(self, path) -> "ExperimentConfig":
        return replace(self, output_dir=Path(path))

    def resolved_output(self) -> Path:
        return self.output_dir if self.output_dir is not None else default_output_dir()


# -- parsing ------------------------------------------------------------------

_SECTIONS = {"experiment", "problem", "theta_easy", "theta_goal", "budget", "pho", "rho",
             "liho", "solver", "feasibility"}

# config key -> dataclass field for the hyperparameter sections
_PHO_KEYS = {"P_g": "goal_bias", "rho_A": "solve_ratio", "q": "max_iters",
             "similarity_tol": "similarity_tol", "stop_at_first_goal": "stop_at_first_goal"}
_RHO_KEYS = {"P_g": "goal_bias", "q": "max_iters"}
_LIHO_KEYS = {"k1": "k1", "k2": "k2", "c1": "c1", "c2": "c2", "epsilon": "eps",
              "delta_lambda_0": "step0", "rollback": "rollback"}


class _Reader:
    def __init__(self, cp: configparser.ConfigParser, source: str):
        self.cp = cp
        self.source = source

    def fail(self, section, key, msg):
        where = f"[{section}] {key}" if key else f"[{section}]"
        return ConfigurationError(f"{self.source}: {where}: {msg}")

    def convert(self, section, key, kind):
        raw = self.cp[section][key].strip()
        try:
            if kind is bool:
                low = raw.lower()
                if low in ("true", "yes", "on", "1"):
                    return True
                if low in ("false", "no", "off", "0"):
                    return False
                raise ValueError
            if kind is int:
                return int(raw)
            if kind is float:
                return float(raw)
            if kind == "optfloat":
                return None if raw.lower() == "none" else float(raw)
            if kind == "optint":
                return None if raw.lower() == "none" else int(raw)
            return raw
        except ValueError:
            raise self.fail(section, key, f"cannot read {raw!r} as {getattr(kind, '__name__', kind)}") from None

    def keys(self, section, allowed):
        if not self.cp.has_section(section):
            return []
        extra = [k for k in self.cp[section] if k not in allowed]
        if extra:
            raise self.fail(section, extra[0], f"unknown key (allowed: {', '.join(sorted(allowed))})")
        return list(self.cp[section])

    def dataclass_section(self, section, obj, keymap=None):
        kinds = {f.name: f.type for f in fields(obj)}
        keymap = keymap or {name: name for name in kinds}
        updates = {}
        for key in self.keys(section, set(keymap)):
            name = keymap[key]
            t = str(kinds[name])
            if t.startswith("Optional"):
                kind = "optint" if "int" in t else "optfloat" if "float" in t else str
            else:
                kind = {"int": int, "float": float, "bool": bool}.get(t, str)
            updates[name] = self.convert(section, key, kind)
        try:
            return replace(obj, **updates)
        except ConfigurationError as e:
            raise self.fail(section, None, str(e)) from None


def _vector_value(reader, section, key):
    raw = reader.cp[section][key].strip()
    if ".." in raw:
        lo, _, hi = raw.partition("..")
        try:
            return ParamRange(float(lo), float(hi))
        except ValueError:
            raise reader.fail(section, key, f"bad range {raw!r}; expected 'lo .. hi'") from None
        except ConfigurationError as e:
            raise reader.fail(section, key, str(e)) from None
    try:
        return float(raw)
    except ValueError:
        raise reader.fail(section, key, f"bad number {raw!r}") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                   comment_prefixes=("#",), strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ParseError(str(e).replace("\n", " "), getattr(e, "lineno", None), source) from None
    extra = [s for s in cp.sections() if s not in _SECTIONS]
    if extra:
        raise ConfigurationError(f"{source}: unknown section [{extra[0]}] "
                                 f"(allowed: {', '.join(sorted(_SECTIONS))})")
    r = _Reader(cp, source)

    problem = r.dataclass_section("problem", ProblemConfig())
    if problem.kind not in PROBLEM_KINDS:
        raise r.fail("problem", "kind", f"unknown problem {problem.kind!r}; choose from {', '.join(PROBLEM_KINDS)}")
    names = PARAM_NAMES if problem.kind == "cartpole" else ("lam",)
    if problem.kind == "cartpole":
        easy = dict(zip(PARAM_NAMES, EASY_THETA.as_array()))
        goal = dict(easy)
    else:
        easy, goal = {"lam": 0.0}, {"lam": 1.0}
    for key in r.keys("theta_easy", set(names)):
        easy[key] = r.convert("theta_easy", key, float)
    for key in r.keys("theta_goal", set(names)):
        goal[key] = _vector_value(r, "theta_goal", key)

    exp_keys = {"algorithms", "n_theta_samples", "n_seeds", "base_seed", "output_dir", "checkpoints",
                "checkpoint_unit", "save_trees", "map"}
    kw = {}
    for key in r.keys("experiment", exp_keys):
        if key == "algorithms":
            kw[key] = tuple(cp["experiment"][key].split())
        elif key == "checkpoints":
            try:
                kw[key] = tuple(float(v) for v in cp["experiment"][key].split())
            except ValueError:
                raise r.fail("experiment", key, "checkpoints must be numbers") from None
        elif key == "output_dir":
            kw[key] = Path(cp["experiment"][key].strip())
        elif key in ("checkpoint_unit", "save_trees", "map"):
            kw[key] = cp["experiment"][key].strip()
        else:
            kw[key] = r.convert("experiment", key, int)
    if "n_theta_samples" not in kw:
        kw["n_theta_samples"] = 50 if any(isinstance(v, ParamRange) for v in goal.values()) else 1

    budget = Budget(max_solver_queries=200)
    if cp.has_section("budget"):
        budget = r.dataclass_section("budget", budget)
    if budget.max_solver_queries is None and budget.max_wall_time is None:
        raise r.fail("budget", None, "at least one of max_solver_queries, max_wall_time must be finite")

    try:
        return ExperimentConfig(
            problem=problem,
            theta_easy=tuple(easy[n] for n in names),
            theta_goal=tuple(goal[n] for n in names),
            pho=r.dataclass_section("pho", PhoHyperparams(), _PHO_KEYS),
            rho=r.dataclass_section("rho", RhoHyperparams(), _RHO_KEYS),
            liho=r.dataclass_section("liho", LihoHyperparams(), _LIHO_KEYS),
            budget=budget,
            solver=r.dataclass_section("solver", SolverSettings()),
            feasibility=r.dataclass_section("feasibility", FeasibilityTolerance()),
            source=source,
            **kw,
        )
    except ConfigurationError as e:
        if str(e).startswith(source):
            raise
        raise ConfigurationError(f"{source}: {e}") from None


def load_config(path) -> ExperimentConfig:
    """Read a config file; a missing file is a configuration error naming the path."""
    p = Path(path)
    try:
        text = p.read_text()
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {p}") from None
    except IsADirectoryError:
        raise ConfigurationError(f"config path is a directory: {p}") from None
    return parse_config(text, source=str(p))
