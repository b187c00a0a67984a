"""Optimization tree: solved (solution, homotopy parameter) pairs and attempt bookkeeping."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import ParseError, TreeError, TreeInitError
from .nlp import check_homotopy_point

FORMAT_HEADER = "homotopy-tree v1"


@dataclass(frozen=True)
class TreeNode:
    id: int
    x_star: np.ndarray
    lambda_id: int
    parent_id: Optional[int]
    objective: float

    def __eq__(self, other):
        if not isinstance(other, TreeNode):
            return NotImplemented
        return (self.id == other.id and self.lambda_id == other.lambda_id
                and self.parent_id == other.parent_id
                and _same_float(self.objective, other.objective)
                and np.array_equal(self.x_star, other.x_star))


def _same_float(a, b):
    return a == b or (np.isnan(a) and np.isnan(b))


class OptimizationTree:
    """Rooted tree of local minima together with the candidate parameter set
    and the set of attempted ``(node, parameter)`` solves.

    Distances between solutions are measured in the infinity norm of
    ``(x_a - x_b) / scale``; ``scale`` defaults to ones.
    """

    def __init__(self, dim: int, similarity_tol: float = 1e-3, scale=None):
        if dim < 1:
            raise TreeError("homotopy dimension must be at least 1")
        if similarity_tol <= 0:
            raise TreeError("similarity_tol must be positive")
        self.dim = int(dim)
        self.similarity_tol = float(similarity_tol)
        self.scale = None if scale is None else np.asarray(scale, dtype=float)
        self.nodes: list[TreeNode] = []
        self.params: list[np.ndarray] = []
        self.attempts: list[tuple[int, int]] = []
        self._attempt_set: set[tuple[int, int]] = set()
        self._param_index: dict[bytes, int] = {}
        self._lam_matrix = np.zeros((0, self.dim))

    # -- parameters ---------------------------------------------------------
    @property
    def zero_id(self) -> int:
        return self._param_index[np.zeros(self.dim).tobytes()]

    @property
    def goal_id(self) -> int:
        return self._param_index[np.ones(self.dim).tobytes()]

    def add_param(self, lam) -> int:
        """Add a candidate parameter; exact duplicates return the existing id."""
        lam = check_homotopy_point(lam, self.dim) + 0.0  # normalizes -0.0
        key = lam.tobytes()
        if key in self._param_index:
            return self._param_index[key]
        self.params.append(lam)
        self._param_index[key] = len(self.params) - 1
        return len(self.params) - 1

    def param_id(self, lam) -> Optional[int]:
        lam = np.asarray(lam, dtype=float).reshape(self.dim) + 0.0
        return self._param_index.get(lam.tobytes())

    def lam(self, lambda_id: int) -> np.ndarray:
        return self.params[lambda_id]

    # -- nodes --------------------------------------------------------------
    def node(self, node_id: int) -> TreeNode:
        if not 0 <= node_id < len(self.nodes):
            raise TreeError(f"unknown node id {node_id}")
        return self.nodes[node_id]

    def distance(self, a, b) -> float:
        diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        if self.scale is not None:
            diff = diff / self.scale
        return float(np.max(np.abs(diff), initial=0.0))

    def nearest_solution(self, x) -> tuple[Optional[int], float]:
        best, best_d = None, np.inf
        for n in self.nodes:
            dist = self.distance(n.x_star, x)
            if dist < best_d:
                best, best_d = n.id, dist
        return best, best_d

    def _append(self, x, lambda_id, parent_id, objective) -> int:
        node = TreeNode(len(self.nodes), np.array(x, dtype=float), int(lambda_id),
                        None if parent_id is None else int(parent_id), float(objective))
        self.nodes.append(node)
        self._lam_matrix = np.vstack([self._lam_matrix, self.params[lambda_id]])
        return node.id

    def admit_node(self, x_new, lambda_id: int, parent_id: int, objective: float,
                   require_unique: bool = True) -> bool:
        """Append a solved node unless a similar solution already exists in the tree.

        Solutions are compared against every node, except that a solution at
        the goal parameter is compared against goal nodes only: a goal
        solution that coincides with an intermediate one is still a goal
        solution. The caller is responsible for having verified feasibility.
        """
        self.node(parent_id)
        if not 0 <= lambda_id < len(self.params):
            raise TreeError(f"unknown lambda id {lambda_id}")
        if require_unique:
            if lambda_id == self.param_id(np.ones(self.dim)):
                pool = self.goal_nodes()
            else:
                pool = self.nodes
            if any(self.distance(n.x_star, x_new) <= self.similarity_tol for n in pool):
                return False
        self._append(x_new, lambda_id, parent_id, objective)
        return True

    # -- attempts -----------------------------------------------------------
    def record_attempt(self, node_id: int, lambda_id: int) -> None:
        self.node(node_id)
        if not 0 <= lambda_id < len(self.params):
            raise TreeError(f"unknown lambda id {lambda_id}")
        pair = (int(node_id), int(lambda_id))
        if pair in self._attempt_set:
            raise TreeError(f"pair {pair} was already attempted")
        self._attempt_set.add(pair)
        self.attempts.append(pair)

    def attempted(self, node_id: int, lambda_id: int) -> bool:
        return (node_id, lambda_id) in self._attempt_set

    def attempt_matrix(self) -> np.ndarray:
        """Boolean ``(n_nodes, n_params)`` matrix of attempted pairs."""
        m = np.zeros((len(self.nodes), len(self.params)), dtype=bool)
        if self.attempts:
            a = np.asarray(self.attempts)
            m[a[:, 0], a[:, 1]] = True
        return m

    def solve_sample_ratio(self) -> float:
        return len(self.attempts) / (len(self.nodes) * len(self.params))

    # -- queries ------------------------------------------------------------
    def nearest_node(self, lam) -> int:
        """Node whose parameter is closest in Euclidean distance; ties go to the lowest id."""
        if not self.nodes:
            raise TreeError("empty tree")
        lam = np.asarray(lam, dtype=float).reshape(self.dim)
        d2 = np.sum((self._lam_matrix - lam) ** 2, axis=1)
        return int(np.argmin(d2))

    def solutions_at_goal(self) -> list[tuple[np.ndarray, float]]:
        gid = self.param_id(np.ones(self.dim))
        return [(n.x_star, n.objective) for n in self.nodes if n.lambda_id == gid]

    def goal_nodes(self) -> list[TreeNode]:
        gid = self.param_id(np.ones(self.dim))
        return [n for n in self.nodes if n.lambda_id == gid]

    def path_to(self, node_id: int) -> list[TreeNode]:
        """Nodes from the root to ``node_id`` inclusive."""
        path = []
        cur: Optional[int] = node_id
        while cur is not None:
            n = self.node(cur)
            path.append(n)
            cur = n.parent_id
        return path[::-1]

    def __eq__(self, other):
        if not isinstance(other, OptimizationTree):
            return NotImplemented
        same_scale = (self.scale is None and other.scale is None) or (
            self.scale is not None and other.scale is not None and np.array_equal(self.scale, other.scale))
        return (self.dim == other.dim and self.similarity_tol == other.similarity_tol and same_scale
                and len(self.params) == len(other.params)
                and all(np.array_equal(a, b) for a, b in zip(self.params, other.params))
                and self.nodes == other.nodes and self.attempts == other.attempts)

    def __repr__(self):
        return (f"OptimizationTree(dim={self.dim}, nodes={len(self.nodes)}, "
                f"params={len(self.params)}, attempts={len(self.attempts)})")


def init_tree(root_solution, objective: float, dim: int, similarity_tol: float = 1e-3,
              scale=None, feasible: bool = True) -> OptimizationTree:
    """Root a tree at the easy problem's solution.

    ``feasible`` is the caller's verdict on the root (solver converged and the
    point passes the feasibility test); an infeasible root cannot seed a tree.
    """
    root = np.asarray(root_solution, dtype=float)
    if not feasible or not np.all(np.isfinite(root)):
        raise TreeInitError("easy problem was not solved; the root solution is infeasible")
    tree = OptimizationTree(dim, similarity_tol, scale)
    zero = tree.add_param(np.zeros(dim))
    tree.add_param(np.ones(dim))
    tree._append(root, zero, None, objective)
    return tree


# -- serialization ----------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def serialize(tree: OptimizationTree, stream=None) -> Optional[str]:
    """Write the tree in the ``homotopy-tree v1`` text format.

    Returns the text when ``stream`` is None.
    """
    out = io.StringIO() if stream is None else stream
    out.write(FORMAT_HEADER + "\n")
    out.write(f"dim {tree.dim}\n")
    out.write(f"similarity_tol {_fmt(tree.similarity_tol)}\n")
    if tree.scale is None:
        out.write("scale none\n")
    else:
        out.write("scale " + " ".join(_fmt(v) for v in tree.scale) + "\n")
    out.write(f"params {len(tree.params)}\n")
    for i, lam in enumerate(tree.params):
        out.write(f"{i} " + " ".join(_fmt(v) for v in lam) + "\n")
    out.write(f"nodes {len(tree.nodes)}\n")
    for n in tree.nodes:
        parent = "-" if n.parent_id is None else str(n.parent_id)
        out.write(f"{n.id} {parent} {n.lambda_id} {_fmt(n.objective)} {n.x_star.size} "
                  + " ".join(_fmt(v) for v in n.x_star) + "\n")
    out.write(f"attempts {len(tree.attempts)}\n")
    for a, b in tree.attempts:
        out.write(f"{a} {b}\n")
    out.write("end\n")
    return out.getvalue() if stream is None else None


class _Lines:
    def __init__(self, text: str, source):
        self.lines = text.splitlines()
        self.i = 0
        self.source = source

    def next(self, what):
        while self.i < len(self.lines) and not self.lines[self.i].strip():
            self.i += 1
        if self.i >= len(self.lines):
            raise ParseError(f"unexpected end of file, expected {what}", self.i + 1, self.source)
        self.i += 1
        return self.lines[self.i - 1].split()

    def error(self, msg):
        return ParseError(msg, self.i, self.source)

    def keyed(self, key):
        tok = self.next(f"'{key}' line")
        if not tok or tok[0] != key:
            raise self.error(f"expected '{key}', found {' '.join(tok)!r}")
        return tok[1:]

    def count(self, key):
        tok = self.keyed(key)
        try:
            (n,) = tok
            return int(n)
        except ValueError:
            raise self.error(f"'{key}' needs a single integer count") from None


def _floats(lines, toks, field):
    try:
        return np.array([float(t) for t in toks])
    except ValueError:
        raise lines.error(f"bad number in {field}") from None


def deserialize(stream, source=None) -> OptimizationTree:
    """Parse a tree from a text stream or string; errors carry the line number."""
    text = stream if isinstance(stream, str) else stream.read()
    if source is None:
        source = getattr(stream, "name", None)
    L = _Lines(text, source)
    header = " ".join(L.next("header"))
    if header != FORMAT_HEADER:
        raise L.error(f"bad header {header!r}, expected {FORMAT_HEADER!r}")
    dim = L.count("dim")
    tok = L.keyed("similarity_tol")
    tol = _floats(L, tok, "similarity_tol")
    if tol.size != 1:
        raise L.error("similarity_tol needs one value")
    tok = L.keyed("scale")
    scale = None if tok == ["none"] else _floats(L, tok, "scale")
    try:
        tree = OptimizationTree(dim, float(tol[0]), scale)
    except TreeError as e:
        raise L.error(str(e)) from None

    for i in range(L.count("params")):
        tok = L.next("param row")
        if len(tok) != dim + 1 or tok[0] != str(i):
            raise L.error(f"param row {i}: expected id and {dim} components")
        lam = _floats(L, tok[1:], "param")
        try:
            pid = tree.add_param(lam)
        except Exception as e:
            raise L.error(f"param row {i}: {e}") from None
        if pid != i:
            raise L.error(f"param row {i} duplicates param {pid}")

    for i in range(L.count("nodes")):
        tok = L.next("node row")
        if len(tok) < 5 or tok[0] != str(i):
            raise L.error(f"node row {i}: expected 'id parent lambda_id objective n x...'")
        try:
            parent = None if tok[1] == "-" else int(tok[1])
            lid = int(tok[2])
            n = int(tok[4])
        except ValueError:
            raise L.error(f"node row {i}: bad integer field") from None
        obj = _floats(L, tok[3:4], "objective")[0]
        if len(tok) != 5 + n:
            raise L.error(f"node row {i}: expected {n} solution values, found {len(tok) - 5}")
        x = _floats(L, tok[5:], "x_star")
        if not 0 <= lid < len(tree.params):
            raise L.error(f"node row {i}: unknown lambda id {lid}")
        if (parent is None) != (i == 0) or (parent is not None and not 0 <= parent < i):
            raise L.error(f"node row {i}: bad parent {tok[1]}")
        tree._append(x, lid, parent, obj)

    for _ in range(L.count("attempts")):
        tok = L.next("attempt row")
        if len(tok) != 2:
            raise L.error("attempt row needs 'node_id lambda_id'")
        try:
            tree.record_attempt(int(tok[0]), int(tok[1]))
        except (ValueError, TreeError) as e:
            raise L.error(f"bad attempt: {e}") from None
    L.keyed("end")
    return tree


def save_tree(tree: OptimizationTree, path) -> None:
    with open(path, "w") as fh:
        serialize(tree, fh)


def load_tree(path) -> OptimizationTree:
    with open(path) as fh:
        return deserialize(fh, source=str(path))


def iter_pairs(tree: OptimizationTree) -> Iterable[tuple[int, int]]:
    """All ``(node_id, lambda_id)`` pairs not yet attempted, in row-major order."""
    m = tree.attempt_matrix()
    rows, cols = np.nonzero(~m)
    return zip(rows.tolist(), cols.tolist())
