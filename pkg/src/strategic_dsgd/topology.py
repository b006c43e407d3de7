"""Communication graphs and doubly stochastic coupling matrices."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Union

import numpy as np

STOCHASTIC_TOL = 1e-12
RHO_TOL = 1e-12


class TopologyError(ValueError):
    """Raised for graphs or weights that cannot give a valid coupling matrix."""


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on agents ``0 .. n_agents-1``."""

    n_agents: int
    edges: frozenset

    def __post_init__(self):
        if self.n_agents < 1:
            raise TopologyError(f"need at least one agent, got {self.n_agents}")
        norm = set()
        for e in self.edges:
            i, j = sorted(int(x) for x in e)
            if i == j:
                raise TopologyError(f"self-loop at agent {i}")
            if i < 0 or j >= self.n_agents:
                raise TopologyError(f"edge {(i, j)} outside 0..{self.n_agents - 1}")
            norm.add((i, j))
        object.__setattr__(self, "edges", frozenset(norm))

    @classmethod
    def from_edges(cls, n_agents: int, edges: Iterable) -> "Graph":
        return cls(int(n_agents), frozenset(tuple(e) for e in edges))

    def neighbors(self, i: int) -> list[int]:
        out = [j for a, b in self.edges for j in ((b,) if a == i else (a,) if b == i else ())]
        return sorted(out)

    @property
    def degrees(self) -> tuple[int, ...]:
        deg = [0] * self.n_agents
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return tuple(deg)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def is_connected(self) -> bool:
        seen = {0}
        queue = deque([0])
        adj = {i: self.neighbors(i) for i in range(self.n_agents)}
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == self.n_agents


def ring_graph(n: int) -> Graph:
    if n < 3:
        raise TopologyError(f"a ring needs n >= 3, got {n}")
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def path_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def star_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(0, i) for i in range(1, n)])


def complete_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


@dataclass(frozen=True, eq=False)
class CouplingMatrix:
    """Symmetric doubly stochastic mixing matrix on a connected graph.

    Construct through :func:`build_ring` or :func:`build_from_graph`; the
    constructor validates every invariant and computes ``rho``.
    """

    weights: np.ndarray
    graph: Graph
    rho: float = field(init=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        _check_weights(w, self.graph)
        object.__setattr__(self, "rho", spectral_gap(w))
        # Mixing order: self first, then neighbours ascending.
        n = self.graph.n_agents
        rows = [[i] + self.graph.neighbors(i) for i in range(n)]
        width = max(len(r) for r in rows)
        idx = np.empty((n, width), dtype=np.intp)
        wt = np.zeros((n, width))
        for i, r in enumerate(rows):
            idx[i, : len(r)] = r
            idx[i, len(r):] = i
            wt[i, : len(r)] = w[i, r]
        object.__setattr__(self, "_idx", idx)
        object.__setattr__(self, "_wt", wt)

    @property
    def n_agents(self) -> int:
        return self.graph.n_agents

    @property
    def min_degree(self) -> int:
        return min(self.graph.degrees) if self.n_agents > 1 else 0

    def mix(self, theta: np.ndarray) -> np.ndarray:
        """Return ``sum_j w_ij theta_j`` for every agent.

        ``theta`` has shape ``(..., n_agents, dim)``.  Summation order is fixed
        so that batched and per-agent code paths produce identical floats.
        """
        idx, wt = self._idx, self._wt
        out = wt[:, 0, None] * theta[..., idx[:, 0], :]
        for k in range(1, idx.shape[1]):
            out += wt[:, k, None] * theta[..., idx[:, k], :]
        return out

    def mix_agent(self, i: int, thetas: list) -> np.ndarray:
        """Mixing sum for agent ``i`` from a list of per-agent vectors."""
        idx, wt = self._idx, self._wt
        out = wt[i, 0] * thetas[idx[i, 0]]
        for k in range(1, idx.shape[1]):
            out = out + wt[i, k] * thetas[idx[i, k]]
        return out


def _check_weights(w: np.ndarray, g: Graph) -> None:
    n = g.n_agents
    if w.shape != (n, n):
        raise TopologyError(f"weight matrix shape {w.shape} does not match {n} agents")
    if not np.all(np.isfinite(w)):
        raise TopologyError("weights must be finite")
    if not np.array_equal(w, w.T):
        raise TopologyError("coupling matrix must be symmetric")
    if np.any(w < 0):
        raise TopologyError("coupling weights must be nonnegative")
    if np.any(np.diag(w) <= 0):
        raise TopologyError("diagonal weight nonpositive")
    adj = np.zeros((n, n), dtype=bool)
    for i, j in g.edges:
        adj[i, j] = adj[j, i] = True
    off = ~np.eye(n, dtype=bool)
    if np.any((w[off] > 0) != adj[off]):
        raise TopologyError("off-diagonal weights must be positive exactly on graph edges")
    if np.max(np.abs(w.sum(axis=1) - 1.0)) >= STOCHASTIC_TOL:
        raise TopologyError("rows of the coupling matrix must sum to 1")
    if not g.is_connected():
        raise TopologyError("communication graph is disconnected")


def spectral_gap(w: Union[CouplingMatrix, np.ndarray]) -> float:
    """``max(|pi_2|, |pi_N|)`` over the eigenvalues of a symmetric ``W``.

    The leading eigenvalue 1 is excluded.  A value within ``1e-12`` of 1 means
    the graph is disconnected (or bipartite with no self-weight) and is
    rejected.
    """
    mat = w.weights if isinstance(w, CouplingMatrix) else np.asarray(w, dtype=float)
    if mat.shape[0] == 1:
        return 0.0
    eig = np.sort(np.linalg.eigvalsh(mat))[::-1]
    rho = float(max(abs(eig[1]), abs(eig[-1])))
    if rho >= 1.0 - RHO_TOL:
        raise TopologyError(f"spectral quantity rho={rho!r} is not below 1")
    return rho


def build_ring(n: int, w: float) -> CouplingMatrix:
    """Ring of ``n`` agents with neighbour weight ``w`` and self weight ``1 - 2w``."""
    if n < 3:
        raise TopologyError(f"a ring needs n >= 3, got {n}")
    if not 0.0 < w < 0.5:
        raise TopologyError(f"ring weight must lie in (0, 1/2), got {w} (diagonal weight nonpositive)")
    g = ring_graph(n)
    mat = np.zeros((n, n))
    for i in range(n):
        mat[i, (i + 1) % n] = w
        mat[i, (i - 1) % n] = w
        mat[i, i] = 1.0 - 2.0 * w
    return CouplingMatrix(mat, g)


def build_from_graph(g: Graph, weight_rule="metropolis", w: float | None = None) -> CouplingMatrix:
    """Coupling matrix for an arbitrary connected graph.

    ``weight_rule`` is ``"metropolis"`` (``w_ij = 1/(1 + max(deg i, deg j))``)
    or ``"uniform"`` with a common neighbour weight ``w``.
    """
    if not g.is_connected():
        raise TopologyError("communication graph is disconnected")
    n = g.n_agents
    deg = g.degrees
    mat = np.zeros((n, n))
    if weight_rule == "metropolis":
        for i, j in g.edges:
            mat[i, j] = mat[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    elif weight_rule == "uniform":
        if w is None or not w > 0:
            raise TopologyError("uniform rule needs a positive weight w")
        worst = max(deg)
        if worst * w >= 1.0:
            raise TopologyError(
                f"uniform weight {w} gives off-diagonal row sum {worst * w:g} >= 1 at a degree-{worst} agent"
            )
        for i, j in g.edges:
            mat[i, j] = mat[j, i] = w
    else:
        raise TopologyError(f"unknown weight rule {weight_rule!r}")
    for i in range(n):
        mat[i, i] = 1.0 - sum(mat[i, j] for j in g.neighbors(i))
    return CouplingMatrix(mat, g)
