"""Predictor graphs and node weights.

A predictor graph places an undirected edge between two predictors when
they are conditionally dependent.  Everything downstream consumes the
*closed* neighborhoods ``N_i`` (node ``i`` together with its neighbors):
they are the coordinate blocks of the latent group penalty.

Indices are 0-based in memory.  The on-disk edge-list format is 1-based;
:func:`parse_edge_list` / :func:`format_edge_list` translate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

#: Default weight exponent; chosen so that a node with 8 neighbors
#: (closed degree 9) gets weight exactly 2.
DEFAULT_ETA = math.log(2.0) / (2.0 * math.log(3.0))


class PredictorGraph:
    """Undirected graph on ``p`` predictors, stored as closed neighborhoods.

    Instances are immutable by convention; build them with
    :func:`from_edge_list`, :func:`from_precision` or the special-graph
    constructors rather than mutating ``neighborhoods``.
    """

    def __init__(self, neighborhoods: Sequence[np.ndarray]):
        self.neighborhoods = tuple(
            np.asarray(nb, dtype=np.intp) for nb in neighborhoods
        )
        self.p = len(self.neighborhoods)
        if self.p == 0:
            raise ValueError("graph needs at least one node")

    @cached_property
    def degrees(self) -> np.ndarray:
        """Closed degrees ``d_i = |N_i|`` (always >= 1)."""
        return np.array([len(nb) for nb in self.neighborhoods], dtype=np.intp)

    @property
    def d_max(self) -> int:
        return int(self.degrees.max())

    @property
    def d_min(self) -> int:
        return int(self.degrees.min())

    def edges(self) -> list[tuple[int, int]]:
        """Sorted list of undirected edges as (i, j) pairs with i < j."""
        out = []
        for i, nb in enumerate(self.neighborhoods):
            for j in nb:
                if j > i:
                    out.append((i, int(j)))
        return sorted(out)

    # --- vectorization helpers -------------------------------------------
    # The stacked layout concatenates all closed neighborhoods; it is what
    # the proximal routines iterate over instead of per-block Python loops.

    @cached_property
    def stacked_indices(self) -> np.ndarray:
        """Concatenation of all closed neighborhoods."""
        return np.concatenate(self.neighborhoods)

    @cached_property
    def block_ptr(self) -> np.ndarray:
        """Offsets of each neighborhood inside :attr:`stacked_indices`."""
        return np.concatenate(([0], np.cumsum(self.degrees)))

    @cached_property
    def membership(self) -> sp.csr_matrix:
        """Sparse 0/1 matrix with row ``i`` indicating ``N_i``."""
        indptr = self.block_ptr
        data = np.ones(len(self.stacked_indices))
        return sp.csr_matrix(
            (data, self.stacked_indices, indptr), shape=(self.p, self.p)
        )

    def neighborhood_sq_norms(self, x: np.ndarray) -> np.ndarray:
        """Squared Euclidean norm of ``x`` restricted to each ``N_i``."""
        return self.membership @ np.square(x)

    # ----------------------------------------------------------------------

    def __eq__(self, other) -> bool:
        if not isinstance(other, PredictorGraph):
            return NotImplemented
        return self.p == other.p and all(
            np.array_equal(a, b)
            for a, b in zip(self.neighborhoods, other.neighborhoods)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"PredictorGraph(p={self.p}, edges={len(self.edges())})"


@dataclass(frozen=True)
class NodeWeights:
    """Per-node positive weights of the latent group penalty."""

    tau: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        if tau.ndim != 1 or not np.all(tau > 0) or not np.all(np.isfinite(tau)):
            raise ValueError("weights must be a 1-d array of positive finite values")
        object.__setattr__(self, "tau", tau)

    @property
    def tau_min(self) -> float:
        return float(self.tau.min())


def _graph_from_adjacency(p: int, adj: list[set]) -> PredictorGraph:
    neighborhoods = []
    for i in range(p):
        adj[i].add(i)
        neighborhoods.append(np.array(sorted(adj[i]), dtype=np.intp))
    return PredictorGraph(neighborhoods)


def from_edge_list(p: int, edges: Iterable[tuple[int, int]]) -> PredictorGraph:
    """Build a graph on ``p`` nodes from 0-based undirected edge pairs.

    Duplicate edges and orientation are collapsed; self-loops are ignored
    (every closed neighborhood contains its own node regardless).
    """
    if p < 1:
        raise ValueError("graph needs at least one node")
    adj: list[set] = [set() for _ in range(p)]
    for i, j in edges:
        i, j = int(i), int(j)
        if not (0 <= i < p and 0 <= j < p):
            raise ValueError(f"edge ({i}, {j}) out of range for p={p}")
        if i != j:
            adj[i].add(j)
            adj[j].add(i)
    return _graph_from_adjacency(p, adj)


def from_precision(omega: np.ndarray, edge_tol: float = 1e-8) -> PredictorGraph:
    """Read the conditional-independence graph off a precision matrix.

    An edge (i, j) is present when ``|omega[i, j]| > edge_tol``.  ``omega``
    must be square and symmetric up to the same tolerance.
    """
    omega = np.asarray(omega, dtype=float)
    if omega.ndim != 2 or omega.shape[0] != omega.shape[1]:
        raise ValueError("precision matrix must be square")
    scale = max(1.0, float(np.abs(omega).max()))
    if np.abs(omega - omega.T).max() > edge_tol * scale:
        raise ValueError("precision matrix must be symmetric")
    p = omega.shape[0]
    mask = np.abs(omega) > edge_tol
    np.fill_diagonal(mask, False)
    ii, jj = np.nonzero(mask)
    return from_edge_list(p, [(int(a), int(b)) for a, b in zip(ii, jj) if a < b])


def edgeless(p: int) -> PredictorGraph:
    """Graph with no edges; every closed neighborhood is a singleton."""
    return from_edge_list(p, [])


def complete(p: int) -> PredictorGraph:
    """Graph where every pair of nodes is connected."""
    return from_edge_list(p, [(i, j) for i in range(p) for j in range(i + 1, p)])


def block_complete(sizes: Sequence[int]) -> PredictorGraph:
    """Disjoint union of complete graphs with the given block sizes."""
    sizes = [int(s) for s in sizes]
    if not sizes or any(s < 1 for s in sizes):
        raise ValueError("block sizes must be positive")
    edges = []
    start = 0
    for s in sizes:
        nodes = range(start, start + s)
        edges.extend((i, j) for i in nodes for j in nodes if i < j)
        start += s
    return from_edge_list(start, edges)


def banded(p: int, width: int) -> PredictorGraph:
    """Graph connecting nodes at index distance at most ``width``."""
    if width < 1:
        raise ValueError("band width must be >= 1")
    edges = [
        (i, j)
        for i in range(p)
        for j in range(i + 1, min(i + width + 1, p))
    ]
    return from_edge_list(p, edges)


def make_special(kind: str, p: int, *, sizes=None, width=None) -> PredictorGraph:
    """Dispatch on a special-graph name: edgeless | complete | block_complete | banded."""
    if kind == "edgeless":
        return edgeless(p)
    if kind == "complete":
        return complete(p)
    if kind == "block_complete":
        if sizes is None:
            raise ValueError("block_complete requires sizes")
        g = block_complete(sizes)
        if g.p != p:
            raise ValueError(f"block sizes sum to {g.p}, expected p={p}")
        return g
    if kind == "banded":
        if width is None:
            raise ValueError("banded requires a width")
        return banded(p, width)
    raise ValueError(f"unknown special graph kind: {kind!r}")


def default_weights(graph: PredictorGraph, eta: float = DEFAULT_ETA) -> NodeWeights:
    """Degree-based weights ``tau_i = d_i ** eta`` (``eta >= 0``)."""
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    return NodeWeights(graph.degrees.astype(float) ** eta)


# --- edge-list text format (1-based on disk) ------------------------------


def parse_edge_list(text: str) -> list[tuple[int, int]]:
    """Parse an edge-list file body into 0-based edge pairs.

    One ``i j`` pair per line, indices 1-based, blank lines and ``#``
    comments allowed.  Malformed lines are reported with their 1-based
    line number.
    """
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected two indices, got {raw!r}")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValueError(f"line {lineno}: non-integer index in {raw!r}") from None
        if i < 1 or j < 1:
            raise ValueError(f"line {lineno}: indices are 1-based, got {raw!r}")
        edges.append((i - 1, j - 1))
    return edges


def format_edge_list(graph: PredictorGraph) -> str:
    """Render the edges of a graph in the 1-based on-disk format."""
    lines = [f"{i + 1} {j + 1}" for i, j in graph.edges()]
    return "\n".join(lines) + ("\n" if lines else "")
