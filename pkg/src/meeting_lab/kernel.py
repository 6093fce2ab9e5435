"""Symmetric zero-trace Markov kernels and the graphs that generate them."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import (
    Disconnected,
    KernelError,
    LoopEdge,
    NonRegular,
    PreconditionError,
    RejectionBudgetExceeded,
    UnknownFamily,
)

#: kernels up to this size are stored densely
DENSE_LIMIT = 512
ROW_TOL = 1e-12
SYM_TOL = 1e-12


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph on vertices ``0..n-1``."""

    n: int
    edges: np.ndarray  # (m, 2) int array, u < v

    @property
    def m(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)

    def adjacency(self) -> sp.csr_matrix:
        u, v = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * self.m)
        return sp.csr_matrix(
            (data, (np.concatenate([u, v]), np.concatenate([v, u]))), shape=(self.n, self.n)
        )

    def is_connected(self) -> bool:
        if self.n <= 1:
            return True
        ncomp, _ = connected_components(self.adjacency(), directed=False)
        return ncomp == 1


class KernelMatrix:
    """Markov kernel ``Q`` on ``{0, ..., n-1}``.

    Stored as a dense array for ``n <= DENSE_LIMIT`` and as CSR above; both
    representations answer :meth:`entry`, :meth:`dense` and :meth:`sparse`.
    """

    def __init__(self, entries, graph: Optional[Graph] = None, storage: str = "auto"):
        if sp.issparse(entries):
            mat = sp.csr_matrix(entries, dtype=float)
        else:
            mat = np.asarray(entries, dtype=float)
            if mat.ndim != 2:
                raise PreconditionError("kernel must be a square matrix")
        if mat.shape[0] != mat.shape[1]:
            raise PreconditionError(f"kernel must be square, got shape {mat.shape}")
        n = mat.shape[0]
        if storage == "auto":
            storage = "dense" if n <= DENSE_LIMIT else "sparse"
        if storage == "dense":
            self._mat = mat.toarray() if sp.issparse(mat) else mat
        elif storage == "sparse":
            self._mat = mat if sp.issparse(mat) else sp.csr_matrix(mat)
        else:
            raise ValueError(f"unknown storage {storage!r}")
        self.graph = graph

    @property
    def n(self) -> int:
        return self._mat.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self._mat)

    @property
    def entries(self):
        return self._mat

    def dense(self) -> np.ndarray:
        return self._mat.toarray() if self.is_sparse else self._mat

    def sparse(self) -> sp.csr_matrix:
        return self._mat if self.is_sparse else sp.csr_matrix(self._mat)

    @property
    def sparse_support(self) -> list:
        """Adjacency list of the nonzero entries."""
        S = self.sparse()
        return [S.indices[S.indptr[i]:S.indptr[i + 1]].tolist() for i in range(self.n)]

    def entry(self, x: int, y: int) -> float:
        return float(self._mat[x, y])

    def left(self, C):
        """``Q @ C``."""
        return np.asarray(self._mat @ C)

    def right(self, C):
        """``C @ Q``."""
        if self.is_sparse:
            return np.asarray((self._mat.T @ C.T).T)
        return C @ self._mat

    def diagonal(self) -> np.ndarray:
        return self._mat.diagonal() if self.is_sparse else np.diag(self._mat).copy()

    def __repr__(self):
        kind = "sparse" if self.is_sparse else "dense"
        return f"KernelMatrix(n={self.n}, {kind})"


@dataclass(frozen=True)
class ValidationReport:
    symmetric: bool
    zero_trace: bool
    stochastic: bool
    irreducible: bool
    n_gt_8: bool
    max_asymmetry: float
    max_row_defect: float

    @property
    def accepted(self) -> bool:
        return self.symmetric and self.zero_trace and self.stochastic and self.irreducible

    def failures(self) -> list[str]:
        names = ["symmetric", "zero_trace", "stochastic", "irreducible"]
        return [name for name in names if not getattr(self, name)]


def _bfs_connected(support: sp.csr_matrix) -> bool:
    n = support.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    indptr, indices = support.indptr, support.indices
    while queue:
        x = queue.popleft()
        for y in indices[indptr[x]:indptr[x + 1]]:
            if not seen[y]:
                seen[y] = True
                queue.append(y)
    return bool(seen.all())


def validate_kernel(K) -> ValidationReport:
    """Check symmetry, zero trace, stochasticity and irreducibility."""
    if not isinstance(K, KernelMatrix):
        K = KernelMatrix(K)
    S = K.sparse()
    S.eliminate_zeros()
    n = K.n
    asym = abs(S - S.T)
    max_asym = float(asym.max()) if asym.nnz else 0.0
    rows = np.asarray(S.sum(axis=1)).ravel()
    max_row = float(np.max(np.abs(rows - 1.0))) if n else 0.0
    in_range = S.nnz == 0 or (S.data.min() >= 0.0 and S.data.max() <= 1.0)
    diag = S.diagonal()
    support = (S + S.T).tocsr()
    return ValidationReport(
        symmetric=max_asym <= SYM_TOL,
        zero_trace=bool(np.all(diag == 0.0)),
        stochastic=bool(in_range and max_row <= ROW_TOL),
        irreducible=n > 0 and _bfs_connected(support),
        n_gt_8=n > 8,
        max_asymmetry=max_asym,
        max_row_defect=max_row,
    )


def require_valid(K: KernelMatrix) -> ValidationReport:
    report = validate_kernel(K)
    if not report.accepted:
        raise KernelError("invalid kernel: fails " + ", ".join(report.failures()))
    return report


def _as_edge_array(edges: Iterable[Sequence[int]]) -> np.ndarray:
    arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise PreconditionError("edges must be a list of vertex pairs")
    return arr


def make_graph(edges, n: int) -> Graph:
    """Build a simple :class:`Graph`, rejecting loops, multi-edges and bad labels."""
    arr = _as_edge_array(edges)
    if arr.size and (arr.min() < 0 or arr.max() >= n):
        raise PreconditionError(f"edge endpoint outside 0..{n - 1}")
    if np.any(arr[:, 0] == arr[:, 1]):
        raise LoopEdge("graph has a loop edge")
    arr = np.sort(arr, axis=1)
    if len(np.unique(arr, axis=0)) != len(arr):
        raise PreconditionError("graph has a multi-edge")
    order = np.lexsort((arr[:, 1], arr[:, 0]))
    return Graph(n=n, edges=arr[order])


def kernel_from_graph(graph: Graph) -> KernelMatrix:
    if graph.n <= 1:
        raise PreconditionError("need n > 1")
    deg = graph.degrees()
    if deg.min() != deg.max():
        raise NonRegular(f"degrees range over {deg.min()}..{deg.max()}; kernel would not be symmetric")
    if not graph.is_connected():
        raise Disconnected("graph is not connected")
    A = graph.adjacency()
    # 1/deg is the same float in both directions, so symmetry is exact
    return KernelMatrix(A * (1.0 / deg[0]), graph=graph)


def kernel_from_edge_list(edges, n: int) -> KernelMatrix:
    """Simple-random-walk kernel ``Q(x, y) = 1/deg(x)`` of a regular graph."""
    return kernel_from_graph(make_graph(edges, n))


def random_regular_graph(k: int, n: int, seed: int, max_tries: int = 10_000) -> Graph:
    """Uniform simple connected ``k``-regular graph by the pairing model.

    Half-edges are matched by a uniform random permutation; pairings giving a
    loop, a multi-edge or a disconnected graph are rejected and redrawn.
    Conditional on acceptance the result is uniform over simple connected
    ``k``-regular graphs.  The acceptance rate decays like
    ``exp(-(k**2 - 1) / 4)``, so degrees much above 6 exhaust ``max_tries``.
    """
    if k < 2:
        raise PreconditionError("degree must be at least 2")
    if (n * k) % 2:
        raise PreconditionError(f"n*k = {n * k} is odd")
    if n <= k:
        raise PreconditionError("need n > k")
    rng = np.random.default_rng(seed)
    stubs = np.repeat(np.arange(n, dtype=np.int64), k)
    for _ in range(max_tries):
        pairs = rng.permutation(stubs).reshape(-1, 2)
        if np.any(pairs[:, 0] == pairs[:, 1]):
            continue
        pairs.sort(axis=1)
        codes = pairs[:, 0] * n + pairs[:, 1]
        if len(np.unique(codes)) != len(codes):
            continue
        order = np.argsort(codes)
        graph = Graph(n=n, edges=pairs[order])
        if graph.is_connected():
            return graph
    raise RejectionBudgetExceeded(f"no simple connected {k}-regular graph on {n} vertices in {max_tries} tries")


def complete_graph(n: int) -> Graph:
    u, v = np.triu_indices(n, k=1)
    return Graph(n=n, edges=np.column_stack([u, v]).astype(np.int64))


def cycle_graph(n: int) -> Graph:
    u = np.arange(n, dtype=np.int64)
    return make_graph(np.column_stack([u, (u + 1) % n]), n)


def named_kernel(family: str, n: int) -> KernelMatrix:
    """Walk-regular fixture: ``complete`` (K_n) or ``cycle`` (C_n)."""
    builders = {"complete": complete_graph, "cycle": cycle_graph}
    if family not in builders:
        raise UnknownFamily(f"unknown family {family!r}; choose from {sorted(builders)}")
    if n <= 2:
        raise PreconditionError("named kernels need n > 2")
    return kernel_from_graph(builders[family](n))
