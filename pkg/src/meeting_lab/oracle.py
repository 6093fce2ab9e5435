"""Ground truth for meeting times that shares no code with the series machinery.

Exact values come from the absorbing product chain of the two walkers;
Monte Carlo values from simulating the two chains directly.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import stats

from .errors import PreconditionError, SolveFailure
from .kernel import KernelMatrix

#: product-chain systems up to this size are factorised directly
DIRECT_SOLVE_LIMIT = 40_000
#: ... unless the generator is this dense, where LU fill-in outruns CG
DIRECT_NNZ_LIMIT = 60_000
#: tail computations use a full eigendecomposition up to this many pair states
TAIL_EIG_LIMIT = 2_500
CHUNK = 1 << 16


# -- exact product-chain solves ---------------------------------------------------------------


@dataclass
class PairLaplaceTable:
    """``phi[x, y] = E[exp(-lam M_{x,y})]``."""

    phi: np.ndarray
    lam: float
    residual: float
    method: str
    iterations: int = 0

    @property
    def n(self) -> int:
        return self.phi.shape[0]


def _pair_rhs(Q: np.ndarray) -> np.ndarray:
    B = 2.0 * Q
    np.fill_diagonal(B, 0.0)
    return B


class _PairOperator:
    """``Phi -> (2+lam) Phi - P(Q Phi + Phi Q)`` with ``P`` zeroing the diagonal.

    Symmetric positive definite on ``R^{N x N}``: the diagonal block is
    ``(2+lam) I`` and the off-diagonal part has spectrum in ``[lam, lam+4]``.
    """

    def __init__(self, K: KernelMatrix, lam: float):
        self.K = K
        self.lam = lam
        self.n = K.n

    def matvec(self, v: np.ndarray) -> np.ndarray:
        n = self.n
        X = v.reshape(n, n).copy()
        np.fill_diagonal(X, 0.0)
        Y = self.K.left(X) + self.K.right(X)
        np.fill_diagonal(Y, 0.0)
        out = (2.0 + self.lam) * v.reshape(n, n) - Y
        return out.ravel()

    def linear_operator(self) -> spla.LinearOperator:
        N2 = self.n * self.n
        return spla.LinearOperator((N2, N2), matvec=self.matvec, dtype=float)


def _pair_generator_sparse(K: KernelMatrix) -> tuple[sp.csr_matrix, np.ndarray]:
    """``Q (+) Q`` restricted to ordered pairs ``x != y``, and those pair indices."""
    n = K.n
    Q = K.sparse()
    I = sp.identity(n, format="csr")
    G = (sp.kron(Q, I) + sp.kron(I, Q)).tocsr()
    off = np.flatnonzero(~np.eye(n, dtype=bool).ravel())
    return G[off][:, off].tocsr(), off


def exact_pair_laplace(K: KernelMatrix, lam: float, method: str = "auto", rtol: float = 1e-13) -> PairLaplaceTable:
    """Solve ``(2+lam) phi(x,y) = sum_z Q(x,z) phi(z,y) + sum_z Q(y,z) phi(x,z)``
    for ``x != y`` with ``phi(x,x) = 1``.

    ``method`` is ``direct`` (sparse LU on the ``N(N-1)`` pair states),
    ``cg`` (matrix-free conjugate gradients) or ``auto``.
    """
    if lam <= 0:
        raise PreconditionError("lambda must be positive")
    n = K.n
    Qd = K.dense() if not K.is_sparse else None
    if method == "auto":
        nnz = (n * n - n) * 2 * (np.count_nonzero(Qd) if Qd is not None else K.sparse().nnz) / n
        method = "direct" if n * n <= DIRECT_SOLVE_LIMIT // 16 and nnz <= DIRECT_NNZ_LIMIT else "cg"
    B = _pair_rhs(Qd if Qd is not None else K.sparse().toarray())
    iterations = 0
    if method == "direct":
        G, off = _pair_generator_sparse(K)
        A = ((2.0 + lam) * sp.identity(len(off), format="csc") - G).tocsc()
        try:
            x = spla.spsolve(A, B.ravel()[off])
        except RuntimeError as exc:
            raise SolveFailure(str(exc)) from exc
        X = np.zeros(n * n)
        X[off] = x
        X = X.reshape(n, n)
    elif method == "cg":
        op = _PairOperator(K, lam)
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = spla.cg(op.linear_operator(), B.ravel(), rtol=rtol, atol=0.0, maxiter=10_000, callback=cb)
        if info != 0:
            raise SolveFailure(f"conjugate gradients did not converge (info={info})")
        iterations = count[0]
        X = x.reshape(n, n)
        np.fill_diagonal(X, 0.0)
        X = 0.5 * (X + X.T)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(X)):
        raise SolveFailure("non-finite solution")
    resid = np.abs(_PairOperator(K, lam).matvec(X.ravel()) - B.ravel()).max()
    phi = X + np.eye(n)
    return PairLaplaceTable(phi=phi, lam=lam, residual=float(resid), method=method, iterations=iterations)


def exact_first_order_laplace(K: KernelMatrix, lam: float, method: str = "auto") -> float:
    """``E[exp(-lam M_{U,V})]`` with ``U`` uniform and ``V ~ Q(U, .)``."""
    table = exact_pair_laplace(K, lam, method=method)
    if K.is_sparse:
        Q = K.sparse().tocoo()
        vals = Q.data * table.phi[Q.row, Q.col]
    else:
        vals = (K.dense() * table.phi).ravel()
    return math.fsum(vals) / K.n


# -- meeting-time tails -----------------------------------------------------------------------


class MeetingTail:
    """``P(M_{x,y} > t)`` for every pair, from the absorbing product chain.

    The sub-generator ``P(Q (+) Q - 2) P`` on pairs ``x != y`` is symmetric;
    small systems are diagonalised once, larger ones use ``expm_multiply``.
    """

    def __init__(self, K: KernelMatrix):
        self.K = K
        G, off = _pair_generator_sparse(K)
        self._off = off
        self._G = (G - 2.0 * sp.identity(len(off), format="csr")).tocsr()
        self._eig = None
        if len(off) <= TAIL_EIG_LIMIT:
            mu, W = scipy.linalg.eigh(self._G.toarray())
            self._eig = (mu, W, W.T @ np.ones(len(off)))

    def _vectors(self, times: np.ndarray) -> np.ndarray:
        """Survival vectors on pair states, one column per time."""
        times = np.asarray(times, dtype=float)
        if self._eig is not None:
            mu, W, c = self._eig
            return W @ (np.exp(np.outer(mu, times)) * c[:, None])
        ones = np.ones(len(self._off))
        order = np.argsort(times)
        out = np.empty((len(self._off), len(times)))
        for i in order:
            out[:, i] = spla.expm_multiply(self._G * times[i], ones)
        return out

    def matrices(self, times) -> np.ndarray:
        """Array of shape ``(len(times), N, N)`` with ``P(M_{x,y} > t)``."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if np.any(times < 0):
            raise PreconditionError("t must be nonnegative")
        n = self.K.n
        vec = np.clip(self._vectors(times), 0.0, 1.0)
        out = np.zeros((len(times), n * n))
        out[:, self._off] = vec.T
        return out.reshape(len(times), n, n)

    def __call__(self, x: int, y: int, t: float) -> float:
        if x == y:
            return 0.0
        return float(self.matrices([t])[0, x, y])


def meeting_tail(K: KernelMatrix, x: int, y: int, t: float) -> float:
    """``P(M_{x,y} > t)``."""
    if t < 0:
        raise PreconditionError("t must be nonnegative")
    if x == y:
        return 0.0
    return MeetingTail(K)(x, y, t)


def _gauss_legendre_panels(t: float, points: int, per_panel: int = 16) -> tuple[np.ndarray, np.ndarray]:
    panels = max(points // per_panel, 1)
    xg, wg = np.polynomial.legendre.leggauss(per_panel)
    edges = np.linspace(0.0, t, panels + 1)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (b - a) * xg + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * wg)
    return np.concatenate(nodes), np.concatenate(weights)


def higher_order_residual(
    K: KernelMatrix, m: int, n: int, t: float, quad_points: int = 512, tail: Optional[MeetingTail] = None
) -> float:
    """Residual of the first-epoch identity linking meeting times of orders
    ``m+n`` and ``m+n+1``::

        int_0^t 2 e^{-2(t-v)} P(M_{V0,V_{m+n+1}} > v) dv
          = P(M_{U_m,V_n} > t) - e^{-2t} (1 - tr(Q^{m+n})/N)
            + int_0^t 2 e^{-2(t-v)} (1/N) sum_{x,y} Q^{m+n}(x,x) Q(x,y) P(M_{x,y} > v) dv
    """
    if quad_points < 32:
        raise PreconditionError("quad_points must be at least 32")
    if m < 0 or n < 0 or t < 0:
        raise PreconditionError("m, n and t must be nonnegative")
    if t == 0.0:
        return 0.0
    tail = tail or MeetingTail(K)
    N = K.n
    Q = K.dense()
    s = m + n
    Ps = np.linalg.matrix_power(Q, s)
    Ps1 = Ps @ Q
    d = np.diag(Ps)
    nodes, weights = _gauss_legendre_panels(t, quad_points)
    surv = tail.matrices(np.concatenate([nodes, [t]]))
    surv_nodes, surv_t = surv[:-1], surv[-1]
    kern = 2.0 * np.exp(-2.0 * (t - nodes)) * weights
    lhs_f = np.einsum("xy,vxy->v", Ps1, surv_nodes) / N
    rhs_f = np.einsum("xy,vxy->v", d[:, None] * Q, surv_nodes) / N
    lhs = math.fsum(kern * lhs_f)
    start = float(np.sum(Ps * surv_t)) / N
    rhs = start - math.exp(-2.0 * t) * (1.0 - np.trace(Ps) / N) + math.fsum(kern * rhs_f)
    return abs(lhs - rhs)


def tree_return_probabilities(k: int, s_max: int) -> np.ndarray:
    """``P(X_s = root)`` for the simple walk on the infinite ``k``-regular tree.

    Dynamic program on the distance from the root, a birth-death chain.
    """
    if k < 2:
        raise PreconditionError("k must be at least 2")
    dist = np.zeros(s_max + 2)
    dist[0] = 1.0
    out = np.empty(s_max + 1)
    out[0] = 1.0
    for s in range(1, s_max + 1):
        new = np.zeros_like(dist)
        new[1] += dist[0]
        new[0:-2] += dist[1:-1] / k
        new[2:] += dist[1:-1] * (k - 1) / k
        dist = new
        out[s] = dist[0]
    return out


# -- Monte Carlo ------------------------------------------------------------------------------

StartSpec = Union[str, tuple]


@dataclass
class MeetingEstimate:
    value: float
    std_error: float
    samples: int
    seed: int
    lam: float
    start: str = ""
    workers: int = 1
    horizon: float = math.inf
    censored: int = 0

    def confidence_interval(self, level: float = 0.95) -> tuple[float, float]:
        z = stats.norm.ppf(0.5 + level / 2)
        return self.value - z * self.std_error, self.value + z * self.std_error

    def as_dict(self) -> dict:
        lo, hi = self.confidence_interval()
        return {
            "value": self.value,
            "std_error": self.std_error,
            "ci95": [lo, hi],
            "samples": self.samples,
            "seed": self.seed,
            "lambda": self.lam,
            "start": self.start,
            "workers": self.workers,
            "horizon": None if math.isinf(self.horizon) else self.horizon,
            "censored": self.censored,
        }


class _Stepper:
    """Vectorised one-step sampling from the rows of ``Q``."""

    def __init__(self, K: KernelMatrix):
        Q = K.sparse().tocsr()
        Q.sort_indices()
        self.indptr = Q.indptr
        self.indices = Q.indices
        rows = np.repeat(np.arange(K.n), np.diff(Q.indptr))
        cums = np.zeros_like(Q.data)
        for i in range(K.n):
            a, b = Q.indptr[i], Q.indptr[i + 1]
            c = np.cumsum(Q.data[a:b])
            cums[a:b] = c / c[-1]
        # row i occupies (i, i+1] on a single increasing axis
        self.axis = rows + cums
        self.axis[Q.indptr[1:] - 1] = np.arange(1, K.n + 1)
        self.n = K.n

    def step(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(len(x))
        pos = np.searchsorted(self.axis, x + u, side="left")
        lo = self.indptr[x]
        hi = self.indptr[x + 1] - 1
        return self.indices[np.clip(pos, lo, hi)]


def parse_start(start: StartSpec) -> tuple:
    """Normalise a start specification.

    Accepted: ``"uniform_pair"``, ``"q_adjacent_pair"``, ``("fixed", x, y)``,
    ``("s_step", s)``, ``("branch", m, n)`` for ``(U_m, V_n)`` and
    ``("path", l, s)`` for ``(V_l, V_{l+s})``; strings like ``"fixed:0,1"``
    are parsed too.
    """
    if isinstance(start, str):
        if ":" in start:
            name, args = start.split(":", 1)
            return (name, *[int(a) for a in args.split(",")])
        return (start,)
    return tuple(start)


def start_label(start: StartSpec) -> str:
    spec = parse_start(start)
    return spec[0] if len(spec) == 1 else f"{spec[0]}:{','.join(str(a) for a in spec[1:])}"


def _walk(stepper: _Stepper, x: np.ndarray, steps: int, rng) -> np.ndarray:
    for _ in range(steps):
        x = stepper.step(x, rng)
    return x


def sample_starts(K: KernelMatrix, start: StartSpec, size: int, rng: np.random.Generator, stepper=None):
    spec = parse_start(start)
    stepper = stepper or _Stepper(K)
    n = K.n
    name = spec[0]
    if name == "uniform_pair":
        return rng.integers(n, size=size), rng.integers(n, size=size)
    if name == "q_adjacent_pair":
        a = rng.integers(n, size=size)
        return a, stepper.step(a, rng)
    if name == "fixed":
        _, x, y = spec
        if not (0 <= x < n and 0 <= y < n):
            raise PreconditionError("fixed start outside the state space")
        return np.full(size, x), np.full(size, y)
    if name == "s_step":
        a = rng.integers(n, size=size)
        return a, _walk(stepper, a, spec[1], rng)
    if name == "branch":
        _, m, k = spec
        root = rng.integers(n, size=size)
        return _walk(stepper, root, m, rng), _walk(stepper, root, k, rng)
    if name == "path":
        _, l, s = spec
        a = _walk(stepper, rng.integers(n, size=size), l, rng)
        return a, _walk(stepper, a, s, rng)
    raise PreconditionError(f"unknown start {start!r}")


def simulate_meeting_times(
    stepper: _Stepper, a: np.ndarray, b: np.ndarray, rng: np.random.Generator, horizon: float = math.inf
) -> np.ndarray:
    """First coincidence times of two independent rate-1 chains.

    Event-driven: the merged clock rings at rate 2 and a fair coin picks which
    chain jumps.  Samples still apart after ``horizon`` are returned as ``inf``.
    """
    a = np.array(a, copy=True)
    b = np.array(b, copy=True)
    times = np.zeros(len(a))
    out = np.full(len(a), math.inf)
    active = np.flatnonzero(a != b)
    out[a == b] = 0.0
    while active.size:
        times[active] += rng.exponential(0.5, size=active.size)
        over = times[active] > horizon
        if over.any():
            active = active[~over]
            if not active.size:
                break
        move_a = rng.random(active.size) < 0.5
        ia, ib = active[move_a], active[~move_a]
        a[ia] = stepper.step(a[ia], rng)
        b[ib] = stepper.step(b[ib], rng)
        met = a[active] == b[active]
        out[active[met]] = times[active[met]]
        active = active[~met]
    return out


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(chunk,))))


def _chunk_sizes(samples: int, chunk: int = CHUNK) -> list[int]:
    full, rem = divmod(samples, chunk)
    return [chunk] * full + ([rem] if rem else [])


def meeting_time_samples(
    K: KernelMatrix, start: StartSpec, samples: int, seed: int, horizon: float = math.inf, workers: int = 1
) -> np.ndarray:
    """Raw meeting-time draws; chunk ``c`` always uses the stream ``(seed, c)``."""
    if samples < 1:
        raise PreconditionError("samples must be at least 1")
    stepper = _Stepper(K)

    def run(job):
        c, size = job
        rng = _chunk_rng(seed, c)
        a, b = sample_starts(K, start, size, rng, stepper)
        return simulate_meeting_times(stepper, a, b, rng, horizon)

    jobs = list(enumerate(_chunk_sizes(samples)))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    return np.concatenate(parts)


def simulate_meeting(
    K: KernelMatrix,
    start: StartSpec,
    lam: float,
    samples: int,
    seed: int,
    workers: int = 1,
    horizon: Optional[float] = None,
) -> MeetingEstimate:
    """Monte Carlo estimate of ``E[exp(-lam M)]`` under the given start.

    Paths are stopped once ``exp(-lam t)`` drops below ``exp(-40)``; the
    discarded contribution is smaller than that.  The estimate depends only on
    ``seed`` and ``samples``, not on ``workers``.
    """
    if lam <= 0:
        raise PreconditionError("lambda must be positive")
    if horizon is None:
        horizon = 40.0 / lam
    times = meeting_time_samples(K, start, samples, seed, horizon, workers)
    vals = np.exp(-lam * times)
    value = math.fsum(vals) / samples
    if samples > 1:
        var = math.fsum((vals - value) ** 2) / (samples - 1)
        se = math.sqrt(var / samples)
    else:
        se = math.inf
    return MeetingEstimate(
        value=value,
        std_error=se,
        samples=samples,
        seed=seed,
        lam=lam,
        start=start_label(start),
        workers=workers,
        horizon=horizon,
        censored=int(np.sum(np.isinf(times))),
    )
