"""Voter-model correlation operators and the meeting-time series built on them.

``L`` is the expected congruence ``C -> E[T* C T]`` of one voter update and
``L0`` its walk-regular surrogate, which replaces every ``diag(C)`` by
``tr(C)/N * I``.  The powers ``L0**n (J)`` stay in the algebra generated by
``Q`` and are described by the triangular coefficient table ``alpha(n, s)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, InsufficientTraces, OutsideDomain, PreconditionError
from .kernel import KernelMatrix
from .spectral import Spectrum, TraceSeq, green_ratio

SQRT2 = math.sqrt(2.0)


def _check_shape(K: KernelMatrix, C: np.ndarray) -> None:
    if C.shape != (K.n, K.n):
        raise DimensionMismatch(f"matrix of shape {C.shape} for a kernel on {K.n} states")


def J_matrix(n: int) -> np.ndarray:
    return np.full((n, n), 1.0 / n)


def _diag_sandwich(K: KernelMatrix, d: np.ndarray) -> np.ndarray:
    """``diag(d) Q + Q diag(d)`` as a dense array."""
    if K.is_sparse:
        Q = K.sparse()
        return (Q.multiply(d[:, None]) + Q.multiply(d[None, :])).toarray()
    Q = K.dense()
    return d[:, None] * Q + Q * d[None, :]


def apply_L_minus_identity(K: KernelMatrix, C: np.ndarray) -> np.ndarray:
    """``(L - I)(C)`` without forming ``L(C)`` first."""
    C = np.asarray(C, dtype=float)
    _check_shape(K, C)
    n = K.n
    d = np.diag(C).copy()
    out = (K.right(C) + K.left(C) - 2.0 * C) / n
    out -= _diag_sandwich(K, d) / n
    out[np.diag_indices(n)] += d / n + K.left(d) / n
    return out


def apply_L(K: KernelMatrix, C: np.ndarray) -> np.ndarray:
    """Voter correlation operator.

    ``L(C) = (N-2)/N C + (CQ + QC)/N - [diag(C) Q + Q diag(C)]/N
    + diag(C)/N + diag(Q diag(C) J)``.
    """
    return np.asarray(C, dtype=float) + apply_L_minus_identity(K, C)


def apply_L0(K: KernelMatrix, C: np.ndarray) -> np.ndarray:
    """``(N-2)/N C + (CQ + QC)/N - 2 tr(C)/N**2 Q + 2 tr(C)/N**2 I``."""
    C = np.asarray(C, dtype=float)
    _check_shape(K, C)
    n = K.n
    c = 2.0 * np.trace(C) / n ** 2
    out = (n - 2.0) / n * C + (K.right(C) + K.left(C)) / n - c * K.dense()
    out[np.diag_indices(n)] += c
    return out


class VoterFunctionals:
    """Linear functionals on matrices induced by Bernoulli(u) configurations.

    ``s_beta(C) = E<beta_u|C|beta_u> = u**2 sum(C) + (u - u**2) tr(C)``.
    """

    def __init__(self, u: float = 0.5):
        if not 0.0 < u < 1.0:
            raise PreconditionError("u must lie in (0, 1)")
        self.u = u

    def s_beta(self, C: np.ndarray) -> float:
        u = self.u
        C = np.asarray(C)
        # pairwise summation keeps the error near machine precision at a fraction of fsum's cost
        return float(u * u * C.sum() + (u - u * u) * np.trace(C))

    def s_beta_power(self, n: int, trace_s: float) -> float:
        """``s_beta(Q**s)`` from the trace alone."""
        u = self.u
        return u * u * n + (u - u * u) * trace_s

    def s_beta_J(self, n: int) -> float:
        u = self.u
        return (n - 1) * u * u + u

    @staticmethod
    def s_xi(xi: np.ndarray, C: np.ndarray) -> float:
        xi = np.asarray(xi, dtype=float)
        return float(xi @ C @ xi)

    @staticmethod
    def p1(xi: np.ndarray) -> float:
        """Density of ones."""
        return float(np.mean(xi))

    @staticmethod
    def p10(K: KernelMatrix, xi: np.ndarray) -> float:
        """Mean local density of disagreeing pairs, ``<xi|Q|1-xi>/N``."""
        xi = np.asarray(xi, dtype=float)
        return float(xi @ K.left(1.0 - xi)) / K.n


@dataclass
class AlphaTable:
    """Coefficients with ``L0**n (J) = J + sum_s alpha(n, s) Q**s``.

    ``rows[n, s]`` holds ``alpha(n, s)``; entries with ``s > n`` are zero.
    """

    n_max: int
    rows: np.ndarray
    traces: TraceSeq

    def __call__(self, n: int, s: int) -> float:
        if s > n:
            return 0.0
        return float(self.rows[n, s])

    def row(self, n: int) -> np.ndarray:
        return self.rows[n, : n + 1]


def _alpha_step(prev: np.ndarray, t: np.ndarray, n: int, N: int) -> np.ndarray:
    """Row ``n+1`` from row ``n`` (length ``n+1``); returns length ``n+2``."""
    nxt = np.zeros(n + 2)
    # sum_{s>=1} alpha(n, s) tr(Q**s)
    coupling = float(np.dot(prev[1:], t[1 : n + 1])) if n >= 1 else 0.0
    nxt[0] = 2.0 / N ** 2 + prev[0] + 2.0 / N ** 2 * coupling
    if n >= 1:
        nxt[1] = -2.0 / N ** 2 + (N - 2.0) / N * prev[1] - 2.0 / N ** 2 * coupling
    else:
        nxt[1] = -2.0 / N ** 2 - 2.0 / N ** 2 * coupling
    if n >= 1:
        nxt[2 : n + 1] = (N - 2.0) / N * prev[2 : n + 1] + 2.0 / N * prev[1:n]
        nxt[n + 1] = 2.0 / N * prev[n]
    return nxt


def iter_alpha_rows(traces: TraceSeq, n_max: Optional[int] = None):
    """Yield ``alpha(n, 0..n)`` for ``n = 0, 1, ...`` (forever if ``n_max`` is None)."""
    N = traces.n
    t = traces.values
    row = np.zeros(1)
    n = 0
    yield row
    while n_max is None or n < n_max:
        if n + 1 > traces.s_max:
            raise InsufficientTraces(f"need tr(Q^s) up to s = {n + 1}, have {traces.s_max}")
        row = _alpha_step(row, t, n, N)
        n += 1
        yield row


def alpha_table(traces: TraceSeq, n_max: int) -> AlphaTable:
    """Run the alpha recursion up to row ``n_max``."""
    if traces.s_max < n_max:
        raise InsufficientTraces(f"need tr(Q^s) up to s = {n_max}, have {traces.s_max}")
    rows = np.zeros((n_max + 1, n_max + 1))
    for n, row in enumerate(iter_alpha_rows(traces, n_max)):
        rows[n, : n + 1] = row
    return AlphaTable(n_max=n_max, rows=rows, traces=traces)


def alpha_row_bound(N: int, n: int) -> float:
    """A-priori growth bound ``(1/N)(1 + 6/N)**(n-1)`` on the alpha rows."""
    return (1.0 + 6.0 / N) ** (n - 1) / N


def alpha_growth_bounds(N: int, n: int, epsilon: float) -> tuple[float, float, float]:
    """Epsilon-dependent bounds on ``|alpha(n,0)|``, ``|alpha(n,1)|`` and
    ``sup_{|q|<=1} |sum_{s>=2} q**s alpha(n,s)|``."""
    shape = (4.0 + epsilon) / epsilon / N
    g = N / (N - epsilon)
    b0 = (1.0 / epsilon + 4 * SQRT2) / math.pi * shape * g ** max(n - 1, 0)
    b1 = 9.0 / math.pi * shape * g ** max(n - 1, 0)
    b2 = (1.0 / epsilon + 16 * SQRT2 / math.sqrt(1 - math.cos(1.0))) / math.pi * shape * g ** max(n - 2, 0)
    return b0, b1, b2


def _direct_sum_terms(N: int, zeta: complex, tol: float = 1e-12) -> int:
    """Number of rows after which the truncated generating sum is within ``tol``."""
    a = abs(zeta)
    if a == 0.0:
        return 1
    r = a * (1.0 + 6.0 / N)
    if r < 1.0:
        # each row is at most 3/N (1+6/N)^(n-1) in size
        c = 3.0 / (N * (1.0 + 6.0 / N))
        n = math.log(tol * (1 - r) / c) / math.log(r)
    else:
        # fall back on the epsilon-dependent bounds, rows grow like (N/(N-eps))^n
        eps = min(1.0, N * (1.0 - a) / 2.0)
        r = a * N / (N - eps)
        c = sum(alpha_growth_bounds(N, 0, eps))
        n = math.log(tol * (1 - r) / c) / math.log(r)
    return max(int(math.ceil(n)), 1) + 1


def alpha_generating_function(
    S: Spectrum, zeta: complex, q: complex, mode: str = "closed_form", n_terms: Optional[int] = None
) -> complex:
    """Two-variable generating function ``sum_n zeta**n sum_s q**s alpha(n, s)``.

    ``closed_form`` evaluates the spectral formula
    ``2 zeta (1-q) / [N - zeta(N-2+2q)] / (N (1-zeta)**2 tr(1/(N - zeta(N-2+2Q))))``;
    ``direct_sum`` runs the recursion and truncates where the a-priori growth
    bounds put the tail below 1e-12.
    """
    zeta, q = complex(zeta), complex(q)
    if abs(zeta) >= 1.0:
        raise OutsideDomain("need |zeta| < 1")
    if abs(q) > 1.0 + 1e-15:
        raise OutsideDomain("need |q| <= 1")
    N = S.n
    if mode == "closed_form":
        if zeta == 0:
            return 0j
        tr = np.sum(1.0 / (N - zeta * (N - 2 + 2 * S.eigenvalues)))
        return 2 * zeta * (1 - q) / (N - zeta * (N - 2 + 2 * q)) / (N * (1 - zeta) ** 2 * tr)
    if mode != "direct_sum":
        raise ValueError(f"unknown mode {mode!r}")
    if n_terms is None:
        n_terms = _direct_sum_terms(N, zeta)
    traces = TraceSeq.from_spectrum(S, n_terms)
    total = 0j
    zn = 1.0 + 0j
    qs = q ** np.arange(n_terms + 1)
    for n, row in enumerate(iter_alpha_rows(traces, n_terms)):
        total += zn * complex(np.dot(row, qs[: n + 1]))
        zn *= zeta
    return total


def l0_generating_matrix(K: KernelMatrix, S: Spectrum, zeta: float) -> np.ndarray:
    """Closed form of ``sum_n zeta**n L0**n (J)``."""
    if abs(zeta) >= 1.0:
        raise OutsideDomain("need |zeta| < 1")
    N = K.n
    Q = K.dense()
    tr = np.sum(1.0 / (N - zeta * (N - 2 + 2 * S.eigenvalues)))
    M = N * np.eye(N) - zeta * ((N - 2) * np.eye(N) + 2 * Q)
    X = np.linalg.solve(M, np.eye(N) - Q)
    return J_matrix(N) / (1 - zeta) + 2 * zeta * X / (N * (1 - zeta) ** 2 * tr)


@dataclass(frozen=True)
class SeriesValue:
    """A truncated series value with its truncation metadata."""

    value: float
    n_terms: int
    tail_bound: float

    def __float__(self) -> float:
        return self.value


def series_truncation(N: int, lam: float, u: float, tol: float) -> int:
    """Smallest ``n`` with ``(N/(N+lam))**n / (u(1-u)) <= tol``."""
    return max(int(math.ceil(math.log(tol * u * (1 - u)) / math.log(N / (N + lam)))), 1)


def laplace_series_exact(K: KernelMatrix, lam: float, u: float = 0.5, tol: float = 1e-12) -> SeriesValue:
    """``E[exp(-lam M_{U,V})]`` from the voter correlations ``L**n (J)``.

    Evaluates ``1 - lam N**2 / (2u(1-u)(N+lam)) * sum_n (N/(N+lam))**n
    (s_beta(L**(n+1) J) - s_beta(L**n J)) / N``, truncated where the
    geometric tail drops below ``tol``.
    """
    if lam <= 0:
        raise PreconditionError("lambda must be positive")
    if tol <= 0:
        raise PreconditionError("tol must be positive")
    N = K.n
    F = VoterFunctionals(u)
    n_max = series_truncation(N, lam, u, tol)
    zeta = N / (N + lam)
    C = J_matrix(N)
    terms = []
    zn = 1.0
    for _ in range(n_max):
        D = apply_L_minus_identity(K, C)
        terms.append(zn * F.s_beta(D) / N)
        C = C + D
        zn *= zeta
    pref = lam * N ** 2 / (2 * u * (1 - u) * (N + lam))
    value = 1.0 - pref * math.fsum(terms)
    tail = zeta ** n_max / (u * (1 - u))
    return SeriesValue(value=float(min(max(value, 0.0), 1.0)), n_terms=n_max, tail_bound=tail)


def laplace_series_approx(
    S: Spectrum, lam: float, u: float = 0.5, mode: str = "trace_ratio", tol: float = 1e-12
) -> SeriesValue:
    """The Green-function ratio, either spectrally or as the ``L0`` series.

    ``alpha_series`` sums ``(s_beta(L0**(n+1) J) - s_beta(L0**n J)) / N`` using
    the alpha table and ``s_beta(Q**s) = u**2 N + (u-u**2) tr(Q**s)``.
    """
    if lam <= 0:
        raise PreconditionError("lambda must be positive")
    if mode == "trace_ratio":
        return SeriesValue(value=green_ratio(S, lam), n_terms=0, tail_bound=0.0)
    if mode != "alpha_series":
        raise ValueError(f"unknown mode {mode!r}")
    N = S.n
    F = VoterFunctionals(u)
    n_max = series_truncation(N, lam, u, tol)
    traces = TraceSeq.from_spectrum(S, n_max + 1)
    weights = np.array([F.s_beta_power(N, t) for t in traces.values]) / N
    zeta = N / (N + lam)
    terms = []
    prev_val = 0.0  # s_beta(L0^0 J - J)/N
    zn = 1.0
    rows = iter_alpha_rows(traces, n_max + 1)
    next(rows)
    for row in rows:
        val = float(np.dot(row, weights[: len(row)]))
        terms.append(zn * (val - prev_val))
        prev_val = val
        zn *= zeta
    pref = lam * N ** 2 / (2 * u * (1 - u) * (N + lam))
    value = 1.0 - pref * math.fsum(terms)
    tail = zeta ** n_max / (u * (1 - u))
    return SeriesValue(value=float(value), n_terms=n_max, tail_bound=tail)


def diag_powers(K: KernelMatrix, s_max: int) -> np.ndarray:
    """``out[s] = diag(Q**s)`` for ``s = 0..s_max`` by repeated multiplication."""
    n = K.n
    out = np.empty((s_max + 1, n))
    P = np.eye(n)
    out[0] = 1.0
    for s in range(1, s_max + 1):
        P = K.left(P)
        out[s] = np.diag(P)
    return out


def eta_n(K: KernelMatrix, A: AlphaTable, n: int) -> np.ndarray:
    """Walk-regularity gap ``L(L0**(n-1) J) - L0**n J`` from its explicit expansion."""
    if n < 1:
        raise PreconditionError("n must be at least 1")
    if n > A.n_max + 1:
        raise PreconditionError(f"alpha table has rows up to {A.n_max}; need {n - 1}")
    if A.traces.n != K.n:
        raise DimensionMismatch("alpha table built for a different state-space size")
    N = K.n
    Q = K.dense()
    dp = diag_powers(K, n - 1)
    out = np.zeros((N, N))
    for s in range(n):
        a = A(n - 1, s)
        if a == 0.0:
            continue
        d = dp[s]
        t = A.traces.values[s]
        c = 2.0 * t / N ** 2
        M = -(d[:, None] * Q + Q * d[None, :]) / N + c * Q
        M[np.diag_indices(N)] += d / N + K.left(d) / N - c
        out += a * M
    return out
