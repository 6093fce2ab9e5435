"""Inhomogeneity measures and the explicit error bound for the Green-ratio
approximation of ``E[exp(-lam M_{U,V})]``."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from typing import Optional, Sequence

import numpy as np

from .errors import PreconditionError, PreconditionViolation
from .kernel import KernelMatrix
from .spectral import Spectrum, green_ratio, spectrum, trace_power
from .voter import diag_powers, laplace_series_exact, series_truncation

#: slack when comparing return probabilities against gamma
RETURN_SLACK = 1e-12
#: eigenvalue clusters and projector diagonals are compared at this tolerance
WALK_REGULAR_TOL = 1e-8
#: laplace_series_exact is used for the left side when n_terms * N**3 stays below this
SERIES_FLOP_CAP = 2e9
VACUOUS_LEVEL = 2.0


def default_s_max(n: int) -> int:
    return max(int(math.ceil(4.0 * math.log(n))), 1)


# -- return-probability agreement sets --------------------------------------------------


def _agreement_counts(d: np.ndarray, gamma: float) -> np.ndarray:
    """``counts[x] = #{y : |d[x] - d[y]| <= gamma}``."""
    order = np.sort(d)
    lo = np.searchsorted(order, d - gamma - RETURN_SLACK, side="left")
    hi = np.searchsorted(order, d + gamma + RETURN_SLACK, side="right")
    return hi - lo


def _check_gamma(gamma: float) -> None:
    if not 0.0 <= gamma <= 1.0:
        raise PreconditionError("gamma must lie in [0, 1]")


def r_set_size(K: KernelMatrix, x: int, s: int, gamma: float, diagonals: Optional[np.ndarray] = None) -> int:
    """Number of states whose ``s``-step return probability is within ``gamma`` of that of ``x``."""
    if s < 0:
        raise PreconditionError("s must be nonnegative")
    _check_gamma(gamma)
    d = diagonals if diagonals is not None else diag_powers(K, s)[s]
    return int(np.sum(np.abs(d - d[x]) <= gamma + RETURN_SLACK))


@dataclass(frozen=True)
class RSetProfile:
    """``counts[s, x]`` for ``s = 0..s_max``."""

    counts: np.ndarray
    gamma: float

    @property
    def n(self) -> int:
        return self.counts.shape[1]

    def min_deficit(self) -> np.ndarray:
        """``min_x (N - count[s, x]) / N`` for every ``s``."""
        return (self.n - self.counts.max(axis=1)) / self.n


def r_set_profile(K: KernelMatrix, s_max: int, gamma: float, diagonals: Optional[np.ndarray] = None) -> RSetProfile:
    _check_gamma(gamma)
    dp = diagonals if diagonals is not None else diag_powers(K, s_max)
    counts = np.stack([_agreement_counts(dp[s], gamma) for s in range(s_max + 1)])
    return RSetProfile(counts=counts, gamma=gamma)


# -- inhomogeneity parameter ---------------------------------------------------------------


def is_walk_regular(S: Spectrum, tol: float = WALK_REGULAR_TOL) -> bool:
    """All spectral projectors have constant diagonal.

    Equivalent to ``diag(Q**s)`` being constant for every ``s``.
    """
    if S.eigenvectors is None:
        raise PreconditionError("walk-regularity check needs eigenvectors")
    q = S.eigenvalues
    V = S.eigenvectors
    n = S.n
    start = 0
    for i in range(1, n + 1):
        if i == n or q[i] - q[i - 1] > tol:
            diag = np.sum(V[:, start:i] ** 2, axis=1)
            if np.ptp(diag) > tol:
                return False
            start = i
    return True


@dataclass(frozen=True)
class DeltaResult:
    """Inhomogeneity parameter and the quantities it was minimised over.

    ``delta`` is the value used by the bound; ``delta_literal`` is the
    per-``s`` minimum of the two branches taken independently, reported for
    comparison.  ``s_star`` is the switching index between the agreement-set
    branch and the trace branch (``None`` for walk-regular kernels).
    """

    delta: float
    s_star: Optional[int]
    delta_literal: float
    s_star_literal: int
    s_max: int
    walk_regular: bool
    r_branch: np.ndarray = field(repr=False)
    trace_branch: np.ndarray = field(repr=False)


def delta_q_gamma(
    K: KernelMatrix,
    gamma: float,
    s_max: Optional[int] = None,
    S: Optional[Spectrum] = None,
    diagonals: Optional[np.ndarray] = None,
) -> DeltaResult:
    """Inhomogeneity of ``Q`` at agreement level ``gamma``.

    With ``A(s) = min_x (N - #R(x, s)) / N + gamma`` and
    ``T(s) = tr(|Q|**s) / N`` the returned value is

        min over s0 in 1..s_max of max( max_{1<=s<=s0} A(s), T(s0) ),

    which dominates the deviation of every ``s``-step return-probability
    diagonal simultaneously (``T`` is nonincreasing).  For walk-regular
    kernels ``A(s) = gamma`` for all ``s`` and the value is ``gamma``.
    """
    _check_gamma(gamma)
    n = K.n
    s_max = default_s_max(n) if s_max is None else s_max
    if s_max < 1:
        raise PreconditionError("s_max must be at least 1")
    dp = diagonals if diagonals is not None else diag_powers(K, s_max)
    if dp.shape[0] < s_max + 1:
        raise PreconditionError("not enough return-probability diagonals")
    A = r_set_profile(K, s_max, gamma, dp[: s_max + 1]).min_deficit() + gamma
    if S is None:
        S = spectrum(K, vectors=False)
    T = np.array([trace_power(S, s, absolute=True) / n for s in range(s_max + 1)])
    literal = np.minimum(A[1:], T[1:])
    s_lit = int(np.argmin(literal)) + 1
    const_diag = bool(np.all(np.ptp(dp[: s_max + 1], axis=1) <= WALK_REGULAR_TOL))
    walk_regular = False
    if const_diag:
        if S.eigenvectors is None:
            S = spectrum(K)
        walk_regular = is_walk_regular(S)
    if walk_regular:
        delta, s_star = gamma, None
    else:
        running = np.maximum.accumulate(A[1:])
        cand = np.maximum(running, T[1:])
        s_star = int(np.argmin(cand)) + 1
        delta = float(cand[s_star - 1])
    return DeltaResult(
        delta=float(delta),
        s_star=s_star,
        delta_literal=float(literal[s_lit - 1]),
        s_star_literal=s_lit,
        s_max=s_max,
        walk_regular=walk_regular,
        r_branch=A,
        trace_branch=T,
    )


def c_epsilon(epsilon: float) -> float:
    """Constant multiplying the far-tail term of the error bound; diverges as ``epsilon -> 0``."""
    if not 0.0 < epsilon <= 1.0:
        raise PreconditionError("epsilon must lie in (0, 1]")
    inner = 2.0 / epsilon + 9.0 + math.pi + 32.0 * math.sqrt(2.0) / math.sqrt(1.0 - math.cos(1.0))
    return inner * (4.0 + epsilon) / epsilon / math.pi


@dataclass(frozen=True)
class DeviationNorms:
    norm_diag: float
    norm_smoothed: float
    bound_r: float
    bound_trace: float


def diag_deviation_norms(
    K: KernelMatrix,
    s: int,
    gamma: float,
    S: Optional[Spectrum] = None,
    diagonals: Optional[np.ndarray] = None,
) -> DeviationNorms:
    """ℓ1 deviation of the ``s``-step return probabilities from their mean.

    ``norm_diag = sum_x |Q^s(x,x)/N - tr(Q^s)/N^2|`` and ``norm_smoothed`` is
    the same after one application of ``Q``; the two bounds are the
    agreement-set bound and ``2 tr(|Q|^s; Q<1)/N``.
    """
    if s < 0:
        raise PreconditionError("s must be nonnegative")
    _check_gamma(gamma)
    n = K.n
    d = diagonals[s] if diagonals is not None else diag_powers(K, s)[s]
    t = math.fsum(d)
    norm_diag = math.fsum(np.abs(d / n - t / n ** 2))
    norm_smoothed = math.fsum(np.abs(K.left(d) / n - t / n ** 2))
    counts = _agreement_counts(d, gamma)
    bound_r = 4.0 * (n - counts.max()) / n + gamma
    if S is None:
        S = spectrum(K, vectors=False)
    bound_trace = 2.0 * trace_power(S, s, absolute=True, exclude_unit=True) / n
    return DeviationNorms(norm_diag, norm_smoothed, float(bound_r), bound_trace)


# -- the bound -------------------------------------------------------------------------


@dataclass
class BoundReport:
    lam: float
    epsilon: float
    m: int
    gamma: float
    n: int
    term1: float
    term2: float
    term3: float
    total: float
    delta: float
    c_eps: float
    s_star: Optional[int]
    s_max: int
    delta_literal: float
    walk_regular: bool
    vacuous: bool
    ratio: Optional[float] = None
    exact: Optional[float] = None
    lhs_exact: Optional[float] = None
    lhs_method: Optional[str] = None
    lhs_tolerance: Optional[float] = None
    violated: bool = False
    literal_violated: Optional[bool] = None

    def as_dict(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        return out


def check_preconditions(n: int, lam: float, epsilon: float, m: int, gamma: float) -> list[str]:
    failures = []
    if not 0.0 < epsilon <= 1.0:
        failures.append(f"epsilon={epsilon} not in (0, 1]")
    if not lam > epsilon:
        failures.append(f"lambda={lam} must exceed epsilon={epsilon}")
    if not (lam - epsilon) * n - lam * epsilon > 0:
        failures.append("(lambda - epsilon) N - lambda epsilon must be positive")
    if not (isinstance(m, (int, np.integer)) and m >= 1):
        failures.append(f"m={m} must be an integer >= 1")
    if not 0.0 <= gamma <= 1.0:
        failures.append(f"gamma={gamma} not in [0, 1]")
    if not n > 8:
        failures.append(f"N={n} must exceed 8")
    return failures


def bound_terms(n: int, lam: float, epsilon: float, m: int, delta: float) -> tuple[float, float, float, float]:
    """``(term1, term2, term3, c_eps)`` of the error bound."""
    c = c_epsilon(epsilon)
    mN = m * n
    term1 = 4.0 * math.exp(-mN * math.log1p(lam / n))
    base = math.log1p(lam / n) + math.log1p(-epsilon / n)
    term2 = math.exp(-(mN + 1) * base) * c * lam * (n - epsilon) / ((lam - epsilon) * n - lam * epsilon)
    term3 = 80.0 * delta * math.exp(mN * math.log1p(6.0 / n))
    return term1, term2, term3, c


def first_order_exact(K: KernelMatrix, lam: float, method: str = "auto", tol: float = 1e-12) -> tuple[float, str, float]:
    """``E[exp(-lam M_{U,V})]`` by the voter series or the product-chain solve.

    Returns ``(value, method, tolerance)``.
    """
    from .oracle import exact_first_order_laplace

    n = K.n
    if method == "auto":
        cost = series_truncation(n, lam, 0.5, tol) * float(n) ** 3
        method = "series" if cost <= SERIES_FLOP_CAP else "solve"
    if method == "series":
        sv = laplace_series_exact(K, lam, tol=tol)
        return sv.value, "series", sv.tail_bound
    if method == "solve":
        return exact_first_order_laplace(K, lam), "solve", 1e-9
    raise ValueError(f"unknown lhs method {method!r}")


def _attach_lhs(report: BoundReport, S: Spectrum, exact: float, method: str, tol: float) -> None:
    report.ratio = green_ratio(S, report.lam)
    report.exact = exact
    report.lhs_exact = abs(exact - report.ratio)
    report.lhs_method = method
    report.lhs_tolerance = tol
    report.violated = report.lhs_exact > report.total
    t3 = bound_terms(report.n, report.lam, report.epsilon, report.m, report.delta_literal)[2]
    report.literal_violated = report.lhs_exact > report.term1 + report.term2 + t3


def meeting_error_bound(
    K: KernelMatrix,
    lam: float,
    epsilon: float,
    m: int,
    gamma: float,
    s_max: Optional[int] = None,
    with_lhs: bool = False,
    lhs_method: str = "auto",
    S: Optional[Spectrum] = None,
    delta: Optional[DeltaResult] = None,
    exact: Optional[float] = None,
) -> BoundReport:
    """Explicit bound on ``|E[exp(-lam M_{U,V})] - green_ratio(lam)|``.

    ``total = 4(1+lam/N)^(-mN) + [(1+lam/N)(1-eps/N)]^(-(mN+1)) C_eps lam (N-eps)/((lam-eps)N - lam eps)
    + 80 Delta (1+6/N)^(mN)``.  With ``with_lhs`` the left side is measured and
    compared; a violation is flagged on the report, never raised.

    ``S``, ``delta`` and ``exact`` may be passed to reuse work across sweeps.
    """
    n = K.n
    failures = check_preconditions(n, lam, epsilon, m, gamma)
    if failures:
        raise PreconditionViolation(failures)
    if S is None:
        S = spectrum(K, vectors=False)
    if delta is None:
        delta = delta_q_gamma(K, gamma, s_max, S=S)
    t1, t2, t3, c = bound_terms(n, lam, epsilon, m, delta.delta)
    total = t1 + t2 + t3
    report = BoundReport(
        lam=lam,
        epsilon=epsilon,
        m=int(m),
        gamma=gamma,
        n=n,
        term1=t1,
        term2=t2,
        term3=t3,
        total=total,
        delta=delta.delta,
        c_eps=c,
        s_star=delta.s_star,
        s_max=delta.s_max,
        delta_literal=delta.delta_literal,
        walk_regular=delta.walk_regular,
        vacuous=total > VACUOUS_LEVEL,
    )
    if with_lhs:
        if exact is None:
            exact, method, tol = first_order_exact(K, lam, lhs_method)
        else:
            method, tol = "given", 0.0
        _attach_lhs(report, S, exact, method, tol)
    return report


@dataclass
class ScanRow:
    params: tuple
    report: Optional[BoundReport] = None
    error: Optional[str] = None

    def as_dict(self) -> dict:
        lam, eps, m, gamma = self.params
        if self.report is not None:
            out = self.report.as_dict()
        else:
            out = {"lambda": lam, "epsilon": eps, "m": m, "gamma": gamma}
        out["error"] = self.error or ""
        return out


def bound_scan(
    K: KernelMatrix,
    lambdas: Sequence[float],
    epsilons: Sequence[float],
    ms: Sequence[int],
    gammas: Sequence[float],
    s_max: Optional[int] = None,
    with_lhs: bool = False,
    lhs_method: str = "auto",
    workers: int = 1,
) -> list[ScanRow]:
    """Bound reports over the product of parameter lists, sorted by ``(lambda, epsilon, m, gamma)``.

    The spectrum, the return-probability diagonals, one inhomogeneity value
    per ``gamma`` and one exact left side per ``lambda`` are shared.
    Parameter tuples that fail the hypotheses yield rows with ``error`` set.
    """
    n = K.n
    s_max = default_s_max(n) if s_max is None else s_max
    S = spectrum(K, vectors=False)
    dp = diag_powers(K, s_max)
    deltas = {g: delta_q_gamma(K, g, s_max, S=S, diagonals=dp) for g in sorted(set(gammas)) if 0 <= g <= 1}
    exacts: dict = {}
    if with_lhs:
        lam_ok = sorted({l for l in lambdas if l > 0})

        def solve(lam):
            return lam, first_order_exact(K, lam, lhs_method)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                exacts = dict(pool.map(solve, lam_ok))
        else:
            exacts = dict(map(solve, lam_ok))

    rows = []
    for params in sorted(product(lambdas, epsilons, ms, gammas)):
        lam, eps, m, gamma = params
        try:
            failures = check_preconditions(n, lam, eps, m, gamma)
            if failures:
                raise PreconditionViolation(failures)
            rep = meeting_error_bound(K, lam, eps, m, gamma, s_max, with_lhs=False, S=S, delta=deltas[gamma])
            if with_lhs:
                _attach_lhs(rep, S, *exacts[lam])
            rows.append(ScanRow(params, rep))
        except PreconditionError as exc:
            rows.append(ScanRow(params, error=str(exc)))
    return rows
