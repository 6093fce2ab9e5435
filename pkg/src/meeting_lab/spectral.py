"""Spectral functionals of symmetric kernels and their infinite-tree limits."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import integrate

from .errors import EigensolverFailure, PreconditionError, QuadratureNonconvergence, SolveFailure
from .kernel import KernelMatrix

#: eigenvalues within this distance of 1 count as the unit eigenvalue
UNIT_TOL = 1e-9
RESIDUAL_TOL = 1e-8
QUAD_TOL = 1e-10


class Spectrum:
    """Sorted eigenvalues (and optionally eigenvectors) of a symmetric kernel.

    Computed once and treated as immutable; every trace functional below reads
    from the cached arrays.
    """

    def __init__(self, eigenvalues, eigenvectors=None):
        vals = np.asarray(eigenvalues, dtype=float)
        order = np.argsort(vals, kind="stable")
        self.eigenvalues = vals[order]
        self.eigenvalues.flags.writeable = False
        self.eigenvectors = None
        if eigenvectors is not None:
            self.eigenvectors = np.asarray(eigenvectors)[:, order]
            self.eigenvectors.flags.writeable = False

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    @property
    def has_unit(self) -> bool:
        return abs(self.eigenvalues[-1] - 1.0) <= UNIT_TOL

    @property
    def unit_multiplicity(self) -> int:
        return int(np.sum(np.abs(self.eigenvalues - 1.0) <= UNIT_TOL))

    def below_unit(self) -> np.ndarray:
        """Eigenvalues with the unit eigenvalue removed."""
        return self.eigenvalues[np.abs(self.eigenvalues - 1.0) > UNIT_TOL]

    def __repr__(self):
        return f"Spectrum(n={self.n}, min={self.eigenvalues[0]:.6g}, max={self.eigenvalues[-1]:.6g})"


def spectrum(K: KernelMatrix, vectors: bool = True, check: bool = True) -> Spectrum:
    """Eigendecomposition of the symmetric kernel ``K``."""
    Q = K.dense()
    try:
        if vectors:
            vals, vecs = scipy.linalg.eigh(Q)
        else:
            vals, vecs = scipy.linalg.eigvalsh(Q), None
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise EigensolverFailure(str(exc)) from exc
    if check and vecs is not None:
        resid = np.abs(K.left(vecs) - vecs * vals).max()
        if resid > RESIDUAL_TOL:
            raise EigensolverFailure(f"eigenpair residual {resid:.3e} exceeds {RESIDUAL_TOL}")
    return Spectrum(vals, vecs)


@dataclass(frozen=True)
class TraceSeq:
    """``values[s] = tr(Q**s)`` for ``s = 0..s_max``."""

    values: np.ndarray

    @property
    def s_max(self) -> int:
        return len(self.values) - 1

    @property
    def n(self) -> int:
        return int(round(self.values[0]))

    @classmethod
    def from_spectrum(cls, S: Spectrum, s_max: int) -> "TraceSeq":
        q = S.eigenvalues
        vals = np.empty(s_max + 1)
        vals[0] = S.n
        power = np.ones_like(q)
        for s in range(1, s_max + 1):
            power = power * q
            vals[s] = math.fsum(power)
        if s_max >= 1:
            # zero trace holds exactly for valid kernels; drop eigensolver noise
            vals[1] = 0.0
        return cls(vals)


def trace_power(S: Spectrum, s: int, absolute: bool = False, exclude_unit: bool = False) -> float:
    """``tr(Q**s)``, ``tr(|Q|**s)``, optionally over eigenvalues below 1 only."""
    if s < 0:
        raise PreconditionError("s must be nonnegative")
    q = S.below_unit() if exclude_unit else S.eigenvalues
    if absolute:
        q = np.abs(q)
    if s == 0:
        return float(len(q))
    return math.fsum(q ** s)


def green_ratio(S: Spectrum, lam: float) -> float:
    """``tr(Q/(lam + 2(1-Q))) / tr(1/(lam + 2(1-Q)))``.

    Spectral surrogate for the Laplace transform of the first-order meeting
    time; exact for walk-regular kernels.
    """
    if lam <= 0:
        raise PreconditionError("lambda must be positive")
    q = S.eigenvalues
    w = 1.0 / (lam + 2.0 - 2.0 * q)
    return math.fsum(q * w) / math.fsum(w)


def green_ratio_resolvent(K: KernelMatrix, lam: float) -> float:
    """Same ratio as :func:`green_ratio`, from a direct solve with no eigendecomposition."""
    if lam <= 0:
        raise PreconditionError("lambda must be positive")
    n = K.n
    A = (lam + 2.0) * np.eye(n) - 2.0 * K.dense()
    R = scipy.linalg.solve(A, np.eye(n), assume_a="pos")
    return float(np.sum(K.dense() * R) / np.trace(R))


def _shifted_solve(K: KernelMatrix, shift: float, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(shift*I - Q) g = rhs``."""
    n = K.n
    try:
        if K.is_sparse:
            A = (shift * sp.identity(n, format="csc") - K.sparse()).tocsc()
            g = spla.spsolve(A, rhs)
        else:
            g = scipy.linalg.solve(shift * np.eye(n) - K.dense(), rhs, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, RuntimeError) as exc:
        raise SolveFailure(str(exc)) from exc
    if not np.all(np.isfinite(g)):
        raise SolveFailure("non-finite Green function")
    return g


def hitting_laplace(K: KernelMatrix, x: int, y: int, lam: float) -> float:
    """``E[exp(-lam * H_{x,y} / 2)]`` for the rate-1 chain, as ``G(x,y)/G(y,y)``."""
    if lam <= 0:
        raise PreconditionError("lambda must be positive")
    n = K.n
    if not (0 <= x < n and 0 <= y < n):
        raise PreconditionError("state outside the state space")
    if x == y:
        return 1.0
    e = np.zeros(n)
    e[y] = 1.0
    g = _shifted_solve(K, lam / 2.0 + 1.0, e)
    return float(g[x] / g[y])


def _circle_values(q: np.ndarray, n: int, zeta: np.ndarray) -> np.ndarray:
    # (1/N) tr((1-zeta)/(N - zeta(N-2+2Q))) for each zeta
    z = zeta[:, None]
    terms = (1.0 - z) / (n - z * (n - 2.0 + 2.0 * q[None, :]))
    return terms.sum(axis=1) / n


@dataclass(frozen=True)
class CircleExtrema:
    min: float
    max: float
    argmin_angle: float
    argmax_angle: float
    closed_min: float
    closed_max: float


def circle_closed_forms(S: Spectrum, epsilon: float) -> tuple[float, float]:
    """Exact minimum and maximum modulus over the circle of radius ``1 - epsilon/N``."""
    n = S.n
    q = S.eigenvalues
    if epsilon == 0.0:
        closed_min = 1.0 / n ** 2
    else:
        closed_min = math.fsum(epsilon / (2 - 2 * q + epsilon - (epsilon / n) * (2 - 2 * q))) / n ** 2
    r = 1.0 - epsilon / n
    closed_max = math.fsum((2 - epsilon / n) / (1 + r * (1 - 2 / n + 2 * q / n))) / n ** 2
    return closed_min, closed_max


def circle_trace_extrema(S: Spectrum, epsilon: float, grid_points: int = 720) -> CircleExtrema:
    """Grid extrema of ``|(1/N) tr((1-z)/(N - z(N-2+2Q)))|`` on ``|z| = 1 - epsilon/N``.

    The minimum sits at the positive real point and the maximum at the
    negative one; both closed forms are returned for comparison.
    """
    n = S.n
    if not 0 <= epsilon < n:
        raise PreconditionError("epsilon must lie in [0, N)")
    if grid_points < 8:
        raise PreconditionError("grid_points must be at least 8")
    theta = 2 * np.pi * np.arange(grid_points) / grid_points
    r = 1.0 - epsilon / n
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.abs(_circle_values(S.eigenvalues, n, r * np.exp(1j * theta)))
    if epsilon == 0.0:
        # removable singularity of the unit-eigenvalue term at z = 1
        vals[0] = abs(_circle_values(S.below_unit(), n, np.array([1.0 + 0j]))[0] + 1.0 / n ** 2)
    closed_min, closed_max = circle_closed_forms(S, epsilon)
    i_min, i_max = int(np.argmin(vals)), int(np.argmax(vals))
    return CircleExtrema(
        min=float(vals[i_min]),
        max=float(vals[i_max]),
        argmin_angle=float(theta[i_min]),
        argmax_angle=float(theta[i_max]),
        closed_min=closed_min,
        closed_max=closed_max,
    )


def kesten_mckay_edge(k: int) -> float:
    return 2.0 * math.sqrt(k - 1) / k


def kesten_mckay_density(k: int, q):
    """Kesten-McKay density of the ``k``-regular tree walk; zero off its support."""
    q = np.asarray(q, dtype=float)
    rad = 4.0 * (k - 1) - (k * q) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(rad > 0, np.sqrt(np.maximum(rad, 0.0)) / (2 * np.pi * (1 - q ** 2)), 0.0)
    return float(out) if out.ndim == 0 else out


def _km_integral(k: int, g) -> float:
    """``∫ g(q) f_k(q) dq`` after substituting ``q = edge*cos(theta)``."""
    rho = kesten_mckay_edge(k)

    def integrand(theta):
        c, s = math.cos(theta), math.sin(theta)
        q = rho * c
        return g(q) * k * rho * rho * s * s / (2 * math.pi * (1 - q * q))

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(integrand, 0.0, math.pi, epsabs=QUAD_TOL, epsrel=1e-12, limit=200)
        except integrate.IntegrationWarning as exc:
            raise QuadratureNonconvergence(str(exc)) from exc
    if err > 10 * QUAD_TOL:
        raise QuadratureNonconvergence(f"quadrature error estimate {err:.2e}")
    return val


def kesten_mckay_mass(k: int) -> float:
    return _km_integral(k, lambda q: 1.0)


def kesten_mckay_moment(k: int, s: int) -> float:
    """``∫ q**s f_k(q) dq``: the ``s``-step return probability on the infinite tree."""
    if s < 0:
        raise PreconditionError("s must be nonnegative")
    if s % 2:
        return 0.0
    return _km_integral(k, lambda q: q ** s)


def tree_green_ratio(k: int, lam: float) -> float:
    """Infinite ``k``-regular tree limit of :func:`green_ratio`.

    Equals ``E[exp(-lam H/2); H < inf]`` for the hitting time of a neighbour.
    """
    if lam <= 0:
        raise PreconditionError("lambda must be positive")
    if k < 2:
        raise PreconditionError("k must be at least 2")
    if k == 2:
        warnings.warn("k = 2: the walk on the line is recurrent", RuntimeWarning, stacklevel=2)
    num = _km_integral(k, lambda q: q / (lam + 2 - 2 * q))
    den = _km_integral(k, lambda q: 1.0 / (lam + 2 - 2 * q))
    return num / den
