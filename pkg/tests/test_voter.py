import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meeting_lab.errors import DimensionMismatch, InsufficientTraces, OutsideDomain, PreconditionError
from meeting_lab.kernel import kernel_from_graph, named_kernel, random_regular_graph
from meeting_lab.spectral import TraceSeq, green_ratio, spectrum
from meeting_lab.voter import (
    J_matrix,
    VoterFunctionals,
    alpha_generating_function,
    alpha_growth_bounds,
    alpha_table,
    apply_L,
    apply_L0,
    apply_L_minus_identity,
    eta_n,
    l0_generating_matrix,
    laplace_series_approx,
    laplace_series_exact,
    alpha_row_bound,
    series_truncation,
)


def traces_of(K, s_max):
    return TraceSeq.from_spectrum(spectrum(K, vectors=False), s_max)


def l_by_random_updates(K, C):
    """``E[T^T C T]`` over single-site voter updates ``xi(x) <- xi(z)``."""
    N = K.n
    Q = K.dense()
    out = np.zeros_like(C)
    for x in range(N):
        for z in np.flatnonzero(Q[x]):
            T = np.eye(N)
            T[x, x] = 0.0
            T[x, z] = 1.0
            out += Q[x, z] / N * (T.T @ C @ T)
    return out


# -- operators ---------------------------------------------------------------------


def test_L_matches_random_update_average(mixed, c12):
    rng = np.random.default_rng(1)
    for K in (mixed, c12):
        C = rng.standard_normal((K.n, K.n))
        C = C + C.T
        assert np.allclose(apply_L(K, C), l_by_random_updates(K, C), atol=1e-13)


def test_L_of_J(mixed, k10):
    for K in (mixed, k10):
        N = K.n
        J = J_matrix(N)
        expect = J + 2 / N ** 2 * (np.eye(N) - K.dense())
        assert np.allclose(apply_L(K, J), expect, atol=1e-15)
        assert np.allclose(apply_L0(K, J), apply_L(K, J), atol=1e-15)


def test_L_of_basis_diagonal_has_unit_norm(mixed):
    N = mixed.n
    for x in range(N):
        E = np.zeros((N, N))
        E[x, x] = 1.0
        assert np.abs(apply_L(mixed, E)).sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("K", [named_kernel("cycle", 12), named_kernel("complete", 10), named_kernel("cycle", 9)])
def test_L_on_powers_walk_regular(K):
    N = K.n
    Q = K.dense()
    P = np.eye(N)
    for s in range(8):
        t = np.trace(P)
        expect = (N - 2) / N * P + 2 / N * P @ Q - 2 * t / N ** 2 * Q + 2 * t / N ** 2 * np.eye(N)
        assert np.allclose(apply_L(K, P), expect, atol=1e-13)
        assert np.allclose(apply_L0(K, P), apply_L(K, P), atol=1e-12)
        P = P @ Q


def test_L0_differs_without_walk_regularity(mixed):
    Q2 = mixed.dense() @ mixed.dense()
    Q3 = Q2 @ mixed.dense()
    assert np.ptp(np.diag(Q3)) > 0
    assert np.abs(apply_L(mixed, Q3) - apply_L0(mixed, Q3)).max() > 1e-6


def test_dimension_mismatch(k10):
    with pytest.raises(DimensionMismatch):
        apply_L(k10, np.eye(3))
    with pytest.raises(DimensionMismatch):
        apply_L0(k10, np.ones((10, 9)))


def test_operator_norms_exhaustive(mixed):
    N = mixed.n
    for x, y in itertools.product(range(N), repeat=2):
        E = np.zeros((N, N))
        E[x, y] = 1.0
        assert np.abs(apply_L(mixed, E)).sum() <= 1.0 + 1e-12
        assert np.abs(apply_L_minus_identity(mixed, E)).sum() <= 4 / N + 1e-12


# -- alpha recursion ------------------------------------------------------------------


def test_alpha_rows_complete_graph(k10):
    A = alpha_table(traces_of(k10, 2), 2)
    assert np.allclose(A.row(1), [0.02, -0.02], atol=1e-16)
    assert np.allclose(A.row(2), [0.04, -0.036, -0.004], atol=1e-16)
    assert A(0, 0) == 0.0 and A(1, 5) == 0.0


def test_alpha_insufficient_traces(k10):
    with pytest.raises(InsufficientTraces):
        alpha_table(traces_of(k10, 3), 5)


def test_alpha_invariants(rrg_small):
    for K in rrg_small:
        N = K.n
        A = alpha_table(traces_of(K, 120), 120)
        assert np.all(A.row(0) == 0)
        for n in range(1, 121):
            row = A.row(n)
            assert abs(math.fsum(row)) <= 1e-12
            assert np.all(A.rows[n, n + 1:] == 0)
            b = alpha_row_bound(N, n)
            assert max(abs(row[0]), abs(row[1]), np.abs(row[2:]).sum()) <= b
            for eps in (0.25, 0.5, 1.0):
                b0, b1, b2 = alpha_growth_bounds(N, n, eps)
                assert abs(row[0]) <= b0 and abs(row[1]) <= b1 and np.abs(row[2:]).sum() <= b2


@pytest.mark.parametrize("K", [named_kernel("complete", 10), named_kernel("cycle", 12), named_kernel("cycle", 9)])
def test_walk_regular_power_expansion(K):
    N = K.n
    A = alpha_table(traces_of(K, 50), 50)
    Q = K.dense()
    powers = [np.eye(N)]
    for _ in range(50):
        powers.append(powers[-1] @ Q)
    C = J_matrix(N)
    for n in range(1, 51):
        C = apply_L(K, C)
        expect = J_matrix(N) + sum(A(n, s) * powers[s] for s in range(n + 1))
        assert np.abs(C - expect).max() <= 1e-10


def test_alpha_table_reproduces_L0_iterates(mixed):
    N = mixed.n
    A = alpha_table(traces_of(mixed, 12), 12)
    Q = mixed.dense()
    C = J_matrix(N)
    for n in range(1, 13):
        C = apply_L0(mixed, C)
        expect = J_matrix(N) + sum(A(n, s) * np.linalg.matrix_power(Q, s) for s in range(n + 1))
        assert np.abs(C - expect).max() <= 1e-12


# -- generating functions -----------------------------------------------------------


def test_generating_function_special_points(k10):
    S = spectrum(k10)
    assert alpha_generating_function(S, 0.0, 0.4) == 0
    assert alpha_generating_function(S, 0.5, 1.0) == 0
    assert alpha_generating_function(S, 0.5, 1.0, mode="direct_sum") == pytest.approx(0, abs=1e-15)
    a = alpha_generating_function(S, 0.5, -0.3, mode="closed_form")
    b = alpha_generating_function(S, 0.5, -0.3, mode="direct_sum")
    assert abs(a - b) <= 1e-9
    with pytest.raises(OutsideDomain):
        alpha_generating_function(S, 1.0, 0.0)
    with pytest.raises(OutsideDomain):
        alpha_generating_function(S, 0.5, 1.5)


def test_generating_function_complex_arguments(mixed):
    S = spectrum(mixed)
    for zeta, q in [(0.3 + 0.4j, np.exp(2j)), (-0.8, -1.0), (0.95, 0.2j)]:
        a = alpha_generating_function(S, zeta, q)
        b = alpha_generating_function(S, zeta, q, mode="direct_sum")
        assert abs(a - b) <= 1e-9


def test_l0_generating_matrix(mixed):
    N = mixed.n
    S = spectrum(mixed)
    for zeta in (0.3, 0.6, 0.9 * N / (N + 6)):
        direct = np.zeros((N, N))
        C = J_matrix(N)
        zn = 1.0
        while zn > 1e-14:
            direct += zn * C
            C = apply_L0(mixed, C)
            zn *= zeta
        assert np.abs(direct - l0_generating_matrix(mixed, S, zeta)).max() <= 1e-8


# -- Laplace-transform series -------------------------------------------------------------


def test_series_exact_complete(k10):
    sv = laplace_series_exact(k10, 1.0, tol=1e-12)
    assert sv.value == pytest.approx(2 / 11, abs=1e-11)
    assert sv.n_terms == series_truncation(10, 1.0, 0.5, 1e-12)
    assert sv.tail_bound <= 1e-12


def test_series_exact_independent_of_u(mixed):
    vals = [laplace_series_exact(mixed, 0.8, u=u, tol=1e-13).value for u in (0.3, 0.5, 0.7)]
    assert np.ptp(vals) <= 1e-10


def test_series_exact_walk_regular(c12):
    assert laplace_series_exact(c12, 0.5).value == pytest.approx(green_ratio(spectrum(c12), 0.5), abs=1e-11)


def test_series_preconditions(k10):
    with pytest.raises(PreconditionError):
        laplace_series_exact(k10, -1.0)
    with pytest.raises(PreconditionError):
        laplace_series_exact(k10, 1.0, u=1.0)
    with pytest.raises(PreconditionError):
        laplace_series_exact(k10, 1.0, tol=0.0)


def test_series_approx_modes_agree():
    rng = np.random.default_rng(5)
    for i in range(20):
        k = int(rng.integers(3, 6))
        n = 2 * int(rng.integers(5, 25))
        K = kernel_from_graph(random_regular_graph(k, n, 500 + i))
        S = spectrum(K, vectors=False)
        for lam in (0.2, 1.0, 5.0):
            tr = laplace_series_approx(S, lam, mode="trace_ratio").value
            al = laplace_series_approx(S, lam, mode="alpha_series").value
            assert abs(tr - al) <= 1e-8


def test_series_approx_large_lambda(k10):
    assert abs(laplace_series_approx(spectrum(k10), 1e8).value) < 1e-7


def test_xi_functional_identity(mixed):
    # generating sum of s_xi(L0^n J)/N against its spectral closed form
    N = mixed.n
    Q = mixed.dense()
    S = spectrum(mixed)
    lam = 0.9
    zeta = N / (N + lam)
    G = l0_generating_matrix(mixed, S, zeta)
    R = np.linalg.solve((lam + 2) * np.eye(N) - 2 * Q, np.eye(N))
    closed = 2 * (np.eye(N) - Q) @ R / (lam * np.trace(R))
    rng = np.random.default_rng(11)
    F = VoterFunctionals()
    for _ in range(100):
        xi = rng.integers(0, 2, N)
        lhs = lam / (N + lam) * F.s_xi(xi, G) / N
        rhs = F.p1(xi) ** 2 + F.s_xi(xi, closed) / N
        assert lhs == pytest.approx(rhs, abs=1e-8)


def test_s_beta_identities(mixed):
    F = VoterFunctionals(0.3)
    N = mixed.n
    assert F.s_beta(J_matrix(N)) == pytest.approx(F.s_beta_J(N), abs=1e-14)
    P = np.linalg.matrix_power(mixed.dense(), 3)
    assert F.s_beta(P) == pytest.approx(F.s_beta_power(N, np.trace(P)), abs=1e-13)
    # s_beta is the Bernoulli average of s_xi
    total = 0.0
    for bits in itertools.product((0, 1), repeat=N):
        xi = np.array(bits)
        w = 0.3 ** xi.sum() * 0.7 ** (N - xi.sum())
        total += w * F.s_xi(xi, P)
    assert total == pytest.approx(F.s_beta(P), abs=1e-12)


# -- voter-model telescoping ------------------------------------------------------------


def _voter_transition(K):
    """Exact transition matrix of the single-site voter update on {0,1}^N."""
    N = K.n
    Q = K.dense()
    configs = np.array(list(itertools.product((0, 1), repeat=N)))
    index = {tuple(c): i for i, c in enumerate(configs)}
    P = np.zeros((len(configs), len(configs)))
    for i, c in enumerate(configs):
        for x in range(N):
            for z in np.flatnonzero(Q[x]):
                d = c.copy()
                d[x] = c[z]
                P[i, index[tuple(d)]] += Q[x, z] / N
    return configs, P


def test_telescoping_exact_configuration_chain():
    K = kernel_from_graph(random_regular_graph(3, 8, 4))
    N = K.n
    configs, P = _voter_transition(K)
    F = VoterFunctionals()
    p10 = np.array([F.p10(K, c) for c in configs])
    rng = np.random.default_rng(2)
    starts = rng.choice(len(configs), size=5, replace=False)
    C = J_matrix(N)
    dist = np.zeros((len(starts), len(configs)))
    dist[np.arange(len(starts)), starts] = 1.0
    for n in range(12):
        C_next = apply_L(K, C)
        for j, i in enumerate(starts):
            xi = configs[i]
            lhs = F.s_xi(xi, C_next) / N - F.s_xi(xi, C) / N
            assert lhs == pytest.approx(2 / N ** 2 * dist[j] @ p10, abs=1e-14)
        C = C_next
        dist = dist @ P


def test_telescoping_monte_carlo():
    K = kernel_from_graph(random_regular_graph(4, 10, 9))
    N = K.n
    Q = K.dense()
    F = VoterFunctionals()
    rng = np.random.default_rng(123)
    xi0 = np.array([1, 1, 1, 0, 0, 1, 0, 0, 0, 1])
    n_steps, samples = 6, 40_000
    cum = np.cumsum(Q, axis=1)
    xi = np.tile(xi0, (samples, 1))
    C = J_matrix(N)
    rows = np.arange(samples)
    for n in range(n_steps):
        C_next = apply_L(K, C)
        lhs = F.s_xi(xi0, C_next) / N - F.s_xi(xi0, C) / N
        vals = np.einsum("ix,xy,iy->i", xi, Q, 1 - xi) / N
        est, se = vals.mean(), vals.std(ddof=1) / math.sqrt(samples)
        assert abs(lhs - 2 / N ** 2 * est) <= 5 * 2 / N ** 2 * se + 1e-15
        x = rng.integers(N, size=samples)
        z = (cum[x] < rng.random(samples)[:, None]).sum(axis=1)
        xi[rows, x] = xi[rows, z]
        C = C_next


# -- walk-regularity gap ----------------------------------------------------------------


def test_eta_examples(mixed, c12):
    A = alpha_table(traces_of(c12, 6), 6)
    for n in range(1, 7):
        assert np.abs(eta_n(c12, A, n)).max() <= 1e-13
    Am = alpha_table(traces_of(mixed, 6), 6)
    assert np.abs(eta_n(mixed, Am, 1)).max() == 0.0
    C = J_matrix(mixed.n)
    for _ in range(2):
        C = apply_L0(mixed, C)
    direct = apply_L(mixed, C) - apply_L0(mixed, C)
    assert np.abs(eta_n(mixed, Am, 3) - direct).max() <= 1e-12
    # diag(Q^2) = 1/3 on simple cubic graphs, so the gap opens at n = 4 via diag(Q^3)
    C = apply_L0(mixed, C)
    direct = apply_L(mixed, C) - apply_L0(mixed, C)
    assert np.abs(eta_n(mixed, Am, 4) - direct).max() <= 1e-12
    assert np.abs(direct).max() > 1e-6
    with pytest.raises(PreconditionError):
        eta_n(mixed, Am, 9)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 20), n=st.integers(1, 6))
def test_eta_matches_operator_gap(seed, n):
    K = kernel_from_graph(random_regular_graph(3, 12, seed))
    A = alpha_table(traces_of(K, n), n)
    C = J_matrix(K.n)
    for _ in range(n - 1):
        C = apply_L0(K, C)
    assert np.abs(eta_n(K, A, n) - (apply_L(K, C) - apply_L0(K, C))).max() <= 1e-12
