import math

import numpy as np
import pytest
from scipy import stats

from meeting_lab.errors import PreconditionError
from meeting_lab.kernel import kernel_from_graph, named_kernel, random_regular_graph
from meeting_lab.oracle import (
    MeetingTail,
    exact_first_order_laplace,
    exact_pair_laplace,
    higher_order_residual,
    meeting_tail,
    meeting_time_samples,
    parse_start,
    simulate_meeting,
    tree_return_probabilities,
)
from meeting_lab.spectral import green_ratio, spectrum
from meeting_lab.voter import laplace_series_exact


def test_pair_table_complete(k10):
    for method in ("direct", "cg"):
        t = exact_pair_laplace(k10, 1.0, method=method)
        off = ~np.eye(10, dtype=bool)
        assert np.allclose(t.phi[off], 2 / 11, atol=1e-12)
        assert np.all(np.diag(t.phi) == 1.0)
        assert t.residual <= 1e-10


def test_pair_table_invariants(mixed):
    t = exact_pair_laplace(mixed, 0.4)
    assert np.allclose(t.phi, t.phi.T, atol=1e-13)
    assert np.all(t.phi > 0) and np.all(t.phi <= 1)
    cg = exact_pair_laplace(mixed, 0.4, method="cg")
    assert np.abs(cg.phi - t.phi).max() <= 1e-10


def test_pair_table_preconditions(k10):
    with pytest.raises(PreconditionError):
        exact_pair_laplace(k10, 0.0)
    with pytest.raises(ValueError):
        exact_pair_laplace(k10, 1.0, method="lu")


def test_first_order_examples(k10, c12):
    assert exact_first_order_laplace(k10, 1.0) == pytest.approx(2 / 11, abs=1e-12)
    assert exact_first_order_laplace(c12, 0.5) == pytest.approx(green_ratio(spectrum(c12), 0.5), abs=1e-9)
    assert exact_first_order_laplace(c12, 1e9) < 1e-8


def test_first_order_matches_series(rrg_small, mixed):
    for K in [mixed] + rrg_small[:6]:
        for lam in (0.5, 2.0):
            sv = laplace_series_exact(K, lam, tol=1e-11)
            assert exact_first_order_laplace(K, lam) == pytest.approx(sv.value, abs=sv.tail_bound + 1e-9)


def test_meeting_tail_complete(k10):
    for t in (0.0, 0.5, 2.0, 7.0):
        assert meeting_tail(k10, 0, 3, t) == pytest.approx(math.exp(-2 * t / 9), abs=1e-10)
        assert meeting_tail(k10, 4, 4, t) == 0.0
    with pytest.raises(PreconditionError):
        meeting_tail(k10, 0, 1, -1.0)


def test_meeting_tail_monotone(mixed):
    tail = MeetingTail(mixed)
    times = np.linspace(0, 10, 41)
    P = tail.matrices(times)
    off = ~np.eye(mixed.n, dtype=bool)
    assert np.allclose(P[0][off], 1.0)
    assert np.all(np.diff(P[:, off], axis=0) <= 1e-12)


def test_meeting_tail_expm_path(mixed):
    import meeting_lab.oracle as oracle

    eig = MeetingTail(mixed)
    old = oracle.TAIL_EIG_LIMIT
    oracle.TAIL_EIG_LIMIT = 0
    try:
        krylov = MeetingTail(mixed)
    finally:
        oracle.TAIL_EIG_LIMIT = old
    assert krylov._eig is None
    times = [0.0, 0.7, 3.0]
    assert np.abs(eig.matrices(times) - krylov.matrices(times)).max() <= 1e-10


def test_tail_integrates_to_laplace(mixed):
    # E[exp(-lam M)] = 1 - lam * int exp(-lam t) P(M > t) dt
    lam = 1.3
    tail = MeetingTail(mixed)
    x, w = np.polynomial.laguerre.laggauss(80)
    P = tail.matrices(x / lam)
    phi = 1.0 - np.tensordot(w, P, axes=1)
    np.fill_diagonal(phi, 1.0)
    assert np.abs(phi - exact_pair_laplace(mixed, lam).phi).max() <= 1e-8


@pytest.mark.parametrize("K", [named_kernel("cycle", 12), named_kernel("complete", 10)])
def test_higher_order_identity(K):
    tail = MeetingTail(K)
    for m in range(3):
        for n in range(3):
            for t in (0.5, 2.0, 5.0):
                assert higher_order_residual(K, m, n, t, tail=tail) <= 1e-6
    assert higher_order_residual(K, 1, 1, 0.0) == 0.0


def test_higher_order_identity_general_kernel(mixed):
    tail = MeetingTail(mixed)
    assert higher_order_residual(mixed, 2, 1, 3.0, tail=tail) <= 1e-6
    with pytest.raises(PreconditionError):
        higher_order_residual(mixed, 1, 0, 1.0, quad_points=16)


def test_tree_return_dp():
    p = tree_return_probabilities(3, 6)
    assert p[0] == 1 and p[1] == 0 and p[2] == pytest.approx(1 / 3)
    # closed 4-walks from the root: k*k bouncing plus k*(k-1) going two deep
    assert p[4] == pytest.approx((9 + 6) / 81, abs=1e-15)
    assert np.all(p[1::2] == 0)


def test_parse_start():
    assert parse_start("fixed:0,3") == ("fixed", 0, 3)
    assert parse_start("uniform_pair") == ("uniform_pair",)
    assert parse_start(("path", 2, 3)) == ("path", 2, 3)


def test_simulate_complete_pair(k10):
    est = simulate_meeting(k10, ("fixed", 0, 1), 1.0, 200_000, seed=7)
    assert abs(est.value - 2 / 11) <= 5 * est.std_error
    lo, hi = est.confidence_interval()
    assert lo < est.value < hi


def test_simulate_same_state(k10):
    est = simulate_meeting(k10, ("fixed", 2, 2), 1.0, 1000, seed=1)
    assert est.value == 1.0 and est.std_error == 0.0


def test_simulate_reproducible_across_workers(mixed):
    a = simulate_meeting(mixed, "q_adjacent_pair", 0.5, 150_000, seed=11, workers=1)
    b = simulate_meeting(mixed, "q_adjacent_pair", 0.5, 150_000, seed=11, workers=3)
    c = simulate_meeting(mixed, "q_adjacent_pair", 0.5, 150_000, seed=11, workers=3)
    assert a.value == b.value == c.value and a.std_error == b.std_error
    d = simulate_meeting(mixed, "q_adjacent_pair", 0.5, 150_000, seed=12)
    assert d.value != a.value


def test_simulate_starts_against_exact(mixed):
    lam = 0.8
    phi = exact_pair_laplace(mixed, lam).phi
    Q = mixed.dense()
    N = mixed.n
    exact = {
        "uniform_pair": phi.mean(),
        "q_adjacent_pair": np.sum(Q * phi) / N,
        ("fixed", 0, 5): phi[0, 5],
        ("s_step", 2): np.sum(Q @ Q * phi) / N,
    }
    for i, (start, value) in enumerate(exact.items()):
        est = simulate_meeting(mixed, start, lam, 100_000, seed=100 + i)
        assert abs(est.value - value) <= 5 * est.std_error, start


def test_simulate_random_cubic_1000():
    K = kernel_from_graph(random_regular_graph(3, 1000, 2))
    est = simulate_meeting(K, "q_adjacent_pair", 1.0, 100_000, seed=5)
    assert abs(est.value - exact_first_order_laplace(K, 1.0)) <= 5 * est.std_error


def test_simulate_preconditions(k10):
    with pytest.raises(PreconditionError):
        simulate_meeting(k10, "uniform_pair", 0.0, 10, 0)
    with pytest.raises(PreconditionError):
        simulate_meeting(k10, "uniform_pair", 1.0, 0, 0)
    with pytest.raises(PreconditionError):
        simulate_meeting(k10, "sideways", 1.0, 10, 0)
    with pytest.raises(PreconditionError):
        simulate_meeting(k10, ("fixed", 0, 10), 1.0, 10, 0)


def test_branch_and_path_starts_share_law():
    K = kernel_from_graph(random_regular_graph(3, 24, 8))
    a = meeting_time_samples(K, ("branch", 1, 1), 40_000, seed=1)
    b = meeting_time_samples(K, ("path", 3, 2), 40_000, seed=2)
    assert stats.ks_2samp(a, b).pvalue > 0.001
