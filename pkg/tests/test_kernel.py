import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meeting_lab.errors import Disconnected, LoopEdge, NonRegular, PreconditionError, RejectionBudgetExceeded, UnknownFamily
from meeting_lab.files import format_edge_list, parse_edge_list, read_kernel_csv, write_kernel_csv
from meeting_lab.kernel import (
    DENSE_LIMIT,
    KernelMatrix,
    complete_graph,
    cycle_graph,
    kernel_from_edge_list,
    kernel_from_graph,
    make_graph,
    named_kernel,
    random_regular_graph,
    validate_kernel,
)


def test_complete_graph_kernel():
    K = kernel_from_edge_list(complete_graph(10).edges, 10)
    Q = K.dense()
    off = ~np.eye(10, dtype=bool)
    assert np.all(Q[off] == 1 / 9)
    assert np.all(np.diag(Q) == 0)


def test_cycle_kernel():
    K = kernel_from_edge_list(cycle_graph(12).edges, 12)
    Q = K.dense()
    for x in range(12):
        for y in range(12):
            expect = 0.5 if (y - x) % 12 in (1, 11) else 0.0
            assert Q[x, y] == expect


def test_star_graph_rejected():
    with pytest.raises(NonRegular):
        kernel_from_edge_list([(0, 1), (0, 2), (0, 3), (0, 4)], 5)


def test_disconnected_and_loops_rejected():
    two_triangles = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]
    with pytest.raises(Disconnected):
        kernel_from_edge_list(two_triangles, 6)
    with pytest.raises(LoopEdge):
        kernel_from_edge_list([(0, 0), (0, 1)], 2)
    with pytest.raises(PreconditionError):
        make_graph([(0, 1), (1, 0)], 2)
    with pytest.raises(PreconditionError):
        make_graph([(0, 5)], 3)


def test_validate_reports():
    rep = validate_kernel(named_kernel("complete", 10))
    assert rep.accepted and rep.n_gt_8 and rep.max_asymmetry == 0
    Q = named_kernel("complete", 10).dense().copy()
    Q[0, 0] = 0.1
    rep = validate_kernel(Q)
    assert not rep.zero_trace and not rep.accepted
    rep6 = validate_kernel(named_kernel("complete", 6))
    assert rep6.accepted and not rep6.n_gt_8


def test_validate_detects_asymmetry_and_reducibility():
    Q = np.array([[0, 1, 0], [0.5, 0, 0.5], [0, 1, 0]], dtype=float)
    rep = validate_kernel(Q)
    assert not rep.symmetric and rep.stochastic and rep.irreducible
    blocks = np.kron(np.eye(2), np.array([[0, 1], [1, 0]]))
    rep = validate_kernel(blocks)
    assert rep.symmetric and rep.stochastic and not rep.irreducible
    assert validate_kernel(np.full((3, 3), 0.4) - 0.4 * np.eye(3)).failures() == ["stochastic"]


def test_random_regular_examples():
    G = random_regular_graph(2, 10, 5)
    assert np.all(G.degrees() == 2) and G.is_connected() and G.m == 10
    G = random_regular_graph(3, 100, 42)
    assert G.m == 150 and np.all(G.degrees() == 3) and G.is_connected()
    K = kernel_from_graph(G)
    assert validate_kernel(K).accepted
    with pytest.raises(PreconditionError):
        random_regular_graph(3, 5, 0)


def test_random_regular_reproducible():
    a = random_regular_graph(4, 60, 7)
    b = random_regular_graph(4, 60, 7)
    assert np.array_equal(a.edges, b.edges)
    assert not np.array_equal(a.edges, random_regular_graph(4, 60, 8).edges)


def test_rejection_budget():
    with pytest.raises(RejectionBudgetExceeded):
        random_regular_graph(8, 20, 0, max_tries=3)


def test_random_regular_uniform_on_k4():
    # the only simple 3-regular graph on 4 vertices is K_4
    G = random_regular_graph(3, 4, 1)
    assert np.array_equal(G.edges, complete_graph(4).edges)


def test_named_kernels():
    assert np.array_equal(named_kernel("complete", 10).dense(), kernel_from_graph(complete_graph(10)).dense())
    assert named_kernel("cycle", 9).n == 9
    with pytest.raises(PreconditionError):
        named_kernel("cycle", 2)
    with pytest.raises(UnknownFamily):
        named_kernel("petersen", 10)


def test_sparse_storage_above_limit():
    K = kernel_from_graph(random_regular_graph(3, 2 * (DENSE_LIMIT // 2 + 2), 0))
    assert K.is_sparse
    D = KernelMatrix(K.dense(), storage="dense")
    x = np.random.default_rng(0).standard_normal((K.n, 3))
    assert np.allclose(K.left(x), D.left(x)) and np.allclose(K.right(x.T), D.right(x.T))
    assert K.entry(int(K.graph.edges[0, 0]), int(K.graph.edges[0, 1])) == 1 / 3


@settings(max_examples=25, deadline=None)
@given(k=st.integers(2, 5), half=st.integers(4, 40), seed=st.integers(0, 10_000))
def test_generated_kernels_invariants(k, half, seed):
    n = 2 * half
    if n <= k:
        return
    K = kernel_from_graph(random_regular_graph(k, n, seed))
    Q = K.dense()
    assert np.abs(Q.sum(axis=1) - 1).max() <= 1e-12
    assert np.all(np.diag(Q) == 0)
    assert np.array_equal(Q, Q.T)
    assert np.all(K.graph.degrees() == k)


def test_edge_list_round_trip(tmp_path):
    G = random_regular_graph(3, 20, 3)
    text = format_edge_list(G, comment="generated\nfor a test")
    H = parse_edge_list(text)
    assert H.n == G.n and np.array_equal(H.edges, G.edges)
    with pytest.raises(PreconditionError):
        parse_edge_list("4 2\n0 1\n")
    with pytest.raises(PreconditionError):
        parse_edge_list("4 1\n0 x\n")
    assert parse_edge_list("# c\n3 3 # header\n0 1\n1 2\n\n2 0\n").m == 3


def test_kernel_csv_round_trip(tmp_path):
    K = named_kernel("cycle", 9)
    p = tmp_path / "k.csv"
    write_kernel_csv(K, p)
    assert np.array_equal(read_kernel_csv(p).dense(), K.dense())
    (tmp_path / "bad.csv").write_text("0,1\n1\n")
    with pytest.raises(PreconditionError):
        read_kernel_csv(tmp_path / "bad.csv")
