import numpy as np
import pytest

from meeting_lab.kernel import kernel_from_graph, named_kernel, random_regular_graph


def triangle_counts(K):
    A = (K.dense() > 0).astype(float)
    return np.diag(A @ A @ A) / 2


def mixed_triangle_kernel(n=12):
    """A 3-regular kernel with a vertex on a triangle and a triangle-free vertex."""
    for seed in range(1000):
        K = kernel_from_graph(random_regular_graph(3, n, seed))
        tri = triangle_counts(K)
        if tri.max() > 0 and tri.min() == 0:
            return K
    raise RuntimeError("no mixed graph found")


@pytest.fixture(scope="session")
def k10():
    return named_kernel("complete", 10)


@pytest.fixture(scope="session")
def c12():
    return named_kernel("cycle", 12)


@pytest.fixture(scope="session")
def mixed():
    return mixed_triangle_kernel()


@pytest.fixture(scope="session")
def rrg_small():
    """Ten random regular kernels of modest size."""
    out = []
    for i, (k, n) in enumerate([(3, 20), (3, 30), (4, 25), (3, 40), (5, 24), (4, 30), (3, 50), (4, 20), (4, 40), (3, 16)]):
        out.append(kernel_from_graph(random_regular_graph(k, n, 100 + i)))
    return out


_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number, label, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {label}" + (f" ({detail})" if detail else "")
        request.config.stash[_VERDICTS].append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
