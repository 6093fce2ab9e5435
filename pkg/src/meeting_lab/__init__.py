"""Laplace transforms of meeting times of two independent symmetric Markov chains.

Exact voter-correlation series, the Green-function ratio that approximates
them, an explicit error bound, and independent product-chain and Monte Carlo
oracles.
"""
__version__ = "0.1.0"

from .errors import MeetingLabError, NumericalError, PreconditionError
from .kernel import (
    Graph,
    KernelMatrix,
    kernel_from_edge_list,
    kernel_from_graph,
    named_kernel,
    random_regular_graph,
    validate_kernel,
)
from .spectral import (
    Spectrum,
    TraceSeq,
    green_ratio,
    hitting_laplace,
    kesten_mckay_density,
    kesten_mckay_moment,
    spectrum,
    trace_power,
    tree_green_ratio,
)
from .voter import alpha_table, apply_L, apply_L0, laplace_series_approx, laplace_series_exact
from .bounds import BoundReport, c_epsilon, delta_q_gamma, meeting_error_bound
from .oracle import MeetingEstimate, exact_first_order_laplace, exact_pair_laplace, meeting_tail, simulate_meeting

__all__ = [
    "MeetingLabError", "NumericalError", "PreconditionError",
    "Graph", "KernelMatrix", "kernel_from_edge_list", "kernel_from_graph", "named_kernel",
    "random_regular_graph", "validate_kernel",
    "Spectrum", "TraceSeq", "green_ratio", "hitting_laplace", "kesten_mckay_density",
    "kesten_mckay_moment", "spectrum", "trace_power", "tree_green_ratio",
    "alpha_table", "apply_L", "apply_L0", "laplace_series_approx", "laplace_series_exact",
    "BoundReport", "c_epsilon", "delta_q_gamma", "meeting_error_bound",
    "MeetingEstimate", "exact_first_order_laplace", "exact_pair_laplace", "meeting_tail", "simulate_meeting",
]
