import math

import numpy as np
import pytest

from pdae_lab.eigenbasis import BoundarySpec, BoxDomain, tensor_modes

SEED = 20240517


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


@pytest.fixture(scope="session")
def wetland_basis():
    dom = BoxDomain((math.pi, 1.0))
    return tensor_modes(dom, BoundarySpec.uniform("neumann", 2), 16)


def closed_form_mus(lengths, kind, count, reach=40):
    """Sorted ``Σ (m_i π / L_i)²`` over an index box; Neumann starts at 0, Dirichlet at 1."""
    start = 0 if kind == "neumann" else 1
    axes = [[(m * math.pi / L) ** 2 for m in range(start, start + reach)] for L in lengths]
    vals = [0.0]
    for ax in axes:
        vals = [v + a for v in vals for a in ax]
    return sorted(vals)[:count]


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
