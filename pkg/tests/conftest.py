import numpy as np
import pytest

from aoclab import SolveOptions, solve_fixed_endpoint
from aoclab.benchmarks import get_benchmark


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Trigger JIT compilation once so timed tests measure numerics only."""
    from aoclab.extremal import extremal_flow

    lq = get_benchmark("lq-scalar")
    spec = lq.spec(N=4, substeps=2)
    solve_fixed_endpoint(spec, [0.1], SolveOptions(multistart_count=1, seed=0,
                                                   max_outer=2, max_inner=5))
    extremal_flow(spec, [0.1], want_jacobian=True)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def lq():
    return get_benchmark("lq-scalar")


@pytest.fixture(scope="session")
def double_integrator():
    return get_benchmark("double-integrator")


@pytest.fixture(scope="session")
def oscillator():
    return get_benchmark("oscillator-potential")


@pytest.fixture(scope="session")
def heisenberg():
    return get_benchmark("heisenberg")


@pytest.fixture(scope="session")
def martinet():
    return get_benchmark("martinet")


@pytest.fixture(scope="session")
def drifted_heisenberg():
    return get_benchmark("drifted-heisenberg")


def all_benchmarks():
    return [get_benchmark(name) for name in
            ("lq-scalar", "double-integrator", "oscillator-potential",
             "heisenberg", "martinet", "drifted-heisenberg")]
