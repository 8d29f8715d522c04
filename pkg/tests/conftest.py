import pytest

from tsexp.reference import reference_solution


@pytest.fixture(scope="session")
def ref_cache():
    """Session-wide cache of fine reference solutions keyed by problem/eps/tol."""
    cache = {}

    def get(problem, tol, t_end=1.0):
        key = (problem.name, problem.dim, problem.eps, tol, t_end)
        if key not in cache:
            cache[key] = reference_solution(problem, t_end, tol)
        return cache[key]

    return get
