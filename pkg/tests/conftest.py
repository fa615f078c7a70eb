import math
from fractions import Fraction as F

import pytest

from permea.ifs import IFSSystem, Similarity

S = Similarity.from_params
H3 = math.sqrt(3) / 4


def triangle_ifs() -> IFSSystem:
    return IFSSystem((S(F(1, 2)), S(F(1, 2), translate=(F(1, 2), 0)), S(F(1, 2), translate=(F(1, 4), H3))), "triangle")


def carpet_ifs() -> IFSSystem:
    maps = tuple(S(F(1, 3), translate=(F(i, 3), F(j, 3))) for i in range(3) for j in range(3) if (i, j) != (1, 1))
    return IFSSystem(maps, "carpet")


def cantor_ifs() -> IFSSystem:
    """Middle-third Cantor set on the x-axis."""
    return IFSSystem((S(F(1, 3)), S(F(1, 3), translate=(F(2, 3), 0))), "cantor")


def split_ifs() -> IFSSystem:
    """Two ratio-1/3 maps with disjoint images."""
    return IFSSystem((S(F(1, 3)), S(F(1, 3), translate=(F(2, 3), 0))), "split")


def square_ifs() -> IFSSystem:
    maps = tuple(S(F(1, 2), translate=(F(i, 2), F(j, 2))) for i in range(2) for j in range(2))
    return IFSSystem(maps, "square")


@pytest.fixture(scope="session")
def tri():
    return triangle_ifs()


@pytest.fixture(scope="session")
def carpet():
    return carpet_ifs()


@pytest.fixture(scope="session")
def tri_closure(tri):
    from permea.neighbors import neighbor_closure

    return neighbor_closure(tri, 0, 6)


@pytest.fixture(scope="session")
def tri_H(tri, tri_closure):
    from permea.neighbors import intersection_points

    return intersection_points(tri, tri_closure, frame="neighbors")


@pytest.fixture(scope="session")
def tri_seq(tri, tri_closure, tri_H):
    from permea.covers import cover_sequence, select_delta_k

    choice = select_delta_k(tri, tri_closure, tri_H, 0.25)
    return cover_sequence(tri, tri_closure, tri_H, choice.delta, choice.k, 3)


# ---------------------------------------------------------------- acceptance summary

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): acceptance criterion checked by the test")
    config.stash[_ACCEPTANCE] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    results = item.config.stash[_ACCEPTANCE].setdefault(mark.args[0], [])
    results.append(rep.passed)


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(results, key=lambda s: (int(s.rstrip("abcd")), s)):
        ok = all(results[label])
        terminalreporter.write_line(f"criterion {label}: {'PASS' if ok else 'FAIL'}")
