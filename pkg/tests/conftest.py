import numpy as np
import pytest

from ctbn_au.model import CtbnModel, InitialDistribution, NodeSpec
from ctbn_au.trajectory import Trajectory


def binary(name):
    return NodeSpec(name, 2, ("0", "1"))


def chain_model(initial=None):
    """Hidden H drives observed O; O tends to copy H."""
    cims = [
        np.array([[[-1.0, 1.0], [2.0, -2.0]]]),
        np.array([[[-0.5, 0.5], [3.0, -3.0]], [[-3.0, 3.0], [0.5, -0.5]]]),
    ]
    return CtbnModel([binary("H"), binary("O")], [[], ["H"]], cims, initial)


def chain_evidence():
    return Trajectory(1.0, {"O": ([0, 1, 0], [0.0, 0.3, 0.7])})


def random_cims(model, rng, scale=3.0, sparsity=0.0):
    out = []
    for k in range(len(model.nodes)):
        m = model.cardinalities[k]
        q = rng.uniform(0.1, scale, size=(model.n_contexts(k), m, m))
        if sparsity:
            q *= rng.random(q.shape) >= sparsity
        q[:, np.arange(m), np.arange(m)] = 0.0
        q[:, np.arange(m), np.arange(m)] = -q.sum(axis=2)
        out.append(q)
    return out


def random_model(rng, cards, parents, scale=3.0, factored_initial=True):
    nodes = [NodeSpec(f"X{i}", c) for i, c in enumerate(cards)]
    structure = CtbnModel(nodes, parents)
    initial = None
    if factored_initial:
        initial = InitialDistribution.factored([rng.dirichlet(np.ones(c)) for c in cards])
    return structure.with_cims(random_cims(structure, rng, scale), initial)


@pytest.fixture
def chain():
    return chain_model()


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records one acceptance line and asserts ``ok``."""

    def report(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[_CRITERIA].append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = sorted(config.stash[_CRITERIA], key=lambda s: int(s.split()[1].rstrip(":")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
