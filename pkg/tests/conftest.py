import os

os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numpy as np
import pytest

from ddinfer.scenarios import data_dir
from ddinfer.truss import Bar, Node, TrussModel, assemble, load_truss


@pytest.fixture
def three_bar():
    return load_truss(data_dir() / "three_bar.yaml")


@pytest.fixture
def three_bar_E(three_bar):
    return assemble(three_bar)


def single_bar(load=1.0, area=1.0, length=1.0, material="gauss"):
    nodes = [Node(1, np.array([0.0, 0.0]), np.array([True, True]), np.zeros(2), np.zeros(2)),
             Node(2, np.array([length, 0.0]), np.array([False, True]), np.array([load, 0.0]), np.zeros(2))]
    return TrussModel(2, nodes, [Bar(1, 1, 2, area, material)])


def random_truss(rng, n_free=None):
    """Random stable planar truss: a triangulated strip plus extra diagonals."""
    k = int(rng.integers(3, 7)) if n_free is None else n_free
    nodes, bars = [], []
    pts = np.column_stack([np.arange(k + 2) * 1.0, np.zeros(k + 2)])
    pts = np.vstack([pts, np.column_stack([np.arange(k + 2) + 0.5, np.ones(k + 2)])])
    pts += rng.uniform(-0.15, 0.15, pts.shape)
    for i, x in enumerate(pts):
        fixed = i in (0, k + 2)
        load = rng.normal(size=2) if not fixed else np.zeros(2)
        nodes.append(Node(i + 1, x, np.array([fixed, fixed]), load, np.zeros(2)))
    top = k + 2

    def add(a, b):
        bars.append(Bar(len(bars) + 1, a + 1, b + 1, float(rng.uniform(0.5, 2.0)), "m"))

    for i in range(k + 1):
        add(i, i + 1)
        add(top + i, top + i + 1)
        add(i, top + i)
        add(i + 1, top + i)
    add(k + 1, top + k + 1)
    for i in range(k + 1):
        if rng.uniform() < 0.5:
            add(i, top + i + 1)
    return TrussModel(2, nodes, bars)
