from __future__ import annotations

import numpy as np
import pytest

from graphcf.blackbox import split_nodes, train_blackbox
from graphcf.datasets import GenConfig, generate
from graphcf.graph import Graph


def make_graph(n, edges, labels=None, n_classes=2, d=3, motif_of=None):
    labels = [0] * n if labels is None else labels
    return Graph(n, edges, np.ones((n, d)), labels, n_classes, motif_of)


def random_graph(rng: np.random.Generator, n: int, p: float = 0.3, d: int = 3, n_classes: int = 2) -> Graph:
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    feats = rng.normal(size=(n, d))
    labels = rng.integers(n_classes, size=n)
    return Graph(n, edges, feats, labels, n_classes)


@pytest.fixture(scope="session")
def small_tc():
    """Reduced Tree-Cycles graph with a trained black box."""
    g = generate(GenConfig(kind="tree-cycles", tree_depth=5, n_motifs=10, n_random_edges=5, seed=3))
    train, test = split_nodes(range(g.n_nodes), 0.8, 0)
    m, report = train_blackbox(g, train, test, epochs=600, seed=0)
    return g, m, report


def flip_pair():
    """Two nodes, one edge; deleting it flips node 0 from class 1 to class 0.

    Node 0 alone aggregates +1, joined it aggregates (1 - 3) / 2 = -1, and the
    hand-set weights route the sign of that value to the class logits.
    """
    from graphcf.blackbox import BlackBoxModel

    g = Graph(2, [(0, 1)], np.array([[1.0], [-3.0]]), [1, 1], 2)
    m = BlackBoxModel.init(1, 2, 2)
    p = m.params
    p["W1"].data = np.array([[1.0, -1.0]])
    p["b1"].data = np.zeros(2)
    p["W2"].data = np.eye(2)
    p["b2"].data = np.zeros(2)
    p["W3"].data = 3.0 * np.eye(2)
    p["b3"].data = np.zeros(2)
    return g, m


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
