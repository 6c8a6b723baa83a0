import numpy as np
import pytest

import acceptance_log
from ldpgraph import Graph, generate_featured_sbm, split_nodes


def pytest_terminal_summary(terminalreporter):
    if acceptance_log.lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_graph():
    # 6-node, 2-class toy: two triangles joined by a single bridge edge.
    edges = np.array([[0, 1], [0, 2], [1, 2], [2, 3], [3, 4], [3, 5], [4, 5]])
    feats = np.array([
        [1.0, 0.0], [0.9, 0.1], [0.8, -0.1],
        [-0.9, 0.2], [-1.0, 0.0], [-0.8, -0.2],
    ])
    labels = np.array([0, 0, 0, 1, 1, 1])
    return Graph(edges=edges, features=feats, labels=labels,
                 alpha=-1.0, beta=1.0, num_classes=2)


@pytest.fixture(scope="session")
def sbm_graph():
    return generate_featured_sbm(300, 3, 16, 0.05, 0.005, 1.0, seed=0)


@pytest.fixture(scope="session")
def sbm_masks(sbm_graph):
    return split_nodes(sbm_graph, (0.5, 0.25, 0.25), 0)
