import numpy as np
import pytest

from zlap.graph import GraphConfig, build_bimodal_adjacency, normalized_graph
from zlap.harness import SynthConfig, generate_bimodal
from zlap.solver import LaplacianOperator

ACCEPTANCE_RESULTS = {}


def record_acceptance(name, passed, detail=""):
    ACCEPTANCE_RESULTS[name] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")


def unit_rows(m):
    m = np.asarray(m, dtype=np.float64)
    return (m / np.linalg.norm(m, axis=1, keepdims=True)).astype(np.float32)


def bimodal_operator(seed, classes=3, per_class=20, dim=16, alpha=0.3, k=5, spread=3.0, gap=0.8):
    """Small synthetic graph: returns (op, images, class_vectors, labels, cfg)."""
    images, anchors, labels = generate_bimodal(
        SynthConfig(classes=classes, images_per_class=per_class, dim=dim, cluster_spread=spread,
                    modality_gap=gap, seed=seed)
    )
    cfg = GraphConfig(k_image=k, k_class=k, alpha=alpha)
    adj = build_bimodal_adjacency(images, anchors, cfg)
    return LaplacianOperator(normalized_graph(adj), alpha), images, anchors, labels, cfg


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
