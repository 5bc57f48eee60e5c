import numpy as np
import pytest
from hypothesis import settings

from sg2caps.graph import AttributeEntry, BBox, ObjectNode, RelationEdge, SceneGraph

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

LABELS = ("dog", "cat", "person", "ball")
ATTRS = ("red", "blue", "shiny", "small")
PREDS = ("on", "near", "under")


def random_graph(rng, max_nodes=15, width=100.0, height=80.0, labels=LABELS, boxes=True,
                 image_id="img", source="pseudolabel"):
    """Random valid graph with confidences on a coarse grid so ties occur."""
    k = int(rng.integers(0, max_nodes + 1))
    nodes = []
    ids = rng.permutation(100)[:k]
    for i in ids:
        box = None
        if boxes:
            x1 = float(rng.integers(0, 60))
            y1 = float(rng.integers(0, 50))
            box = BBox(x1, y1, x1 + float(rng.integers(1, 40)), y1 + float(rng.integers(1, 30)),
                       width, height)
        attrs = tuple(AttributeEntry(a, float(rng.integers(0, 21)) / 20)
                      for a in rng.choice(ATTRS, size=int(rng.integers(0, 3)), replace=False))
        nodes.append(ObjectNode(int(i), str(rng.choice(labels)),
                                float(rng.integers(0, 21)) / 20, box, attrs))
    edges = {}
    if k >= 2:
        for _ in range(int(rng.integers(0, 2 * k))):
            s, o = (int(x) for x in rng.choice(ids, size=2, replace=False))
            p = str(rng.choice(PREDS))
            edges.setdefault((s, o, p), RelationEdge(s, o, p, float(rng.integers(0, 21)) / 20))
    return SceneGraph(image_id, width, height, tuple(nodes), tuple(edges.values()), source)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
