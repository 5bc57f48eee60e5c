import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone

from conftest import random_graph
from oracles import iou_ref, process_oracle
from sg2caps.graph import AttributeEntry, BBox, GraphError, ObjectNode, RelationEdge, SceneGraph
from sg2caps.graph import validate
from sg2caps.pseudolabel import (PipelineConfig, PseudolabelCleaner, filter_objects,
                                 filter_relations, iou, nms, process, prune_attributes)


def B(x1, y1, x2, y2):
    return BBox(x1, y1, x2, y2, 100, 100)


def G(nodes, edges=()):
    return SceneGraph("x", 100, 100, tuple(nodes), tuple(edges))


class TestIou:
    def test_identical(self):
        assert iou(B(1, 2, 30, 40), B(1, 2, 30, 40)) == 1.0

    def test_disjoint(self):
        assert iou(B(0, 0, 10, 10), B(20, 20, 30, 30)) == 0.0

    def test_hand_value(self):
        assert iou(B(0, 0, 10, 10), B(5, 5, 15, 15)) == pytest.approx(25 / 175, abs=1e-15)

    def test_touching_edges(self):
        assert iou(B(0, 0, 10, 10), B(10, 0, 20, 10)) == 0.0


class TestFilterObjects:
    def test_all_confident_unchanged(self):
        g = G([ObjectNode(0, "a", 0.5), ObjectNode(1, "b", 0.25)])
        assert filter_objects(g) == g

    def test_drop_with_incident_edge(self):
        g = G([ObjectNode(0, "a", 0.24), ObjectNode(1, "b", 0.9)], [RelationEdge(1, 0, "on")])
        out = filter_objects(g)
        assert out.node_ids == [1] and out.edges == ()

    def test_count(self):
        g = G([ObjectNode(0, "a", 0.9), ObjectNode(1, "b", 0.1), ObjectNode(2, "c", 0.3)])
        assert filter_objects(g).node_ids == [0, 2]


class TestNms:
    def test_overlapping_same_class(self):
        # (0,0,30,30) vs (10,0,40,30): inter 600, union 1200 -> IoU 0.5
        g = G([ObjectNode(0, "dog", 0.9, B(0, 0, 30, 30)),
               ObjectNode(1, "dog", 0.8, B(10, 0, 40, 30))])
        assert nms(g).node_ids == [0]

    def test_low_overlap_kept(self):
        # (0,0,10,10) vs (8,0,18,10): inter 20, union 180 -> 0.111
        g = G([ObjectNode(0, "dog", 0.9, B(0, 0, 10, 10)),
               ObjectNode(1, "dog", 0.8, B(8, 0, 18, 10))])
        assert nms(g).node_ids == [0, 1]

    def test_different_classes_kept(self):
        g = G([ObjectNode(0, "dog", 0.9, B(0, 0, 10, 10)),
               ObjectNode(1, "cat", 0.8, B(0, 0, 10, 11))])
        assert nms(g).node_ids == [0, 1]

    def test_tie_prefers_lower_id(self):
        g = G([ObjectNode(4, "dog", 0.9, B(0, 0, 10, 10)),
               ObjectNode(2, "dog", 0.9, B(0, 0, 10, 10))])
        assert nms(g).node_ids == [2]

    def test_missing_box(self):
        with pytest.raises(GraphError):
            nms(G([ObjectNode(0, "dog", 0.9)]))

    def test_suppressed_edges_removed(self):
        g = G([ObjectNode(0, "dog", 0.9, B(0, 0, 30, 30)),
               ObjectNode(1, "dog", 0.8, B(0, 0, 30, 30)),
               ObjectNode(2, "cat", 0.8, B(50, 50, 60, 60))],
              [RelationEdge(1, 2, "on"), RelationEdge(0, 2, "near")])
        assert [e.triple for e in nms(g).edges] == [(0, "near", 2)]


class TestRelationsAndAttributes:
    def test_best_attribute(self):
        g = G([ObjectNode(0, "a", 1, None, (AttributeEntry("red", 0.95),
                                            AttributeEntry("shiny", 0.92)))])
        assert prune_attributes(g).nodes[0].attributes == (AttributeEntry("red", 0.95),)

    def test_weak_attribute_dropped(self):
        g = G([ObjectNode(0, "a", 1, None, (AttributeEntry("red", 0.85),))])
        assert prune_attributes(g).nodes[0].attributes == ()

    def test_attribute_tie_lexicographic(self):
        g = G([ObjectNode(0, "a", 1, None, (AttributeEntry("shiny", 0.95),
                                            AttributeEntry("red", 0.95)))])
        assert prune_attributes(g).nodes[0].attributes[0].label == "red"

    def test_attribute_boundary_kept(self):
        g = G([ObjectNode(0, "a", 1, None, (AttributeEntry("red", 0.90),))])
        assert len(prune_attributes(g).nodes[0].attributes) == 1

    def test_edge_boundary(self):
        g = G([ObjectNode(0, "a"), ObjectNode(1, "b")],
              [RelationEdge(0, 1, "on", 0.30), RelationEdge(1, 0, "on", 0.29)])
        assert [e.triple for e in filter_relations(g).edges] == [(0, "on", 1)]


class TestProcess:
    def test_empty(self):
        g = G([])
        assert process(g) == g

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PipelineConfig(obj_conf_min=1.5)

    @given(st.integers(0, 2**32 - 1))
    def test_matches_oracle(self, seed):
        g = random_graph(np.random.default_rng(seed), 10)
        assert process(g) == process_oracle(g)

    @given(st.integers(0, 2**32 - 1), st.floats(0, 1), st.floats(0, 1))
    def test_matches_oracle_any_threshold(self, seed, obj, thr):
        g = random_graph(np.random.default_rng(seed), 8)
        cfg = PipelineConfig(obj_conf_min=obj, nms_iou=thr)
        assert process(g, cfg) == process_oracle(g, obj_min=obj, nms_iou=thr)

    @given(st.integers(0, 2**32 - 1))
    def test_idempotent(self, seed):
        g = random_graph(np.random.default_rng(seed), 12)
        once = process(g)
        assert process(once) == once

    @given(st.integers(0, 2**32 - 1))
    def test_monotone_and_valid(self, seed):
        g = random_graph(np.random.default_rng(seed), 12)
        cfg = PipelineConfig()
        stages = [g]
        for fn in (filter_objects, nms, filter_relations, prune_attributes):
            stages.append(fn(stages[-1], cfg))
        for a, b in zip(stages, stages[1:]):
            assert len(b.nodes) <= len(a.nodes) and len(b.edges) <= len(a.edges)
        out = stages[-1]
        assert validate(out).ok
        for n in out.nodes:
            assert len(n.attributes) <= 1
            assert all(a.confidence >= cfg.attr_conf_min for a in n.attributes)

    @given(st.integers(0, 2**32 - 1))
    def test_iou_matches_reference(self, seed):
        rng = np.random.default_rng(seed)

        def rand_box():
            x1, x2 = sorted(rng.uniform(0, 100, 2))
            y1, y2 = sorted(rng.uniform(0, 100, 2))
            return B(x1, y1, x2, y2)

        a, b = rand_box(), rand_box()
        assert iou(a, b) == iou_ref(a, b) == iou(b, a)
        assert 0.0 <= iou(a, b) <= 1.0


class TestCleaner:
    def test_sklearn_params(self):
        c = PseudolabelCleaner(nms_iou=0.5)
        assert c.get_params()["nms_iou"] == 0.5
        assert clone(c).set_params(obj_conf_min=0.1).obj_conf_min == 0.1

    def test_transform_equals_process(self, rng):
        gs = [random_graph(rng, 8) for _ in range(5)]
        out = PseudolabelCleaner().fit(gs).transform(gs)
        assert out == [process(g) for g in gs]
