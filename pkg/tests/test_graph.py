import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_graph
from sg2caps.graph import (BOS_ID, EOS_ID, PAD_ID, UNK, UNK_ID, AttributeEntry, BBox,
                           GraphError, ObjectNode, RelationEdge, SceneGraph, Vocabulary,
                           graph_from_dict, graph_to_dict, loads_graph, dumps_graph,
                           map_to_caption_vocab, obj_set, relation_count, sbj_set, union,
                           validate)


def G(nodes=(), edges=(), **kw):
    return SceneGraph(kw.pop("image_id", "x"), kw.pop("width", 100), kw.pop("height", 100),
                      tuple(nodes), tuple(edges), kw.pop("source", "pseudolabel"))


def box(x1, y1, x2, y2):
    return BBox(x1, y1, x2, y2, 100, 100)


class TestVocabulary:
    def test_reserved_slots(self):
        v = Vocabulary(["dog"])
        assert (v.index["<bos>"], v.index["<eos>"], v.index["<unk>"], v.index["<pad>"]) == (
            BOS_ID, EOS_ID, UNK_ID, PAD_ID)
        assert v.index["dog"] == 4 and len(v) == 5

    def test_index_is_inverse(self):
        v = Vocabulary(["b", "a", "b", "c"])
        assert all(v.tokens[i] == t for t, i in v.index.items())
        assert len(set(v.tokens)) == len(v.tokens)

    def test_unknown_maps_to_unk(self):
        assert Vocabulary(["a"]).encode(["a", "zzz"]) == [4, UNK_ID]

    def test_from_tokens_roundtrip(self):
        v = Vocabulary(["x", "y"])
        assert Vocabulary.from_tokens(v.tokens) == v
        with pytest.raises(ValueError):
            Vocabulary.from_tokens(["x", "y"])


class TestValidate:
    def test_empty_graph_ok(self):
        assert validate(G()).ok

    def test_dangling_endpoint(self):
        g = G([ObjectNode(1, "dog")], [RelationEdge(1, 7, "on")])
        assert "dangling endpoint 7" in validate(g).violations

    def test_box_out_of_bounds(self):
        g = G([ObjectNode(0, "dog", 1.0, BBox(10, 10, 120, 50, 100, 100))])
        assert any("box out of bounds" in v for v in validate(g).violations)

    def test_self_loop_and_duplicate_triple(self):
        g = G([ObjectNode(0, "a"), ObjectNode(1, "b")],
              [RelationEdge(0, 0, "on"), RelationEdge(0, 1, "on"), RelationEdge(0, 1, "on")])
        v = validate(g).violations
        assert any("self-loop" in x for x in v) and any("duplicate triple" in x for x in v)

    def test_confidence_range(self):
        g = G([ObjectNode(0, "a", 1.5)])
        assert not validate(g).ok


class TestNeighbourhoods:
    def test_single_edge(self):
        g = G([ObjectNode(1, "a"), ObjectNode(2, "b")], [RelationEdge(1, 2, "on")])
        assert sbj_set(g, 1) == [2] and obj_set(g, 1) == []

    def test_no_edges(self):
        g = G([ObjectNode(1, "a")])
        assert sbj_set(g, 1) == [] and obj_set(g, 1) == [] and relation_count(g, 1) == 0

    def test_count_both_roles(self):
        g = G([ObjectNode(i, "a") for i in (1, 2, 3)],
              [RelationEdge(1, 2, "on"), RelationEdge(3, 1, "near")])
        assert relation_count(g, 1) == 2

    def test_unknown_node(self):
        with pytest.raises(KeyError):
            sbj_set(G(), 5)


class TestUnion:
    def test_empty_hoi_is_identity_up_to_ids(self):
        pl = G([ObjectNode(5, "dog", 0.7, box(0, 0, 10, 10)), ObjectNode(9, "cat", 0.6)],
               [RelationEdge(9, 5, "on")])
        out = union(pl, G())
        assert [n.label for n in out.nodes] == ["dog", "cat"]
        assert [n.id for n in out.nodes] == [0, 1]
        assert [e.triple for e in out.edges] == [(1, "on", 0)]
        assert out.source == "union"

    def test_merge_same_label_overlapping(self):
        a = ObjectNode(0, "person", 0.8, box(0, 0, 50, 50), (AttributeEntry("red", 0.9),))
        b = ObjectNode(0, "person", 0.9, box(0, 0, 50, 50), (AttributeEntry("standing", 1.0),))
        out = union(G([a]), G([b], source="hoi"))
        assert len(out.nodes) == 1
        n = out.nodes[0]
        assert n.confidence == 0.9
        assert {x.label for x in n.attributes} == {"red", "standing"}

    def test_low_iou_keeps_both(self):
        # (0,0,10,10) vs (8,8,28,28): inter 4, union 100 + 400 - 4 = 496
        a = ObjectNode(0, "person", 0.8, box(0, 0, 10, 10))
        b = ObjectNode(0, "person", 0.9, box(8, 8, 28, 28))
        assert len(union(G([a]), G([b])).nodes) == 2

    def test_edges_follow_merge(self):
        p = ObjectNode(0, "person", 0.8, box(0, 0, 40, 40))
        d = ObjectNode(1, "dog", 0.8, box(50, 50, 90, 90))
        pl = G([p, d], [RelationEdge(0, 1, "near")])
        hp = ObjectNode(3, "person", 0.95, box(1, 1, 40, 40))
        hb = ObjectNode(4, "ball", 0.7, box(60, 0, 70, 10))
        hoi = G([hp, hb], [RelationEdge(3, 4, "hold")], source="hoi")
        out = union(pl, hoi)
        assert len(out.nodes) == 3
        assert {e.triple for e in out.edges} == {(0, "near", 1), (0, "hold", 2)}

    def test_mismatch_raises(self):
        with pytest.raises(GraphError):
            union(G(image_id="a"), G(image_id="b"))


def _canonical(g):
    """Node/edge content with ids replaced by node content (id-free)."""
    key = {n.id: (n.label, n.confidence, n.box, tuple(sorted((a.label, a.confidence)
                                                              for a in n.attributes)))
           for n in g.nodes}
    return (Counter(key.values()),
            Counter((key[e.subject_id], e.predicate, key[e.object_id], e.confidence)
                    for e in g.edges))


@given(st.integers(0, 2**32 - 1))
def test_union_commutes_up_to_ids(seed):
    rng = np.random.default_rng(seed)
    a = random_graph(rng, 6)
    b = random_graph(rng, 6)
    assert _canonical(union(a, b)) == _canonical(union(b, a))


@given(st.integers(0, 2**32 - 1))
def test_union_with_empty_preserves_multiset(seed):
    rng = np.random.default_rng(seed)
    a = random_graph(rng, 8)
    assert _canonical(union(a, G(image_id=a.image_id, width=a.width, height=a.height))) == \
        _canonical(a)


@given(st.integers(0, 2**32 - 1))
def test_union_of_valid_is_valid(seed):
    rng = np.random.default_rng(seed)
    a, b = random_graph(rng, 8), random_graph(rng, 8)
    assert validate(a).ok and validate(b).ok
    assert validate(union(a, b)).ok


class TestCaptionVocab:
    def test_potted_plant(self):
        assert map_to_caption_vocab("potted plant", Vocabulary(["plant"])) == "plant"

    def test_identity(self):
        assert map_to_caption_vocab("dog", ["dog"]) == "dog"

    def test_fallback_unk(self):
        assert map_to_caption_vocab("xylograph holder", ["dog"]) == UNK

    @given(st.text(min_size=1, max_size=20),
           st.lists(st.text(min_size=1, max_size=6), max_size=6))
    def test_output_in_vocab_or_unk(self, label, words):
        assert map_to_caption_vocab(label, words) in set(words) | {UNK}


class TestJson:
    def test_roundtrip(self, rng):
        g = random_graph(rng, 6)
        assert loads_graph(dumps_graph(g)) == g

    def test_unknown_field_rejected(self, rng):
        d = graph_to_dict(random_graph(rng, 3))
        d["colour"] = 1
        with pytest.raises(GraphError):
            graph_from_dict(d)

    def test_field_order_irrelevant(self, rng):
        d = graph_to_dict(random_graph(rng, 4))
        shuffled = json.loads(json.dumps(dict(reversed(list(d.items())))))
        assert graph_from_dict(shuffled) == graph_from_dict(d)
