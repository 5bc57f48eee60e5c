from hypothesis import given, strategies as st

from sg2caps.graph import validate
from sg2caps.toy import make_toy_corpus
from sg2caps.tsg import Lexicon, TSGParser, parse_caption

LEX = Lexicon.default()


def triples(g):
    lab = {n.id: n.label for n in g.nodes}
    return [(lab[e.subject_id], e.predicate, lab[e.object_id]) for e in g.edges]


def test_red_car_on_road():
    g = parse_caption("a red car on the road", LEX)
    assert [n.label for n in g.nodes] == ["car", "road"]
    assert [a.label for a in g.nodes[0].attributes] == ["red"]
    assert triples(g) == [("car", "on", "road")]
    assert g.source == "tsg"


def test_single_noun():
    g = parse_caption("dog", LEX)
    assert [n.label for n in g.nodes] == ["dog"] and g.edges == () and not g.nodes[0].attributes


def test_empty():
    g = parse_caption("", LEX)
    assert g.nodes == () and g.edges == ()


def test_inflected_verb():
    g = parse_caption("a man riding a horse", LEX)
    assert triples(g) == [("man", "ride", "horse")]


def test_repeated_noun_dedup():
    g = parse_caption("a dog near a cat and a dog", LEX)
    assert [n.label for n in g.nodes] == ["dog", "cat"]


def test_priority_resolution():
    lex = Lexicon(frozenset({"light", "room"}), frozenset(), frozenset({"light"}), frozenset())
    g = parse_caption("light room", lex)
    assert [n.label for n in g.nodes] == ["room"]
    assert [a.label for a in g.nodes[0].attributes] == ["light"]


def test_toy_captions_parse_within_graph():
    corpus = make_toy_corpus(5, 30)
    for ex, tsg in zip(corpus.examples, corpus.views["tsg"]):
        assert {n.label for n in tsg.nodes} <= {n.label for n in ex.graph.nodes}
        assert tsg.edges


words = st.sampled_from(sorted(LEX.nouns)[:40] + sorted(LEX.verbs)[:10]
                        + sorted(LEX.adjectives)[:10] + sorted(LEX.prepositions)
                        + ["the", "a", "xyzzy", "and"])


@given(st.lists(words, max_size=15))
def test_parse_invariants(tokens):
    caption = " ".join(tokens)
    g = parse_caption(caption, LEX)
    assert validate(g).ok
    assert all(n.box is None for n in g.nodes)
    assert {n.label for n in g.nodes} <= LEX.nouns
    assert {e.predicate for e in g.edges} <= LEX.verbs | LEX.prepositions
    assert {a.label for n in g.nodes for a in n.attributes} <= LEX.adjectives
    assert parse_caption(caption, LEX) == g


def test_transformer():
    out = TSGParser().fit().transform(["a dog on a table"])
    assert triples(out[0]) == [("dog", "on", "table")]
