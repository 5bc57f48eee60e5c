"""Lexicon-driven caption -> textual scene graph parser."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from sklearn.base import BaseEstimator, TransformerMixin

from .graph import AttributeEntry, ObjectNode, RelationEdge, SceneGraph
from .validation import tokenize

NOUN, VERB, ADJ, PREP = "noun", "verb", "adj", "prep"
# conflict priority, strongest first
_PRIORITY = (ADJ, PREP, VERB, NOUN)


@dataclass(frozen=True)
class Lexicon:
    nouns: frozenset[str]
    verbs: frozenset[str]
    adjectives: frozenset[str]
    prepositions: frozenset[str]

    @classmethod
    def from_dict(cls, d: dict) -> "Lexicon":
        keys = {"nouns", "verbs", "adjectives", "prepositions"}
        if set(d) != keys:
            raise ValueError(f"lexicon needs exactly the keys {sorted(keys)}")
        return cls(*(frozenset(d[k]) for k in ("nouns", "verbs", "adjectives", "prepositions")))

    def to_dict(self) -> dict:
        return {"nouns": sorted(self.nouns), "verbs": sorted(self.verbs),
                "adjectives": sorted(self.adjectives), "prepositions": sorted(self.prepositions)}

    @classmethod
    def default(cls) -> "Lexicon":
        text = resources.files("sg2caps.data").joinpath("lexicon.json").read_text()
        return cls.from_dict(json.loads(text))

    def _sets(self):
        return {ADJ: self.adjectives, PREP: self.prepositions, VERB: self.verbs, NOUN: self.nouns}

    def tag(self, token: str) -> tuple[str, str] | None:
        """Return ``(role, lemma)`` for a surface token, or None if unknown."""
        sets = self._sets()
        for form in _candidate_forms(token):
            for role in _PRIORITY:
                if form in sets[role]:
                    return role, form
        return None


def _candidate_forms(token: str) -> list[str]:
    """The token itself, then inflection-stripped guesses (-s, -es, -ing, -ed)."""
    forms = [token]
    for suffix in ("ing", "ed"):
        if token.endswith(suffix) and len(token) > len(suffix) + 1:
            stem = token[: -len(suffix)]
            forms += [stem, stem + "e"]
            if len(stem) > 2 and stem[-1] == stem[-2]:
                forms.append(stem[:-1])
            if suffix == "ed" and stem.endswith("i"):
                forms.append(stem[:-1] + "y")
    if token.endswith("ies") and len(token) > 4:
        forms.append(token[:-3] + "y")
    if token.endswith("es") and len(token) > 3:
        forms.append(token[:-2])
    if token.endswith("s") and not token.endswith("ss") and len(token) > 2:
        forms.append(token[:-1])
    return forms


def parse_caption(caption: str, lexicon: Lexicon, image_id: str = "") -> SceneGraph:
    """Parse a caption into an ungrounded scene graph.

    Nouns become nodes (one per distinct lemma, in order of appearance), an
    adjective directly before a noun becomes its attribute, and the first
    verb or preposition between two consecutive nouns becomes an edge from
    the earlier to the later noun. Unknown tokens are skipped.
    """
    tagged = [lexicon.tag(tok) for tok in tokenize(caption)]
    node_ids: dict[str, int] = {}
    attrs: dict[int, list[str]] = {}
    edges: list[RelationEdge] = []
    prev_noun: int | None = None
    pending_rel: str | None = None
    for pos, tag in enumerate(tagged):
        if tag is None:
            continue
        role, lemma = tag
        if role == NOUN:
            nid = node_ids.setdefault(lemma, len(node_ids))
            before = tagged[pos - 1] if pos > 0 else None
            if before is not None and before[0] == ADJ:
                bucket = attrs.setdefault(nid, [])
                if before[1] not in bucket:
                    bucket.append(before[1])
            if prev_noun is not None and pending_rel is not None and prev_noun != nid:
                e = RelationEdge(prev_noun, nid, pending_rel, 1.0)
                if all(x.triple != e.triple for x in edges):
                    edges.append(e)
            prev_noun, pending_rel = nid, None
        elif role in (VERB, PREP) and prev_noun is not None and pending_rel is None:
            pending_rel = lemma
    nodes = tuple(
        ObjectNode(nid, lemma, 1.0, None,
                   tuple(AttributeEntry(a, 1.0) for a in attrs.get(nid, ())))
        for lemma, nid in node_ids.items()
    )
    return SceneGraph(image_id, 1, 1, nodes, tuple(edges), "tsg")


class TSGParser(BaseEstimator, TransformerMixin):
    """Transformer from caption strings to textual scene graphs."""

    def __init__(self, lexicon=None):
        self.lexicon = lexicon

    def fit(self, X=None, y=None):
        lex = self.lexicon
        if lex is None:
            lex = Lexicon.default()
        elif isinstance(lex, dict):
            lex = Lexicon.from_dict(lex)
        self.lexicon_ = lex
        return self

    def transform(self, X):
        if not hasattr(self, "lexicon_"):
            self.fit()
        return [parse_caption(c, self.lexicon_, image_id=str(k)) for k, c in enumerate(X)]
