"""Partial scene graphs built from object detections and HOI inferences."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping, Sequence

from sklearn.base import BaseEstimator, TransformerMixin

from .graph import (AttributeEntry, BBox, GraphError, ObjectNode, RelationEdge, SceneGraph,
                    Vocabulary, map_to_caption_vocab)

log = logging.getLogger(__name__)

HUMAN_LABEL = "person"
HUMAN_SCORE_MIN = 0.5
AND = "AND"


@dataclass(frozen=True)
class Detection:
    label: str
    confidence: float
    box: BBox


@dataclass(frozen=True)
class HOIInference:
    agent: Detection
    action: str
    target: Detection | None = None
    instrument: Detection | None = None

    def __post_init__(self):
        if self.agent.label != HUMAN_LABEL:
            raise ValueError(f"HOI agent must be {HUMAN_LABEL!r}, got {self.agent.label!r}")


@dataclass(frozen=True)
class VerbTables:
    relation_verbs: frozenset[str]
    attribute_verbs: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        clash = set(self.relation_verbs) & set(self.attribute_verbs)
        if clash:
            raise ValueError(f"verbs listed in both tables: {sorted(clash)}")

    @classmethod
    def from_dict(cls, d: dict) -> "VerbTables":
        extra = set(d) - {"relation_verbs", "attribute_verbs"}
        if extra:
            raise ValueError(f"unknown verb-table keys {sorted(extra)}")
        return cls(frozenset(d["relation_verbs"]), dict(d["attribute_verbs"]))

    @classmethod
    def default(cls) -> "VerbTables":
        text = resources.files("sg2caps.data").joinpath("verb_tables.json").read_text()
        return cls.from_dict(json.loads(text))


def human_gate(detections: Iterable[Detection]) -> bool:
    return any(d.label == HUMAN_LABEL and d.confidence >= HUMAN_SCORE_MIN for d in detections)


def build_hoi_graph(image_id: str, width: float, height: float,
                    detections: Sequence[Detection], inferences: Sequence[HOIInference],
                    verb_tables: VerbTables, caption_vocab) -> SceneGraph:
    """Turn detections and HOI triplets into a partial scene graph.

    Every detection becomes a node (exact duplicates collapse); labels are
    mapped onto ``caption_vocab`` unless it is None. Relation
    verbs with a target become an (agent, verb, target) edge; attribute
    verbs become an attribute on the agent. Instruments stay plain nodes.
    Inferences are ignored when no confident human was detected.
    """
    node_of: dict[tuple, int] = {}
    nodes: list[ObjectNode] = []
    attrs: dict[int, list[AttributeEntry]] = {}

    def node_id(det: Detection) -> int:
        key = (det.label, tuple(det.box.as_list()))
        if key not in node_of:
            nid = len(nodes)
            node_of[key] = nid
            label = (det.label if caption_vocab is None
                     else map_to_caption_vocab(det.label, caption_vocab))
            nodes.append(ObjectNode(nid, label, det.confidence, det.box))
        else:
            nid = node_of[key]
            if det.confidence > nodes[nid].confidence:
                n = nodes[nid]
                nodes[nid] = ObjectNode(nid, n.label, det.confidence, n.box)
        return nid

    for det in detections:
        node_id(det)

    edges: list[RelationEdge] = []
    if inferences and not human_gate(detections):
        log.warning("%s: HOI inferences dropped, no person scored >= %.2f",
                    image_id, HUMAN_SCORE_MIN)
        inferences = ()
    for inf in inferences:
        action = inf.action
        if action not in verb_tables.relation_verbs and action not in verb_tables.attribute_verbs:
            raise GraphError(f"unknown HOI action {action!r}")
        agent = node_id(inf.agent)
        if inf.instrument is not None:
            node_id(inf.instrument)
        target = node_id(inf.target) if inf.target is not None else None
        if action in verb_tables.relation_verbs:
            if target is not None and target != agent:
                edges.append(RelationEdge(agent, target, action, 1.0))
        else:
            word = verb_tables.attribute_verbs[action]
            bucket = attrs.setdefault(agent, [])
            if all(a.label != word for a in bucket):
                bucket.append(AttributeEntry(word, 1.0))

    nodes = [ObjectNode(n.id, n.label, n.confidence, n.box, tuple(attrs.get(n.id, ())))
             for n in nodes]
    seen = set()
    unique_edges = []
    for e in edges:
        if e.triple not in seen:
            seen.add(e.triple)
            unique_edges.append(e)
    return SceneGraph(image_id, width, height, tuple(nodes), tuple(unique_edges), "hoi")


def and_fallback(graph: SceneGraph) -> SceneGraph:
    """Link the two most confident nodes with one AND edge in an edgeless graph."""
    if graph.edges or any(n.attributes for n in graph.nodes) or len(graph.nodes) < 2:
        return graph
    a, b = sorted(graph.nodes, key=lambda n: (-n.confidence, n.id))[:2]
    return graph.with_parts(edges=[RelationEdge(a.id, b.id, AND, min(a.confidence, b.confidence))])


# JSON interchange -----------------------------------------------------------

def _detection_from_dict(d: dict, width, height) -> Detection:
    extra = set(d) - {"label", "confidence", "box"}
    if extra:
        raise GraphError(f"detection: unknown field(s) {sorted(extra)}")
    return Detection(str(d["label"]), float(d["confidence"]),
                     BBox(*(float(v) for v in d["box"]), float(width), float(height)))


def load_hoi_record(d: dict) -> tuple[str, float, float, list[Detection], list[HOIInference]]:
    """Parse one HOI input record; detections are referenced by list index."""
    extra = set(d) - {"image_id", "width", "height", "detections", "hoi"}
    if extra:
        raise GraphError(f"hoi record: unknown field(s) {sorted(extra)}")
    width, height = d.get("width"), d.get("height")
    if width is None or height is None:
        xs = [b["box"] for b in d["detections"]]
        width = max([b[2] for b in xs], default=1)
        height = max([b[3] for b in xs], default=1)
    dets = [_detection_from_dict(x, width, height) for x in d["detections"]]
    infs = []
    for k, h in enumerate(d.get("hoi", [])):
        extra = set(h) - {"agent", "action", "target", "instrument"}
        if extra:
            raise GraphError(f"hoi[{k}]: unknown field(s) {sorted(extra)}")

        def pick(key):
            idx = h.get(key)
            if idx is None:
                return None
            if not 0 <= idx < len(dets):
                raise GraphError(f"hoi[{k}].{key}: detection index {idx} out of range")
            return dets[idx]

        infs.append(HOIInference(pick("agent"), str(h["action"]), pick("target"),
                                 pick("instrument")))
    return str(d["image_id"]), width, height, dets, infs


class HOIGraphBuilder(BaseEstimator, TransformerMixin):
    """Transformer from HOI input records to partial scene graphs."""

    def __init__(self, verb_tables=None, caption_vocab=None, fallback=True):
        self.verb_tables = verb_tables
        self.caption_vocab = caption_vocab
        self.fallback = fallback

    def fit(self, X=None, y=None):
        vt = self.verb_tables
        if vt is None:
            vt = VerbTables.default()
        elif isinstance(vt, dict):
            vt = VerbTables.from_dict(vt)
        self.verb_tables_ = vt
        vocab = self.caption_vocab
        if vocab is not None and not isinstance(vocab, Vocabulary):
            vocab = Vocabulary(vocab)
        self.caption_vocab_ = vocab
        return self

    def transform(self, X):
        if not hasattr(self, "verb_tables_"):
            self.fit()
        out = []
        for rec in X:
            image_id, w, h, dets, infs = load_hoi_record(rec) if isinstance(rec, dict) else rec
            g = build_hoi_graph(image_id, w, h, dets, infs, self.verb_tables_, self.caption_vocab_)
            out.append(and_fallback(g) if self.fallback else g)
        return out
