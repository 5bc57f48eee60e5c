"""Scene-graph data model, validation, graph union and vocabulary services."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

BOS, EOS, UNK, PAD = "<bos>", "<eos>", "<unk>", "<pad>"
SPECIAL_TOKENS = (BOS, EOS, UNK, PAD)
BOS_ID, EOS_ID, UNK_ID, PAD_ID = range(4)

SOURCES = ("pseudolabel", "hoi", "union", "tsg")


class GraphError(ValueError):
    """Raised for structurally unusable graph input."""


class Vocabulary:
    """Bidirectional token/index map with four reserved entries at 0..3."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.tokens: list[str] = list(SPECIAL_TOKENS)
        self.index: dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.index:
            self.index[token] = len(self.tokens)
            self.tokens.append(token)
        return self.index[token]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __repr__(self) -> str:
        return f"Vocabulary(size={len(self)})"

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Vocabulary":
        """Rebuild from a full token list (reserved entries included)."""
        if tuple(tokens[:4]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        return cls(tokens[4:])


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float
    image_w: float
    image_h: float

    @property
    def area(self) -> float:
        return max(0.0, self.x2 - self.x1) * max(0.0, self.y2 - self.y1)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    def is_valid(self) -> bool:
        return (0 <= self.x1 < self.x2 <= self.image_w
                and 0 <= self.y1 < self.y2 <= self.image_h)


@dataclass(frozen=True)
class AttributeEntry:
    label: str
    confidence: float = 1.0


@dataclass(frozen=True)
class ObjectNode:
    id: int
    label: str
    confidence: float = 1.0
    box: BBox | None = None
    attributes: tuple[AttributeEntry, ...] = ()


@dataclass(frozen=True)
class RelationEdge:
    subject_id: int
    object_id: int
    predicate: str
    confidence: float = 1.0

    @property
    def triple(self) -> tuple[int, str, int]:
        return (self.subject_id, self.predicate, self.object_id)


@dataclass(frozen=True)
class SceneGraph:
    image_id: str
    width: float
    height: float
    nodes: tuple[ObjectNode, ...] = ()
    edges: tuple[RelationEdge, ...] = ()
    source: str = "pseudolabel"

    def node(self, node_id: int) -> ObjectNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(f"unknown node id {node_id}")

    @property
    def node_ids(self) -> list[int]:
        return [n.id for n in self.nodes]

    def with_parts(self, nodes=None, edges=None, **kw) -> "SceneGraph":
        return replace(
            self,
            nodes=self.nodes if nodes is None else tuple(nodes),
            edges=self.edges if edges is None else tuple(edges),
            **kw,
        )


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def _in_unit(x) -> bool:
    return isinstance(x, (int, float)) and 0.0 <= x <= 1.0


def validate(graph: SceneGraph) -> ValidationReport:
    """Collect every invariant violation of ``graph``; never raises."""
    out: list[str] = []
    if graph.source not in SOURCES:
        out.append(f"unknown source {graph.source!r}")
    seen: set[int] = set()
    for n in graph.nodes:
        if n.id in seen:
            out.append(f"duplicate node id {n.id}")
        seen.add(n.id)
        if not _in_unit(n.confidence):
            out.append(f"node {n.id} confidence out of range")
        if n.box is not None:
            b = n.box
            if not (0 <= b.x1 < b.x2 and 0 <= b.y1 < b.y2):
                out.append(f"node {n.id} degenerate box")
            if b.x2 > graph.width or b.y2 > graph.height or b.x1 < 0 or b.y1 < 0:
                out.append(f"node {n.id} box out of bounds")
        for a in n.attributes:
            if not _in_unit(a.confidence):
                out.append(f"node {n.id} attribute {a.label!r} confidence out of range")
    triples: set[tuple[int, str, int]] = set()
    for e in graph.edges:
        for end in (e.subject_id, e.object_id):
            if end not in seen:
                out.append(f"dangling endpoint {end}")
        if e.subject_id == e.object_id:
            out.append(f"self-loop on node {e.subject_id}")
        if not _in_unit(e.confidence):
            out.append(f"edge {e.triple} confidence out of range")
        if e.triple in triples:
            out.append(f"duplicate triple {e.triple}")
        triples.add(e.triple)
    return ValidationReport(out)


def sbj_set(graph: SceneGraph, i: int) -> list[int]:
    """Objects j of edges (i, r, j), one entry per edge, sorted by id."""
    graph.node(i)
    return sorted(e.object_id for e in graph.edges if e.subject_id == i)


def obj_set(graph: SceneGraph, i: int) -> list[int]:
    """Subjects k of edges (k, r, i), one entry per edge, sorted by id."""
    graph.node(i)
    return sorted(e.subject_id for e in graph.edges if e.object_id == i)


def relation_count(graph: SceneGraph, i: int) -> int:
    return len(sbj_set(graph, i)) + len(obj_set(graph, i))


def box_iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0.0 when disjoint."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def dedupe_edges(edges: Iterable[RelationEdge]) -> list[RelationEdge]:
    """Drop repeated (s, p, o) triples keeping the max confidence, first-seen order."""
    best: dict[tuple[int, str, int], RelationEdge] = {}
    for e in edges:
        cur = best.get(e.triple)
        if cur is None or e.confidence > cur.confidence:
            best[e.triple] = e
    return list(best.values())


def _merge_attributes(*groups: Sequence[AttributeEntry]) -> tuple[AttributeEntry, ...]:
    best: dict[str, float] = {}
    for group in groups:
        for a in group:
            best[a.label] = max(best.get(a.label, -1.0), a.confidence)
    return tuple(AttributeEntry(k, v) for k, v in sorted(best.items()))


def _node_key(n: ObjectNode):
    box = tuple(n.box.as_list()) if n.box is not None else ()
    return (n.label, n.confidence, box, tuple((a.label, a.confidence) for a in n.attributes))


def union(pl: SceneGraph, hoi: SceneGraph, merge_iou: float = 0.5) -> SceneGraph:
    """Union of two graphs of the same image.

    Nodes with equal labels whose boxes overlap with IoU >= ``merge_iou`` are
    matched one-to-one (highest IoU first) and merged; the merged node keeps
    the more confident label/box and the union of attributes. Ids are
    reassigned densely: first-graph nodes first, then unmatched second-graph
    nodes, each in original id order.
    """
    if pl.image_id != hoi.image_id:
        raise GraphError(f"image_id mismatch: {pl.image_id!r} vs {hoi.image_id!r}")
    if (pl.width, pl.height) != (hoi.width, hoi.height):
        raise GraphError("image dimensions differ between graphs")

    candidates = []
    for a in pl.nodes:
        for b in hoi.nodes:
            if a.label != b.label or a.box is None or b.box is None:
                continue
            ov = box_iou(a.box, b.box)
            if ov >= merge_iou:
                # content-based tie-break keeps union(a, b) ~ union(b, a)
                ka, kb = _node_key(a), _node_key(b)
                candidates.append((-ov, min(ka, kb), max(ka, kb), a.id, b.id))
    candidates.sort(key=lambda c: c[:3])
    match: dict[int, int] = {}
    taken: set[int] = set()
    for _, _, _, aid, bid in candidates:
        if aid in match or bid in taken:
            continue
        match[aid] = bid
        taken.add(bid)

    hoi_by_id = {n.id: n for n in hoi.nodes}
    new_nodes: list[ObjectNode] = []
    pl_map: dict[int, int] = {}
    hoi_map: dict[int, int] = {}
    for a in sorted(pl.nodes, key=lambda n: n.id):
        nid = len(new_nodes)
        pl_map[a.id] = nid
        if a.id in match:
            b = hoi_by_id[match[a.id]]
            hoi_map[b.id] = nid
            keep = max((a, b), key=lambda n: (n.confidence, _node_key(n)))
            new_nodes.append(ObjectNode(nid, keep.label, keep.confidence, keep.box,
                                        _merge_attributes(a.attributes, b.attributes)))
        else:
            new_nodes.append(replace(a, id=nid))
    for b in sorted(hoi.nodes, key=lambda n: n.id):
        if b.id in hoi_map:
            continue
        nid = len(new_nodes)
        hoi_map[b.id] = nid
        new_nodes.append(replace(b, id=nid))

    edges = [replace(e, subject_id=pl_map[e.subject_id], object_id=pl_map[e.object_id])
             for e in pl.edges]
    edges += [replace(e, subject_id=hoi_map[e.subject_id], object_id=hoi_map[e.object_id])
              for e in hoi.edges]
    return SceneGraph(pl.image_id, pl.width, pl.height, tuple(new_nodes),
                      tuple(dedupe_edges(edges)), "union")


def map_to_caption_vocab(label: str, vocab: Vocabulary | Iterable[str]) -> str:
    """Closest caption-vocabulary word for a detector label.

    Exact match first, then the right-most whitespace sub-token that the
    vocabulary knows (``"potted plant"`` -> ``"plant"``), else UNK.
    """
    if not label:
        raise ValueError("label must be nonempty")
    known = vocab if isinstance(vocab, Vocabulary) else set(vocab)
    if label in known:
        return label
    for part in reversed(label.split()):
        if part in known:
            return part
    return UNK


# JSON interchange -----------------------------------------------------------

_GRAPH_KEYS = {"image_id", "width", "height", "source", "nodes", "edges"}
_NODE_KEYS = {"id", "label", "confidence", "box", "attributes"}
_ATTR_KEYS = {"label", "confidence"}
_EDGE_KEYS = {"subject", "predicate", "object", "confidence"}


def _check_keys(obj, allowed: set[str], required: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise GraphError(f"{where}: expected an object")
    extra = set(obj) - allowed
    if extra:
        raise GraphError(f"{where}: unknown field(s) {sorted(extra)}")
    missing = required - set(obj)
    if missing:
        raise GraphError(f"{where}: missing field(s) {sorted(missing)}")


def graph_from_dict(d: dict) -> SceneGraph:
    _check_keys(d, _GRAPH_KEYS, {"image_id", "width", "height", "nodes", "edges"}, "graph")
    w, h = d["width"], d["height"]
    nodes = []
    for k, nd in enumerate(d["nodes"]):
        _check_keys(nd, _NODE_KEYS, {"id", "label"}, f"nodes[{k}]")
        box = nd.get("box")
        if box is not None:
            if len(box) != 4:
                raise GraphError(f"nodes[{k}]: box must have 4 coordinates")
            box = BBox(*(float(v) for v in box), float(w), float(h))
        attrs = []
        for j, ad in enumerate(nd.get("attributes", [])):
            _check_keys(ad, _ATTR_KEYS, {"label"}, f"nodes[{k}].attributes[{j}]")
            attrs.append(AttributeEntry(str(ad["label"]), float(ad.get("confidence", 1.0))))
        nodes.append(ObjectNode(int(nd["id"]), str(nd["label"]),
                                float(nd.get("confidence", 1.0)), box, tuple(attrs)))
    edges = []
    for k, ed in enumerate(d["edges"]):
        _check_keys(ed, _EDGE_KEYS, {"subject", "predicate", "object"}, f"edges[{k}]")
        edges.append(RelationEdge(int(ed["subject"]), int(ed["object"]), str(ed["predicate"]),
                                  float(ed.get("confidence", 1.0))))
    return SceneGraph(str(d["image_id"]), w, h, tuple(nodes), tuple(edges),
                      str(d.get("source", "pseudolabel")))


def graph_to_dict(g: SceneGraph) -> dict:
    return {
        "image_id": g.image_id,
        "width": g.width,
        "height": g.height,
        "source": g.source,
        "nodes": [
            {
                "id": n.id,
                "label": n.label,
                "confidence": n.confidence,
                "box": n.box.as_list() if n.box is not None else None,
                "attributes": [{"label": a.label, "confidence": a.confidence}
                               for a in n.attributes],
            }
            for n in g.nodes
        ],
        "edges": [
            {"subject": e.subject_id, "predicate": e.predicate, "object": e.object_id,
             "confidence": e.confidence}
            for e in g.edges
        ],
    }


def dumps_graph(g: SceneGraph) -> str:
    return json.dumps(graph_to_dict(g), indent=1, sort_keys=True) + "\n"


def loads_graph(text: str) -> SceneGraph:
    return graph_from_dict(json.loads(text))
