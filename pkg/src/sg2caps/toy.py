"""Synthetic toy corpus: templated captions over small scene-graph worlds.

Each example is built the way real data flows through the system: a noisy
raw pseudolabel graph is cleaned by the pipeline, an HOI graph is built from
detections plus verb inferences, and the two are merged. Captions follow a
fixed template, so every caption is parseable with the bundled lexicon.

Two properties make the optional inputs matter:

* the subject's size word ("small"/"large") depends only on its box area;
* when the subject is a person, the verb is only visible in the HOI graph
  (the pseudolabel graph carries a generic "near" edge instead).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import (AttributeEntry, BBox, ObjectNode, RelationEdge, SceneGraph, Vocabulary,
                    union)
from .hoi import Detection, HOIInference, VerbTables, build_hoi_graph
from .nn import derive_seed, make_rng
from .pseudolabel import PipelineConfig, process
from .trainer import TrainingExample
from .tsg import Lexicon, parse_caption

NOUNS = ("person", "dog", "cat", "horse", "bird", "sheep", "cow", "ball", "bat", "frisbee",
         "kite", "phone", "book", "bag", "cup", "plate", "table", "chair", "bench", "car",
         "bike", "boat", "tree", "road", "grass", "window", "pole", "sign", "wheel", "hat")
PREPOSITIONS = ("on", "under", "near", "above", "beside")
HUMAN_VERBS = {"ride": "riding", "hold": "holding", "throw": "throwing", "catch": "catching",
               "carry": "carrying"}
PREDICATES = PREPOSITIONS + tuple(HUMAN_VERBS)
COLORS = ("red", "blue", "green", "white", "black", "brown")
SIZES = ("small", "large")
ADJECTIVES = COLORS + SIZES

WIDTH, HEIGHT = 640.0, 480.0
GENERIC = "near"


@dataclass
class ToyCorpus:
    examples: list[TrainingExample]
    lexicon: Lexicon
    vocabulary: Vocabulary
    views: dict[str, list[SceneGraph]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.examples)

    def view(self, name: str) -> list[TrainingExample]:
        """The examples with their graph swapped for another graph view."""
        from .trainer import with_graphs
        return with_graphs(self.examples, self.views[name])

    @property
    def captions(self) -> list[str]:
        return [" ".join(e.captions[0]) for e in self.examples]


def _box(rng, large: bool) -> BBox:
    lo, hi = (0.5, 0.8) if large else (0.1, 0.22)
    w, h = rng.uniform(lo, hi) * WIDTH, rng.uniform(lo, hi) * HEIGHT
    x1, y1 = rng.uniform(0, WIDTH - w), rng.uniform(0, HEIGHT - h)
    return BBox(round(x1, 1), round(y1, 1), round(x1 + w, 1), round(y1 + h, 1), WIDTH, HEIGHT)


def _jitter(rng, b: BBox) -> BBox:
    dx, dy = (b.x2 - b.x1) * 0.04, (b.y2 - b.y1) * 0.04
    x1 = min(max(0.0, b.x1 + rng.uniform(-dx, dx)), b.x2 - 1)
    y1 = min(max(0.0, b.y1 + rng.uniform(-dy, dy)), b.y2 - 1)
    return BBox(round(x1, 1), round(y1, 1), b.x2, b.y2, WIDTH, HEIGHT)


def _phrase(label: str, color: str | None, size: str | None) -> list[str]:
    return ["a"] + ([size] if size else []) + ([color] if color else []) + [label]


def _example(seed: int, i: int):
    rng = make_rng(derive_seed(seed, "toy", i))
    k = int(rng.integers(2, 5))
    labels = [str(x) for x in rng.choice(NOUNS[1:], size=k, replace=False)]
    if rng.random() < 0.5:
        labels[0] = "person"
    pairs = [(0, 1)]
    if k >= 3 and rng.random() < 0.5:
        options = [(a, b) for a in range(k) for b in range(k)
                   if a != b and {a, b} != {0, 1}]
        pairs.append(options[int(rng.integers(len(options)))])
    salient = {x for p in pairs for x in p}
    large = [bool(rng.random() < 0.5) if j in salient else False for j in range(k)]
    boxes = [_box(rng, big) for big in large]
    colors = [str(rng.choice(COLORS)) if rng.random() < 0.7 else None for _ in range(k)]
    conf = [round(float(rng.uniform(0.55, 0.99)), 3) for _ in range(k)]
    preds = []
    for s, _ in pairs:
        if labels[s] == "person":
            preds.append(str(rng.choice(list(HUMAN_VERBS))))
        else:
            preds.append(str(rng.choice(PREPOSITIONS)))

    # caption: clauses in a label-determined order
    order = sorted(range(len(pairs)), key=lambda r: (labels[pairs[r][0]], preds[r],
                                                     labels[pairs[r][1]]))
    words: list[str] = []
    for n, r in enumerate(order):
        s, o = pairs[r]
        if n:
            words.append("and")
        words += _phrase(labels[s], colors[s], SIZES[int(large[s])])
        words.append(HUMAN_VERBS.get(preds[r], preds[r]))
        words += _phrase(labels[o], colors[o], None)

    # raw pseudolabel graph with the usual generator noise
    nodes = []
    for j in range(k):
        attrs = ()
        if colors[j]:
            attrs = (AttributeEntry(colors[j], round(float(rng.uniform(0.92, 0.99)), 3)),)
            if rng.random() < 0.5:
                other = str(rng.choice([c for c in COLORS if c != colors[j]]))
                attrs += (AttributeEntry(other, round(float(rng.uniform(0.3, 0.6)), 3)),)
        nodes.append(ObjectNode(j, labels[j], conf[j], boxes[j], attrs))
    nid = k
    for j in range(k):
        if rng.random() < 0.3:  # duplicate detection, removed by NMS
            nodes.append(ObjectNode(nid, labels[j], round(conf[j] * 0.8, 3), _jitter(rng, boxes[j])))
            nid += 1
    for _ in range(int(rng.integers(0, 3))):  # low-confidence junk
        nodes.append(ObjectNode(nid, str(rng.choice(NOUNS)), round(float(rng.uniform(0.05, 0.2)), 3),
                                _box(rng, False)))
        nid += 1
    edges = {}
    for (s, o), p in zip(pairs, preds):
        pl_pred = GENERIC if p in HUMAN_VERBS else p
        edges[(s, o, pl_pred)] = RelationEdge(s, o, pl_pred,
                                              round(float(rng.uniform(0.5, 0.95)), 3))
    for _ in range(int(rng.integers(0, 3))):  # weak edges, dropped by the threshold
        s, o = (int(x) for x in rng.choice(k, size=2, replace=False))
        p = str(rng.choice(PREPOSITIONS))
        edges.setdefault((s, o, p), RelationEdge(s, o, p, round(float(rng.uniform(0.05, 0.25)), 3)))
    image_id = f"toy{i:05d}"
    raw = SceneGraph(image_id, WIDTH, HEIGHT, tuple(nodes), tuple(edges.values()), "pseudolabel")
    pl = process(raw, PipelineConfig())

    dets = [Detection(labels[j], conf[j], boxes[j]) for j in range(k)]
    infs = [HOIInference(dets[s], p, dets[o]) for (s, o), p in zip(pairs, preds)
            if p in HUMAN_VERBS]
    hoi = build_hoi_graph(image_id, WIDTH, HEIGHT, dets, infs, VerbTables.default(), None)
    vsg = union(pl, hoi)
    return image_id, raw, pl, hoi, vsg, words, rng


def perturb_vsg(graph: SceneGraph, rng, extra_nodes: int = 3) -> SceneGraph:
    """Add non-salient small nodes and connect every ordered pair of nodes."""
    present = {n.label for n in graph.nodes}
    pool = [x for x in NOUNS if x not in present]
    nodes = list(graph.nodes)
    nid = max((n.id for n in nodes), default=-1) + 1
    for label in rng.choice(pool, size=min(extra_nodes, len(pool)), replace=False):
        nodes.append(ObjectNode(nid, str(label), 0.5, _box(rng, False)))
        nid += 1
    linked = {(e.subject_id, e.object_id) for e in graph.edges}
    edges = list(graph.edges)
    for a in nodes:
        for b in nodes:
            if a.id != b.id and (a.id, b.id) not in linked:
                edges.append(RelationEdge(a.id, b.id, GENERIC, 0.5))
    return graph.with_parts(nodes=nodes, edges=edges)


def make_toy_corpus(seed: int = 1, n: int = 20) -> ToyCorpus:
    """Deterministic toy dataset of ``n`` examples.

    Views: ``raw`` (noisy pseudolabels), ``pseudolabel`` (cleaned), ``hoi``,
    ``vsg`` (union, the default training graph), ``tsg`` (parsed caption) and
    ``vsg_perturbed`` (extra nodes and exhaustive edges).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    lexicon = Lexicon.default()
    examples = []
    views: dict[str, list[SceneGraph]] = {k: [] for k in
                                          ("raw", "pseudolabel", "hoi", "vsg", "tsg",
                                           "vsg_perturbed")}
    for i in range(n):
        image_id, raw, pl, hoi, vsg, words, rng = _example(seed, i)
        caption = " ".join(words)
        views["raw"].append(raw)
        views["pseudolabel"].append(pl)
        views["hoi"].append(hoi)
        views["vsg"].append(vsg)
        views["tsg"].append(parse_caption(caption, lexicon, image_id))
        views["vsg_perturbed"].append(perturb_vsg(vsg, rng))
        examples.append(TrainingExample(vsg, [words]))
    vocab = Vocabulary(t for e in examples for ref in e.captions for t in ref)
    return ToyCorpus(examples, lexicon, vocab, views)
