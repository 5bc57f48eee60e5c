"""Graph-convolutional encoder over labelled scene graphs.

Five one-layer ReLU functions turn label embeddings into context-aware
vectors: relation triplets (``g_r``), attributes (``g_a``), boxes (``g_b``)
and subject/object roles (``g_s``/``g_o``). Per object node the object,
box and attribute vectors are summed; an optional projected global image
feature is appended as one extra "summary" vector.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import SceneGraph, Vocabulary
from .nn import (Parameter, Tensor, concat, embedding_lookup, linear, relu, reshape,
                 segment_sum, uniform_init)
from .validation import GLOBAL_FEATURE_DIM

OBJECT, RELATION, SUMMARY = "object", "relation", "summary"


class EncoderParams:
    """Embedding tables and the five graph-convolution layers."""

    def __init__(self, d: int, n_obj: int, n_attr: int, n_rel: int, rng,
                 use_boxes: bool = True, use_summary: bool = False):
        self.d = d
        self.use_boxes = use_boxes
        self.use_summary = use_summary

        def table(name, rows):
            return Parameter(name, uniform_init(rng, (rows, d), d))

        def layer(name, fan_in):
            return (Parameter(f"{name}.W", uniform_init(rng, (d, fan_in), fan_in)),
                    Parameter(f"{name}.b", uniform_init(rng, (d,), fan_in)))

        self.obj_table = table("enc.obj_table", n_obj)
        self.attr_table = table("enc.attr_table", n_attr)
        self.rel_table = table("enc.rel_table", n_rel)
        self.g_r = layer("enc.g_r", 3 * d)
        self.g_a = layer("enc.g_a", 2 * d)
        self.g_s = layer("enc.g_s", 3 * d)
        self.g_o = layer("enc.g_o", 3 * d)
        if use_boxes:
            self.box_proj = layer("enc.box_proj", 5)
            self.g_b = layer("enc.g_b", 2 * d)
        if use_summary:
            self.summary_proj = layer("enc.summary_proj", GLOBAL_FEATURE_DIM)

    def parameters(self) -> list[Parameter]:
        out = [self.obj_table, self.attr_table, self.rel_table,
               *self.g_r, *self.g_a, *self.g_s, *self.g_o]
        if self.use_boxes:
            out += [*self.box_proj, *self.g_b]
        if self.use_summary:
            out += [*self.summary_proj]
        return out


def _g(layer, x: Tensor) -> Tensor:
    return relu(linear(x, *layer))


def rel_embedding(e_subj, e_pred, e_obj, params: EncoderParams) -> Tensor:
    return _g(params.g_r, concat([e_subj, e_pred, e_obj], axis=-1))


def box_features(graph: SceneGraph, node) -> np.ndarray:
    """(x1/W, y1/H, x2/W, y2/H, area/(W*H)) for a node box."""
    b = node.box
    W, H = float(graph.width), float(graph.height)
    return np.array([b.x1 / W, b.y1 / H, b.x2 / W, b.y2 / H, b.area / (W * H)])


@dataclass
class GraphBatch:
    """Index arrays for a batch of graphs, nodes and edges in sorted-id order."""

    n_graphs: int
    node_graph: np.ndarray     # graph of each node
    node_ids: list[list[int]]  # original ids per graph, sorted
    obj_idx: np.ndarray
    box_rows: np.ndarray       # nodes that carry a box
    box_feat: np.ndarray
    attr_node: np.ndarray
    attr_idx: np.ndarray
    edge_sub: np.ndarray
    edge_obj: np.ndarray
    edge_pred: np.ndarray
    edge_graph: np.ndarray
    global_feature: np.ndarray | None

    @property
    def n_nodes(self) -> int:
        return len(self.obj_idx)

    @classmethod
    def from_graphs(cls, graphs: Sequence[SceneGraph], obj_vocab: Vocabulary,
                    attr_vocab: Vocabulary, rel_vocab: Vocabulary, global_features=None):
        node_graph, node_ids, obj_idx = [], [], []
        box_rows, box_feat = [], []
        attr_node, attr_idx = [], []
        e_sub, e_obj, e_pred, e_graph = [], [], [], []
        for gi, g in enumerate(graphs):
            nodes = sorted(g.nodes, key=lambda n: n.id)
            offset = len(obj_idx)
            row = {n.id: offset + k for k, n in enumerate(nodes)}
            node_ids.append([n.id for n in nodes])
            for n in nodes:
                r = row[n.id]
                node_graph.append(gi)
                obj_idx.append(obj_vocab.index.get(n.label, 2))
                if n.box is not None:
                    box_rows.append(r)
                    box_feat.append(box_features(g, n))
                for a in sorted(n.attributes, key=lambda a: a.label):
                    attr_node.append(r)
                    attr_idx.append(attr_vocab.index.get(a.label, 2))
            for e in sorted(g.edges, key=lambda e: (e.subject_id, e.object_id, e.predicate)):
                e_sub.append(row[e.subject_id])
                e_obj.append(row[e.object_id])
                e_pred.append(rel_vocab.index.get(e.predicate, 2))
                e_graph.append(gi)
        ints = lambda xs: np.asarray(xs, dtype=np.int64)
        gf = None
        if global_features is not None:
            gf = np.asarray(global_features, dtype=np.float64).reshape(len(graphs), -1)
            if gf.shape[1] != GLOBAL_FEATURE_DIM:
                raise ValueError(f"global feature length must be {GLOBAL_FEATURE_DIM}, "
                                 f"got {gf.shape[1]}")
        return cls(len(graphs), ints(node_graph), node_ids, ints(obj_idx), ints(box_rows),
                   np.asarray(box_feat, dtype=np.float64).reshape(-1, 5), ints(attr_node),
                   ints(attr_idx), ints(e_sub), ints(e_obj), ints(e_pred), ints(e_graph), gf)


@dataclass
class EncodedGraph:
    """Padded attention targets for a batch: (B, K, d) vectors plus mask/roles."""

    node_vectors: Tensor
    mask: np.ndarray
    node_roles: list[list[str]]

    @property
    def batch_size(self) -> int:
        return self.mask.shape[0]

    def vectors(self, b: int = 0) -> np.ndarray:
        return self.node_vectors.data[b, : int(self.mask[b].sum())]


def encode_batch(batch: GraphBatch, params: EncoderParams,
                 attend_relations: bool = False) -> EncodedGraph:
    d, N, E = params.d, batch.n_nodes, len(batch.edge_sub)
    pieces: list[Tensor] = []
    slot_graph: list[np.ndarray] = []
    roles: list[list[str]] = [[] for _ in range(batch.n_graphs)]

    if N:
        e_o = embedding_lookup(params.obj_table, batch.obj_idx)
        terms: list[Tensor] = []
        if E:
            es = embedding_lookup(e_o, batch.edge_sub)
            eo = embedding_lookup(e_o, batch.edge_obj)
            er = embedding_lookup(params.rel_table, batch.edge_pred)
            trip = concat([es, eo, er], axis=-1)
            n_r = (np.bincount(batch.edge_sub, minlength=N)
                   + np.bincount(batch.edge_obj, minlength=N)).astype(np.float64)
            inv = np.divide(1.0, n_r, out=np.zeros(N), where=n_r > 0)
            x_o = (segment_sum(_g(params.g_s, trip), batch.edge_sub, N)
                   + segment_sum(_g(params.g_o, trip), batch.edge_obj, N)) * inv[:, None]
            terms.append(x_o)
        if params.use_boxes and len(batch.box_rows):
            e_b = linear(Tensor(batch.box_feat), *params.box_proj)
            eo_box = embedding_lookup(e_o, batch.box_rows)
            x_b = _g(params.g_b, concat([eo_box, e_b], axis=-1))
            terms.append(segment_sum(x_b, batch.box_rows, N))
        if len(batch.attr_node):
            ea = embedding_lookup(params.attr_table, batch.attr_idx)
            eo_attr = embedding_lookup(e_o, batch.attr_node)
            n_a = np.bincount(batch.attr_node, minlength=N).astype(np.float64)
            inv = np.divide(1.0, n_a, out=np.zeros(N), where=n_a > 0)
            x_a = segment_sum(_g(params.g_a, concat([eo_attr, ea], axis=-1)),
                              batch.attr_node, N) * inv[:, None]
            terms.append(x_a)
        f = terms[0] if terms else Tensor(np.zeros((N, d)))
        for t in terms[1:]:
            f = f + t
        pieces.append(f)
        slot_graph.append(batch.node_graph)
        for gi in batch.node_graph:
            roles[gi].append(OBJECT)
        if attend_relations and E:
            pieces.append(rel_embedding(es, er, eo, params))
            slot_graph.append(batch.edge_graph)
            for gi in batch.edge_graph:
                roles[gi].append(RELATION)

    if batch.global_feature is not None:
        if not params.use_summary:
            raise ValueError("global features given but the encoder has no summary projection")
        pieces.append(_g(params.summary_proj, Tensor(batch.global_feature)))
        slot_graph.append(np.arange(batch.n_graphs))
        for r in roles:
            r.append(SUMMARY)

    B = batch.n_graphs
    counts = np.array([len(r) for r in roles], dtype=np.int64)
    K = int(counts.max()) if B else 0
    mask = np.arange(K)[None, :] < counts[:, None]
    if K == 0:
        return EncodedGraph(Tensor(np.zeros((B, 0, d))), mask, roles)
    # objects, then relations, then summary, per graph
    owner = np.concatenate(slot_graph)
    kind_rank = np.concatenate([np.full(len(s), k) for k, s in enumerate(slot_graph)])
    order = np.lexsort((np.arange(len(owner)), kind_rank, owner))
    pos = np.empty(len(owner), dtype=np.int64)
    start = np.concatenate([[0], np.cumsum(counts)[:-1]])
    pos[order] = np.arange(len(owner)) - np.repeat(start, counts)
    flat = owner * K + pos
    allv = concat(pieces, axis=0) if len(pieces) > 1 else pieces[0]
    packed = reshape(segment_sum(allv, flat, B * K), (B, K, d))
    return EncodedGraph(packed, mask, roles)


def encode(graph: SceneGraph, params: EncoderParams, vocabs, global_feature=None,
           attend_relations: bool = False) -> EncodedGraph:
    """Encode a single graph; ``vocabs`` is (object, attribute, relation)."""
    gf = None
    if global_feature is not None:
        gf = np.asarray(global_feature, dtype=np.float64)
        if gf.shape != (GLOBAL_FEATURE_DIM,):
            raise ValueError(f"global feature must have length {GLOBAL_FEATURE_DIM}, "
                             f"got shape {gf.shape}")
        gf = gf[None]
    batch = GraphBatch.from_graphs([graph], *vocabs, global_features=gf)
    return encode_batch(batch, params, attend_relations)


# per-node forms, used directly and as a reference for encode_batch ----------

def attr_embedding(e_obj: Tensor, e_attrs: Sequence[Tensor], params: EncoderParams) -> Tensor:
    """Mean of g_a(e_o, e_a) over a node's attributes; zero vector if none."""
    if not e_attrs:
        return Tensor(np.zeros(params.d))
    total = None
    for e_a in e_attrs:
        t = _g(params.g_a, concat([e_obj, e_a], axis=-1))
        total = t if total is None else total + t
    return total * (1.0 / len(e_attrs))


def box_embedding(e_obj: Tensor, box_feat, params: EncoderParams) -> Tensor:
    """g_b(e_o, box_proj(box_feat)); zero vector for a node without a box."""
    if box_feat is None or not params.use_boxes:
        return Tensor(np.zeros(params.d))
    e_b = linear(Tensor(np.asarray(box_feat, dtype=np.float64)), *params.box_proj)
    return _g(params.g_b, concat([e_obj, e_b], axis=-1))


def obj_embedding(e_obj: Tensor, as_subject: Sequence[tuple[Tensor, Tensor]],
                  as_object: Sequence[tuple[Tensor, Tensor]], params: EncoderParams) -> Tensor:
    """Role-aware object vector.

    ``as_subject`` holds (e_object, e_predicate) for edges leaving the node,
    ``as_object`` holds (e_subject, e_predicate) for edges entering it.
    """
    n_r = len(as_subject) + len(as_object)
    if n_r == 0:
        return Tensor(np.zeros(params.d))
    out_sum = in_sum = None
    for e_j, e_r in as_subject:
        t = _g(params.g_s, concat([e_obj, e_j, e_r], axis=-1))
        out_sum = t if out_sum is None else out_sum + t
    for e_k, e_r in as_object:
        t = _g(params.g_o, concat([e_k, e_obj, e_r], axis=-1))
        in_sum = t if in_sum is None else in_sum + t
    total = out_sum if in_sum is None else (in_sum if out_sum is None else out_sum + in_sum)
    return total * (1.0 / n_r)
