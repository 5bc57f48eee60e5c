"""Cleanup of raw black-box scene-graph output into caption-ready pseudolabels."""
from __future__ import annotations

from dataclasses import dataclass, replace

from sklearn.base import BaseEstimator, TransformerMixin

from .graph import BBox, GraphError, SceneGraph, box_iou
from .validation import check_graphs


@dataclass(frozen=True)
class PipelineConfig:
    obj_conf_min: float = 0.25
    nms_iou: float = 0.30
    rel_conf_min: float = 0.30
    attr_conf_min: float = 0.90
    class_aware_nms: bool = True
    # keep an attribute whose confidence equals attr_conf_min
    attr_keep_equal: bool = True

    def __post_init__(self):
        for name in ("obj_conf_min", "nms_iou", "rel_conf_min", "attr_conf_min"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def iou(a: BBox, b: BBox) -> float:
    return box_iou(a, b)


def _drop_nodes(graph: SceneGraph, keep_ids: set[int]) -> SceneGraph:
    nodes = [n for n in graph.nodes if n.id in keep_ids]
    edges = [e for e in graph.edges if e.subject_id in keep_ids and e.object_id in keep_ids]
    return graph.with_parts(nodes, edges)


def filter_objects(graph: SceneGraph, cfg: PipelineConfig = PipelineConfig()) -> SceneGraph:
    keep = {n.id for n in graph.nodes if n.confidence >= cfg.obj_conf_min}
    return _drop_nodes(graph, keep)


def nms(graph: SceneGraph, cfg: PipelineConfig = PipelineConfig()) -> SceneGraph:
    """Greedy per-class non-maximum suppression over node boxes.

    Nodes are visited by descending confidence (lower id first on ties); a
    node is suppressed when its IoU with an already kept node of the same
    class exceeds ``cfg.nms_iou``.
    """
    for n in graph.nodes:
        if n.box is None:
            raise GraphError(f"node {n.id} has no box; NMS needs boxes")
    order = sorted(graph.nodes, key=lambda n: (-n.confidence, n.id))
    kept = []
    for n in order:
        rivals = (k for k in kept if not cfg.class_aware_nms or k.label == n.label)
        if all(box_iou(k.box, n.box) <= cfg.nms_iou for k in rivals):
            kept.append(n)
    return _drop_nodes(graph, {n.id for n in kept})


def filter_relations(graph: SceneGraph, cfg: PipelineConfig = PipelineConfig()) -> SceneGraph:
    return graph.with_parts(edges=[e for e in graph.edges if e.confidence >= cfg.rel_conf_min])


def prune_attributes(graph: SceneGraph, cfg: PipelineConfig = PipelineConfig()) -> SceneGraph:
    """Keep at most the single best attribute per node, if confident enough."""
    nodes = []
    for n in graph.nodes:
        attrs = ()
        if n.attributes:
            best = min(n.attributes, key=lambda a: (-a.confidence, a.label))
            ok = (best.confidence >= cfg.attr_conf_min if cfg.attr_keep_equal
                  else best.confidence > cfg.attr_conf_min)
            if ok:
                attrs = (best,)
        nodes.append(replace(n, attributes=attrs))
    return graph.with_parts(nodes)


def process(graph: SceneGraph, cfg: PipelineConfig = PipelineConfig()) -> SceneGraph:
    """filter_objects -> nms -> filter_relations -> prune_attributes."""
    g = filter_objects(graph, cfg)
    g = nms(g, cfg)
    g = filter_relations(g, cfg)
    return prune_attributes(g, cfg)


class PseudolabelCleaner(BaseEstimator, TransformerMixin):
    """Stateless transformer applying :func:`process` to each graph.

    Parameters mirror :class:`PipelineConfig`, so the cleaner can sit in an
    sklearn ``Pipeline`` and take part in ``get_params``/``set_params``.
    """

    def __init__(self, obj_conf_min=0.25, nms_iou=0.30, rel_conf_min=0.30,
                 attr_conf_min=0.90, class_aware_nms=True):
        self.obj_conf_min = obj_conf_min
        self.nms_iou = nms_iou
        self.rel_conf_min = rel_conf_min
        self.attr_conf_min = attr_conf_min
        self.class_aware_nms = class_aware_nms

    def _config(self) -> PipelineConfig:
        return PipelineConfig(self.obj_conf_min, self.nms_iou, self.rel_conf_min,
                              self.attr_conf_min, self.class_aware_nms)

    def fit(self, X, y=None):
        self.config_ = self._config()
        return self

    def transform(self, X):
        graphs = check_graphs(X)
        cfg = getattr(self, "config_", None) or self._config()
        return [process(g, cfg) for g in graphs]
