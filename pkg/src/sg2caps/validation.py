"""Input validation helpers shared by the estimators and the CLI."""
from __future__ import annotations

import re

import numpy as np

from .graph import GraphError, SceneGraph, graph_from_dict, validate

GLOBAL_FEATURE_DIM = 256

_PUNCT = re.compile(r"[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Normative tokenizer: lowercase, strip punctuation, split on whitespace."""
    return _PUNCT.sub(" ", text.lower()).split()


def check_graph(g) -> SceneGraph:
    if isinstance(g, dict):
        g = graph_from_dict(g)
    if not isinstance(g, SceneGraph):
        raise TypeError(f"expected SceneGraph or dict, got {type(g).__name__}")
    report = validate(g)
    if not report.ok:
        raise GraphError(f"graph {g.image_id!r} invalid: " + "; ".join(report.violations))
    return g


def check_graphs(X) -> list[SceneGraph]:
    if isinstance(X, (SceneGraph, dict)):
        raise TypeError("expected a sequence of graphs, got a single graph")
    return [check_graph(g) for g in X]


def check_captions(y, n_samples: int) -> list[list[list[str]]]:
    """Normalize captions to ``[example][reference][token]``.

    Each entry is either one caption string or a list of 1..5 references,
    each reference a string or an already tokenized list of words.
    """
    if len(y) != n_samples:
        raise ValueError(f"got {len(y)} caption entries for {n_samples} graphs")
    out = []
    for k, refs in enumerate(y):
        if isinstance(refs, str):
            refs = [refs]
        norm = [tokenize(r) if isinstance(r, str) else [str(t).lower() for t in r] for r in refs]
        norm = [r for r in norm if r]
        if not 1 <= len(norm) <= 5:
            raise ValueError(f"example {k}: need 1..5 nonempty captions, got {len(norm)}")
        out.append(norm)
    return out


def check_global_features(features, n_samples: int):
    if features is None:
        return None
    arr = np.asarray(features, dtype=np.float64)
    if arr.shape != (n_samples, GLOBAL_FEATURE_DIM):
        raise ValueError(
            f"global features must have shape ({n_samples}, {GLOBAL_FEATURE_DIM}), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("global features contain non-finite values")
    return arr
