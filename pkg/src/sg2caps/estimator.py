"""Scikit-learn style front end for the scene-graph captioner."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .metrics import EvalCorpus, cider_d
from .model import CaptionModel, ModelConfig, build_vocabularies
from .trainer import TrainConfig, TrainingExample, predict_tokens, train
from .validation import check_captions, check_global_features, check_graphs


class SceneGraphCaptioner(BaseEstimator):
    """Caption images from their scene graphs.

    ``fit(X, y)`` takes a list of scene graphs (``SceneGraph`` or JSON dicts)
    and, per graph, one caption string or a list of 1..5 references. Training
    runs ``xe_iterations`` cross-entropy steps followed by
    ``scst_iterations`` self-critical steps.
    """

    def __init__(self, d=128, H=512, E=128, max_len=16, use_boxes=True, use_summary=False,
                 attend_relations=False, batch_size=300, lr=5e-4, lr_decay=0.8,
                 decay_every=3, xe_iterations=8500, scst_iterations=0, scst_lr=None,
                 seed=0):
        self.d = d
        self.H = H
        self.E = E
        self.max_len = max_len
        self.use_boxes = use_boxes
        self.use_summary = use_summary
        self.attend_relations = attend_relations
        self.batch_size = batch_size
        self.lr = lr
        self.lr_decay = lr_decay
        self.decay_every = decay_every
        self.xe_iterations = xe_iterations
        self.scst_iterations = scst_iterations
        self.scst_lr = scst_lr
        self.seed = seed

    def _examples(self, X, y, global_features):
        graphs = check_graphs(X)
        caps = check_captions(y, len(graphs)) if y is not None else [[["?"]]] * len(graphs)
        feats = check_global_features(global_features, len(graphs))
        if feats is None:
            feats = [None] * len(graphs)
        return [TrainingExample(g, c, f) for g, c, f in zip(graphs, caps, feats)]

    def fit(self, X, y, global_features=None):
        data = self._examples(X, y, global_features)
        if not data:
            raise ValueError("cannot fit on zero graphs")
        if self.use_summary and data[0].global_feature is None:
            raise ValueError("use_summary=True needs global_features")
        vocabs = build_vocabularies([e.graph for e in data], [e.captions for e in data])
        cfg = ModelConfig(self.d, self.H, self.E, self.max_len, self.use_boxes,
                          self.use_summary, self.attend_relations)
        self.model_ = CaptionModel(cfg, vocabs, seed=self.seed)
        base = TrainConfig(batch_size=self.batch_size, lr=self.lr, lr_decay=self.lr_decay,
                           decay_every=self.decay_every, xe_iterations=self.xe_iterations,
                           scst_iterations=self.scst_iterations, seed=self.seed)
        self.curve_ = train(data, self.model_, base).curve
        if self.scst_iterations:
            scst = TrainConfig(**{**base.to_dict(), "mode": "scst",
                                  "lr": self.lr if self.scst_lr is None else self.scst_lr})
            self.curve_ += train(data, self.model_, scst).curve
        self.n_features_in_ = 1
        return self

    def predict_tokens(self, X, global_features=None) -> list[list[str]]:
        check_is_fitted(self, "model_")
        return predict_tokens(self._examples(X, None, global_features), self.model_)

    def predict(self, X, global_features=None) -> np.ndarray:
        return np.array([" ".join(t) for t in self.predict_tokens(X, global_features)],
                        dtype=object)

    def score(self, X, y, global_features=None) -> float:
        """Corpus CIDEr-D of greedy captions against ``y``."""
        data = self._examples(X, y, global_features)
        cands = predict_tokens(data, self.model_)
        corpus = EvalCorpus([(str(i), c, e.captions) for i, (c, e) in enumerate(zip(cands, data))])
        return cider_d(corpus)[0]
