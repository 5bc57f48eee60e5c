"""Caption images from scene graphs.

The package covers the whole path from detector output to captions:
cleaning pseudolabel graphs, merging human-object interaction graphs,
encoding graphs with a small graph network, decoding with an attention
LSTM, and scoring with BLEU, ROUGE-L and CIDEr-D. Everything runs on a
float64 numpy autodiff engine.
"""
from .decoder import greedy_decode, log_prob, sample_decode
from .estimator import SceneGraphCaptioner
from .graph import (AttributeEntry, BBox, GraphError, ObjectNode, RelationEdge, SceneGraph,
                    Vocabulary, union, validate)
from .hoi import HOIGraphBuilder, build_hoi_graph
from .metrics import EvalCorpus, bleu, cider_d, evaluate_corpus, rouge_l
from .model import CaptionModel, ModelConfig
from .pseudolabel import PipelineConfig, PseudolabelCleaner, process
from .toy import make_toy_corpus
from .trainer import TrainConfig, TrainingExample, train
from .tsg import Lexicon, TSGParser, parse_caption

__version__ = "0.1.0"

__all__ = [
    "AttributeEntry", "BBox", "CaptionModel", "EvalCorpus", "GraphError", "HOIGraphBuilder",
    "Lexicon", "ModelConfig", "ObjectNode", "PipelineConfig", "PseudolabelCleaner",
    "RelationEdge", "SceneGraph", "SceneGraphCaptioner", "TSGParser", "TrainConfig",
    "TrainingExample", "Vocabulary", "bleu", "build_hoi_graph", "cider_d", "evaluate_corpus",
    "greedy_decode", "log_prob", "make_toy_corpus", "parse_caption", "process", "rouge_l",
    "sample_decode", "train", "union", "validate",
]
