"""Encoder + decoder bundle with vocabularies, parameter counting and checkpoints."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .decoder import DecoderParams, greedy_decode_batch
from .encoder import EncodedGraph, EncoderParams, GraphBatch, encode_batch
from .graph import SceneGraph, Vocabulary
from .nn import Parameter, derive_seed, load_arrays, make_rng, save_arrays

__all__ = ["ModelConfig", "CaptionModel", "build_vocabularies"]


@dataclass(frozen=True)
class ModelConfig:
    d: int = 128
    H: int = 512
    E: int = 128
    max_len: int = 16
    use_boxes: bool = True
    use_summary: bool = False
    attend_relations: bool = False

    def __post_init__(self):
        if min(self.d, self.H, self.E, self.max_len) < 1:
            raise ValueError("model dimensions must be positive")


def build_vocabularies(graphs: Sequence[SceneGraph], captions) -> dict[str, Vocabulary]:
    """Word, object, attribute and relation vocabularies in first-seen order."""
    words = Vocabulary(t for refs in captions for ref in refs for t in ref)
    objs, attrs, rels = Vocabulary(), Vocabulary(), Vocabulary()
    for g in graphs:
        for n in sorted(g.nodes, key=lambda n: n.id):
            objs.add(n.label)
            for a in n.attributes:
                attrs.add(a.label)
        for e in g.edges:
            rels.add(e.predicate)
    return {"words": words, "objects": objs, "attributes": attrs, "relations": rels}


class CaptionModel:
    """Scene-graph captioner: graph encoder, attention decoder and vocabularies.

    Encoder and decoder draw their initial weights from separate seeded
    streams, so toggling optional encoder parts leaves the rest unchanged.
    """

    def __init__(self, config: ModelConfig, vocabs: dict[str, Vocabulary], seed: int = 0):
        self.config = config
        self.vocabs = vocabs
        self.seed = seed
        self.encoder = EncoderParams(config.d, len(vocabs["objects"]), len(vocabs["attributes"]),
                                     len(vocabs["relations"]), make_rng(derive_seed(seed, "enc")),
                                     use_boxes=config.use_boxes, use_summary=config.use_summary)
        self.decoder = DecoderParams(len(vocabs["words"]), config.d, config.H, config.E,
                                     make_rng(derive_seed(seed, "dec")), config.max_len)

    @property
    def words(self) -> Vocabulary:
        return self.vocabs["words"]

    def parameters(self) -> list[Parameter]:
        return self.encoder.parameters() + self.decoder.parameters()

    def parameter_count(self) -> dict[str, int]:
        enc = sum(p.data.size for p in self.encoder.parameters())
        dec = sum(p.data.size for p in self.decoder.parameters())
        return {"encoder": int(enc), "decoder": int(dec), "total": int(enc + dec)}

    def batch(self, graphs: Sequence[SceneGraph], global_features=None) -> GraphBatch:
        v = self.vocabs
        return GraphBatch.from_graphs(graphs, v["objects"], v["attributes"], v["relations"],
                                      global_features)

    def encode(self, graphs: Sequence[SceneGraph], global_features=None) -> EncodedGraph:
        return encode_batch(self.batch(graphs, global_features), self.encoder,
                            self.config.attend_relations)

    def greedy(self, graphs: Sequence[SceneGraph], global_features=None) -> list[list[str]]:
        ids = greedy_decode_batch(self.encode(graphs, global_features), self.decoder)
        return [self.words.decode(s) for s in ids]

    # persistence -------------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in arrays:
                raise KeyError(f"checkpoint lacks parameter {p.name}")
            if arrays[p.name].shape != p.data.shape:
                raise ValueError(f"{p.name}: checkpoint shape {arrays[p.name].shape} "
                                 f"!= model shape {p.data.shape}")
            p.data[...] = arrays[p.name]

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"config": asdict(self.config), "seed": self.seed,
                "vocabs": {k: v.tokens for k, v in self.vocabs.items()}}
        meta.update(extra_meta or {})
        save_arrays(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path) -> "CaptionModel":
        arrays, meta = load_arrays(path)
        vocabs = {k: Vocabulary.from_tokens(v) for k, v in meta["vocabs"].items()}
        model = cls(ModelConfig(**meta["config"]), vocabs, meta.get("seed", 0))
        model.load_state_dict(arrays)
        return model
