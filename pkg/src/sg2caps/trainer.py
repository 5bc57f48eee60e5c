"""Cross-entropy and self-critical training loops plus evaluation."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .decoder import greedy_decode_batch, sample_decode_batch, sequence_nll
from .graph import SceneGraph
from .metrics import CiderD, EvalCorpus, evaluate_corpus
from .model import CaptionModel
from .nn import Adam, NonFiniteError, backward, derive_seed, make_rng, no_grad
from .validation import GLOBAL_FEATURE_DIM


class TrainingError(RuntimeError):
    """Numerical failure during training (non-finite loss or gradient)."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 300
    lr: float = 5e-4
    lr_decay: float = 0.8
    decay_every: int = 3           # epochs between decays
    xe_iterations: int = 8500
    scst_iterations: int = 0
    seed: int = 0
    mode: str = "xe"
    accumulate: int = 1

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.batch_size < 1 or self.accumulate < 1 or self.decay_every < 1:
            raise ValueError("batch_size, accumulate and decay_every must be >= 1")
        if self.mode not in ("xe", "scst"):
            raise ValueError(f"mode must be 'xe' or 'scst', got {self.mode!r}")

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        """Settings for the 20-example toy corpus.

        With a single batch per epoch the per-epoch decay would vanish the
        learning rate within a few hundred steps, so the period is stretched.
        """
        base = dict(batch_size=20, lr=5e-3, lr_decay=0.8, decay_every=500,
                    xe_iterations=2000, scst_iterations=500, seed=1)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingExample:
    graph: SceneGraph
    captions: list[list[str]]
    global_feature: np.ndarray | None = None

    def __post_init__(self):
        if not 1 <= len(self.captions) <= 5 or not all(self.captions):
            raise ValueError(f"{self.graph.image_id}: need 1..5 nonempty captions")
        if self.global_feature is not None:
            gf = np.asarray(self.global_feature, dtype=np.float64)
            if gf.shape != (GLOBAL_FEATURE_DIM,):
                raise ValueError(f"global feature must have length {GLOBAL_FEATURE_DIM}")
            self.global_feature = gf


def _features(examples: Sequence[TrainingExample]):
    have = [e.global_feature is not None for e in examples]
    if not any(have):
        return None
    if not all(have):
        raise ValueError("either every example or none must carry a global feature")
    return np.stack([e.global_feature for e in examples])


def encode_examples(examples: Sequence[TrainingExample], model: CaptionModel):
    return model.encode([e.graph for e in examples], _features(examples))


# losses ----------------------------------------------------------------------

def xe_loss(examples: Sequence[TrainingExample], model: CaptionModel, rng):
    """Per-token cross-entropy of one randomly chosen caption per example."""
    if isinstance(examples, TrainingExample):
        examples = [examples]
    seqs = []
    for e in examples:
        ref = e.captions[int(rng.integers(len(e.captions)))]
        seqs.append(model.words.encode(ref))
    total, n_tok = sequence_nll(encode_examples(examples, model), model.decoder, seqs)
    return total * (1.0 / n_tok)


@dataclass
class SCSTResult:
    loss: object                   # Tensor
    reward_sample: np.ndarray
    reward_greedy: np.ndarray
    samples: list[list[int]]


def scst_step(examples: Sequence[TrainingExample], model: CaptionModel, rng,
              scorer: CiderD) -> SCSTResult:
    """Self-critical pseudo-loss, ``-(r(sample) - r(greedy)) * log p(sample)``, batch mean.

    Rewards are CIDEr-D against each example's references with the document
    frequencies of ``scorer`` (fitted once on the training references).
    """
    if isinstance(examples, TrainingExample):
        examples = [examples]
    B = len(examples)
    with no_grad():
        enc = encode_examples(examples, model)
        greedy = greedy_decode_batch(enc, model.decoder)
        samples, _, ended = sample_decode_batch(enc, model.decoder, rng)
    words = model.words
    r_s = np.array([scorer.score(words.decode(s), e.captions) for s, e in zip(samples, examples)])
    r_g = np.array([scorer.score(words.decode(g), e.captions) for g, e in zip(greedy, examples)])
    adv = (r_s - r_g) / B
    loss, _ = sequence_nll(encode_examples(examples, model), model.decoder, samples,
                           append_eos=list(ended), weights=adv)
    return SCSTResult(loss, r_s, r_g, samples)


# training loop ---------------------------------------------------------------

@dataclass
class TrainResult:
    curve: list[dict] = field(default_factory=list)
    iterations: int = 0
    stopped_early: bool = False


class _Batches:
    """Seeded per-epoch shuffles; an epoch is one pass over the dataset."""

    def __init__(self, n: int, batch_size: int, seed: int, tag: str):
        self.n, self.bs, self.seed, self.tag = n, min(batch_size, n), seed, tag
        self.per_epoch = math.ceil(n / self.bs)
        self._epoch, self._perm = -1, None

    def get(self, k: int) -> tuple[int, np.ndarray]:
        epoch, j = divmod(k, self.per_epoch)
        if epoch != self._epoch:
            self._perm = make_rng(derive_seed(self.seed, self.tag, epoch)).permutation(self.n)
            self._epoch = epoch
        return epoch, self._perm[j * self.bs:(j + 1) * self.bs]


def learning_rate(config: TrainConfig, epoch: int) -> float:
    return config.lr * config.lr_decay ** (epoch // config.decay_every)


def train(dataset: Sequence[TrainingExample], model: CaptionModel, config: TrainConfig,
          curve_path=None, monitor: Callable[[int, CaptionModel, dict], bool] | None = None,
          scorer: CiderD | None = None) -> TrainResult:
    """Run ``config.mode`` training in place on ``model``.

    ``monitor(iteration, model, row)`` is called after each update; returning
    True stops training early. Raises TrainingError on a non-finite loss.
    """
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    xe = config.mode == "xe"
    iterations = config.xe_iterations if xe else config.scst_iterations
    params = model.parameters()
    opt = Adam(params)
    batches = _Batches(len(dataset), config.batch_size, config.seed, config.mode)
    rng = make_rng(derive_seed(config.seed, config.mode, "draws"))
    if not xe and scorer is None:
        scorer = CiderD().fit([e.captions for e in dataset])
    result = TrainResult()
    k = 0
    for it in range(iterations):
        lr = 0.0
        row = {"iteration": it + 1, "mode": config.mode}
        losses, rewards = [], []
        for _ in range(config.accumulate):
            epoch, idx = batches.get(k)
            k += 1
            lr = learning_rate(config, epoch)
            batch = [dataset[i] for i in idx]
            try:
                if xe:
                    loss = xe_loss(batch, model, rng)
                else:
                    res = scst_step(batch, model, rng, scorer)
                    loss = res.loss
                    rewards.append(float(res.reward_greedy.mean()))
                    row["reward_sample"] = float(res.reward_sample.mean())
                backward(loss)
            except NonFiniteError as exc:
                for p in params:
                    p.zero_grad()
                raise TrainingError(f"non-finite value at iteration {it + 1}, "
                                    f"batch indices {idx.tolist()}: {exc}") from exc
            losses.append(float(loss.data))
        for p in params:
            if not np.isfinite(p.grad).all():
                raise TrainingError(f"non-finite gradient for {p.name} at iteration {it + 1}")
        opt.step(lr)
        row["loss"] = float(np.mean(losses))
        row["reward"] = float(np.mean(rewards)) if rewards else ""
        row.setdefault("reward_sample", "")
        row["lr"] = lr
        result.curve.append(row)
        result.iterations = it + 1
        if monitor is not None and monitor(it + 1, model, row):
            result.stopped_early = True
            break
    if curve_path is not None:
        write_curve(curve_path, result.curve)
    return result


def write_curve(path, rows: Sequence[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = ["iteration", "mode", "loss", "reward", "reward_sample", "lr"]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c, "") for c in cols})


# evaluation ------------------------------------------------------------------

def predict_tokens(examples: Sequence[TrainingExample], model: CaptionModel,
                   chunk: int = 64) -> list[list[str]]:
    out = []
    for s in range(0, len(examples), chunk):
        part = examples[s:s + chunk]
        ids = greedy_decode_batch(encode_examples(part, model), model.decoder)
        out += [model.words.decode(x) for x in ids]
    return out


def evaluate(dataset: Sequence[TrainingExample], model: CaptionModel) -> dict:
    """Greedy-caption every example and score against its references."""
    cands = predict_tokens(dataset, model)
    corpus = EvalCorpus([(e.graph.image_id, c, e.captions) for e, c in zip(dataset, cands)])
    report = evaluate_corpus(corpus)
    report["captions"] = {e.graph.image_id: " ".join(c) for e, c in zip(dataset, cands)}
    return report


def exact_match_rate(dataset: Sequence[TrainingExample], model: CaptionModel) -> float:
    cands = predict_tokens(dataset, model)
    return float(np.mean([c in e.captions for e, c in zip(dataset, cands)]))


def full_xe_loss(dataset: Sequence[TrainingExample], model: CaptionModel) -> float:
    """Per-token cross-entropy over every reference of every example."""
    seqs, idx = [], []
    for i, e in enumerate(dataset):
        for ref in e.captions:
            seqs.append(model.words.encode(ref))
            idx.append(i)
    with no_grad():
        enc = encode_examples([dataset[i] for i in idx], model)
        total, n = sequence_nll(enc, model.decoder, seqs)
    return float(total.data) / n


def with_graphs(dataset: Sequence[TrainingExample], graphs: Sequence[SceneGraph]):
    if len(graphs) != len(dataset):
        raise ValueError("graph list and dataset differ in length")
    return [replace(e, graph=g) for e, g in zip(dataset, graphs)]
