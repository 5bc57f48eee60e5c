"""Caption metrics on pre-tokenized text: BLEU, ROUGE-L and CIDEr-D.

Inputs are token lists produced by :func:`sg2caps.validation.tokenize`, so
candidates and references always share one tokenizer.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

Tokens = Sequence[str]

CIDER_N = 4
CIDER_SIGMA = 6.0
CIDER_SCALE = 10.0
ROUGE_BETA = 1.2


@dataclass(frozen=True)
class EvalEntry:
    image_id: str
    candidate: tuple[str, ...]
    references: tuple[tuple[str, ...], ...]


class EvalCorpus:
    """A nonempty list of (image_id, candidate, references) entries."""

    def __init__(self, entries):
        norm = []
        for e in entries:
            if not isinstance(e, EvalEntry):
                image_id, cand, refs = e
                e = EvalEntry(str(image_id), tuple(cand), tuple(tuple(r) for r in refs))
            if not e.references:
                raise ValueError(f"entry {e.image_id!r} has no references")
            norm.append(e)
        if not norm:
            raise ValueError("an evaluation corpus needs at least one entry")
        self.entries: list[EvalEntry] = norm

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# BLEU ------------------------------------------------------------------------

def bleu(corpus: EvalCorpus, n: int = 4) -> float:
    """Corpus BLEU@n with uniform weights and a closest-reference brevity penalty."""
    if n not in (1, 2, 3, 4):
        raise ValueError(f"BLEU order must be 1..4, got {n}")
    match = np.zeros(n)
    total = np.zeros(n)
    c_len = r_len = 0
    for e in corpus:
        c = e.candidate
        c_len += len(c)
        # closest reference length, ties broken toward the shorter one
        r_len += min((abs(len(r) - len(c)), len(r)) for r in e.references)[1]
        for k in range(1, n + 1):
            cand = ngrams(c, k)
            best: Counter = Counter()
            for r in e.references:
                best |= ngrams(r, k)
            match[k - 1] += sum(min(v, best[g]) for g, v in cand.items())
            total[k - 1] += max(len(c) - k + 1, 0)
    if c_len == 0 or (match == 0).any():
        return 0.0
    log_p = np.log(match / total).mean()
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return float(bp * math.exp(log_p))


# ROUGE-L ---------------------------------------------------------------------

def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_entry(candidate: Tokens, references: Sequence[Tokens], beta: float = ROUGE_BETA) -> float:
    best = 0.0
    for r in references:
        lcs = lcs_length(candidate, r)
        if lcs == 0:
            continue
        p, rec = lcs / len(candidate), lcs / len(r)
        best = max(best, (1 + beta ** 2) * p * rec / (rec + beta ** 2 * p))
    return best


def rouge_l(corpus: EvalCorpus) -> float:
    """Mean over entries of the best LCS F-measure against any reference."""
    return float(np.mean([rouge_l_entry(e.candidate, e.references) for e in corpus]))


# CIDEr-D ---------------------------------------------------------------------

class CiderD:
    """CIDEr-D with document frequencies fixed from a reference corpus.

    ``fit`` counts, for every n-gram, how many images have it in at least one
    reference. Scoring then works per image, so a training-set table can be
    reused as a reward function.
    """

    def __init__(self, n: int = CIDER_N, sigma: float = CIDER_SIGMA):
        self.n = n
        self.sigma = sigma

    def fit(self, references: Sequence[Sequence[Tokens]]) -> "CiderD":
        df: Counter = Counter()
        for refs in references:
            grams = set()
            for r in refs:
                for k in range(1, self.n + 1):
                    grams.update(ngrams(r, k))
            df.update(grams)
        self.df_ = df
        self.n_images_ = len(references)
        self.log_n_ = math.log(float(self.n_images_)) if self.n_images_ else 0.0
        return self

    def _vec(self, tokens: Tokens):
        vecs, norms = [], []
        for k in range(1, self.n + 1):
            v = {g: tf * (self.log_n_ - math.log(max(1.0, self.df_.get(g, 0.0))))
                 for g, tf in ngrams(tokens, k).items()}
            vecs.append(v)
            norms.append(math.sqrt(sum(x * x for x in v.values())))
        return vecs, norms

    def _sim(self, vh, nh, lh, vr, nr, lr) -> np.ndarray:
        delta = float(lh - lr)
        out = np.zeros(self.n)
        for k in range(self.n):
            val = sum(min(x, vr[k].get(g, 0.0)) * vr[k].get(g, 0.0) for g, x in vh[k].items())
            if nh[k] != 0 and nr[k] != 0:
                val /= nh[k] * nr[k]
            else:
                val = 0.0
            out[k] = val * math.exp(-delta * delta / (2 * self.sigma ** 2))
        return out

    def score(self, candidate: Tokens, references: Sequence[Tokens]) -> float:
        vh, nh = self._vec(candidate)
        total = np.zeros(self.n)
        for r in references:
            vr, nr = self._vec(r)
            total += self._sim(vh, nh, len(candidate), vr, nr, len(r))
        return float(np.mean(total / len(references)) * CIDER_SCALE)


def cider_d(corpus: EvalCorpus, scorer: CiderD | None = None) -> tuple[float, dict[str, float]]:
    """Corpus CIDEr-D (mean of per-image scores) and the per-image scores.

    Document frequencies come from the corpus's own references unless a
    fitted ``scorer`` is supplied.
    """
    if scorer is None:
        scorer = CiderD().fit([e.references for e in corpus])
    per = [scorer.score(e.candidate, e.references) for e in corpus]
    per_image = {}
    for e, s in zip(corpus, per):
        per_image[e.image_id] = s
    return float(np.mean(per)), per_image


# report ----------------------------------------------------------------------

def evaluate_corpus(corpus: EvalCorpus) -> dict:
    """Report dict: B1, B4, R, C plus per-image ROUGE-L and CIDEr-D.

    METEOR and SPICE need external linguistic resources and are listed as absent.
    """
    c, per_c = cider_d(corpus)
    ids = [e.image_id for e in corpus]
    if len(set(ids)) != len(ids):
        raise ValueError("image ids in an evaluation corpus must be unique")
    per_image = {e.image_id: {"C": per_c[e.image_id],
                              "R": rouge_l_entry(e.candidate, e.references)}
                 for e in corpus}
    return {"B1": bleu(corpus, 1), "B4": bleu(corpus, 4), "R": rouge_l(corpus), "C": c,
            "per_image": per_image, "absent": ["METEOR", "SPICE"]}
