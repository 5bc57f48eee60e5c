"""Two-layer attention + language LSTM caption decoder.

Every routine works on a batch: the encoder output is a padded (B, K, d)
tensor with a boolean mask. Emission excludes BOS, so output logits cover
vocabulary indices 1..V-1 and an emitted position ``k`` maps to word ``k+1``.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .encoder import EncodedGraph
from .graph import BOS_ID, EOS_ID
from .nn import (Parameter, Tensor, concat, cross_entropy, embedding_lookup, getitem, linear,
                 lstm_cell, masked_softmax, no_grad, reshape, tanh, tsum, uniform_init)


class DecodeError(ValueError):
    pass


class DecoderParams:
    """Weights of both LSTMs, the attention scorer and the output head."""

    def __init__(self, vocab_size: int, d: int, H: int = 512, E: int = 128, rng=None,
                 max_len: int = 16):
        if min(vocab_size - 1, d, H, E, max_len) < 1:
            raise ValueError("decoder sizes must be positive and the vocabulary must "
                             "contain at least one emittable word")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.V, self.d, self.H, self.E, self.max_len = vocab_size, d, H, E, max_len

        def lstm(name, n_in):
            fan = n_in + H
            b = uniform_init(rng, (4 * H,), fan)
            b[H:2 * H] += 1.0  # forget-gate bias
            return (Parameter(f"{name}.Wx", uniform_init(rng, (4 * H, n_in), fan)),
                    Parameter(f"{name}.Wh", uniform_init(rng, (4 * H, H), fan)),
                    Parameter(f"{name}.b", b))

        self.W_e = Parameter("dec.W_e", uniform_init(rng, (vocab_size, E), E))
        self.att = lstm("dec.att", H + d + E)
        self.lang = lstm("dec.lang", H + d)
        self.w_a = Parameter("dec.w_a", uniform_init(rng, (H,), H))
        self.W_fa = Parameter("dec.W_fa", uniform_init(rng, (H, d), d))
        self.W_ha = Parameter("dec.W_ha", uniform_init(rng, (H, H), H))
        self.W_p = Parameter("dec.W_p", uniform_init(rng, (vocab_size, H), H))
        self.b_p = Parameter("dec.b_p", uniform_init(rng, (vocab_size,), H))

    def parameters(self) -> list[Parameter]:
        return [self.W_e, *self.att, *self.lang, self.w_a, self.W_fa, self.W_ha,
                self.W_p, self.b_p]


@dataclass
class DecoderState:
    h1: Tensor
    c1: Tensor
    h2: Tensor
    c2: Tensor

    @classmethod
    def zeros(cls, batch: int, H: int) -> "DecoderState":
        return cls(*(Tensor(np.zeros((batch, H))) for _ in range(4)))


# step monitoring -------------------------------------------------------------

class StepStats:
    """Worst deviation of attention / word distributions from summing to one."""

    def __init__(self):
        self.steps = 0
        self.max_alpha_err = 0.0
        self.max_dist_err = 0.0
        self.min_alpha = np.inf

    def record(self, alpha: np.ndarray, logits: np.ndarray) -> None:
        z = logits - logits.max(axis=-1, keepdims=True)
        p = np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)
        self.steps += 1
        self.max_alpha_err = max(self.max_alpha_err, float(np.abs(alpha.sum(-1) - 1).max()))
        self.max_dist_err = max(self.max_dist_err, float(np.abs(p.sum(-1) - 1).max()))
        self.min_alpha = min(self.min_alpha, float(alpha.min()))


_monitors: list[StepStats] = []


@contextmanager
def watch_steps():
    """Record distribution sums for every decoder step run inside the block."""
    stats = StepStats()
    _monitors.append(stats)
    try:
        yield stats
    finally:
        _monitors.remove(stats)


# core step -------------------------------------------------------------------

@dataclass
class _Context:
    F: Tensor          # (B, K, d)
    Fa: Tensor         # (B, K, H)
    fbar: Tensor       # (B, d)
    mask: np.ndarray   # (B, K)


def _context(encoded: EncodedGraph, params: DecoderParams) -> _Context:
    mask = np.asarray(encoded.mask, dtype=bool)
    if mask.ndim != 2 or mask.shape[1] == 0 or not mask.any(axis=1).all():
        raise DecodeError("nothing to attend: encoded graph is empty")
    F = encoded.node_vectors
    if F.shape[-1] != params.d:
        raise DecodeError(f"encoder dim {F.shape[-1]} != decoder feature dim {params.d}")
    counts = mask.sum(axis=1).astype(np.float64)
    m = Tensor(mask[:, :, None].astype(np.float64))
    fbar = tsum(F * m, axis=1) * Tensor((1.0 / counts)[:, None])
    return _Context(F, linear(F, params.W_fa), fbar, mask)


def _step(ctx: _Context, state: DecoderState, prev: np.ndarray, params: DecoderParams):
    """Advance one token. Returns (state, emit logits (B, V-1), alpha (B, K))."""
    B, K = ctx.mask.shape
    x1 = concat([state.h2, ctx.fbar, embedding_lookup(params.W_e, prev)], axis=-1)
    h1, c1 = lstm_cell(x1, state.h1, state.c1, *params.att)
    hq = reshape(linear(h1, params.W_ha), (B, 1, params.H))
    scores = tsum(tanh(ctx.Fa + hq) * params.w_a, axis=-1)
    alpha = masked_softmax(scores, ctx.mask)
    fhat = tsum(ctx.F * reshape(alpha, (B, K, 1)), axis=1)
    h2, c2 = lstm_cell(concat([h1, fhat], axis=-1), state.h2, state.c2, *params.lang)
    logits = getitem(linear(h2, params.W_p, params.b_p), (slice(None), slice(1, None)))
    for mon in _monitors:
        mon.record(alpha.data, logits.data)
    return DecoderState(h1, c1, h2, c2), logits, alpha


def _softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def step(state: DecoderState, prev_word, encoded: EncodedGraph, params: DecoderParams):
    """Public single step: returns (state', word distribution over V, alpha).

    The distribution covers the full vocabulary with zero mass on BOS.
    """
    ctx = _context(encoded, params)
    prev = np.broadcast_to(np.asarray(prev_word, dtype=np.int64), (ctx.mask.shape[0],))
    new, logits, alpha = _step(ctx, state, prev.copy(), params)
    p = _softmax_np(logits.data)
    dist = np.concatenate([np.zeros((p.shape[0], 1)), p], axis=1)
    return new, dist, alpha.data


# decoding --------------------------------------------------------------------

def _strip(rows: list[list[int]]) -> list[list[int]]:
    return [r[:-1] if r and r[-1] == EOS_ID else r for r in rows]


def greedy_decode_batch(encoded: EncodedGraph, params: DecoderParams,
                        max_len: int | None = None) -> list[list[int]]:
    """Argmax decoding; ties go to the lowest word index. BOS/EOS stripped."""
    T = params.max_len if max_len is None else max_len
    with no_grad():
        ctx = _context(encoded, params)
        B = ctx.mask.shape[0]
        state = DecoderState.zeros(B, params.H)
        prev = np.full(B, BOS_ID, dtype=np.int64)
        out: list[list[int]] = [[] for _ in range(B)]
        done = np.zeros(B, dtype=bool)
        for _ in range(T):
            state, logits, _ = _step(ctx, state, prev, params)
            words = np.argmax(logits.data, axis=1) + 1
            for b in np.flatnonzero(~done):
                out[b].append(int(words[b]))
            done |= words == EOS_ID
            if done.all():
                break
            prev = words
    return _strip(out)


def sample_decode_batch(encoded: EncodedGraph, params: DecoderParams, rng,
                        max_len: int | None = None):
    """Multinomial decoding by inverse-CDF draws, one uniform per active row per step.

    Returns (token lists without EOS, summed log-probabilities, ended-with-EOS flags).
    """
    T = params.max_len if max_len is None else max_len
    with no_grad():
        ctx = _context(encoded, params)
        B = ctx.mask.shape[0]
        state = DecoderState.zeros(B, params.H)
        prev = np.full(B, BOS_ID, dtype=np.int64)
        out: list[list[int]] = [[] for _ in range(B)]
        logp = np.zeros(B)
        done = np.zeros(B, dtype=bool)
        for _ in range(T):
            state, logits, _ = _step(ctx, state, prev, params)
            z = logits.data - logits.data.max(axis=1, keepdims=True)
            logz = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            cdf = np.cumsum(np.exp(logz), axis=1)
            words = prev.copy()
            for b in np.flatnonzero(~done):
                u = rng.random() * cdf[b, -1]
                k = min(int(np.searchsorted(cdf[b], u, side="right")), cdf.shape[1] - 1)
                words[b] = k + 1
                logp[b] += logz[b, k]
                out[b].append(k + 1)
            done |= words == EOS_ID
            if done.all():
                break
            prev = words
    ended = np.array([bool(r) and r[-1] == EOS_ID for r in out])
    return _strip(out), logp, ended


def _teacher_arrays(seqs, append_eos, V):
    if isinstance(append_eos, bool):
        append_eos = [append_eos] * len(seqs)
    targets = [list(s) + ([EOS_ID] if e else []) for s, e in zip(seqs, append_eos)]
    T = max((len(t) for t in targets), default=0)
    inp = np.full((len(seqs), max(T, 1)), EOS_ID, dtype=np.int64)
    tgt = np.full((len(seqs), max(T, 1)), EOS_ID, dtype=np.int64)
    w = np.zeros((len(seqs), max(T, 1)))
    for b, t in enumerate(targets):
        for tok in t:
            if not 1 <= tok < V:
                raise DecodeError(f"token index {tok} cannot be emitted")
        inp[b, 0] = BOS_ID
        inp[b, 1:len(t)] = t[:-1]
        tgt[b, :len(t)] = t
        w[b, :len(t)] = 1.0
    return inp, tgt, w, T


def sequence_nll(encoded: EncodedGraph, params: DecoderParams, seqs, append_eos=True,
                 weights=None) -> tuple[Tensor, int]:
    """Teacher-forced negative log-likelihood summed over tokens and rows.

    ``weights`` scales each row's contribution (used by the SCST objective).
    Returns (loss tensor, number of target tokens).
    """
    inp, tgt, w, T = _teacher_arrays(seqs, append_eos, params.V)
    n_tokens = int(w.sum())
    if weights is not None:
        w = w * np.asarray(weights, dtype=np.float64)[:, None]
    ctx = _context(encoded, params)
    state = DecoderState.zeros(len(seqs), params.H)
    total = None
    for t in range(T):
        state, logits, _ = _step(ctx, state, inp[:, t], params)
        nll = cross_entropy(logits, tgt[:, t] - 1, w[:, t])
        total = nll if total is None else total + nll
    if total is None:
        total = Tensor(np.zeros(()))
    return total, n_tokens


def log_prob_batch(seqs, encoded: EncodedGraph, params: DecoderParams,
                   append_eos=True) -> np.ndarray:
    """Per-row log p(sequence [+ EOS]) under teacher forcing."""
    out = np.zeros(len(seqs))
    with no_grad():
        inp, tgt, w, T = _teacher_arrays(seqs, append_eos, params.V)
        ctx = _context(encoded, params)
        state = DecoderState.zeros(len(seqs), params.H)
        for t in range(T):
            state, logits, _ = _step(ctx, state, inp[:, t], params)
            z = logits.data - logits.data.max(axis=1, keepdims=True)
            logz = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            out += w[:, t] * logz[np.arange(len(seqs)), tgt[:, t] - 1]
    return out


# single-example wrappers -----------------------------------------------------

def greedy_decode(encoded: EncodedGraph, params: DecoderParams) -> list[int]:
    return greedy_decode_batch(encoded, params)[0]


def sample_decode(encoded: EncodedGraph, params: DecoderParams, rng) -> tuple[list[int], float]:
    seqs, logp, _ = sample_decode_batch(encoded, params, rng)
    return seqs[0], float(logp[0])


def log_prob(sequence, encoded: EncodedGraph, params: DecoderParams) -> float:
    return float(log_prob_batch([list(sequence)], encoded, params)[0])
