import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import ATTRS, LABELS, PREDS, random_graph
from sg2caps.decoder import (DecodeError, DecoderParams, DecoderState, greedy_decode,
                             greedy_decode_batch, log_prob, log_prob_batch, sample_decode,
                             sample_decode_batch, step, watch_steps)
from sg2caps.encoder import EncodedGraph, EncoderParams, encode
from sg2caps.graph import BOS_ID, EOS_ID, Vocabulary
from sg2caps.nn import Tensor, make_rng

VOCABS = (Vocabulary(LABELS), Vocabulary(ATTRS), Vocabulary(PREDS))
D = 5


def enc_params(seed=0):
    return EncoderParams(D, len(VOCABS[0]), len(VOCABS[1]), len(VOCABS[2]), make_rng(seed))


def dec_params(V=9, seed=0, H=6, E=4, max_len=6):
    return DecoderParams(V, D, H, E, make_rng(seed), max_len)


def encoded_from(vectors):
    v = np.asarray(vectors, dtype=np.float64)[None]
    return EncodedGraph(Tensor(v), np.ones(v.shape[:2], bool), [["object"] * v.shape[1]])


def some_encoded(rng, k=None):
    k = k or int(rng.integers(1, 6))
    return encoded_from(np.abs(rng.normal(size=(k, D))))


def zero_params(dec):
    for p in dec.parameters():
        p.data[...] = 0.0
    return dec


class TestStep:
    def test_single_node_alpha_one(self, rng):
        dec = dec_params()
        _, dist, alpha = step(DecoderState.zeros(1, dec.H), BOS_ID, some_encoded(rng, 1), dec)
        assert alpha.tolist() == [[1.0]]
        assert dist[0, BOS_ID] == 0.0

    @given(st.integers(0, 2**32 - 1))
    def test_sums(self, seed):
        rng = np.random.default_rng(seed)
        dec = dec_params(seed=seed % 100)
        enc = some_encoded(rng)
        state = DecoderState.zeros(1, dec.H)
        prev = BOS_ID
        for _ in range(3):
            state, dist, alpha = step(state, prev, enc, dec)
            assert abs(alpha.sum() - 1) <= 1e-12 and (alpha >= 0).all()
            assert abs(dist.sum() - 1) <= 1e-12
            prev = int(rng.integers(1, dec.V))

    def test_identical_nodes_uniform(self, rng):
        v = np.abs(rng.normal(size=D))
        enc = encoded_from([v, v, v, v])
        _, _, alpha = step(DecoderState.zeros(1, 6), BOS_ID, enc, dec_params())
        np.testing.assert_allclose(alpha, 0.25, rtol=0, atol=1e-15)

    def test_empty_refused(self):
        enc = EncodedGraph(Tensor(np.zeros((1, 0, D))), np.zeros((1, 0), bool), [[]])
        with pytest.raises(DecodeError, match="nothing to attend"):
            step(DecoderState.zeros(1, 6), BOS_ID, enc, dec_params())


class TestGreedy:
    def test_all_zero_params_emit_eos(self, rng):
        # every logit ties, BOS is masked, so the lowest emittable index (EOS) wins
        assert greedy_decode(some_encoded(rng), zero_params(dec_params())) == []

    def test_rigged_eos(self, rng):
        dec = dec_params()
        dec.W_p.data[...] = 0.0
        dec.b_p.data[...] = 0.0
        dec.b_p.data[EOS_ID] = 10.0
        assert greedy_decode(some_encoded(rng), dec) == []

    def test_rigged_word_runs_to_max_len(self, rng):
        dec = dec_params(max_len=4)
        dec.W_p.data[...] = 0.0
        dec.b_p.data[...] = 0.0
        dec.b_p.data[5] = 10.0
        assert greedy_decode(some_encoded(rng), dec) == [5, 5, 5, 5]

    def test_deterministic(self, rng):
        enc, dec = some_encoded(rng), dec_params(seed=3)
        assert greedy_decode(enc, dec) == greedy_decode(enc, dec)

    def test_output_shift_invariance(self, rng):
        enc, dec = some_encoded(rng), dec_params(seed=4, max_len=8)
        dec.b_p.data *= 40  # make the greedy path non-trivial
        before = greedy_decode(enc, dec)
        dec.b_p.data += 3.0
        assert greedy_decode(enc, dec) == before

    def test_batch_matches_single(self, rng):
        dec = dec_params(seed=2)
        dec.b_p.data *= 30
        encs = [some_encoded(rng, k) for k in (1, 3, 2)]
        K = 3
        vecs = np.zeros((3, K, D))
        mask = np.zeros((3, K), bool)
        for b, e in enumerate(encs):
            n = e.node_vectors.data.shape[1]
            vecs[b, :n] = e.node_vectors.data[0]
            mask[b, :n] = True
        batch = EncodedGraph(Tensor(vecs), mask, [[]] * 3)
        assert greedy_decode_batch(batch, dec) == [greedy_decode(e, dec) for e in encs]


class TestSampling:
    def test_one_hot_equals_greedy(self, rng):
        dec = dec_params(max_len=5)
        dec.W_p.data[...] = 0.0
        dec.b_p.data[...] = -1e3
        dec.b_p.data[6] = 0.0
        enc = some_encoded(rng)
        seq, lp = sample_decode(enc, dec, make_rng(0))
        assert seq == greedy_decode(enc, dec) == [6] * 5
        assert lp == pytest.approx(0.0, abs=1e-12)

    def test_seeded(self, rng):
        enc, dec = some_encoded(rng), dec_params(seed=5)
        assert sample_decode(enc, dec, make_rng(11)) == sample_decode(enc, dec, make_rng(11))

    @given(st.integers(0, 2**32 - 1))
    def test_logprob_matches_teacher_forcing(self, seed):
        rng = np.random.default_rng(seed)
        enc, dec = some_encoded(rng), dec_params(seed=seed % 50, max_len=4)
        seqs, lp, ended = sample_decode_batch(enc, dec, make_rng(seed))
        tf = log_prob_batch(seqs, enc, dec, list(ended))
        assert abs(lp[0] - tf[0]) <= 1e-10


class TestLogProb:
    def test_empty_sequence_is_eos_prob(self, rng):
        enc, dec = some_encoded(rng), dec_params(seed=6)
        _, dist, _ = step(DecoderState.zeros(1, dec.H), BOS_ID, enc, dec)
        assert log_prob([], enc, dec) == pytest.approx(math.log(dist[0, EOS_ID]), abs=1e-12)

    def test_uniform_model(self, rng):
        dec = dec_params(V=9)
        dec.W_p.data[...] = 0.0
        dec.b_p.data[...] = 0.0
        seq = [4, 7, 2]
        expect = (len(seq) + 1) * -math.log(dec.V - 1)
        assert log_prob(seq, some_encoded(rng), dec) == pytest.approx(expect, abs=1e-12)

    def test_unknown_token(self, rng):
        with pytest.raises(DecodeError):
            log_prob([BOS_ID], some_encoded(rng), dec_params())
        with pytest.raises(DecodeError):
            log_prob([99], some_encoded(rng), dec_params())

    def test_first_step_mass(self, rng):
        enc, dec = some_encoded(rng), dec_params(V=8, seed=8)
        words = [[w] for w in range(1, dec.V)]
        lp = log_prob_batch(words, encoded_batch(enc, len(words)), dec, False)
        assert abs(np.exp(lp).sum() - 1) <= 1e-10

    def test_enumeration_covers_all_mass(self, rng):
        # every terminated or truncated sequence up to max_len, brute force
        enc, dec = some_encoded(rng), dec_params(V=6, seed=9, max_len=3)
        words = range(2, dec.V)
        total = 0.0
        for L in range(dec.max_len + 1):
            for seq in itertools.product(words, repeat=L):
                ended = L < dec.max_len
                total += math.exp(log_prob_batch([list(seq)], enc, dec, ended)[0])
        assert abs(total - 1) <= 1e-10

    @given(st.integers(0, 2**32 - 1))
    def test_node_order_invariance(self, seed):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, 6)
        if not g.nodes:
            return
        ep, dec = enc_params(seed % 7), dec_params(seed=seed % 11)
        reordered = g.with_parts(nodes=list(reversed(g.nodes)), edges=list(reversed(g.edges)))
        seq = [int(x) for x in rng.integers(2, dec.V, size=3)]
        a = log_prob(seq, encode(g, ep, VOCABS), dec)
        b = log_prob(seq, encode(reordered, ep, VOCABS), dec)
        assert abs(a - b) <= 1e-9


def encoded_batch(enc, n):
    v = np.repeat(enc.node_vectors.data, n, axis=0)
    return EncodedGraph(Tensor(v), np.repeat(enc.mask, n, axis=0), enc.node_roles * n)


def test_watch_steps_records(rng):
    enc, dec = some_encoded(rng), dec_params(seed=1)
    with watch_steps() as stats:
        greedy_decode(enc, dec)
    assert stats.steps >= 1
    assert stats.max_alpha_err <= 1e-12 and stats.max_dist_err <= 1e-12


def test_decoder_gradients_pass_check():
    from sg2caps.gradsuite import passed, run_suite
    assert passed(run_suite(0, variants=["xe_loss"]))
