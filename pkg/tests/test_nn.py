import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sg2caps import nn
from sg2caps.gradsuite import EPS, TOLERANCE, _op_cases
from sg2caps.nn.engine import _node
from sg2caps.nn import (SGD, Adam, NonFiniteError, Parameter, ShapeError, Tensor, adam_step,
                        backward, derive_seed, grad_check, load_arrays, make_rng, save_arrays)


def test_relu_values():
    assert nn.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]


def test_softmax_single_element():
    assert nn.softmax(Tensor([3.7])).data.tolist() == [1.0]


@pytest.mark.parametrize("V", [2, 7, 50])
def test_cross_entropy_uniform(V):
    loss = nn.cross_entropy(Tensor(np.zeros(V)), 1)
    assert loss.item() == pytest.approx(math.log(V), abs=1e-12)


def test_cross_entropy_weights_and_rows():
    logits = Tensor(np.array([[0.0, 0.0], [5.0, -5.0]]))
    w = nn.cross_entropy(logits, [0, 1], [1.0, 0.0]).item()
    assert w == pytest.approx(math.log(2), abs=1e-15)


def test_linear_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        nn.linear(Tensor(np.zeros((2, 3))), Parameter("W", np.zeros((4, 5))))


def test_non_finite_raises():
    with pytest.raises(NonFiniteError), np.errstate(over="ignore"):
        nn.mul(Tensor([1e300]), Tensor([1e300]))


def _lstm_reference(x, h, c, Wx, Wh, b):
    H = h.shape[-1]
    sig = lambda v: 1 / (1 + np.exp(-v))
    z = Wx @ x + Wh @ h + b
    i, f, g, o = sig(z[:H]), sig(z[H:2 * H]), np.tanh(z[2 * H:3 * H]), sig(z[3 * H:])
    c2 = f * c + i * g
    return o * np.tanh(c2), c2


def test_lstm_forward_matches_reference(rng):
    H, D = 3, 4
    x, h, c = rng.normal(size=D), rng.normal(size=H), rng.normal(size=H)
    Wx, Wh, b = rng.normal(size=(4 * H, D)), rng.normal(size=(4 * H, H)), rng.normal(size=4 * H)
    hn, cn = nn.lstm_cell(Tensor(x), Tensor(h), Tensor(c), Parameter("a", Wx),
                          Parameter("b", Wh), Parameter("c", b))
    rh, rc = _lstm_reference(x, h, c, Wx, Wh, b)
    np.testing.assert_allclose(hn.data, rh, rtol=0, atol=1e-14)
    np.testing.assert_allclose(cn.data, rc, rtol=0, atol=1e-14)


def test_masked_softmax_zeroes_masked(rng):
    x = Tensor(rng.normal(size=(2, 4)))
    m = np.array([[1, 0, 1, 1], [0, 0, 1, 0]], bool)
    y = nn.masked_softmax(x, m).data
    assert (y[~m] == 0).all() and np.allclose(y.sum(1), 1, atol=1e-15)
    assert y[1, 2] == 1.0


@given(st.integers(0, 2**32 - 1), st.integers(1, 9))
def test_softmax_sums_to_one(seed, n):
    x = np.random.default_rng(seed).normal(scale=30, size=(3, n))
    y = nn.softmax(Tensor(x)).data
    assert np.all(y >= 0)
    assert np.abs(y.sum(axis=1) - 1).max() <= 1e-12


@given(st.integers(0, 2**32 - 1))
def test_softmax_positive_for_moderate_inputs(seed):
    x = np.random.default_rng(seed).normal(scale=5, size=6)
    assert (nn.softmax(Tensor(x)).data > 0).all()


class TestGradCheck:
    def test_linear_map_exact(self, rng):
        W = Parameter("W", rng.normal(size=(3, 4)))
        x = Tensor(rng.normal(size=(2, 4)))
        w = rng.normal(size=(2, 3))
        err = grad_check(lambda: nn.tsum(nn.linear(x, W) * Tensor(w)), [W])
        assert err < 1e-9

    def test_relu_away_from_kink(self, rng):
        x = rng.normal(size=20)
        x = np.sign(x) * (np.abs(x) + 10 * EPS + 0.01)
        p = Parameter("x", x)
        w = rng.normal(size=20)
        assert grad_check(lambda: nn.tsum(nn.relu(p) * Tensor(w)), [p]) < 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_every_op(self, seed):
        for name, (fn, params) in _op_cases(make_rng(derive_seed(seed, "unit"))).items():
            assert grad_check(fn, params, EPS) < TOLERANCE, name

    def test_detects_wrong_gradient(self):
        p = Parameter("p", np.array([1.0, 2.0]))

        def half_square():
            # backward deliberately off by a factor of two
            return _node("bad", p.data ** 2, (p,), lambda g: (g * p.data,))

        assert grad_check(lambda: nn.tsum(half_square()), [p]) > 0.3

    def test_min_magnitude_report(self):
        p = Parameter("p", np.array([1.0, 1e-9]))
        report = {}
        grad_check(lambda: nn.tsum(p * p), [p], max_entries=1, min_magnitude=1e-6,
                   report=report)
        assert report["probed"] == 1 and report["below_floor"] == 0


def test_gradient_linearity(rng):
    W = Parameter("W", rng.normal(size=(3, 4)))
    x1, x2 = Tensor(rng.normal(size=(2, 4))), Tensor(rng.normal(size=(5, 4)))
    f1 = lambda: nn.tsum(nn.tanh(nn.linear(x1, W)))
    f2 = lambda: nn.tsum(nn.sigmoid(nn.linear(x2, W)))
    grads = []
    for fn in (f1, f2, lambda: f1() + f2()):
        W.grad = np.zeros_like(W.data)
        backward(fn())
        grads.append(W.grad.copy())
    np.testing.assert_allclose(grads[0] + grads[1], grads[2], rtol=0, atol=1e-12)


def test_forward_bitwise_deterministic(rng):
    cases = _op_cases(make_rng(7))
    again = _op_cases(make_rng(7))
    for name in cases:
        assert cases[name][0]().data.tobytes() == again[name][0]().data.tobytes()


class TestOptim:
    def test_zero_grad_no_change(self):
        p = Parameter("p", np.array([1.0, -2.0]))
        p.grad = np.zeros(2)
        adam_step([p], 0.1)
        assert p.data.tolist() == [1.0, -2.0]

    def test_first_step_moves_by_lr(self):
        p = Parameter("p", np.array([0.5]))
        p.grad = np.array([1.0])
        adam_step([p], 1e-3)
        # bias-corrected m_hat / sqrt(v_hat) = 1, damped only by eps = 1e-8
        assert p.data[0] == pytest.approx(0.5 - 1e-3 / (1 + 1e-8), abs=1e-15)
        assert p.grad[0] == 0.0

    def test_monotone_decrease(self):
        p = Parameter("p", np.array([0.0]))
        state = None
        seen = [0.0]
        for _ in range(2):
            p.grad = np.array([1.0])
            state = adam_step([p], 0.01, state=state)
            seen.append(p.data[0])
        assert seen[0] > seen[1] > seen[2]

    def test_sgd(self):
        p = Parameter("p", np.array([1.0]))
        p.grad = np.array([2.0])
        SGD([p]).step(0.25)
        assert p.data[0] == 0.5


class TestRng:
    def test_stream_is_pcg64(self):
        assert make_rng(42).integers(0, 2**63, 3).tolist() == \
            np.random.Generator(np.random.PCG64(42)).integers(0, 2**63, 3).tolist()

    def test_derived_seeds_distinct(self):
        seeds = {derive_seed(1, t) for t in ("a", "b", "ab", "abcdefghi", "abcdefghj")}
        assert len(seeds) == 5
        assert derive_seed(1, "a", "bc") != derive_seed(1, "ab", "c")
        assert derive_seed(3, "x", 2) == derive_seed(3, "x", 2)

    def test_init_bounds(self):
        w = nn.uniform_init(make_rng(0), (1000,), 16)
        assert np.abs(w).max() <= 0.25


def test_checkpoint_roundtrip_bit_exact(tmp_path, rng):
    arrays = {"a": rng.normal(size=(3, 2)), "b": np.array([np.pi, -0.0, 1e-300])}
    save_arrays(tmp_path / "ck", arrays, {"k": 1})
    back, meta = load_arrays(tmp_path / "ck")
    assert meta == {"k": 1}
    for k in arrays:
        assert back[k].tobytes() == arrays[k].tobytes()
    manifest = (tmp_path / "ck.json").read_text()
    assert '"format_version": 1' in manifest


def test_checkpoint_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_arrays(tmp_path / "none")
