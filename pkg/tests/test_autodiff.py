import numpy as np
import pytest

from fsblstm import autodiff as ad
from gradutil import check


def sq(v):
    return ad.sum(ad.square(v))


def test_conv_grad(rng):
    check(lambda v: sq(ad.conv_freq(v[0], v[1], v[2], 2)),
          [rng.standard_normal((2, 3, 9)), rng.standard_normal((3, 2, 3)), rng.standard_normal(3)], tol=1e-6)


def test_deconv_grad(rng):
    check(lambda v: sq(ad.deconv_freq(v[0], v[1], v[2], 2)),
          [rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 3, 5)), rng.standard_normal(3)])


def test_prelu_grad(rng):
    x = rng.standard_normal((4, 5))
    x[np.abs(x) < 1e-3] = 0.5                      # keep away from the kink
    check(lambda v: sq(ad.prelu(v[0], v[1])), [x, np.array([0.2])])


def test_prelu_negative_slope_derivative():
    tape = ad.Tape()
    x = tape.var(np.array([-1.5, -0.2]))
    tape.backward(ad.sum(ad.prelu(x, np.array([0.25]))))
    np.testing.assert_array_equal(x.grad, [0.25, 0.25])


def test_linear_grad(rng):
    check(lambda v: sq(ad.linear(v[0], v[1], v[2])),
          [rng.standard_normal((3, 4)), rng.standard_normal((5, 4)), rng.standard_normal(5)])


def test_lstm_grad_eight_steps(rng):
    hd = 3
    arrays = [rng.standard_normal((8, 4)), 0.5 * rng.standard_normal((4 * hd, 4)),
              0.5 * rng.standard_normal((4 * hd, hd)), 0.1 * rng.standard_normal(4 * hd),
              0.1 * rng.standard_normal(4 * hd), 0.1 * rng.standard_normal(hd), 0.1 * rng.standard_normal(hd)]

    def build(v):
        y, h, c = ad.lstm(*v)
        return ad.add(ad.add(sq(y), ad.sum(h)), ad.sum(c))
    check(build, arrays)


def test_lstm_batched_grad(rng):
    hd = 2
    arrays = [rng.standard_normal((3, 5, 2)), rng.standard_normal((4 * hd, 2)), rng.standard_normal((4 * hd, hd)),
              rng.standard_normal(4 * hd), rng.standard_normal(4 * hd), np.zeros((3, hd)), np.zeros((3, hd))]
    check(lambda v: sq(ad.lstm(*v)[0]), arrays)


def test_cgln_2d_grad_including_carried_stats(rng):
    x1, x2 = rng.standard_normal((3, 4)), rng.standard_normal((2, 4))
    g, b = rng.standard_normal(4), rng.standard_normal(4)

    def build(v):
        y1, s, n = ad.cgln_2d(v[0], v[2], v[3])
        y2, _, _ = ad.cgln_2d(v[1], v[2], v[3], s, n)
        return ad.add(sq(y1), sq(ad.mul(y2, 1.7)))
    check(build, [x1, x2, g, b])


def test_cgln_3d_grad(rng):
    check(lambda v: sq(ad.cgln_3d(v[0], v[1], v[2])[0]),
          [rng.standard_normal((2, 4, 3)), rng.standard_normal(2), rng.standard_normal(2)])


def test_structural_ops_grad(rng):
    def build(v):
        a = ad.pad_last(ad.transpose(ad.reshape(v[0], (3, 2, 2)), (2, 0, 1)), 2)
        b = ad.pad_both(ad.getitem(v[1], (slice(None), slice(1, 3))), 1)
        c = ad.concat([ad.reshape(a, (2, 12)), b], axis=1)
        d = ad.stack([c, ad.mul(c, v[2])], axis=0)
        return ad.mean(ad.absolute(ad.sub(ad.sqrt(ad.add(ad.square(d), 1.0)), 0.3)))
    check(build, [rng.standard_normal(12), rng.standard_normal((2, 4)), rng.standard_normal((2, 16))])


def test_broadcast_add_and_mul_unbroadcast(rng):
    check(lambda v: sq(ad.mul(ad.add(v[0], v[1]), v[2])),
          [rng.standard_normal((3, 4)), rng.standard_normal(4), rng.standard_normal((3, 1))])


def test_shared_input_accumulates(rng):
    tape = ad.Tape()
    x = tape.var(rng.standard_normal(3))
    tape.backward(ad.sum(ad.add(ad.mul(x, 2.0), ad.square(x))))
    np.testing.assert_allclose(x.grad, 2.0 + 2 * x.value)


def test_operators_route_through_tape(rng):
    tape = ad.Tape()
    x = tape.var(rng.standard_normal(3))
    y = ad.sum(-(1.0 - x * 3.0 + x)[1:])
    tape.backward(y)
    np.testing.assert_allclose(x.grad, [0.0, 2.0, 2.0])


def test_backward_rejects_empty_tape():
    tape = ad.Tape()
    with pytest.raises(ValueError, match="empty"):
        tape.backward(tape.var(1.0))


def test_backward_rejects_non_scalar():
    tape = ad.Tape()
    y = ad.mul(tape.var(np.ones(3)), 2.0)
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(y)
    s = ad.sum(y)
    with pytest.raises(ValueError, match="seed"):
        tape.backward(s, seed=np.ones(2))


def test_seed_scales_gradients():
    tape = ad.Tape()
    x = tape.var(np.array([1.0, 2.0]))
    tape.backward(ad.sum(ad.square(x)), seed=3.0)
    np.testing.assert_allclose(x.grad, [6.0, 12.0])


def test_mixing_tapes_is_rejected():
    a, b = ad.Tape().var(np.ones(2)), ad.Tape().var(np.ones(2))
    with pytest.raises(ValueError):
        ad.add(a, b)


def test_plain_arrays_are_not_recorded(rng):
    x = rng.standard_normal((2, 3, 6))
    y = ad.conv_freq(x, rng.standard_normal((2, 2, 2)), np.zeros(2), 2)
    assert isinstance(y, np.ndarray)


def test_replay_reproduces_recording(rng):
    tape = ad.Tape()
    x = tape.var(rng.standard_normal((2, 3, 8)))
    w = tape.var(rng.standard_normal((3, 2, 4)))
    y = ad.conv_freq(x, w, np.zeros(3), 4)
    ad.sum(ad.square(ad.lstm(ad.reshape(y, (3, 3, 2)), rng.standard_normal((8, 2)), rng.standard_normal((8, 2)),
                             np.zeros(8), np.zeros(8), np.zeros((3, 2)), np.zeros((3, 2)))[0]))
    assert tape.replay()
    tape.nodes[0].outputs[0].value = tape.nodes[0].outputs[0].value + 1.0
    assert not tape.replay()
