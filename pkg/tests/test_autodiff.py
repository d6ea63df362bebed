import mpmath
import numpy as np
import pytest

from holoml import autodiff as ad
from holoml.autodiff import Tensor, grad_check


def rng_inputs(seed, *shapes):
    rng = np.random.default_rng(seed)
    return [rng.standard_normal(s) for s in shapes]


def direct_conv(x, w, b=None):
    """Naive zero-padded cross-correlation with explicit loops."""
    n, c, h, wd = x.shape
    co, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, co, h, wd))
    for i in range(n):
        for o in range(co):
            for y in range(h):
                for xx in range(wd):
                    out[i, o, y, xx] = np.sum(xp[i, :, y : y + k, xx : xx + k] * w[o])
            if b is not None:
                out[i, o] += b[o]
    return out


@pytest.mark.parametrize("k", [1, 3])
def test_conv_matches_loops(k):
    x, w, b = rng_inputs(0, (2, 3, 5, 6), (4, 3, k, k), (4,))
    out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    assert np.allclose(out, direct_conv(x, w, b), atol=1e-12)


def test_identity_kernel():
    x = np.random.default_rng(1).standard_normal((1, 2, 4, 4))
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = w[1, 1, 1, 1] = 1
    assert np.array_equal(ad.conv2d(Tensor(x), Tensor(w)).data, x)


def test_conv_interior_gradient_counts_nine_taps():
    x = Tensor(np.ones((1, 1, 5, 5)), requires_grad=True)
    w = Tensor(np.ones((1, 1, 3, 3)))
    ad.conv2d(x, w).backward(np.ones((1, 1, 5, 5)))
    assert x.grad[0, 0, 2, 2] == 9
    assert x.grad[0, 0, 0, 0] == 4
    assert x.grad[0, 0, 0, 2] == 6


def test_conv_rejects_channel_mismatch():
    with pytest.raises(ad.ShapeError):
        ad.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))


def test_maxpool_and_upconv_shapes():
    x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
    assert ad.maxpool2d(x).data.tolist() == [[[[5.0, 7.0], [13.0, 15.0]]]]
    w = Tensor(np.ones((1, 3, 2, 2)))
    assert ad.upconv2d(x, w).shape == (1, 3, 8, 8)


def test_upconv_matches_block_expansion():
    x, w = rng_inputs(2, (1, 2, 3, 3), (2, 4, 2, 2))
    out = ad.upconv2d(Tensor(x), Tensor(w)).data
    for o in range(4):
        for y in range(3):
            for xx in range(3):
                block = np.einsum("c,cij->ij", x[0, :, y, xx], w[:, o])
                assert np.allclose(out[0, o, 2 * y : 2 * y + 2, 2 * xx : 2 * xx + 2], block)


def test_diamond_accumulates():
    x = Tensor(np.array([[[[3.0]]]]), requires_grad=True)
    (x + x).backward(np.ones((1, 1, 1, 1)))
    assert x.grad.item() == 2.0


def test_shared_subgraph_visited_once():
    x = Tensor(np.full((1, 1, 2, 2), 0.3), requires_grad=True)
    s = ad.swish(x)
    ad.add(ad.add(s, s), s).backward(np.ones((1, 1, 2, 2)))
    assert np.allclose(x.grad, 3 * ad.swish_grad(x.data))


def test_no_grad_records_nothing():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    with ad.no_grad():
        y = ad.relu(x)
    assert not y.requires_grad and y.op == "leaf"


def test_backward_requires_scalar_or_gradient():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    with pytest.raises(ad.ShapeError):
        ad.relu(x).backward()


def test_swish_values_against_mpmath():
    mpmath.mp.dps = 40
    xs = [-30.0, -5.0, -1.0, 0.0, 0.5, 3.0, 25.0]
    got = ad.swish(Tensor(np.array(xs))).data
    for x, g in zip(xs, got):
        exact = mpmath.mpf(x) / (1 + mpmath.exp(-mpmath.mpf(x)))
        assert abs(g - float(exact)) <= 1e-15 * max(1.0, abs(float(exact)))
    dx = ad.swish_grad(np.array(xs))
    for x, g in zip(xs, dx):
        exact = mpmath.diff(lambda t: t / (1 + mpmath.exp(-t)), mpmath.mpf(x))
        assert abs(g - float(exact)) <= 1e-14


def test_sigmoid_symmetry_and_tail():
    x = np.linspace(-60, 60, 241)
    s = ad.sigmoid(Tensor(x)).data
    assert np.allclose(s[::-1], 1 - s, atol=1e-16)
    tail = ad.sigmoid(Tensor(np.array([-40.0], dtype=np.float32))).data
    assert tail.dtype == np.float32 and tail[0] > 0


OPS = {
    "conv3": (lambda x, w, b: ad.conv2d(x, w, b), [(2, 3, 5, 4), (2, 3, 3, 3), (2,)]),
    "conv1": (lambda x, w: ad.conv2d(x, w), [(1, 3, 4, 4), (5, 3, 1, 1)]),
    "maxpool": (ad.maxpool2d, [(2, 2, 4, 6)]),
    "upconv": (ad.upconv2d, [(1, 3, 3, 2), (3, 2, 2, 2)]),
    "concat": (ad.concat, [(1, 2, 3, 3), (1, 3, 3, 3)]),
    "add": (ad.add, [(1, 2, 3, 3), (1, 2, 3, 3)]),
    "sigmoid": (ad.sigmoid, [(2, 2, 3, 3)]),
    "swish": (ad.swish, [(2, 2, 3, 3)]),
    "relu": (ad.relu, [(2, 2, 3, 3)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_operator_gradients(name):
    op, shapes = OPS[name]
    report = grad_check(op, rng_inputs(3, *shapes))
    assert report.passed, report
    assert report.checked > 0


def test_grad_check_skips_maxpool_ties():
    x = np.zeros((1, 1, 2, 4))
    report = grad_check(ad.maxpool2d, [x])
    assert report.skipped == 8 and report.passed


def test_grad_check_flags_wrong_gradient():
    def bad(x):
        return Tensor.from_op(x.data**2, (x,), lambda g: (g,), "bad")

    report = grad_check(bad, rng_inputs(4, (3,)))
    assert not report.passed
