import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradient_cases import cases, reversed_gradient_error
from respiro import tensor as T
from respiro.errors import ArgumentError, ShapeError
from respiro.gradcheck import check_gradients
from respiro.tensor import Tensor, no_grad

CASES = cases(np.random.default_rng(0))


@pytest.mark.parametrize("name,fn,shapes,sampler", CASES, ids=[c[0] for c in CASES])
def test_primitive_gradients(name, fn, shapes, sampler):
    rng = np.random.default_rng(1)
    arrays = [sampler(rng, s) for s in shapes]
    assert check_gradients(fn, arrays, eps=1e-5) < 1e-6


def _conv1d_loops(x, w, b, dilation, padding):
    n, c_in, length = x.shape
    c_out, _, k = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    l_out = length + 2 * padding - dilation * (k - 1)
    out = np.zeros((n, c_out, l_out))
    for i in range(n):
        for o in range(c_out):
            for t in range(l_out):
                acc = b[o]
                for c in range(c_in):
                    for j in range(k):
                        acc += w[o, c, j] * xp[i, c, t + j * dilation]
                out[i, o, t] = acc
    return out


def _conv_transpose2d_loops(x, w, stride):
    n, c_in, h, wd = x.shape
    _, c_out, kh, kw = w.shape
    sh, sw = stride
    out = np.zeros((n, c_out, (h - 1) * sh + kh, (wd - 1) * sw + kw))
    for i in range(n):
        for c in range(c_in):
            for a in range(h):
                for b in range(wd):
                    out[i, :, a * sh : a * sh + kh, b * sw : b * sw + kw] += x[i, c, a, b] * w[c]
    return out


class TestConvolutionForward:
    @pytest.mark.parametrize("dilation,k", [(1, 3), (2, 3), (4, 5), (1, 1)])
    def test_conv1d_matches_loops(self, dilation, k):
        rng = np.random.default_rng(dilation * 10 + k)
        x = rng.standard_normal((2, 3, 11))
        w = rng.standard_normal((4, 3, k))
        b = rng.standard_normal(4)
        got = T.conv1d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                       Tensor(b, dtype=np.float64), dilation=dilation, padding="same").data
        want = _conv1d_loops(x, w, b, dilation, dilation * (k - 1) // 2)
        np.testing.assert_allclose(got, want, atol=1e-12)
        assert got.shape[-1] == 11

    @pytest.mark.parametrize("stride,kernel", [((1, 16), (3, 32)), ((2, 3), (3, 4)), ((1, 1), (2, 2))])
    def test_conv_transpose2d_matches_loops(self, stride, kernel):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 1, 4, 3))
        w = rng.standard_normal((1, 2) + kernel)
        got = T.conv_transpose2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), stride).data
        np.testing.assert_allclose(got, _conv_transpose2d_loops(x, w, stride), atol=1e-12)

    def test_conv1d_rejects_even_same_kernel(self):
        with pytest.raises(ArgumentError):
            T.conv1d(Tensor(np.zeros((1, 5))), Tensor(np.zeros((1, 1, 2))), padding="same")

    def test_conv1d_channel_mismatch(self):
        with pytest.raises(ShapeError):
            T.conv1d(Tensor(np.zeros((2, 5))), Tensor(np.zeros((1, 3, 3))))


class TestBackwardMechanics:
    def test_shared_node_accumulates(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = x * x + x
        y.sum().backward()
        np.testing.assert_allclose(x.grad, [3.0, 5.0])

    def test_backward_requires_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ArgumentError):
            (x * 2.0).backward()

    def test_backward_without_grad_flag(self):
        with pytest.raises(ArgumentError):
            Tensor([1.0]).sum().backward()

    def test_no_grad_builds_no_graph(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = x * 3.0
        assert not y.requires_grad

    def test_retain_grad_on_intermediate(self):
        x = Tensor([1.0, -2.0], requires_grad=True)
        h = (x * 2.0).retain_grad()
        (h * h).sum().backward()
        np.testing.assert_allclose(h.grad, [4.0, -8.0])

    def test_deep_chain_does_not_recurse(self):
        x = Tensor([1.0], requires_grad=True)
        y = x
        for _ in range(5000):
            y = y + 0.0
        y.sum().backward()
        assert x.grad[0] == pytest.approx(1.0)

    def test_cross_entropy_label_range(self):
        with pytest.raises(ArgumentError):
            T.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])

    def test_gradient_reverse_negative_coeff(self):
        with pytest.raises(ArgumentError):
            T.gradient_reverse(Tensor([1.0]), -0.1)

    @pytest.mark.parametrize("coeff", [0.0, 0.3, 1.0, 2.5])
    def test_gradient_reverse_scales_true_derivative(self, coeff):
        assert reversed_gradient_error(coeff, np.random.default_rng(2)) < 1e-6

    def test_gradient_reverse_is_identity_forward(self):
        x = Tensor(np.arange(4.0), requires_grad=True)
        y = T.gradient_reverse(x, 2.0)
        np.testing.assert_array_equal(y.data, x.data)
        y.sum().backward()
        np.testing.assert_allclose(x.grad, -2.0)


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=8))
    def test_softmax_is_a_distribution(self, values):
        p = T.softmax(Tensor(np.array(values), dtype=np.float64)).data
        assert np.all(p >= 0)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=8), st.floats(-100, 100))
    def test_log_softmax_shift_invariant(self, values, shift):
        x = np.array(values)
        a = T.log_softmax(Tensor(x, dtype=np.float64)).data
        b = T.log_softmax(Tensor(x + shift, dtype=np.float64)).data
        np.testing.assert_allclose(a, b, atol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
    def test_matmul_gradient_shapes(self, n, m, seed):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.standard_normal((n, m)), requires_grad=True)
        b = Tensor(rng.standard_normal((m, 2)), requires_grad=True)
        (a @ b).sum().backward()
        assert a.grad.shape == (n, m) and b.grad.shape == (m, 2)
