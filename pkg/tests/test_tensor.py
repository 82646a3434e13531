import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from talunet import gradcheck
from talunet.errors import ContractError, ShapeError
from talunet.tensor import (
    Tensor, add, backward, conv2d, deterministic, flatten, matmul, maxpool2d, mul, no_grad, tensor_sum,
)


def direct_conv(x, k, b, padding):
    """Six nested loops, no tricks.  Same padding puts the odd extra row/col at the end."""
    n, h, w, cin = x.shape
    kh, kw, _, cout = k.shape
    if padding == "same":
        pt, pl = (kh - 1) // 2, (kw - 1) // 2
        ho, wo = h, w
    else:
        pt = pl = 0
        ho, wo = h - kh + 1, w - kw + 1
    out = np.zeros((n, ho, wo, cout))
    for bi in range(n):
        for i in range(ho):
            for j in range(wo):
                for o in range(cout):
                    acc = b[o]
                    for di in range(kh):
                        for dj in range(kw):
                            r, c = i + di - pt, j + dj - pl
                            if 0 <= r < h and 0 <= c < w:
                                acc += np.dot(x[bi, r, c, :], k[di, dj, :, o])
                    out[bi, i, j, o] = acc
    return out


def window_max(x):
    n, h, w, c = x.shape
    out = np.empty((n, h // 2, w // 2, c))
    for bi in range(n):
        for i in range(h // 2):
            for j in range(w // 2):
                for ch in range(c):
                    out[bi, i, j, ch] = max(x[bi, 2 * i + a, 2 * j + b, ch] for a in range(2) for b in range(2))
    return out


# -- matmul ---------------------------------------------------------------

def test_matmul_identity():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(Tensor(np.eye(2)), m).data, m.data)


def test_matmul_hand_case():
    assert matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_triple_loop(rng):
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    ref = np.zeros((4, 3))
    for i in range(4):
        for j in range(3):
            for k in range(5):
                ref[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, ref, rtol=0, atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_backward_formulas(rng):
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    g = rng.normal(size=(3, 2))
    out = matmul(a, b)
    backward(tensor_sum(mul(out, Tensor(g))))
    np.testing.assert_allclose(a.grad, g @ b.data.T)
    np.testing.assert_allclose(b.grad, a.data.T @ g)


# -- conv2d ---------------------------------------------------------------

def test_conv_1x1_degenerate():
    out = conv2d(Tensor(np.full((1, 1, 1, 1), 3.0)), Tensor(np.full((1, 1, 1, 1), 2.0)), Tensor([0.5]))
    assert out.data.item() == 6.5


def test_conv_zero_input_gives_bias(rng):
    out = conv2d(Tensor(np.zeros((2, 5, 5, 3))), Tensor(rng.normal(size=(3, 3, 3, 4))), Tensor([1.0, -2.0, 0.0, 7.0]))
    assert np.array_equal(out.data, np.broadcast_to([1.0, -2.0, 0.0, 7.0], (2, 5, 5, 4)))


def test_conv_matches_direct_oracle(rng):
    x, k, b = rng.normal(size=(2, 5, 5, 3)), rng.normal(size=(3, 3, 3, 4)), rng.normal(size=4)
    got = conv2d(Tensor(x), Tensor(k), Tensor(b), padding="same").data
    assert got.shape == (2, 5, 5, 4)
    assert np.max(np.abs(got - direct_conv(x, k, b, "same"))) < 1e-10


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(1, 2), h=st.integers(3, 7), w=st.integers(3, 7), cin=st.integers(1, 3), cout=st.integers(1, 3),
    kh=st.sampled_from([1, 2, 3]), kw=st.sampled_from([1, 2, 3]), padding=st.sampled_from(["same", "valid"]),
    seed=st.integers(0, 2**32 - 1),
)
def test_conv_oracle_property(n, h, w, cin, cout, kh, kw, padding, seed):
    r = np.random.default_rng(seed)
    x, k, b = r.normal(size=(n, h, w, cin)), r.normal(size=(kh, kw, cin, cout)), r.normal(size=cout)
    got = conv2d(Tensor(x), Tensor(k), Tensor(b), padding=padding).data
    assert np.max(np.abs(got - direct_conv(x, k, b, padding))) < 1e-10


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.zeros((1, 4, 4, 3))), Tensor(np.zeros((3, 3, 2, 4))))


def test_conv_bad_stride():
    with pytest.raises(ContractError):
        conv2d(Tensor(np.zeros((1, 4, 4, 1))), Tensor(np.zeros((3, 3, 1, 1))), stride=0)


# -- maxpool --------------------------------------------------------------

def test_maxpool_single_window():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1))
    assert maxpool2d(x).data.item() == 4.0


def test_maxpool_ties_go_to_first_element():
    x = Tensor(np.full((1, 4, 4, 2), 5.0), requires_grad=True)
    out = maxpool2d(x)
    assert np.all(out.data == 5.0)
    backward(tensor_sum(out))
    expected = np.zeros((4, 4))
    expected[::2, ::2] = 1.0
    for ch in range(2):
        assert np.array_equal(x.grad[0, :, :, ch], expected)


def test_maxpool_window_oracle(rng):
    x = rng.normal(size=(1, 4, 4, 2))
    assert np.array_equal(maxpool2d(Tensor(x)).data, window_max(x))


def test_maxpool_routes_to_argmax(rng):
    x = Tensor(rng.normal(size=(2, 4, 6, 3)), requires_grad=True)
    out = maxpool2d(x)
    backward(tensor_sum(out))
    # exactly one hit per window, sitting on the window's maximum
    hits = x.grad.reshape(2, 2, 2, 3, 2, 3).sum(axis=(2, 4))
    assert np.array_equal(hits, np.ones_like(out.data))
    picked = (x.grad * x.data).reshape(2, 2, 2, 3, 2, 3).sum(axis=(2, 4))
    assert np.array_equal(picked, out.data)


def test_maxpool_indivisible_is_error_unless_floor():
    x = Tensor(np.zeros((1, 7, 7, 1)))
    with pytest.raises(ShapeError):
        maxpool2d(x)
    assert maxpool2d(x, floor=True).shape == (1, 3, 3, 1)


def test_maxpool_no_grad_path_matches(rng):
    x = Tensor(rng.normal(size=(2, 6, 6, 3)), requires_grad=True)
    with no_grad():
        fast = maxpool2d(x).data
    assert np.array_equal(fast, maxpool2d(x).data)


# -- add / flatten --------------------------------------------------------

def test_add_zeros_is_identity(rng):
    x = rng.normal(size=(2, 3))
    assert np.array_equal(add(Tensor(x), Tensor(np.zeros((2, 3)))).data, x)


def test_add_backward_passes_gradient_to_both(rng):
    a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    g = rng.normal(size=(2, 3))
    backward(tensor_sum(mul(add(a, b), Tensor(g))))
    assert np.array_equal(a.grad, g) and np.array_equal(b.grad, g)


def test_add_shape_mismatch():
    with pytest.raises(ShapeError):
        add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_flatten_width():
    x = Tensor(np.zeros((1, 4, 4, 128)), requires_grad=True)
    out = flatten(x)
    assert out.shape == (1, 2048)
    backward(tensor_sum(out))
    assert x.grad.shape == (1, 4, 4, 128)


# -- backward -------------------------------------------------------------

def test_backward_sum():
    w = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    backward(tensor_sum(w))
    assert np.array_equal(w.grad, np.ones(3))


def test_backward_sum_of_squares():
    w = Tensor([1.0, 2.0], requires_grad=True)
    grads = backward(tensor_sum(mul(w, w)))
    assert np.array_equal(grads[w], [2.0, 4.0])


def test_unreached_params_get_zero():
    w = Tensor([1.0, 2.0], requires_grad=True)
    unused = Tensor(np.ones((3, 3)), requires_grad=True)
    grads = backward(tensor_sum(w), params=[w, unused])
    assert np.array_equal(grads[unused], np.zeros((3, 3)))


def test_non_scalar_loss_rejected():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        backward(mul(w, w))


def test_gradients_accumulate_until_reset():
    w = Tensor([1.0, 2.0], requires_grad=True)
    backward(tensor_sum(w))
    backward(tensor_sum(w))
    assert np.array_equal(w.grad, [2.0, 2.0])
    w.zero_grad()
    assert w.grad is None


def test_composed_graph_matches_finite_differences(rng):
    x = rng.normal(size=(2, 6, 6, 2))
    k1, b1 = rng.normal(size=(3, 3, 2, 3)) * 0.5, rng.normal(size=3)
    wd = rng.normal(size=(27, 4)) * 0.3

    def fn(x, k1, b1, wd):
        h = conv2d(x, k1, b1)
        h = maxpool2d(h)
        h = add(h, h)
        return matmul(flatten(h), wd)

    err, _ = gradcheck.check_function(fn, [x, k1, b1, wd], rng, points=100)
    assert err < 1e-5


def test_double_backward_bit_identical(rng):
    x = rng.normal(size=(4, 8, 8, 3))
    k = Tensor(rng.normal(size=(3, 3, 3, 5)), requires_grad=True)
    w = Tensor(rng.normal(size=(80, 3)), requires_grad=True)

    def sweep():
        loss = tensor_sum(matmul(flatten(maxpool2d(conv2d(Tensor(x), k))), w))
        return {id(p): g.copy() for p, g in backward(loss).items()}

    with deterministic():
        first = sweep()
        k.zero_grad()
        w.zero_grad()
        second = sweep()
    assert first.keys() == second.keys()
    for key in first:
        assert first[key].tobytes() == second[key].tobytes()
