"""Tests for tensors, the tape and the differentiable primitives."""

import numpy as np
import pytest

from fdvmnet import tensor
from fdvmnet.errors import ContractError, DomainError, ShapeError
from fdvmnet.gradcheck import gradcheck
from fdvmnet.tensor import Tape, Tensor, backward


def _param(rng: np.random.Generator, *dims: int) -> Tensor:
    return Tensor(rng.normal(size=dims), requires_grad=True)


def test_tensor_rejects_empty_extent() -> None:
    """Test that every extent must be at least 1."""
    with pytest.raises(ShapeError):
        Tensor(np.zeros((0, 3)))


def test_scalar_becomes_rank_one() -> None:
    """Test that a scalar is stored with dims (1,)."""
    t = Tensor(2.5)
    assert t.dims == (1,)
    assert t.item() == 2.5


def test_add_dims_must_match() -> None:
    """Test elementwise ops refuse mismatched dims."""
    with pytest.raises(ShapeError):
        tensor.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


def test_backward_of_mean_product() -> None:
    """Test d mean(x*y) / dx = y / n."""
    rng = np.random.default_rng(0)
    x, y = _param(rng, 3, 4), _param(rng, 3, 4)
    with Tape() as tape:
        loss = tensor.mean(tensor.hadamard(x, y))
    backward(loss, tape)
    assert x.grad is not None and y.grad is not None
    np.testing.assert_allclose(x.grad, y.data / 12)
    np.testing.assert_allclose(y.grad, x.data / 12)


def test_unreached_leaf_gets_zero_grad() -> None:
    """Test that leaves not feeding the loss end with zero gradients."""
    rng = np.random.default_rng(1)
    a, b, c = _param(rng, 2), _param(rng, 2), _param(rng, 2)
    with Tape() as tape:
        loss = tensor.sum_all(tensor.add(a, b))
        tensor.scale(c, 2.0)
    backward(loss, tape)
    assert c.grad is not None
    assert np.all(c.grad == 0.0)
    np.testing.assert_array_equal(a.grad, np.ones(2))


def test_gradients_accumulate_over_reuse() -> None:
    """Test a tensor used twice receives both contributions."""
    x = Tensor([3.0], requires_grad=True)
    with Tape() as tape:
        loss = tensor.hadamard(x, x)
    backward(loss, tape)
    assert x.grad is not None
    assert x.grad[0] == pytest.approx(6.0)


def test_backward_needs_scalar() -> None:
    """Test that backward refuses a non-scalar loss."""
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = tensor.scale(x, 2.0)
    with pytest.raises(ContractError):
        backward(y, tape)


def test_nothing_recorded_without_tape() -> None:
    """Test ops outside a tape produce untracked tensors."""
    x = Tensor(np.ones(3), requires_grad=True)
    assert not tensor.relu(x).requires_grad


def test_elementwise_dispatch() -> None:
    """Test the tagged elementwise entry point."""
    a = Tensor([-1.0, 2.0])
    np.testing.assert_array_equal(tensor.elementwise("relu", a).data,
                                  [0.0, 2.0])
    np.testing.assert_array_equal(
        tensor.elementwise("scale", a, factor=3.0).data, [-3.0, 6.0])
    with pytest.raises(ContractError):
        tensor.elementwise("tanh", a)


def test_log1p_domain() -> None:
    """Test log1p refuses values <= -1."""
    with pytest.raises(DomainError):
        tensor.log1p(Tensor([-1.0]))


def test_sequence_layout() -> None:
    """Test to_sequence uses L = h * W + w and to_image inverts it."""
    rng = np.random.default_rng(2)
    img = Tensor(rng.normal(size=(2, 3, 4, 5)))
    seq = tensor.to_sequence(img)
    assert seq.shape == (2, 20, 3)
    assert seq.data[1, 2 * 5 + 3, 2] == img.data[1, 2, 2, 3]
    np.testing.assert_array_equal(tensor.to_image(seq, 4, 5).data, img.data)


def test_conv2d_matches_direct_sum() -> None:
    """Test conv2d against an explicit zero-padded cross-correlation."""
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 2, 4, 5))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out = tensor.conv2d(Tensor(x), Tensor(k), Tensor(b)).data

    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    expected = np.zeros((1, 3, 4, 5))
    for o in range(3):
        for i in range(4):
            for j in range(5):
                window = padded[0, :, i:i + 3, j:j + 3]
                expected[0, o, i, j] = (window * k[o]).sum() + b[o]
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_conv2d_channel_mismatch() -> None:
    """Test conv2d refuses a kernel for the wrong channel count."""
    with pytest.raises(ShapeError):
        tensor.conv2d(Tensor(np.ones((1, 2, 4, 4))),
                      Tensor(np.ones((3, 4, 3, 3))), Tensor(np.zeros(3)))


def test_conv_gradients() -> None:
    """Test conv2d and conv1d gradients against finite differences."""
    rng = np.random.default_rng(4)
    x = _param(rng, 2, 3, 4, 4)
    k = _param(rng, 2, 3, 3, 3)
    b = _param(rng, 2)
    k1 = _param(rng, 2, 3)
    b1 = _param(rng, 2)
    w = Tensor(rng.normal(size=(2, 16, 2)))

    def loss() -> Tensor:
        seq = tensor.to_sequence(tensor.conv2d(x, k, b))
        return tensor.sum_all(
            tensor.hadamard(tensor.conv1d_depthwise(seq, k1, b1), w))

    bad = gradcheck(loss, {"x": x, "k": k, "b": b, "k1": k1, "b1": b1},
                    samples=6)
    assert bad == []


def test_layer_norm_statistics() -> None:
    """Test that unit affine LayerNorm gives zero mean, unit variance."""
    rng = np.random.default_rng(5)
    seq = Tensor(rng.normal(3.0, 2.0, size=(2, 7, 6)))
    out = tensor.layer_norm(seq, Tensor(np.ones(6)), Tensor(np.zeros(6)))
    np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.data.var(axis=-1), 1.0, atol=1e-4)


def test_softmax_rows_sum_to_one() -> None:
    """Test softmax stays finite for large inputs and normalises."""
    t = Tensor(np.array([[1000.0, 1000.0], [0.0, -1000.0]]))
    y = tensor.softmax(t, axis=-1).data
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(y.sum(axis=-1), 1.0)
    np.testing.assert_allclose(y[0], [0.5, 0.5])


def test_norm_softmax_linear_gradients() -> None:
    """Test layer_norm, softmax and linear gradients."""
    rng = np.random.default_rng(6)
    seq = _param(rng, 2, 5, 4)
    gamma, beta = _param(rng, 4), _param(rng, 4)
    weight, bias = _param(rng, 4, 3), _param(rng, 3)
    w = Tensor(rng.normal(size=(2, 5, 3)))

    def loss() -> Tensor:
        y = tensor.softmax(tensor.layer_norm(seq, gamma, beta), axis=-1)
        return tensor.sum_all(
            tensor.hadamard(tensor.linear(y, weight, bias), w))

    bad = gradcheck(loss, {"seq": seq, "gamma": gamma, "beta": beta,
                           "weight": weight, "bias": bias}, samples=6)
    assert bad == []


def test_bilinear_resize_same_size_is_copy() -> None:
    """Test resizing to the input size returns the same values."""
    rng = np.random.default_rng(7)
    img = Tensor(rng.normal(size=(1, 2, 5, 6)))
    np.testing.assert_array_equal(tensor.bilinear_resize(img, 5, 6).data,
                                  img.data)


def test_bilinear_resize_keeps_constants() -> None:
    """Test that a constant image stays constant in both directions."""
    img = Tensor(np.full((1, 1, 5, 7), 0.3))
    for h, w in ((9, 4), (3, 11), (64, 64)):
        out = tensor.bilinear_resize(img, h, w).data
        assert out.shape == (1, 1, h, w)
        np.testing.assert_allclose(out, 0.3)


def test_bilinear_resize_gradient() -> None:
    """Test the resize gradient (transpose of the interpolation)."""
    rng = np.random.default_rng(8)
    img = _param(rng, 1, 2, 5, 3)
    w = Tensor(rng.normal(size=(1, 2, 8, 8)))

    def loss() -> Tensor:
        return tensor.sum_all(
            tensor.hadamard(tensor.bilinear_resize(img, 8, 8), w))

    assert gradcheck(loss, {"img": img}, samples=10) == []


def test_conv1d_hand_example() -> None:
    """Test [1, 2, 3] with kernel (1, 1, 1) and zero padding."""
    seq = Tensor(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1))
    out = tensor.conv1d_depthwise(seq, Tensor(np.ones((1, 3))),
                                  Tensor(np.zeros(1)))
    np.testing.assert_allclose(out.data.reshape(-1), [3.0, 6.0, 5.0])


def test_layer_norm_hand_example() -> None:
    """Test LayerNorm of [1, 2, 3] with unit affine."""
    seq = Tensor(np.array([[[1.0, 2.0, 3.0]]]))
    out = tensor.layer_norm(seq, Tensor(np.ones(3)), Tensor(np.zeros(3)),
                            eps=1e-12)
    np.testing.assert_allclose(out.data.reshape(-1),
                               [-1.2247449, 0.0, 1.2247449], atol=1e-6)


def test_softmax_hand_example() -> None:
    """Test softmax of [0, ln 3] is [0.25, 0.75]."""
    y = tensor.softmax(Tensor([0.0, np.log(3.0)])).data
    np.testing.assert_allclose(y, [0.25, 0.75])


def test_linear_hand_example() -> None:
    """Test [1, 2] @ [[1, 0], [0, 2]] + [1, 1]."""
    out = tensor.linear(Tensor([[1.0, 2.0]]),
                        Tensor([[1.0, 0.0], [0.0, 2.0]]),
                        Tensor([1.0, 1.0]))
    np.testing.assert_allclose(out.data, [[2.0, 5.0]])


def test_bilinear_resize_hand_example() -> None:
    """Test [0, 1] widened to 4 samples with half-pixel centres."""
    img = Tensor(np.array([0.0, 1.0]).reshape(1, 1, 1, 2))
    out = tensor.bilinear_resize(img, 1, 4).data
    np.testing.assert_allclose(out.reshape(-1), [0.0, 0.25, 0.75, 1.0])


def test_bilinear_resize_stays_in_range() -> None:
    """Test resized values stay within each channel's min and max."""
    rng = np.random.default_rng(9)
    img = rng.normal(size=(2, 3, 7, 5))
    for h, w in ((3, 2), (11, 13), (64, 64)):
        out = tensor.bilinear_resize(Tensor(img), h, w).data
        for b in range(2):
            for c in range(3):
                assert out[b, c].min() >= img[b, c].min() - 1e-12
                assert out[b, c].max() <= img[b, c].max() + 1e-12
