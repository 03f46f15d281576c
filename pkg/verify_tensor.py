import sys

import numpy as np
import pytest

from derain.errors import GraphError, InvalidArgumentError, NonFiniteError, ShapeMismatchError
from derain.models import build_djrhr, build_srr
from derain.schemas import DjrhrSpec, SrrSpec
from derain.tensor import GRADCHECK_DTYPE, Graph, check_gradients

GRAD_TOLERANCE = 1e-4


def _rng(seed=0):
    return np.random.default_rng(seed)


def _conv_params(graph, weight, bias=None):
    bias = np.zeros(weight.shape[0]) if bias is None else bias
    return graph.param("w", weight), graph.param("b", bias)


# ---------------------------------------------------------------------------
# forward examples
# ---------------------------------------------------------------------------

def test_conv2d_identity_kernel():
    graph = Graph()
    x = graph.input(_rng().random((1, 1, 3, 3)))
    w, b = _conv_params(graph, np.ones((1, 1, 1, 1)))
    out = graph.conv2d(x, w, b)
    assert np.array_equal(out.data, x.data)


def test_conv2d_hand_cross_correlation():
    graph = Graph()
    x = graph.input(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    w, b = _conv_params(graph, np.ones((1, 1, 3, 3)))
    out = graph.conv2d(x, w, b, pad=1)
    assert np.array_equal(out.data[0, 0], np.array([[10.0, 10.0], [10.0, 10.0]]))


def test_conv2d_constant_field_interior():
    c = 0.75
    kernel = _rng(1).random((1, 1, 3, 3))
    graph = Graph(GRADCHECK_DTYPE)
    x = graph.input(np.full((1, 1, 6, 6), c))
    w, b = _conv_params(graph, kernel)
    out = graph.conv2d(x, w, b)
    assert np.allclose(out.data[0, 0, 1:-1, 1:-1], c * kernel.sum())


def test_conv2d_shape_errors_name_both_shapes():
    graph = Graph()
    x = graph.input(np.zeros((1, 2, 4, 4)))
    w, b = _conv_params(graph, np.zeros((1, 3, 3, 3)))
    with pytest.raises(ShapeMismatchError) as info:
        graph.conv2d(x, w, b)
    assert "(1, 2, 4, 4)" in str(info.value) and "(1, 3, 3, 3)" in str(info.value)

    w0 = graph.param("empty", np.zeros((1, 2, 0, 0)))
    with pytest.raises(InvalidArgumentError):
        graph.conv2d(x, w0, graph.param("b0", np.zeros(1)))


def test_conv2d_linearity():
    rng = _rng(2)
    weight = rng.standard_normal((4, 3, 3, 3))
    x, y = rng.random((2, 3, 8, 8)), rng.random((2, 3, 8, 8))
    alpha, beta = 0.7, -1.3

    def conv(array):
        graph = Graph(GRADCHECK_DTYPE, record=False)
        w, b = _conv_params(graph, weight)
        return graph.conv2d(graph.input(array), w, b).data

    combined = conv(alpha * x + beta * y)
    separate = alpha * conv(x) + beta * conv(y)
    assert np.abs(combined - separate).max() <= 1e-5 * np.abs(separate).max()


def test_relu_examples():
    graph = Graph()
    x = graph.input(np.array([-1.0, 0.0, 2.0]).reshape(1, 1, 1, 3))
    assert graph.relu(x).data.ravel().tolist() == [0.0, 0.0, 2.0]

    negative = graph.input(-_rng().random((1, 2, 3, 3)) - 0.1)
    assert not graph.relu(negative).data.any()

    mixed = graph.input(_rng(3).standard_normal((1, 2, 4, 4)))
    once = graph.relu(mixed)
    assert np.array_equal(graph.relu(once).data, once.data)


def test_relu_gradient_at_zero_and_negative():
    graph = Graph(GRADCHECK_DTYPE)
    x = graph.param("x", np.array([-2.0, -0.5, 0.0, 1.5]).reshape(1, 1, 1, 4))
    loss = graph.sum_all(graph.relu(x))
    assert graph.backward(loss)["x"].ravel().tolist() == [0.0, 0.0, 0.0, 1.0]


def test_concat_split_round_trip():
    rng = _rng(4)
    graph = Graph()
    subbands = graph.input(rng.random((2, 12, 5, 5)))
    dark = graph.input(rng.random((2, 1, 5, 5)))
    merged = graph.concat_channels([subbands, dark])
    assert merged.shape == (2, 13, 5, 5)

    back_subbands, back_dark = graph.split_channels(merged, [12, 1])
    assert np.array_equal(back_subbands.data, subbands.data)
    assert np.array_equal(back_dark.data, dark.data)
    assert np.array_equal(graph.concat_channels([dark]).data, dark.data)


def test_concat_error_names_offending_part():
    graph = Graph()
    a = graph.input(np.zeros((1, 2, 4, 4)))
    b = graph.input(np.zeros((1, 1, 4, 5)))
    with pytest.raises(ShapeMismatchError, match="part 1"):
        graph.concat_channels([a, b])


def test_frobenius_examples():
    rng = _rng(5)
    graph = Graph(GRADCHECK_DTYPE)
    b = rng.random((3, 2, 4, 4))
    same = graph.frobenius_sq(graph.input(b), graph.input(b))
    assert same.item() == 0.0

    shifted = graph.frobenius_sq(graph.input(b + 1.0), graph.input(b))
    assert shifted.item() == pytest.approx(2 * 4 * 4)

    a = rng.random((3, 2, 4, 4))
    oracle = 0.0
    for value_a, value_b in zip(a.ravel(), b.ravel()):
        oracle += (value_a - value_b) ** 2
    oracle /= 3
    assert graph.frobenius_sq(graph.input(a), graph.input(b)).item() == pytest.approx(oracle, rel=1e-6)

    with pytest.raises(ShapeMismatchError):
        graph.frobenius_sq(graph.input(a), graph.input(b[:, :1]))


# ---------------------------------------------------------------------------
# reverse mode
# ---------------------------------------------------------------------------

def test_sum_gradient_is_all_ones():
    graph = Graph()
    x = graph.param("x", _rng().random((2, 3, 4, 4)))
    grads = graph.backward(graph.sum_all(x))
    assert np.array_equal(grads["x"], np.ones((2, 3, 4, 4), dtype=np.float32))


def test_disconnected_parameter_gets_zero_gradient():
    graph = Graph()
    x = graph.param("x", _rng().random((1, 1, 2, 2)))
    graph.param("unused", np.ones((3,)))
    grads = graph.backward(graph.sum_all(x))
    assert np.array_equal(grads["unused"], np.zeros(3, dtype=np.float32))


def test_backward_errors():
    graph = Graph()
    x = graph.param("x", np.ones((1, 1, 2, 2)))
    with pytest.raises(GraphError):
        graph.backward(graph.relu(x))

    other = Graph()
    foreign = other.sum_all(other.param("y", np.ones((1, 1, 2, 2))))
    with pytest.raises(GraphError):
        graph.backward(foreign)

    silent = Graph(record=False)
    loss = silent.sum_all(silent.param("z", np.ones((1, 1, 2, 2))))
    with pytest.raises(GraphError):
        silent.backward(loss)


def test_non_finite_input_rejected():
    graph = Graph()
    with pytest.raises(NonFiniteError):
        graph.input(np.full((1, 1, 2, 2), np.nan))


def _srr_loss_graph(net, X, Y):
    graph = Graph()
    x = graph.input(X)
    total = graph.frobenius_sq(graph.add(x, net.forward(graph, x)), graph.input(Y))
    return graph, total


def test_backward_is_bitwise_deterministic():
    net = build_srr(SrrSpec(depth=4, width=8), seed=3)
    rng = _rng(6)
    X, Y = rng.random((2, 12, 6, 6)), rng.random((2, 12, 6, 6))
    first = _srr_loss_graph(net, X, Y)
    second = _srr_loss_graph(net, X, Y)
    assert first[1].item() == second[1].item()
    grads_a, grads_b = first[0].backward(first[1]), second[0].backward(second[1])
    for name in grads_a:
        assert np.array_equal(grads_a[name], grads_b[name])
    again = first[0].backward(first[1])
    for name in grads_a:
        assert np.array_equal(grads_a[name], again[name])


# ---------------------------------------------------------------------------
# finite-difference gradient checks (64-bit, h = 1e-5)
# ---------------------------------------------------------------------------

def _check(build, arrays, max_entries=None):
    errors = check_gradients(build, arrays, h=1e-5, max_entries=max_entries)
    worst = max(errors.values())
    assert worst < GRAD_TOLERANCE, errors


def test_gradcheck_conv2d():
    rng = _rng(7)
    target = rng.standard_normal((2, 3, 8, 8))

    def build(graph, t):
        out = graph.conv2d(t["x"], t["w"], t["b"])
        return graph.frobenius_sq(out, graph.input(target))

    _check(build, {"x": rng.standard_normal((2, 4, 8, 8)), "w": rng.standard_normal((3, 4, 3, 3)),
                   "b": rng.standard_normal(3)})


def test_gradcheck_conv2d_strided_unpadded():
    rng = _rng(8)
    target = rng.standard_normal((1, 2, 3, 3))

    def build(graph, t):
        out = graph.conv2d(t["x"], t["w"], t["b"], stride=2, pad=0)
        return graph.frobenius_sq(out, graph.input(target))

    _check(build, {"x": rng.standard_normal((1, 3, 8, 8)), "w": rng.standard_normal((2, 3, 3, 3)),
                   "b": rng.standard_normal(2)})


def test_gradcheck_relu():
    rng = _rng(9)
    # keep entries away from the kink
    x = rng.uniform(0.1, 1.0, (2, 4, 8, 8)) * rng.choice([-1.0, 1.0], (2, 4, 8, 8))
    target = rng.standard_normal((2, 4, 8, 8))
    _check(lambda graph, t: graph.frobenius_sq(graph.relu(t["x"]), graph.input(target)), {"x": x})


def test_gradcheck_concat_slice():
    rng = _rng(10)
    target = rng.standard_normal((2, 2, 8, 8))

    def build(graph, t):
        merged = graph.concat_channels([t["a"], t["b"]])
        middle = graph.slice_channels(merged, 2, 4)
        return graph.frobenius_sq(middle, graph.input(target))

    _check(build, {"a": rng.standard_normal((2, 3, 8, 8)), "b": rng.standard_normal((2, 2, 8, 8))})


def test_gradcheck_add_sub_scale():
    rng = _rng(11)
    target = rng.standard_normal((2, 4, 8, 8))

    def build(graph, t):
        mixed = graph.sub(graph.add(t["a"], graph.scale(t["b"], 0.3)), t["c"])
        return graph.frobenius_sq(mixed, graph.input(target))

    _check(build, {name: rng.standard_normal((2, 4, 8, 8)) for name in "abc"})


def test_gradcheck_frobenius_both_sides():
    rng = _rng(12)
    _check(lambda graph, t: graph.frobenius_sq(t["a"], t["b"]),
           {"a": rng.standard_normal((2, 4, 8, 8)), "b": rng.standard_normal((2, 4, 8, 8))})


def test_gradcheck_srr_network():
    net = build_srr(SrrSpec(depth=4, width=8), seed=1)
    rng = _rng(13)
    # randomize the zero-initialized last layer so every parameter receives gradient
    net.params["conv03.weight"] = rng.standard_normal(net.params["conv03.weight"].shape).astype(np.float32) * 0.1
    X, Y = rng.random((2, 12, 4, 4)), rng.random((2, 12, 4, 4))

    def build(graph, t):
        x = t["X"]
        return graph.frobenius_sq(graph.add(x, net.forward(graph, x, t)), graph.input(Y))

    _check(build, {"X": X, **net.params}, max_entries=24)


def test_gradcheck_djrhr_network():
    net = build_djrhr(DjrhrSpec(growth=4, blocks=1, layers_per_block=2), seed=2)
    rng = _rng(14)
    net.params["head.weight"] = rng.standard_normal(net.params["head.weight"].shape).astype(np.float32) * 0.1
    X, Y = rng.random((2, 13, 4, 4)), rng.random((2, 13, 4, 4))

    def build(graph, t):
        x = t["X"]
        prediction = graph.add(x, net.forward(graph, x, t))
        subbands, dark = graph.split_channels(prediction, [12, 1])
        l1 = graph.frobenius_sq(subbands, graph.input(Y[:, :12]))
        l2 = graph.frobenius_sq(dark, graph.input(Y[:, 12:]))
        return graph.add(l1, graph.scale(l2, 0.5))

    _check(build, {"X": X, **net.params}, max_entries=24)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
