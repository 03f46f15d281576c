"""
Minimal deterministic tensor engine with reverse-mode differentiation.

A Graph records every primitive op in execution order (which is a topological
order), so backward simply walks the recorded nodes in reverse.
"""
import logging
from dataclasses import dataclass
from itertools import count
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from derain.errors import (
    GraphError, InvalidArgumentError, NonFiniteError, ShapeMismatchError
)

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float32
GRADCHECK_DTYPE = np.float64

_tensor_ids = count()


class Tensor:
    """Immutable array produced exactly once inside a Graph"""

    __slots__ = ("data", "tid", "name")

    def __init__(self, data: np.ndarray, name: Optional[str] = None):
        data.setflags(write=False)
        self.data = data
        self.tid = next(_tensor_ids)
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.data.dtype})"


@dataclass(frozen=True)
class Node:
    op: str
    inputs: tuple
    output: int
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def _check_finite(where: str, array: np.ndarray):
    if not np.isfinite(array).all():
        raise NonFiniteError(f"{where} produced NaN or Inf")


def _require_rank4(where: str, t: Tensor):
    if t.data.ndim != 4:
        raise ShapeMismatchError(f"{where} expects (batch, channels, height, width)", ("B", "C", "H", "W"), t.shape)


class Graph:
    """Records ops of one forward pass together with the parameter set W"""

    def __init__(self, dtype=DEFAULT_DTYPE, record: bool = True):
        self.dtype = np.dtype(dtype)
        self.record = record
        self.nodes: list[Node] = []
        self.params: dict[str, Tensor] = {}
        self._outputs: set[int] = set()

    # ------------------------------------------------------------------
    # leaves
    # ------------------------------------------------------------------
    def input(self, value, name: Optional[str] = None) -> Tensor:
        array = np.array(value, dtype=self.dtype)
        if array.ndim != 4:
            raise ShapeMismatchError("graph input must be rank 4", ("B", "C", "H", "W"), array.shape)
        _check_finite("input", array)
        return Tensor(array, name)

    def param(self, name: str, value) -> Tensor:
        """Register a trainable array; returns the already bound tensor on repeat"""
        if name in self.params:
            return self.params[name]
        array = np.array(value, dtype=self.dtype)
        _check_finite(f"parameter {name}", array)
        tensor = Tensor(array, name)
        self.params[name] = tensor
        return tensor

    def bind(self, arrays: dict) -> dict:
        return {name: self.param(name, value) for name, value in arrays.items()}

    def _emit(self, op: str, inputs: Sequence[Tensor], out: np.ndarray, backward) -> Tensor:
        out = np.asarray(out)
        _check_finite(op, out)
        tensor = Tensor(out)
        if self.record:
            self.nodes.append(Node(op, tuple(t.tid for t in inputs), tensor.tid, backward))
            self._outputs.add(tensor.tid)
        return tensor

    # ------------------------------------------------------------------
    # primitive ops
    # ------------------------------------------------------------------
    def conv2d(self, x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: Optional[int] = None) -> Tensor:
        """Cross-correlation with zero padding; pad defaults to k // 2 ("same" at stride 1)"""
        _require_rank4("conv2d", x)
        if weight.data.ndim != 4 or weight.shape[2] != weight.shape[3]:
            raise ShapeMismatchError("conv2d weight must be (out_ch, in_ch, k, k)", x.shape, weight.shape)
        out_ch, in_ch, k, _ = weight.shape
        if k <= 0:
            raise InvalidArgumentError(f"conv2d kernel size must be positive, got {k}")
        if x.shape[1] != in_ch:
            raise ShapeMismatchError("conv2d input/weight channel mismatch", x.shape, weight.shape)
        if bias.shape != (out_ch,):
            raise ShapeMismatchError("conv2d bias/weight mismatch", bias.shape, weight.shape)
        if stride < 1:
            raise InvalidArgumentError(f"conv2d stride must be >= 1, got {stride}")
        pad = k // 2 if pad is None else pad
        if pad < 0:
            raise InvalidArgumentError(f"conv2d pad must be >= 0, got {pad}")

        batch, channels, height, width = x.shape
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        out_h = (height + 2 * pad - k) // stride + 1
        out_w = (width + 2 * pad - k) // stride + 1
        if out_h <= 0 or out_w <= 0:
            raise ShapeMismatchError("conv2d kernel larger than padded input", x.shape, weight.shape)

        windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_h * out_w, channels * k * k)
        wmat = weight.data.reshape(out_ch, -1)
        out = (cols @ wmat.T).reshape(batch, out_h, out_w, out_ch).transpose(0, 3, 1, 2)
        out = np.ascontiguousarray(out + bias.data[None, :, None, None])

        def backward(g):
            g2 = g.transpose(0, 2, 3, 1).reshape(-1, out_ch)
            dw = (g2.T @ cols).reshape(weight.shape)
            db = g.sum(axis=(0, 2, 3))
            dcols = (g2 @ wmat).reshape(batch, out_h, out_w, channels, k, k)
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            dx = np.ascontiguousarray(dxp[:, :, pad:pad + height, pad:pad + width])
            return dx, dw, db

        return self._emit("conv2d", (x, weight, bias), out, backward)

    def relu(self, x: Tensor) -> Tensor:
        mask = x.data > 0
        out = np.where(mask, x.data, 0).astype(x.data.dtype)

        def backward(g):
            # subgradient at exactly 0 is 0
            return (np.where(mask, g, 0).astype(g.dtype),)

        return self._emit("relu", (x,), out, backward)

    def concat_channels(self, parts: Sequence[Tensor]) -> Tensor:
        if not parts:
            raise InvalidArgumentError("concat_channels needs at least one part")
        for part in parts:
            _require_rank4("concat_channels", part)
        ref = parts[0].shape
        for index, part in enumerate(parts):
            if part.shape[0] != ref[0] or part.shape[2:] != ref[2:]:
                raise ShapeMismatchError(f"concat_channels part {index} does not match part 0", part.shape, ref)
        bounds = np.cumsum([0] + [p.shape[1] for p in parts])
        out = np.concatenate([p.data for p in parts], axis=1)

        def backward(g):
            return tuple(np.ascontiguousarray(g[:, lo:hi]) for lo, hi in zip(bounds[:-1], bounds[1:]))

        return self._emit("concat", tuple(parts), out, backward)

    def slice_channels(self, x: Tensor, start: int, stop: int) -> Tensor:
        _require_rank4("slice_channels", x)
        if not 0 <= start < stop <= x.shape[1]:
            raise InvalidArgumentError(f"channel slice [{start}:{stop}] out of range for {x.shape[1]} channels")
        out = np.ascontiguousarray(x.data[:, start:stop])
        full = x.shape

        def backward(g):
            dx = np.zeros(full, dtype=g.dtype)
            dx[:, start:stop] = g
            return (dx,)

        return self._emit("slice", (x,), out, backward)

    def split_channels(self, x: Tensor, sizes: Sequence[int]) -> list:
        if sum(sizes) != x.shape[1]:
            raise InvalidArgumentError(f"split sizes {list(sizes)} do not sum to {x.shape[1]} channels")
        bounds = np.cumsum([0] + list(sizes))
        return [self.slice_channels(x, int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:])]

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeMismatchError("add", a.shape, b.shape)
        return self._emit("add", (a, b), a.data + b.data, lambda g: (g, g))

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeMismatchError("sub", a.shape, b.shape)
        return self._emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))

    def scale(self, x: Tensor, alpha: float) -> Tensor:
        out = np.asarray(x.data * alpha, dtype=x.data.dtype)
        return self._emit("scale", (x,), out, lambda g: (np.asarray(g * alpha, dtype=g.dtype),))

    def sum_all(self, x: Tensor) -> Tensor:
        out = np.asarray(np.sum(x.data, dtype=np.float64))
        dtype = x.data.dtype
        shape = x.shape
        return self._emit("sum", (x,), out, lambda g: (np.full(shape, g, dtype=dtype),))

    def frobenius_sq(self, a: Tensor, b: Tensor) -> Tensor:
        """Squared Frobenius distance averaged over the batch, accumulated in 64-bit"""
        if a.shape != b.shape:
            raise ShapeMismatchError("frobenius_sq", a.shape, b.shape)
        if a.data.ndim == 0:
            raise InvalidArgumentError("frobenius_sq expects batched tensors")
        batch = a.shape[0]
        diff = a.data.astype(np.float64) - b.data.astype(np.float64)
        out = np.asarray(np.sum(np.square(diff)) / batch)
        a_dtype, b_dtype = a.data.dtype, b.data.dtype

        def backward(g):
            da = (2.0 * float(g) / batch) * diff
            return da.astype(a_dtype), (-da).astype(b_dtype)

        return self._emit("frobenius_sq", (a, b), out, backward)

    # ------------------------------------------------------------------
    # reverse mode
    # ------------------------------------------------------------------
    def _propagate(self, loss: Tensor) -> dict:
        if not self.record:
            raise GraphError("graph was built without recording; gradients are unavailable")
        if loss.data.ndim != 0:
            raise GraphError(f"loss must be a scalar, got shape {loss.shape}")
        if loss.tid not in self._outputs:
            raise GraphError("loss was not produced by this graph")

        grads = {loss.tid: np.ones((), dtype=loss.data.dtype)}
        for node in reversed(self.nodes):
            g = grads.pop(node.output, None)
            if g is None:
                continue
            for tid, gi in zip(node.inputs, node.backward(g)):
                if gi is None:
                    continue
                _check_finite(f"{node.op} backward", gi)
                if tid in grads:
                    grads[tid] = grads[tid] + gi
                else:
                    grads[tid] = gi
        return grads

    def backward(self, loss: Tensor) -> dict:
        """dLoss/dParam for every registered parameter; disconnected ones get zeros"""
        grads = self._propagate(loss)
        return {
            name: np.asarray(grads.get(t.tid, np.zeros_like(t.data)), dtype=t.data.dtype)
            for name, t in self.params.items()
        }


def check_gradients(build, arrays: dict, h: float = 1e-5, max_entries: Optional[int] = None, seed: int = 0) -> dict:
    """
    Compare analytic gradients against central finite differences in 64-bit.

    build(graph, tensors) must return a scalar loss; every array in `arrays`
    is registered as a parameter so its gradient is reported. Returns the
    normwise relative error max|a - n| / max(max|a|, max|n|) per array.
    """
    base = {name: np.array(value, dtype=GRADCHECK_DTYPE) for name, value in arrays.items()}

    def evaluate(values, record):
        graph = Graph(GRADCHECK_DTYPE, record=record)
        loss = build(graph, graph.bind(values))
        return graph, loss

    graph, loss = evaluate(base, True)
    analytic = graph.backward(loss)

    rng = np.random.default_rng(seed)
    errors = {}
    for name, value in base.items():
        flat_count = value.size
        if max_entries is not None and flat_count > max_entries:
            picks = np.sort(rng.choice(flat_count, size=max_entries, replace=False))
        else:
            picks = np.arange(flat_count)
        numeric = np.empty(len(picks))
        for slot, flat_index in enumerate(picks):
            index = np.unravel_index(flat_index, value.shape)
            plus = {k: v.copy() for k, v in base.items()}
            minus = {k: v.copy() for k, v in base.items()}
            plus[name][index] += h
            minus[name][index] -= h
            numeric[slot] = (evaluate(plus, False)[1].item() - evaluate(minus, False)[1].item()) / (2 * h)
        exact = analytic[name].reshape(-1)[picks]
        scale = max(np.abs(exact).max(initial=0.0), np.abs(numeric).max(initial=0.0))
        errors[name] = 0.0 if scale == 0 else float(np.abs(exact - numeric).max() / scale)
        logger.debug(f"gradcheck {name}: {len(picks)} entries, rel error {errors[name]:.3e}")
    return errors
