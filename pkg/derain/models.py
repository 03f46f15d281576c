"""
SRR-net and DJRHR-net: residual networks in the Haar subband domain.

Both networks compute f(X); the residual X + f(X) is formed by the loss and
inference helpers so one graph definition serves training and inference.
The final conv of each network is zero-initialized, so an untrained network
is the identity map.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import ValidationError

from derain.checkpoint import Checkpoint, check_param_shapes
from derain.errors import ChannelCountError, CheckpointFormatError, ShapeMismatchError
from derain.features import DJRHR_CHANNELS, SRR_CHANNELS, pack_djrhr, pack_srr, unpack_to_image
from derain.schemas import DjrhrSpec, LossWeights, SrrSpec
from derain.tensor import DEFAULT_DTYPE, Graph, Tensor

logger = logging.getLogger(__name__)

KIND_CODES = {"srr": 0, "djrhr": 1}


def _kaiming_uniform(rng: np.random.Generator, out_ch: int, in_ch: int, k: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (in_ch * k * k))
    return rng.uniform(-bound, bound, size=(out_ch, in_ch, k, k)).astype(DEFAULT_DTYPE)


class Network:
    """Named parameter arrays plus the forward definition of f(X)"""

    in_channels: int

    def __init__(self, spec, params: dict):
        self.spec = spec
        self.params = params

    @property
    def kind(self) -> str:
        return self.spec.kind

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def header(self) -> dict:
        fields = self.spec.model_dump(exclude={"kind"})
        return {"kind": KIND_CODES[self.kind], **fields}

    def _bind(self, graph: Graph, x: Tensor, params: Optional[dict]) -> dict:
        if x.shape[1] != self.in_channels:
            raise ChannelCountError(f"{self.kind} expects {self.in_channels} input channels, got {x.shape[1]}")
        return params if params is not None else graph.bind(self.params)

    def _conv(self, graph: Graph, p: dict, name: str, x: Tensor) -> Tensor:
        return graph.conv2d(x, p[f"{name}.weight"], p[f"{name}.bias"])

    def forward(self, graph: Graph, x: Tensor, params: Optional[dict] = None) -> Tensor:
        raise NotImplementedError


class SrrNet(Network):
    in_channels = SRR_CHANNELS

    def forward(self, graph: Graph, x: Tensor, params: Optional[dict] = None) -> Tensor:
        p = self._bind(graph, x, params)
        h = x
        for i in range(self.spec.depth):
            h = self._conv(graph, p, f"conv{i:02d}", h)
            if i < self.spec.depth - 1:
                h = graph.relu(h)
        return h


class DjrhrNet(Network):
    in_channels = DJRHR_CHANNELS

    def forward(self, graph: Graph, x: Tensor, params: Optional[dict] = None) -> Tensor:
        p = self._bind(graph, x, params)
        h = self._conv(graph, p, "stem", x)
        for b in range(self.spec.blocks):
            features = [h]
            for layer in range(self.spec.layers_per_block):
                merged = features[0] if len(features) == 1 else graph.concat_channels(features)
                features.append(self._conv(graph, p, f"block{b}.layer{layer}", graph.relu(merged)))
            h = graph.concat_channels(features)
            if b < self.spec.blocks - 1:
                h = self._conv(graph, p, f"trans{b}", graph.relu(h))
        return self._conv(graph, p, "head", graph.relu(h))


def _add_conv(params: dict, rng, name: str, in_ch: int, out_ch: int, k: int, zero: bool = False):
    if zero:
        params[f"{name}.weight"] = np.zeros((out_ch, in_ch, k, k), dtype=DEFAULT_DTYPE)
    else:
        params[f"{name}.weight"] = _kaiming_uniform(rng, out_ch, in_ch, k)
    params[f"{name}.bias"] = np.zeros(out_ch, dtype=DEFAULT_DTYPE)


def build_srr(spec: SrrSpec = None, seed: int = 0) -> SrrNet:
    spec = spec or SrrSpec()
    rng = np.random.default_rng(seed)
    params = {}
    channels = [SRR_CHANNELS] + [spec.width] * (spec.depth - 1) + [SRR_CHANNELS]
    for i in range(spec.depth):
        _add_conv(params, rng, f"conv{i:02d}", channels[i], channels[i + 1], 3, zero=i == spec.depth - 1)
    net = SrrNet(spec, params)
    logger.info(f"Built SRR-net depth={spec.depth} width={spec.width} ({net.param_count()} parameters)")
    return net


def transition_channels(channels: int, growth: int) -> int:
    return max(growth, channels // 2)


def build_djrhr(spec: DjrhrSpec = None, seed: int = 0) -> DjrhrNet:
    spec = spec or DjrhrSpec()
    rng = np.random.default_rng(seed)
    params = {}
    channels = 2 * spec.growth
    _add_conv(params, rng, "stem", DJRHR_CHANNELS, channels, 3)
    for b in range(spec.blocks):
        for layer in range(spec.layers_per_block):
            _add_conv(params, rng, f"block{b}.layer{layer}", channels + layer * spec.growth, spec.growth, 3)
        channels += spec.layers_per_block * spec.growth
        if b < spec.blocks - 1:
            reduced = transition_channels(channels, spec.growth)
            _add_conv(params, rng, f"trans{b}", channels, reduced, 1)
            channels = reduced
    _add_conv(params, rng, "head", channels, DJRHR_CHANNELS, 1, zero=True)
    net = DjrhrNet(spec, params)
    logger.info(
        f"Built DJRHR-net K={spec.growth} L={spec.blocks} layers/block={spec.layers_per_block} "
        f"({net.param_count()} parameters)"
    )
    return net


def build_network(spec, seed: int = 0) -> Network:
    if spec.kind == "srr":
        return build_srr(spec, seed)
    return build_djrhr(spec, seed)


HEADER_FIELDS = {KIND_CODES["srr"]: (SrrSpec, ("depth", "width")),
               KIND_CODES["djrhr"]: (DjrhrSpec, ("blocks", "growth", "layers_per_block"))}


def spec_from_header(header: dict):
    kind = header.get("kind")
    if kind not in HEADER_FIELDS:
        raise CheckpointFormatError(f"checkpoint header has unknown network kind {kind!r}")
    spec_type, names = HEADER_FIELDS[kind]
    missing = [name for name in names if name not in header]
    if missing:
        raise CheckpointFormatError(f"checkpoint header lacks {', '.join(missing)}")
    try:
        return spec_type(**{name: header[name] for name in names})
    except ValidationError as e:
        raise CheckpointFormatError(f"checkpoint header describes an invalid network: {e.error_count()} bad field(s)") from e


def network_from_checkpoint(checkpoint: Checkpoint) -> Network:
    """Rebuild the architecture from the header, then install the saved weights"""
    net = build_network(spec_from_header(checkpoint.header))
    check_param_shapes(net.params, checkpoint.params)
    net.params = {name: checkpoint.params[name].copy() for name in net.params}
    return net


@dataclass
class LossResult:
    graph: Graph
    total: Tensor
    prediction: Tensor
    l1: Optional[Tensor] = None
    l2: Optional[Tensor] = None


def _check_pair(X: np.ndarray, Y: np.ndarray, channels: int):
    if X.shape != Y.shape:
        raise ShapeMismatchError("input/target batch", X.shape, Y.shape)
    if X.ndim != 4 or X.shape[1] != channels:
        raise ChannelCountError(f"expected (N, {channels}, h, w) batches, got {X.shape}")


def srr_loss(net: SrrNet, X: np.ndarray, Y: np.ndarray, graph: Optional[Graph] = None) -> LossResult:
    """(1/N) sum ||Y - X - f(X)||_F^2; the ||W||^2 term is applied as optimizer weight decay"""
    _check_pair(X, Y, SRR_CHANNELS)
    graph = graph or Graph()
    x = graph.input(X, "X")
    prediction = graph.add(x, net.forward(graph, x))
    total = graph.frobenius_sq(prediction, graph.input(Y, "Y"))
    return LossResult(graph=graph, total=total, prediction=prediction)


def djrhr_loss(net: DjrhrNet, X: np.ndarray, Y: np.ndarray, weights: LossWeights = None,
               graph: Optional[Graph] = None) -> LossResult:
    """L1 on the 12 subband channels, L2 on the dark channel, total = L1 + alpha * L2"""
    weights = weights or LossWeights()
    _check_pair(X, Y, DJRHR_CHANNELS)
    graph = graph or Graph()
    x = graph.input(X, "X")
    prediction = graph.add(x, net.forward(graph, x))
    pred_subbands, pred_dark = graph.split_channels(prediction, [SRR_CHANNELS, 1])
    l1 = graph.frobenius_sq(pred_subbands, graph.input(Y[:, :SRR_CHANNELS], "Y1"))
    l2 = graph.frobenius_sq(pred_dark, graph.input(Y[:, SRR_CHANNELS:], "Y2"))
    total = graph.add(l1, graph.scale(l2, weights.alpha))
    return LossResult(graph=graph, total=total, prediction=prediction, l1=l1, l2=l2)


def network_loss(net: Network, X: np.ndarray, Y: np.ndarray, weights: LossWeights = None) -> LossResult:
    if net.kind == "srr":
        return srr_loss(net, X, Y)
    return djrhr_loss(net, X, Y, weights)


def predict_residual(net: Network, tensor: np.ndarray) -> np.ndarray:
    """X + f(X) without recording a tape"""
    graph = Graph(record=False)
    x = graph.input(tensor)
    return np.array(graph.add(x, net.forward(graph, x)).data)


def _infer(net: Network, image: np.ndarray, pack_fn) -> np.ndarray:
    image = np.asarray(image, dtype=DEFAULT_DTYPE)
    single = image.ndim == 3
    batch = image[None] if single else image
    pack = pack_fn(batch)
    restored = unpack_to_image(pack.with_tensor(predict_residual(net, pack.tensor)))
    return restored[0] if single else restored


def infer_srr(net: SrrNet, image: np.ndarray) -> np.ndarray:
    return _infer(net, image, pack_srr)


def infer_djrhr(net: DjrhrNet, image: np.ndarray, radius: int = 0) -> np.ndarray:
    """Channel 13 of the prediction is dropped when reconstructing the image"""
    return _infer(net, image, lambda batch: pack_djrhr(batch, radius))


def infer(net: Network, image: np.ndarray) -> np.ndarray:
    if net.kind == "srr":
        return infer_srr(net, image)
    return infer_djrhr(net, image)
