import json
import sys

import numpy as np
import pytest
from pydantic import ValidationError

from derain.config import RunConfig
from derain.errors import ChannelCountError, DatasetModelMismatchError, ShapeMismatchError
from derain.features import pack_djrhr
from derain.models import (
    build_djrhr, build_network, build_srr, djrhr_loss, infer, infer_djrhr, infer_srr, network_loss,
    predict_residual, srr_loss
)
from derain.optim import Adam
from derain.schemas import DjrhrSpec, LossWeights, SrrSpec
from derain.storage import load_pairs
from derain.synth import make_dataset
from derain.tensor import Graph
from derain.train import TRAIN_LOG_NAME, make_batch, train

TINY_SRR = SrrSpec(depth=4, width=8)
TINY_DJRHR = DjrhrSpec(growth=4, blocks=1, layers_per_block=2)


def test_default_srr_parameter_count():
    weights = 12 * 64 * 9 + 18 * (64 * 64 * 9) + 64 * 12 * 9
    biases = 19 * 64 + 12
    assert build_srr().param_count() == weights + biases


def test_invalid_specs_rejected():
    with pytest.raises(ValidationError):
        SrrSpec(depth=1)
    with pytest.raises(ValidationError):
        DjrhrSpec(growth=0)
    with pytest.raises(ValidationError):
        DjrhrSpec(blocks=0)


def test_djrhr_grid_sizes_are_ordered():
    default_point = build_djrhr(DjrhrSpec(growth=12, blocks=3))
    smallest = build_djrhr(DjrhrSpec(growth=8, blocks=1))
    assert smallest.param_count() < default_point.param_count()
    counts = [build_djrhr(DjrhrSpec(growth=k, blocks=2)).param_count() for k in (8, 10, 12)]
    assert counts == sorted(counts)


def test_same_seed_same_weights():
    a, b = build_djrhr(TINY_DJRHR, seed=4), build_djrhr(TINY_DJRHR, seed=4)
    for name in a.params:
        assert a.params[name].tobytes() == b.params[name].tobytes()
    c = build_djrhr(TINY_DJRHR, seed=5)
    assert any(not np.array_equal(a.params[n], c.params[n]) for n in a.params)


@pytest.mark.parametrize("net", [build_srr(TINY_SRR, seed=1), build_djrhr(TINY_DJRHR, seed=1)])
def test_untrained_network_is_identity(net):
    rng = np.random.default_rng(2)
    tensor = rng.standard_normal((2, net.in_channels, 6, 6)).astype(np.float32)
    assert np.array_equal(predict_residual(net, tensor), tensor)

    image = rng.random((3, 21, 30)).astype(np.float32)
    assert np.abs(infer(net, image) - image).max() <= 1e-6


@pytest.mark.parametrize("shape", [(3, 65, 63), (3, 2, 2), (3, 7, 12)])
def test_inference_preserves_dims(shape):
    image = np.random.default_rng(0).random(shape).astype(np.float32)
    assert infer_srr(build_srr(TINY_SRR), image).shape == shape
    assert infer_djrhr(build_djrhr(TINY_DJRHR), image).shape == shape


def test_input_channel_count_enforced():
    with pytest.raises(ChannelCountError):
        predict_residual(build_srr(TINY_SRR), np.zeros((1, 13, 4, 4), dtype=np.float32))


def test_srr_loss_examples():
    net = build_srr(TINY_SRR)
    rng = np.random.default_rng(3)
    X = (rng.integers(0, 8, (2, 12, 4, 4)) / 8).astype(np.float32)
    assert srr_loss(net, X, X).total.item() == 0.0
    assert srr_loss(net, X, X + np.float32(0.5)).total.item() == 0.25 * 12 * 4 * 4
    with pytest.raises(ShapeMismatchError):
        srr_loss(net, X, X[:, :, :2])


def test_djrhr_loss_examples():
    net = build_djrhr(TINY_DJRHR)
    X = np.zeros((1, 13, 1, 1), dtype=np.float32)
    result = djrhr_loss(net, X, X)
    assert (result.total.item(), result.l1.item(), result.l2.item()) == (0.0, 0.0, 0.0)

    Y = X.copy()
    Y[0, 0], Y[0, 1], Y[0, 12] = 1.0, 1.0, 2.0
    result = djrhr_loss(net, X, Y, LossWeights(alpha=0.5))
    assert (result.l1.item(), result.l2.item(), result.total.item()) == (2.0, 4.0, 4.0)
    assert djrhr_loss(net, X, Y, LossWeights(alpha=0.0)).total.item() == 2.0


def test_dark_channel_prediction_only_affects_l2():
    net = build_djrhr(TINY_DJRHR, seed=3)
    net.params["head.bias"][12] = 0.3
    rng = np.random.default_rng(4)
    image = rng.random((2, 3, 8, 8)).astype(np.float32)
    X = pack_djrhr(image).tensor
    result = djrhr_loss(net, X, X)
    assert result.l1.item() == 0.0
    assert result.l2.item() > 0.0
    # the perturbed 13th channel never reaches the restored image
    assert np.abs(infer(net, image[0]) - image[0]).max() <= 1e-6


def test_gradients_reach_every_parameter_after_one_step():
    net = build_djrhr(TINY_DJRHR, seed=0)
    rng = np.random.default_rng(5)
    X = rng.random((2, 13, 4, 4)).astype(np.float32)
    Y = rng.random((2, 13, 4, 4)).astype(np.float32)
    graph = Graph()
    result = djrhr_loss(net, X, Y, graph=graph)
    grads = graph.backward(result.total)
    assert set(grads) == set(net.params)
    assert grads["head.weight"].any()


def _tiny_config(tmp_path, model, **overrides):
    mode = "rain" if model == "srr" else "rain_haze"
    data = tmp_path / f"data_{mode}"
    if not data.exists():
        make_dataset(None, 4, mode, 3, data, image_size=32)
    values = dict(
        model=model, depth=4, width=8, growth=4, blocks=1, layers_per_block=2,
        epochs=6, batch_size=4, patch_size=16, crops_per_image=4, lr=3e-3,
        manifest=str(data / "manifest.jsonl"), out=str(tmp_path / f"run_{model}"),
    )
    values.update(overrides)
    return RunConfig(**values)


@pytest.mark.parametrize("model", ["srr", "djrhr"])
def test_training_reduces_loss(tmp_path, model):
    config = _tiny_config(tmp_path, model)
    result = train(config)
    assert len(result.epoch_logs) == 6
    assert result.checkpoint.is_file()

    rows, lq, hq = load_pairs(config.manifest)
    X, Y = make_batch(model, lq, hq, range(len(rows)), np.random.default_rng(0), 16)
    before = network_loss(build_network(config.network_spec(), config.seed), X, Y, config.loss_weights())
    after = network_loss(result.network, X, Y, config.loss_weights())
    assert after.total.item() < before.total.item()


@pytest.mark.parametrize("model,spec", [("srr", TINY_SRR), ("djrhr", TINY_DJRHR)])
def test_adam_steps_lower_moving_average_loss(tmp_path, model, spec):
    mode = "rain" if model == "srr" else "rain_haze"
    make_dataset(None, 8, mode, 5, tmp_path / "toy", image_size=16)
    rows, lq, hq = load_pairs(tmp_path / "toy" / "manifest.jsonl")
    X, Y = make_batch(model, lq, hq, range(8), np.random.default_rng(0), 16)
    net = build_network(spec, seed=0)
    optimizer = Adam(net.params, lr=1e-3)

    losses = []
    for _ in range(200):
        result = network_loss(net, X, Y)
        losses.append(result.total.item())
        optimizer.step(result.graph.backward(result.total))

    moving = np.convolve(losses, np.ones(10) / 10, mode="valid")
    checkpoints = moving[[0, 50, 100, 150, -1]]
    assert all(earlier > later for earlier, later in zip(checkpoints, checkpoints[1:]))


def test_logged_total_is_l1_plus_half_l2(tmp_path):
    config = _tiny_config(tmp_path, "djrhr", epochs=2)
    train(config)
    lines = (tmp_path / "run_djrhr" / TRAIN_LOG_NAME).read_text().splitlines()
    steps = [json.loads(line) for line in lines if json.loads(line)["kind"] == "step"]
    assert len(steps) == 8
    for record in steps:
        assert record["total"] == record["l1"] + 0.5 * record["l2"]


def test_srr_log_has_no_decomposition(tmp_path):
    train(_tiny_config(tmp_path, "srr", epochs=1))
    first = json.loads((tmp_path / "run_srr" / TRAIN_LOG_NAME).read_text().splitlines()[0])
    assert first["l1"] is None and first["l2"] is None


def test_model_must_match_dataset_mode(tmp_path):
    _tiny_config(tmp_path, "djrhr")
    config = _tiny_config(tmp_path, "srr", manifest=str(tmp_path / "data_rain_haze" / "manifest.jsonl"))
    with pytest.raises(DatasetModelMismatchError):
        train(config)
    assert not (tmp_path / "run_srr").exists()


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
