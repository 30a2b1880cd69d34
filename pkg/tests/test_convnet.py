import math

import numpy as np
import pytest

from conftest import finite_difference_check
from sigmacough.convnet import (
    ConvNetParams,
    DegenerateDataset,
    EmptyBatch,
    ShapeMismatch,
    TrainConfig,
    adaptive_pool_matrix,
    extract_features,
    forward,
    init_params,
    loss_and_gradients,
    pad_input,
    softmax,
    train_source,
    zero_params,
)
from sigmacough.pipeline import InputScaler, load_source_model, save_source_model

SMALL = (2, 2, 2)


def test_zero_net_gives_zero_logits_and_uniform_loss():
    params = zero_params()
    x = np.random.default_rng(0).standard_normal((97, 13))
    np.testing.assert_array_equal(forward(params, x), np.zeros(10))
    loss, grads = loss_and_gradients(params, [(x, 3)])
    assert loss == pytest.approx(math.log(10), abs=1e-12)
    # only the dense bias can receive gradient when every activation is zero
    expected = np.full(10, 0.1)
    expected[3] -= 1
    np.testing.assert_allclose(grads.dense_b, expected, atol=1e-15)
    assert not np.any(grads.dense_w)


def test_dense_bias_passes_straight_through():
    params = zero_params()
    params.dense_b[:] = np.arange(10.0)
    np.testing.assert_array_equal(forward(params, np.ones((97, 13))), np.arange(10.0))


def test_batch_and_single_shapes():
    params = init_params(1, SMALL)
    x = np.random.default_rng(2).standard_normal((3, 97, 13))
    batch = forward(params, x)
    assert batch.shape == (3, 10)
    np.testing.assert_allclose(forward(params, x[1]), batch[1], atol=1e-12)


def test_padding_and_pool_matrices():
    assert pad_input(np.ones((97, 13))).shape == (104, 16)
    m = adaptive_pool_matrix(13, 4)
    np.testing.assert_allclose(m.sum(axis=1), 1.0)
    assert np.all((m > 0).sum(axis=1) == [4, 4, 4, 4])  # bins [0,4) [3,7) [6,10) [9,13)
    np.testing.assert_array_equal(adaptive_pool_matrix(1, 4), np.ones((4, 1)))


def test_gradient_check_small_net(rng):
    for seed in range(3):
        params = init_params(seed, SMALL, dense_init_gain=1.0)
        x = rng.standard_normal((3, 8, 8))
        y = rng.integers(0, 10, 3)
        assert finite_difference_check(params, (x, y), rng) < 1e-4


def test_gradient_check_default_input_size(rng):
    params = init_params(4, (3, 4, 4), dense_init_gain=1.0)
    # zero biases leave the padded border exactly on the ReLU kink, where finite differences lie
    for b in params.conv_b:
        b[:] = rng.uniform(0.05, 0.2, b.shape) * rng.choice([-1, 1], b.shape)
    batch = (rng.standard_normal((2, 97, 13)), np.array([1, 7]))
    assert finite_difference_check(params, batch, rng, n_probe=6) < 1e-4


def test_features_ignore_dense_layer():
    a = init_params(5)
    b = a.copy()
    b.dense_w = np.random.default_rng(9).standard_normal(b.dense_w.shape)
    b.dense_b += 3.0
    x = np.random.default_rng(6).standard_normal((2, 97, 13))
    fa, fb = extract_features(a, x), extract_features(b, x)
    assert fa.shape == (2, 1024)
    np.testing.assert_array_equal(fa, fb)
    assert extract_features(a, x[0]).shape == (1024,)


def test_features_feed_dense_logits():
    params = init_params(5)
    x = np.random.default_rng(6).standard_normal((97, 13))
    np.testing.assert_allclose(forward(params, x),
                               extract_features(params, x) @ params.dense_w + params.dense_b, atol=1e-12)


def test_maxpool_backward_routes_to_first_argmax():
    from sigmacough.convnet import _maxpool_backward, _maxpool_forward
    x = np.array([[[[1.0, 1.0], [0.0, 1.0]]]])
    out, arg = _maxpool_forward(x)
    assert out[0, 0, 0, 0] == 1.0
    dx = _maxpool_backward(np.ones((1, 1, 1, 1)), arg, x.shape)
    np.testing.assert_array_equal(dx[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_softmax_stability():
    p = softmax(np.array([1000.0, 1000.0, -1000.0]))
    np.testing.assert_allclose(p, [0.5, 0.5, 0.0])


def test_shape_and_batch_errors():
    params = init_params(0, SMALL)
    with pytest.raises(ShapeMismatch):
        forward(params, np.zeros(5))
    with pytest.raises(EmptyBatch):
        loss_and_gradients(params, [])
    with pytest.raises(ValueError):
        loss_and_gradients(params, [(np.zeros((8, 8)), 10)])
    bad = params.copy()
    bad.dense_w = np.zeros((7, 10))
    with pytest.raises(ShapeMismatch):
        bad.check()


def toy_dataset(n=16, seed=0):
    """Two trivially separable classes: bright top half vs bright bottom half."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        x = 0.1 * rng.standard_normal((8, 8))
        label = i % 2
        x[:4] += 1.0 if label == 0 else 0.0
        x[4:] += 1.0 if label == 1 else 0.0
        out.append((x, label))
    return out


def test_toy_problem_reaches_full_accuracy():
    result = train_source(toy_dataset(), TrainConfig(learning_rate=0.05, epochs=50, batch_size=4,
                                                     channels=(4, 4, 4)))
    assert max(s.accuracy for s in result.log) == 1.0
    assert result.log[-1].loss < result.log[0].loss


def test_zero_learning_rate_freezes_parameters():
    init = init_params(2, SMALL)
    result = train_source(toy_dataset(), TrainConfig(learning_rate=0.0, epochs=2, channels=SMALL), init=init)
    for k, v in init.named_tensors().items():
        np.testing.assert_array_equal(result.params.named_tensors()[k], v)


def test_training_is_deterministic():
    cfg = TrainConfig(epochs=2, batch_size=4, channels=SMALL, rng_seed=7)
    a, b = train_source(toy_dataset(), cfg), train_source(toy_dataset(), cfg)
    for k, v in a.params.named_tensors().items():
        assert v.tobytes() == b.params.named_tensors()[k].tobytes()
    assert [s.loss for s in a.log] == [s.loss for s in b.log]


def test_single_label_dataset_rejected():
    data = [(np.zeros((8, 8)), 4)] * 3
    with pytest.raises(DegenerateDataset):
        train_source(data, TrainConfig(epochs=1, channels=SMALL))


def test_initial_loss_near_uniform_across_seeds():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((20, 97, 13))
    y = np.arange(20) % 10
    for seed in range(10):
        loss, _ = loss_and_gradients(init_params(seed), (x, y))
        assert abs(loss - math.log(10)) < 0.2


def test_checkpoint_round_trip(tmp_path):
    params = init_params(11, SMALL)
    scaler = InputScaler(np.arange(13.0), np.ones(13) * 2)
    digest = save_source_model(tmp_path / "m.json", params, scaler, train_config=TrainConfig(channels=SMALL))
    assert len(digest) == 64
    loaded, lscaler, cfg = load_source_model(tmp_path / "m.json")
    assert isinstance(loaded, ConvNetParams) and loaded.channels == SMALL
    for k, v in params.named_tensors().items():
        assert loaded.named_tensors()[k].tobytes() == v.tobytes()
    np.testing.assert_array_equal(lscaler.mean, scaler.mean)
    assert cfg.n_coefficients == 13
