import math

import numpy as np
import pytest

from neopain.autodiff import Tensor, check_gradients, ops
from neopain.temporal import LSTMLayer, SequenceFeatures, TemporalModel, intensity_sequence, lstm_cell_step
import oracles


def randomize(model, rng, scale=0.5):
    for name, p in model.named_parameters():
        if not name.startswith("input."):
            p.data = rng.normal(scale=scale, size=p.shape)


def test_parameter_shapes_and_init():
    m = TemporalModel(5, seed=0)
    shapes = {k: v.shape for k, v in m.parameters().items()}
    assert shapes["lstm1.w_x"] == (5, 64) and shapes["lstm1.w_h"] == (16, 64)
    assert shapes["lstm2.w_x"] == (16, 64) and shapes["td1.weight"] == (16, 16)
    assert shapes["out.weight"] == (16, 1)
    forget = m.lstm1.gate("forget")[2]
    np.testing.assert_array_equal(forget, np.ones(16))
    assert np.abs(m.lstm1.gate("input")[0]).max() <= 0.1
    assert np.abs(m.lstm1.gate("candidate")[2]).max() <= 0.1
    buffers = {"input.mean", "input.scale", "output.mean", "output.scale"}
    assert set(m.trainable_parameters()) == set(m.parameters()) - buffers


def test_cell_step_zero_fixed_point():
    layer = LSTMLayer(3, 16).zero_()
    h, c = lstm_cell_step(np.ones(3), np.zeros(16), np.zeros(16), layer)
    assert not np.any(h.data) and not np.any(c.data)


def test_cell_step_hand_recurrence():
    layer = LSTMLayer(3, 16).zero_()
    h, c = lstm_cell_step(np.ones(3), np.zeros(16), 2 * np.ones(16), layer)
    np.testing.assert_allclose(c.data, np.ones(16))
    np.testing.assert_allclose(h.data, 0.5 * math.tanh(1.0) * np.ones(16))
    assert h.data[0] == pytest.approx(0.380797, abs=1e-6)


def test_cell_step_matches_scalar_oracle(rng):
    layer = LSTMLayer(4, 16, rng)
    for p in layer.parameters().values():
        p.data = rng.normal(scale=0.7, size=p.shape)
    x = rng.normal(size=4)
    h, _ = lstm_cell_step(x, np.zeros(16), np.zeros(16), layer)
    ref = oracles.lstm_layer([x.tolist()], layer.w_x.data.tolist(), layer.w_h.data.tolist(),
                             layer.bias.data.tolist(), 16)
    np.testing.assert_allclose(h.data, ref[0], rtol=0, atol=1e-10)


def test_cell_step_dim_mismatch():
    with pytest.raises(ValueError):
        lstm_cell_step(np.ones(2), np.zeros(16), np.zeros(16), LSTMLayer(3, 16))


def test_zero_params_give_zero_outputs(rng):
    m = TemporalModel(6).zero_()
    out = intensity_sequence(rng.normal(size=(32, 6)), m)
    assert out.shape == (32,) and not np.any(out)


@pytest.mark.parametrize("seed", range(5))
def test_full_model_matches_scalar_oracle(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 9))
    m = TemporalModel(d, seed=seed)
    randomize(m, rng)
    m.fit_input_scaling(rng.normal(loc=1.0, size=(3, 32, d)))
    m.fit_output_scaling(rng.integers(0, 8, size=(3, 32)))
    seq = rng.normal(size=(32, d))
    ref = oracles.temporal_model(seq.tolist(), m.state_dict())
    np.testing.assert_allclose(intensity_sequence(seq, m), ref, rtol=0, atol=1e-9)


def test_causality(rng):
    m = TemporalModel(4, seed=1)
    randomize(m, rng)
    seq = rng.normal(size=(32, 4))
    base = intensity_sequence(seq, m)
    for t in (0, 10, 31):
        pert = seq.copy()
        pert[t:] += rng.normal(scale=2.0, size=pert[t:].shape)
        out = intensity_sequence(pert, m)
        np.testing.assert_array_equal(out[:t], base[:t])
        assert not np.allclose(out[t:], base[t:])


def test_eval_mode_bit_identical(rng):
    m = TemporalModel(4, seed=2)
    seq = rng.normal(size=(32, 4))
    np.testing.assert_array_equal(intensity_sequence(seq, m), intensity_sequence(seq, m))


def test_train_mode_dropout_changes_output(rng):
    m = TemporalModel(4, seed=2)
    randomize(m, rng)
    seq = rng.normal(size=(32, 4))
    out = intensity_sequence(seq, m, train_mode=True, rng=np.random.default_rng(0))
    assert not np.allclose(out, intensity_sequence(seq, m))


def test_clamping(rng):
    m = TemporalModel(4, seed=0)
    m.out.bias.data[:] = 50.0
    assert np.all(intensity_sequence(rng.normal(size=(32, 4)), m, clamp=True) == 7.0)
    assert np.all(m.predict(rng.normal(size=(2, 32, 4))) == 7.0)
    m.out.bias.data[:] = -50.0
    assert np.all(intensity_sequence(rng.normal(size=(32, 4)), m, clamp=True) == 0.0)


@pytest.mark.parametrize("shape", [(31, 4), (32, 5), (32,)])
def test_sequence_shape_checked(shape):
    with pytest.raises(ValueError):
        intensity_sequence(np.zeros(shape), TemporalModel(4))


def test_sequence_features_type():
    s = SequenceFeatures(np.zeros((32, 3)), "E1")
    assert s.dim == 3
    with pytest.raises(ValueError):
        SequenceFeatures(np.zeros((16, 3)))
    assert intensity_sequence(s, TemporalModel(3).zero_()).shape == (32,)


def test_input_scaling_standardizes_training_data(rng):
    m = TemporalModel(3)
    data = rng.normal(loc=[1.0, -2.0, 5.0], scale=[0.1, 3.0, 1.0], size=(20, 32, 3))
    m.fit_input_scaling(data)
    z = (data - m.input_mean.data) * m.input_scale.data
    np.testing.assert_allclose(z.reshape(-1, 3).mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(z.reshape(-1, 3).std(0), 1, atol=1e-12)


def test_mse_gradient_all_params(rng):
    m = TemporalModel(3, hidden=4, dense=3, seed=0)
    randomize(m, rng, scale=0.6)
    seq = rng.normal(size=(2, 32, 3))
    base = m.predict(seq)
    target = base + rng.normal(scale=0.1, size=base.shape)
    params = list(m.trainable_parameters().values())
    err = check_gradients(lambda: ops.mse(m.forward(seq), target), params)
    assert err <= 1e-4


def test_unrolled_layer_gradients_match_fused(rng):
    layer = LSTMLayer(3, 4, rng)
    seq = Tensor(rng.normal(size=(2, 7, 3)))
    w = Tensor(rng.normal(size=(2, 7, 4)))
    grads = []
    for fn in (layer, layer.unrolled):
        for p in layer.parameters().values():
            p.grad = None
        ops.reduce_sum(fn(seq) * w).backward()
        grads.append({k: p.grad.copy() for k, p in layer.parameters().items()})
    for k in grads[0]:
        np.testing.assert_allclose(grads[0][k], grads[1][k], rtol=1e-12, atol=1e-14)


def test_output_scaling_maps_to_label_units(rng):
    m = TemporalModel(3, seed=0)
    seq = rng.normal(size=(32, 3))
    raw = intensity_sequence(seq, m)
    m.fit_output_scaling([[1.0, 3.0], [5.0, 7.0]])
    assert m.output_mean.data[0] == 4.0 and m.output_scale.data[0] == pytest.approx(np.sqrt(5.0))
    np.testing.assert_allclose(intensity_sequence(seq, m), raw * np.sqrt(5.0) + 4.0, atol=1e-12)
    m.fit_output_scaling(np.full(4, 2.0))
    assert m.output_scale.data[0] > 0
