import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neopain.autodiff import Tensor, check_gradients, no_grad, ops
from neopain.bilinear import (BilinearHead, FeatureMap, describe_batch, head_forward, normalize_batch,
                              normalize_descriptor, pool_bilinear, pool_bilinear_batch)


def brute_force_pool(a, b):
    """Double loop over locations and channel pairs."""
    h, w, ca = a.shape
    cb = b.shape[2]
    u = np.zeros(ca * cb)
    for y in range(h):
        for x in range(w):
            for i in range(ca):
                for j in range(cb):
                    u[i * cb + j] += a[y, x, i] * b[y, x, j]
    return u


def random_maps(rng, h, w, ca, cb):
    return FeatureMap("A", rng.normal(size=(h, w, ca))), FeatureMap("B", rng.normal(size=(h, w, cb)))


@pytest.mark.parametrize("dims", [(1, 1, 1, 1), (2, 3, 2, 3), (4, 4, 3, 3), (3, 2, 1, 4)])
def test_pool_matches_brute_force(dims, rng):
    fa, fb = random_maps(rng, *dims)
    np.testing.assert_allclose(pool_bilinear(fa, fb).data, brute_force_pool(fa.values.data, fb.values.data),
                               rtol=0, atol=1e-10)


def test_pool_single_location_is_outer_product():
    fa = FeatureMap("A", np.array([1.0, 2.0]).reshape(1, 1, 2))
    fb = FeatureMap("B", np.array([3.0, 4.0, 5.0]).reshape(1, 1, 3))
    np.testing.assert_array_equal(pool_bilinear(fa, fb).data, [3, 4, 5, 6, 8, 10])


def test_pool_rejects_mismatched_grids(rng):
    fa = FeatureMap("A", rng.normal(size=(2, 2, 3)))
    fb = FeatureMap("B", rng.normal(size=(3, 2, 3)))
    with pytest.raises(ValueError, match="location grids differ"):
        pool_bilinear(fa, fb)


def test_batched_pool_matches_per_image(rng):
    xa, xb = rng.normal(size=(3, 2, 2, 3)), rng.normal(size=(3, 2, 2, 2))
    batch = pool_bilinear_batch(xa, xb).data
    for k in range(3):
        np.testing.assert_allclose(batch[k], brute_force_pool(xa[k], xb[k]), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_location_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(1, 5, size=2)
    a, b = rng.normal(size=(h, w, 3)), rng.normal(size=(h, w, 2))
    perm = rng.permutation(h * w)
    pa = a.reshape(-1, 3)[perm].reshape(h, w, 3)
    pb = b.reshape(-1, 2)[perm].reshape(h, w, 2)
    u = pool_bilinear(FeatureMap("A", a), FeatureMap("B", b)).data
    up = pool_bilinear(FeatureMap("A", pa), FeatureMap("B", pb)).data
    np.testing.assert_allclose(u, up, rtol=1e-12, atol=1e-12)


def test_feature_map_validation():
    with pytest.raises(ValueError):
        FeatureMap("C", np.ones((2, 2, 2)))
    with pytest.raises(ValueError):
        FeatureMap("A", np.ones((2, 2)))


# -- normalization -------------------------------------------------------------


def test_single_positive_entry_normalizes_to_one():
    d = normalize_descriptor(np.array([16.0]))
    assert d.v.data[0] == 4.0
    assert d.w.data[0] == 1.0


def test_signed_sqrt_keeps_sign():
    d = normalize_descriptor(np.array([-9.0, 16.0]))
    np.testing.assert_allclose(d.v.data, [-3.0, 4.0])
    np.testing.assert_allclose(d.w.data, [-0.6, 0.8])


def test_zero_vector_maps_to_zero_without_warnings():
    with np.errstate(all="raise"):
        d = normalize_descriptor(np.zeros(5))
    np.testing.assert_array_equal(d.w.data, np.zeros(5))


def test_zero_vector_gradient_is_finite():
    u = Tensor(np.zeros(4), requires_grad=True)
    ops.reduce_sum(normalize_descriptor(u).w * Tensor(np.arange(4.0))).backward()
    assert np.all(np.isfinite(u.grad))


def test_non_finite_input_rejected():
    with pytest.raises(ValueError):
        normalize_descriptor(np.array([1.0, np.nan]))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 64), st.floats(1e-6, 1e6))
def test_unit_norm_property(seed, n, scale):
    u = np.random.default_rng(seed).normal(size=n) * scale
    if not np.any(u):
        return
    assert abs(np.linalg.norm(normalize_descriptor(u).w.data) - 1.0) <= 1e-6


def test_normalize_batch_rows_independent(rng):
    u = rng.normal(size=(3, 6))
    w = normalize_batch(u).data
    for k in range(3):
        np.testing.assert_allclose(w[k], normalize_descriptor(u[k]).w.data, atol=1e-15)


# -- head ----------------------------------------------------------------------


def test_head_architecture_and_init(rng):
    head = BilinearHead(16, rng=rng)
    shapes = {k: v.shape for k, v in head.parameters().items()}
    assert shapes == {"fc1.weight": (16, 64), "fc1.bias": (64,), "fc2.weight": (64, 64), "fc2.bias": (64,),
                      "out.weight": (64, 1), "out.bias": (1,)}
    limit = np.sqrt(6 / (16 + 64))
    assert np.abs(head.hidden[0].weight.data).max() <= limit
    assert not np.any(head.hidden[0].bias.data)


def test_head_output_shapes(rng):
    head = BilinearHead(8, rng=rng)
    assert head_forward(head, rng.normal(size=8)).shape == (1,)
    assert head_forward(head, rng.normal(size=(5, 8))).shape == (5,)


def test_head_zero_weights_give_zero():
    head = BilinearHead(8).zero_()
    np.testing.assert_array_equal(head.predict(np.ones((3, 8))), np.zeros(3))


def test_head_rejects_wrong_dim(rng):
    with pytest.raises(ValueError):
        BilinearHead(8, rng=rng)(np.ones(7))


def test_head_eval_is_deterministic_and_train_uses_dropout(rng):
    head = BilinearHead(8, rng=rng)
    w = rng.normal(size=(4, 8))
    with no_grad():
        e1, e2 = head(w).data, head(w).data
        t1 = head(w, train=True, rng=np.random.default_rng(0)).data
    np.testing.assert_array_equal(e1, e2)
    assert not np.allclose(t1, e1)


def test_head_predict_clamps_to_unit_interval(rng):
    head = BilinearHead(4, rng=rng)
    head.out.bias.data[:] = 5.0
    assert np.all(head.predict(rng.normal(size=(3, 4))) == 1.0)
    head.out.bias.data[:] = -5.0
    assert np.all(head.predict(rng.normal(size=(3, 4))) == 0.0)


def full_bilinear_loss(head, xa, xb, target):
    return ops.mse(head(describe_batch(xa, xb)), target)


def test_full_composition_gradients(rng):
    """head(normalize(pool(A, B))) on random 2x2x2 maps, including the maps themselves."""
    head = BilinearHead(4, hidden=(6, 5), rng=rng)
    xa = Tensor(rng.normal(size=(3, 2, 2, 2)), requires_grad=True)
    xb = Tensor(rng.normal(size=(3, 2, 2, 2)), requires_grad=True)
    with no_grad():
        base = head(describe_batch(xa, xb)).data
    target = base + rng.normal(scale=0.1, size=base.shape)
    params = [xa, xb, *head.parameters().values()]
    assert check_gradients(lambda: full_bilinear_loss(head, xa, xb, target), params) <= 1e-4
