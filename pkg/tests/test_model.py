import numpy as np
import pytest

from fedchain import model as mlp
from fedchain.dataset import generate_blobs
from fedchain.errors import ConfigurationError, ContractViolation, EmptyPartitionError, ShapeError
from fedchain.model import LayerShape, Model, ParamVector, TrainSpec, shapes_from_dims

import oracles


def zero_model(dims):
    shapes = shapes_from_dims(dims)
    return Model(ParamVector(np.zeros(sum(s.size for s in shapes)), shapes))


def test_param_length_formula():
    m = mlp.init_model([LayerShape(2, 3), LayerShape(3, 2)], seed=5)
    assert len(m.params) == (2 * 3 + 3) + (3 * 2 + 2) == 17


def test_init_is_deterministic_and_seed_sensitive():
    shapes = shapes_from_dims([4, 8, 3])
    a = mlp.init_model(shapes, 1)
    assert a.params == mlp.init_model(shapes, 1).params
    assert not np.array_equal(a.params.values, mlp.init_model(shapes, 2).params.values)


def test_init_glorot_bounds_and_zero_bias():
    shapes = shapes_from_dims([50, 30, 10])
    m = mlp.init_model(shapes, 0)
    for s, (w, b) in zip(shapes, m.params.layers()):
        limit = np.sqrt(6.0 / (s.input_dim + s.output_dim))
        assert np.all(np.abs(w) <= limit)
        assert np.abs(w).max() > 0.9 * limit
        assert not b.any()


def test_init_rejects_broken_chain():
    with pytest.raises(ConfigurationError):
        mlp.init_model([LayerShape(2, 3), LayerShape(4, 2)], 0)
    with pytest.raises(ConfigurationError):
        mlp.init_model([], 0)


def test_layer_shape_rejects_zero():
    with pytest.raises(ValueError):
        LayerShape(0, 3)


def test_param_vector_is_read_only_and_validated():
    shapes = shapes_from_dims([2, 2])
    pv = ParamVector(np.zeros(6), shapes)
    with pytest.raises(ValueError):
        pv.values[0] = 1.0
    with pytest.raises(ShapeError):
        ParamVector(np.zeros(5), shapes)
    with pytest.raises(ValueError):
        ParamVector([0, 0, 0, 0, 0, np.nan], shapes)


def test_zero_params_give_uniform_rows():
    m = zero_model([3, 4, 5])
    p = mlp.forward(m, np.random.default_rng(0).normal(size=(7, 3)))
    assert np.allclose(p, 0.2)


def test_forward_empty_input():
    m = zero_model([3, 2])
    assert mlp.forward(m, np.zeros((0, 3))).shape == (0, 2)


def test_forward_rows_sum_to_one():
    rng = np.random.default_rng(3)
    m = mlp.init_model(shapes_from_dims([5, 7, 4]), 3)
    p = mlp.forward(m, rng.normal(scale=50, size=(100, 5)))
    assert np.all(np.abs(p.sum(axis=1) - 1) < 1e-9)
    assert np.all((p >= 0) & (p <= 1))


def test_forward_rejects_wrong_width():
    with pytest.raises(ShapeError):
        mlp.forward(zero_model([3, 2]), np.zeros((4, 2)))


def test_loss_matches_oracle():
    rng = np.random.default_rng(11)
    dims = [3, 5, 4]
    m = mlp.init_model(shapes_from_dims(dims), 11)
    x, y = rng.normal(size=(6, 3)), rng.integers(0, 4, 6)
    assert mlp.loss(m, x, y) == pytest.approx(oracles.mean_cross_entropy(m.params.values, dims, x, y), abs=1e-12)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    dims = [3, 6, 3]
    m = mlp.init_model(shapes_from_dims(dims), 4)
    x, y = rng.normal(size=(5, 3)), rng.integers(0, 3, 5)
    fd, kinked = oracles.finite_difference(m.params.values, dims, x, y)
    g = mlp.gradient(m, x, y).values
    ok = ~kinked
    rel = np.abs(g - fd)[ok] / np.maximum(np.maximum(np.abs(g), np.abs(fd))[ok], 1e-6)
    assert rel.max() < 1e-4


def test_gradient_vanishes_at_minimum():
    # Softmax regression on one example with a huge correct logit: loss ~ 0 and so is the gradient.
    shapes = shapes_from_dims([1, 2])
    m = Model(ParamVector([0.0, 0.0, 40.0, -40.0], shapes))
    assert np.linalg.norm(mlp.gradient(m, [[1.0]], [0]).values) < 1e-6


def test_gradient_mean_invariance():
    rng = np.random.default_rng(8)
    m = mlp.init_model(shapes_from_dims([4, 5, 3]), 8)
    x, y = rng.normal(size=(6, 4)), rng.integers(0, 3, 6)
    g1 = mlp.gradient(m, x, y).values
    g2 = mlp.gradient(m, np.vstack([x, x]), np.concatenate([y, y])).values
    assert np.allclose(g1, g2, rtol=0, atol=1e-14)


def test_gradient_contracts():
    m = zero_model([2, 3])
    with pytest.raises(ContractViolation):
        mlp.gradient(m, np.zeros((0, 2)), [])
    with pytest.raises(ContractViolation):
        mlp.gradient(m, np.zeros((1, 2)), [3])


def test_train_lr_zero_is_identity():
    data = generate_blobs(3, 20, 2, 0.5, 0)
    m = mlp.init_model(shapes_from_dims([2, 8, 3]), 0)
    out = mlp.train_local(m, data.features, data.labels, TrainSpec(3, 4, 0.0, 1))
    assert out.params == m.params


def test_train_full_batch_single_step():
    data = generate_blobs(3, 20, 2, 0.5, 1)
    m = mlp.init_model(shapes_from_dims([2, 8, 3]), 1)
    out = mlp.train_local(m, data.features, data.labels, TrainSpec(1, len(data), 0.05, 9))
    expected = m.params.values - 0.05 * mlp.gradient(m, data.features, data.labels).values
    assert np.allclose(out.params.values, expected, rtol=0, atol=1e-15)


def test_training_improves_accuracy():
    data = generate_blobs(3, 100, 2, 0.5, 2)
    m = mlp.init_model(shapes_from_dims([2, 16, 3]), 2)
    before = mlp.evaluate(m, data.features, data.labels)
    out = mlp.train_local(m, data.features, data.labels, TrainSpec(5, 16, 0.1, 2))
    assert mlp.evaluate(out, data.features, data.labels) > before


def test_train_is_deterministic_and_shape_preserving():
    data = generate_blobs(3, 30, 4, 1.0, 3)
    m = mlp.init_model(shapes_from_dims([4, 6, 3]), 3)
    spec = TrainSpec(2, 7, 0.1, 123)
    a = mlp.train_local(m, data.features, data.labels, spec)
    b = mlp.train_local(m, data.features, data.labels, spec)
    assert a.params == b.params
    assert a.params.shapes == m.params.shapes
    c = mlp.train_local(m, data.features, data.labels, TrainSpec(2, 7, 0.1, 124))
    assert c.params != a.params


def test_train_empty_partition_signal():
    with pytest.raises(EmptyPartitionError):
        mlp.train_local(zero_model([2, 3]), np.zeros((0, 2)), [], TrainSpec(1, 1, 0.1, 0))


def test_epoch_order_is_a_permutation_independent_per_epoch():
    a = mlp.epoch_order(50, 5, 0)
    assert sorted(a) == list(range(50))
    assert np.array_equal(mlp.epoch_order(50, 5, 3), mlp.epoch_order(50, 5, 3))
    assert not np.array_equal(mlp.epoch_order(50, 5, 0), mlp.epoch_order(50, 5, 1))


def test_evaluate_constant_class_zero():
    m = zero_model([2, 3])  # ties -> class 0
    y = np.array([0] * 4 + [1] * 3 + [2] * 3)
    assert mlp.evaluate(m, np.zeros((10, 2)), y) == pytest.approx(0.4)


def test_evaluate_zero_model_balanced_is_one_over_c():
    m = zero_model([2, 4])
    y = np.repeat(np.arange(4), 5)
    assert mlp.evaluate(m, np.ones((20, 2)), y) == 0.25
    assert mlp.evaluate(m, np.ones((20, 2)), y) == mlp.evaluate(m, np.ones((20, 2)), y)


def test_evaluate_empty_raises():
    with pytest.raises(ContractViolation):
        mlp.evaluate(zero_model([2, 3]), np.zeros((0, 2)), [])


def test_per_class_accuracy():
    m = zero_model([2, 3])
    acc = mlp.per_class_accuracy(m, np.zeros((4, 2)), [0, 0, 1, 1])
    assert acc.tolist() == [1.0, 0.0, 0.0]


def test_train_spec_validation():
    with pytest.raises(ValueError):
        TrainSpec(0, 1, 0.1, 0)
    with pytest.raises(ValueError):
        TrainSpec(1, 0, 0.1, 0)
    with pytest.raises(ValueError):
        TrainSpec(1, 1, -0.1, 0)
