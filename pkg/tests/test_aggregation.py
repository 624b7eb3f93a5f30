import numpy as np
import pytest

from fedchain import aggregation as agg
from fedchain.aggregation import AggregationConfig
from fedchain.errors import AggregationError, ConfigurationError
from fedchain.model import Model, ParamVector, shapes_from_dims

import oracles


def pv(values):
    values = np.asarray(values, dtype=np.float64)
    return ParamVector(values, shapes_from_dims([values.size - 1, 1]))


def test_fedavg_worked_example():
    out = agg.fedavg([(pv([0, 0]), 100), (pv([4, 8]), 300)])
    assert out.values.tolist() == [3.0, 6.0]
    assert out.values.tolist() == pytest.approx(oracles.naive_weighted_mean([[0, 0], [4, 8]], [100, 300]))


def test_fedavg_single_update_unchanged():
    p = pv([1.25, -3.5, 7.0])
    assert agg.fedavg([(p, 17)]) == p


def test_fedavg_equal_counts_is_mean():
    rng = np.random.default_rng(0)
    ps = [pv(rng.normal(size=9)) for _ in range(7)]
    a = agg.fedavg([(p, 5) for p in ps]).values
    assert np.max(np.abs(a - agg.mean(ps).values)) <= 1e-12


def test_mean_examples():
    assert agg.mean([pv([1, 5]), pv([2, 4]), pv([9, 0])]).values.tolist() == [4.0, 3.0]
    v = pv([0.1, 0.2, 0.3])
    assert agg.mean([v] * 6) == v
    assert not agg.mean([v, pv(-v.values)]).values.any()


def test_median_examples():
    assert agg.median([pv([1, 5]), pv([2, 4]), pv([9, 0])]).values.tolist() == [2.0, 4.0]
    a, b = pv([1.0, 3.0]), pv([2.0, 8.0])
    assert agg.median([a, b]) == agg.mean([a, b])
    assert agg.median([pv([0, 0]), pv([0, 0]), pv([1e9, 1e9])]).values.tolist() == [0.0, 0.0]


def test_aggregators_match_naive_oracles():
    rng = np.random.default_rng(1)
    for _ in range(200):
        k, d = rng.integers(1, 21), rng.integers(2, 51)
        rows = rng.normal(scale=rng.uniform(0.1, 10), size=(k, d))
        counts = rng.integers(1, 500, size=k)
        ps = [pv(r) for r in rows]
        lists = rows.tolist()
        assert np.allclose(agg.mean(ps).values, oracles.naive_mean(lists), rtol=0, atol=1e-12)
        assert np.allclose(agg.median(ps).values, oracles.naive_median(lists), rtol=0, atol=1e-12)
        fa = agg.fedavg(list(zip(ps, counts))).values
        assert np.allclose(fa, oracles.naive_weighted_mean(lists, counts.tolist()), rtol=0, atol=1e-12)


def test_permutation_invariance_is_bitwise():
    rng = np.random.default_rng(2)
    rows = rng.normal(size=(11, 30)) * 10 ** rng.uniform(-3, 3, size=(11, 1))
    counts = rng.integers(1, 50, size=11)
    ps = [pv(r) for r in rows]
    ref = (agg.mean(ps), agg.median(ps), agg.fedavg(list(zip(ps, counts))))
    for _ in range(20):
        perm = rng.permutation(11)
        q = [ps[i] for i in perm]
        assert agg.mean(q) == ref[0]
        assert agg.median(q) == ref[1]
        assert agg.fedavg([(ps[i], counts[i]) for i in perm]) == ref[2]


def test_shape_mismatch():
    a = ParamVector(np.zeros(9), shapes_from_dims([2, 3]))
    b = ParamVector(np.zeros(9), shapes_from_dims([8, 1]))
    for fn in (agg.mean, agg.median):
        with pytest.raises(AggregationError):
            fn([a, b])
    with pytest.raises(AggregationError):
        agg.fedavg([(a, 1), (b, 1)])


def test_empty_and_bad_counts():
    with pytest.raises(AggregationError):
        agg.mean([])
    with pytest.raises(AggregationError):
        agg.fedavg([(pv([1, 2]), 0)])


def _model(values):
    return Model(pv(values))


def test_apply_gradient_step():
    g = pv([1.0, -2.0, 4.0])
    out = agg.apply(_model([1, 1, 1]), [g], AggregationConfig("mean", 0.1), "gradients")
    assert out.params.values.tolist() == pytest.approx([0.9, 1.2, 0.6], abs=1e-15)


def test_apply_weights_fixed_point_and_empty():
    m = _model([0.5, 0.25, -1.0])
    assert agg.apply(m, [m.params] * 3, AggregationConfig("median"), "weights").params == m.params
    assert agg.apply(m, [], AggregationConfig("mean"), "weights") is m


def test_apply_rejects_fedavg_gradients_and_unknown_form():
    m = _model([0, 0])
    with pytest.raises(AggregationError):
        agg.apply(m, [pv([1, 1])], AggregationConfig("fedavg"), "gradients", [1])
    with pytest.raises(AggregationError):
        agg.apply(m, [pv([1, 1])], AggregationConfig("mean"), "mixed")


def test_config_validation():
    with pytest.raises(ConfigurationError):
        AggregationConfig("trimmed_mean")
    with pytest.raises(ConfigurationError):
        AggregationConfig("mean", server_lr=0)
