import numpy as np
import pytest

from fedchain.attacks import (
    AttackConfig,
    apply_additive_noise,
    apply_label_flip,
    apply_targeted_poison,
    perturb_payload,
    poison_labels,
    reversal_flip_map,
)
from fedchain.errors import ConfigurationError
from fedchain.model import ParamVector, shapes_from_dims


def test_label_flip_map_application():
    assert apply_label_flip([0, 5, 9], {0: 9, 9: 0}).tolist() == [9, 5, 0]


def test_label_flip_empty_map_is_identity():
    assert apply_label_flip([3, 1, 2], {}).tolist() == [3, 1, 2]


def test_label_flip_swap_is_involution():
    y = np.random.default_rng(0).integers(0, 10, 50)
    once = apply_label_flip(y, {0: 9, 9: 0})
    assert np.array_equal(apply_label_flip(once, {0: 9, 9: 0}), y)


def test_label_flip_is_simultaneous_not_sequential():
    # 0->1 and 1->2 applied at once: an original 0 ends at 1, not 2.
    assert apply_label_flip([0, 1, 2], {0: 1, 1: 2}).tolist() == [1, 2, 2]


def test_label_flip_target_out_of_range():
    with pytest.raises(ConfigurationError):
        apply_label_flip([0, 1], {0: 3}, num_classes=3)


def test_reversal_map():
    assert reversal_flip_map(3) == {0: 2, 2: 0}
    assert reversal_flip_map(4) == {0: 3, 1: 2, 2: 1, 3: 0}
    assert reversal_flip_map(10)[0] == 9


def test_targeted_poison_zero_fraction():
    y = np.array([0, 1, 0, 2])
    assert np.array_equal(apply_targeted_poison(y, 0, 1, 0.0, 5), y)


def test_targeted_poison_full_fraction():
    y = np.array([0] * 10 + [2] * 5)
    out = apply_targeted_poison(y, 0, 1, 1.0, 5)
    assert out.tolist() == [1] * 10 + [2] * 5


def test_targeted_poison_half_is_exact_and_seeded():
    y = np.array([0] * 10 + [2] * 5)
    out = apply_targeted_poison(y, 0, 1, 0.5, 5)
    assert int(np.sum(out != y)) == 5
    assert np.all(out[10:] == 2)
    assert np.array_equal(out, apply_targeted_poison(y, 0, 1, 0.5, 5))
    changed = {tuple(np.flatnonzero(apply_targeted_poison(y, 0, 1, 0.5, s) != y)) for s in range(10)}
    assert len(changed) > 1


def test_targeted_poison_floor_count():
    y = np.zeros(7, dtype=int)
    assert int(np.sum(apply_targeted_poison(y, 0, 1, 0.5, 0) == 1)) == 3


def _payload(n, value=0.0):
    return ParamVector(np.full(n, value), shapes_from_dims([n - 1, 1]))


def test_noise_zero_sigma_bit_identical():
    p = _payload(10, 1.5)
    assert apply_additive_noise(p, 0.0, 3) is p


def test_noise_moments():
    p = _payload(10000)
    delta = apply_additive_noise(p, 1.0, 42).values - p.values
    assert -0.05 < delta.mean() < 0.05
    assert 0.97 < delta.std() < 1.03


def test_noise_moments_three_standard_errors():
    sigma, n = 5.0, 40000
    p = _payload(n, 2.0)
    delta = apply_additive_noise(p, sigma, 7).values - p.values
    assert abs(delta.mean()) < 3 * sigma / np.sqrt(n)
    # sd of the sample variance for a Gaussian is sigma^2 * sqrt(2/(n-1))
    assert abs(delta.var(ddof=1) - sigma**2) < 3 * sigma**2 * np.sqrt(2 / (n - 1))


def test_noise_deterministic_and_shape_preserving():
    p = _payload(100)
    a, b = apply_additive_noise(p, 2.0, 1), apply_additive_noise(p, 2.0, 1)
    assert a == b and a.shapes == p.shapes


def test_attack_config_invariants():
    with pytest.raises(ConfigurationError):
        AttackConfig("label_flip", flip_map={1: 1})
    with pytest.raises(ConfigurationError):
        AttackConfig("targeted_poison", source_class=2, target_class=2)
    with pytest.raises(ConfigurationError):
        AttackConfig("targeted_poison", poison_fraction=1.5)
    with pytest.raises(ConfigurationError):
        AttackConfig("additive_noise", sigma=-1)
    with pytest.raises(ConfigurationError):
        AttackConfig("backdoor")
    with pytest.raises(ConfigurationError):
        AttackConfig("label_flip", flip_map={0: 5}).check_classes(3)


def test_dispatch_routes_by_placement():
    y = np.array([0, 1, 2])
    p = _payload(4, 1.0)
    flip = AttackConfig("label_flip", flip_map={0: 2, 2: 0})
    noise = AttackConfig("additive_noise", sigma=1.0)
    assert poison_labels(flip, y, 0, 3).tolist() == [2, 1, 0]
    assert perturb_payload(flip, p, 0) is p
    assert poison_labels(noise, y, 0, 3) is y
    assert perturb_payload(noise, p, 0) != p
    assert poison_labels(None, y, 0) is y and perturb_payload(None, p, 0) is p
