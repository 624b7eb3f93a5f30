"""Malicious node behaviours.

Label flipping and targeted poisoning rewrite a node's training labels before
it trains; additive noise perturbs the payload it submits afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AttackError, ConfigurationError
from .model import ParamVector

ATTACK_KINDS = ("label_flip", "targeted_poison", "additive_noise")
DATA_ATTACKS = ("label_flip", "targeted_poison")


@dataclass(frozen=True)
class AttackConfig:
    kind: str
    flip_map: dict = field(default_factory=dict)
    source_class: int = 0
    target_class: int = 1
    poison_fraction: float = 1.0
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigurationError(f"unknown attack kind {self.kind!r}")
        object.__setattr__(self, "flip_map", {int(k): int(v) for k, v in self.flip_map.items()})
        if self.kind == "label_flip":
            for k, v in self.flip_map.items():
                if k == v:
                    raise ConfigurationError(f"flip_map has fixed point {k}")
                if k < 0 or v < 0:
                    raise ConfigurationError("flip_map classes must be non-negative")
        if self.kind == "targeted_poison":
            if self.source_class == self.target_class:
                raise ConfigurationError("source_class and target_class must differ")
            if not 0.0 <= self.poison_fraction <= 1.0:
                raise ConfigurationError("poison_fraction must lie in [0, 1]")
        if self.kind == "additive_noise" and not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ConfigurationError("sigma must be finite and >= 0")

    def check_classes(self, num_classes: int) -> None:
        if self.kind == "label_flip":
            bad = [c for pair in self.flip_map.items() for c in pair if c >= num_classes]
            if bad:
                raise ConfigurationError(f"flip_map references class {bad[0]} >= {num_classes}")
        elif self.kind == "targeted_poison":
            for c in (self.source_class, self.target_class):
                if not 0 <= c < num_classes:
                    raise ConfigurationError(f"class {c} outside [0, {num_classes})")


def reversal_flip_map(num_classes: int) -> dict:
    """``y -> c-1-y`` without the middle fixed point of odd ``c``."""
    return {y: num_classes - 1 - y for y in range(num_classes) if y != num_classes - 1 - y}


def apply_label_flip(labels, flip_map: dict, num_classes: int | None = None) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is not None:
        for k, v in flip_map.items():
            if v >= num_classes or k >= num_classes:
                raise ConfigurationError(f"flip {k}->{v} outside [0, {num_classes})")
    out = labels.copy()
    for k, v in flip_map.items():
        out[labels == k] = v
    return out


def apply_targeted_poison(labels, source_class: int, target_class: int, poison_fraction: float, seed: int) -> np.ndarray:
    """Relabel ``floor(poison_fraction * |source|)`` seeded-random source samples as target.

    Only labels change, so the caller keeps the feature matrix as is.
    """
    if source_class == target_class:
        raise ConfigurationError("source_class and target_class must differ")
    labels = np.asarray(labels, dtype=np.int64)
    source = np.flatnonzero(labels == source_class)
    k = math.floor(poison_fraction * source.size)
    out = labels.copy()
    if k:
        rng = np.random.default_rng(seed)
        out[rng.choice(source, size=k, replace=False)] = target_class
    return out


def apply_additive_noise(payload: ParamVector, sigma: float, seed: int) -> ParamVector:
    if sigma < 0:
        raise ConfigurationError("sigma must be >= 0")
    if sigma == 0:
        return payload
    noise = np.random.default_rng(seed).normal(0.0, sigma, size=len(payload))
    values = payload.values + noise
    if not np.all(np.isfinite(values)):
        raise AttackError("additive noise produced a non-finite parameter")
    return payload.replace(values)


def poison_labels(attack: AttackConfig | None, labels, seed: int, num_classes: int | None = None) -> np.ndarray:
    """Training labels a node actually uses; honest nodes get ``labels`` back untouched."""
    if attack is None or attack.kind not in DATA_ATTACKS:
        return labels
    if attack.kind == "label_flip":
        return apply_label_flip(labels, attack.flip_map, num_classes)
    return apply_targeted_poison(labels, attack.source_class, attack.target_class, attack.poison_fraction, seed)


def perturb_payload(attack: AttackConfig | None, payload: ParamVector, seed: int) -> ParamVector:
    if attack is None or attack.kind != "additive_noise":
        return payload
    return apply_additive_noise(payload, attack.sigma, seed)
