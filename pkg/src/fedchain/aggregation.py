"""FedAvg, coordinate-wise mean and coordinate-wise median.

Inputs are put into a canonical order before any floating-point summation, so
every aggregator is bit-for-bit invariant to the order updates arrive in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AggregationError, ConfigurationError
from .model import Model, ParamVector

AGGREGATION_KINDS = ("fedavg", "mean", "median")
UPDATE_FORMS = ("weights", "gradients")


@dataclass(frozen=True)
class AggregationConfig:
    kind: str
    server_lr: float = 0.1

    def __post_init__(self):
        if self.kind not in AGGREGATION_KINDS:
            raise ConfigurationError(f"unknown aggregation kind {self.kind!r}")
        if not self.server_lr > 0:
            raise ConfigurationError("server_lr must be > 0")


def _stack(updates) -> np.ndarray:
    if not updates:
        raise AggregationError("cannot aggregate an empty update list")
    first = updates[0]
    for u in updates[1:]:
        if not u.same_layout(first):
            raise AggregationError(f"shape mismatch: {u!r} vs {first!r}")
    return np.stack([u.values for u in updates])


def _canonical_order(rows: np.ndarray, weights=None) -> np.ndarray:
    keys = [r.tobytes() for r in rows]
    if weights is None:
        return np.array(sorted(range(len(keys)), key=lambda i: keys[i]), dtype=np.int64)
    return np.array(sorted(range(len(keys)), key=lambda i: (weights[i], keys[i])), dtype=np.int64)


def pairwise_sum(rows: np.ndarray) -> np.ndarray:
    """Sum of ``rows`` along axis 0 by recursive halving."""
    n = rows.shape[0]
    if n == 1:
        return rows[0].copy()
    if n == 2:
        return rows[0] + rows[1]
    half = n // 2
    return pairwise_sum(rows[:half]) + pairwise_sum(rows[half:])


def _within_range(avg: np.ndarray, rows: np.ndarray) -> np.ndarray:
    # An exact average lies between the column extremes; clipping only undoes
    # rounding, so k copies of v average to exactly v.
    return np.clip(avg, rows.min(axis=0), rows.max(axis=0))


def mean(updates) -> ParamVector:
    rows = _stack(updates)
    rows = rows[_canonical_order(rows)]
    return updates[0].replace(_within_range(pairwise_sum(rows) / rows.shape[0], rows))


def fedavg(updates) -> ParamVector:
    """Sample-weighted average of ``(ParamVector, num_samples)`` pairs."""
    if not updates:
        raise AggregationError("cannot aggregate an empty update list")
    vectors = [u for u, _ in updates]
    counts = np.array([int(n) for _, n in updates], dtype=np.int64)
    if np.any(counts < 1):
        raise AggregationError("every update must claim at least one sample")
    rows = _stack(vectors)
    order = _canonical_order(rows, counts.tolist())
    rows, counts = rows[order], counts[order]
    total = int(counts.sum())
    avg = pairwise_sum(rows * counts[:, None].astype(np.float64)) / total
    return vectors[0].replace(_within_range(avg, rows))


def median(updates) -> ParamVector:
    """Coordinate-wise median; even counts average the two middle values."""
    rows = _stack(updates)
    return updates[0].replace(np.median(rows, axis=0))


def aggregate(kind: str, payloads, sample_counts=None) -> ParamVector:
    if kind == "fedavg":
        if sample_counts is None:
            raise AggregationError("fedavg needs sample counts")
        return fedavg(list(zip(payloads, sample_counts)))
    if kind == "mean":
        return mean(payloads)
    if kind == "median":
        return median(payloads)
    raise AggregationError(f"unknown aggregation kind {kind!r}")


def apply(global_model: Model, payloads, cfg: AggregationConfig, form: str, sample_counts=None) -> Model:
    """Next global model from the accepted payloads of one round.

    Weight payloads are aggregated into the new parameters; gradient payloads
    are aggregated and the global model steps by ``-server_lr`` times the
    result. No accepted payloads leaves the model unchanged.
    """
    if form not in UPDATE_FORMS:
        raise AggregationError(f"mixed or unknown update form {form!r}")
    payloads = list(payloads)
    if not payloads:
        return global_model
    if cfg.kind == "fedavg" and form != "weights":
        raise AggregationError("fedavg only aggregates weight-form updates")
    agg = aggregate(cfg.kind, payloads, sample_counts)
    if not agg.same_layout(global_model.params):
        raise AggregationError("aggregated update does not match the global model layout")
    if form == "weights":
        return Model(agg, global_model.activation)
    return Model(global_model.params.replace(global_model.params.values - cfg.server_lr * agg.values), global_model.activation)
