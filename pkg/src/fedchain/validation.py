"""Per-round acceptance of submitted updates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as mlp
from .errors import ConfigurationError, ValidationError
from .model import Model, ParamVector

VALIDATION_KINDS = ("pass_weights", "pass_gradients", "global_dataset", "local_dataset", "multi_krum")
PASS_FORMS = {"pass_weights": "weights", "pass_gradients": "gradients"}


@dataclass(frozen=True)
class ValidationConfig:
    kind: str
    accuracy_threshold: float = 0.0
    assumed_byzantine: int = 0
    accept_count: int = 1

    def __post_init__(self):
        if self.kind not in VALIDATION_KINDS:
            raise ConfigurationError(f"unknown validation kind {self.kind!r}")
        if not 0.0 <= self.accuracy_threshold <= 1.0:
            raise ConfigurationError("accuracy_threshold must lie in [0, 1]")
        if self.assumed_byzantine < 0:
            raise ConfigurationError("assumed_byzantine must be >= 0")
        if self.accept_count < 1:
            raise ConfigurationError("accept_count must be >= 1")

    def min_updates(self) -> int:
        """Smallest round size multi_krum can score."""
        return max(self.accept_count, self.assumed_byzantine + 3)


@dataclass(frozen=True)
class ModelUpdate:
    author: int
    form: str
    payload: ParamVector
    num_samples: int


@dataclass(frozen=True)
class ValidationVerdict:
    update_id: str
    accepted: bool
    score: float
    voter_ids: tuple = ()
    reason: str | None = None

    def to_dict(self) -> dict:
        return {
            "update_id": self.update_id,
            "accepted": self.accepted,
            "score": float(self.score),
            "voter_ids": [int(v) for v in self.voter_ids],
            "reason": self.reason or "",
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ValidationVerdict":
        return cls(d["update_id"], d["accepted"], d["score"], tuple(d["voter_ids"]), d["reason"] or None)


def validate_pass(update: ModelUpdate, expected_form: str, update_id: str = "", voters=()) -> ValidationVerdict:
    """Accept anything of the right form without looking at it."""
    if update.form != expected_form:
        return ValidationVerdict(update_id, False, 0.0, tuple(voters), "form")
    return ValidationVerdict(update_id, True, 1.0, tuple(voters))


def candidate_model(update: ModelUpdate, global_model: Model, server_lr: float) -> Model:
    if update.form == "weights":
        return Model(update.payload, global_model.activation)
    with np.errstate(over="ignore", invalid="ignore"):
        stepped = global_model.params.values - server_lr * update.payload.values
    if not np.all(np.isfinite(stepped)):
        raise ValidationError("non-finite candidate parameters")
    return Model(global_model.params.replace(stepped), global_model.activation)


def validate_accuracy(
    update: ModelUpdate,
    global_model: Model,
    eval_set,
    threshold: float,
    server_lr: float = 0.1,
    update_id: str = "",
    voters=(),
) -> ValidationVerdict:
    """Accept iff the update's standalone candidate model scores ``>= threshold``.

    ``eval_set`` is a :class:`~fedchain.dataset.Dataset` or an ``(X, y)`` pair.
    """
    x, y = _xy(eval_set)
    if len(y) == 0:
        raise ValidationError("evaluation set is empty")
    try:
        candidate = candidate_model(update, global_model, server_lr)
    except (ValidationError, ValueError):
        return ValidationVerdict(update_id, False, 0.0, tuple(voters), "numeric")
    score = mlp.evaluate(candidate, x, y)
    accepted = score >= threshold
    return ValidationVerdict(update_id, accepted, score, tuple(voters), None if accepted else "threshold")


def _xy(eval_set):
    if eval_set is None:
        return None, ()
    if hasattr(eval_set, "features"):
        return eval_set.features, eval_set.labels
    return eval_set


def committee_validate(
    updates,
    global_model: Model,
    validators,
    threshold: float,
    server_lr: float = 0.1,
    update_ids=None,
) -> list[ValidationVerdict]:
    """Strict-majority vote of per-validator accuracy checks.

    ``validators`` is a sequence of ``(validator_id, eval_set)``; an empty or
    ``None`` eval set means that validator abstains. Validators sharing the
    same eval set object are evaluated once.
    """
    validators = list(validators)
    if not validators:
        raise ValidationError("committee has no validators")
    voting = [(vid, es) for vid, es in validators if es is not None and len(_xy(es)[1]) > 0]
    if not voting:
        raise ValidationError("every validator abstained (no evaluation data)")
    voter_ids = tuple(int(vid) for vid, _ in voting)
    update_ids = update_ids or [""] * len(updates)
    verdicts = []
    for update, uid in zip(updates, update_ids):
        cache = {}
        votes = []
        for _, es in voting:
            key = id(es)
            if key not in cache:
                cache[key] = validate_accuracy(update, global_model, es, threshold, server_lr)
            votes.append(cache[key])
        yes = sum(v.accepted for v in votes)
        accepted = 2 * yes > len(votes)
        score = float(np.mean([v.score for v in votes]))
        reason = None
        if not accepted:
            reasons = [v.reason for v in votes if not v.accepted]
            reason = "numeric" if reasons.count("numeric") * 2 > len(reasons) else "threshold"
        verdicts.append(ValidationVerdict(uid, accepted, score, voter_ids, reason))
    return verdicts


def krum_scores(vectors: np.ndarray, f: int) -> np.ndarray:
    """Sum of squared distances from each row to its ``n - f - 2`` nearest other rows."""
    vectors = np.asarray(vectors, dtype=np.float64)
    n = vectors.shape[0]
    if n < f + 3:
        raise ValidationError(f"multi-krum needs at least f+3={f + 3} updates, got {n}; run larger rounds or lower f")
    dist = np.empty((n, n))
    for i in range(n):
        dist[i] = np.sum((vectors - vectors[i]) ** 2, axis=1)
    k = n - f - 2
    scores = np.empty(n)
    for i in range(n):
        others = np.sort(np.delete(dist[i], i))
        scores[i] = others[:k].sum()
    return scores


def multi_krum(updates, f: int, m: int) -> list[int]:
    """Indices of the ``m`` lowest-scoring updates, ties broken toward lower index.

    ``updates`` may be ParamVectors or raw rows; the result is in acceptance
    order (best score first).
    """
    rows = np.stack([u.values if isinstance(u, ParamVector) else np.asarray(u, dtype=np.float64).reshape(-1) for u in updates])
    n = rows.shape[0]
    if n < m:
        raise ValidationError(f"multi-krum cannot accept m={m} of only {n} updates")
    if isinstance(updates[0], ParamVector) and any(not u.same_layout(updates[0]) for u in updates):
        raise ValidationError("multi-krum inputs must share one layout")
    scores = krum_scores(rows, f)
    order = sorted(range(n), key=lambda i: (scores[i], i))
    return order[:m]


def multi_krum_verdicts(updates, f: int, m: int, update_ids, voters=()) -> list[ValidationVerdict]:
    rows = np.stack([u.payload.values for u in updates])
    if rows.shape[0] < m:
        raise ValidationError(f"multi-krum cannot accept m={m} of only {rows.shape[0]} updates")
    scores = krum_scores(rows, f)
    accepted = set(sorted(range(len(scores)), key=lambda i: (scores[i], i))[:m])
    return [
        ValidationVerdict(uid, i in accepted, -float(scores[i]), tuple(voters), None if i in accepted else "krum")
        for i, uid in enumerate(update_ids)
    ]
