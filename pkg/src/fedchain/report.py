"""End-of-run summaries and the on-disk output files."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

METRICS_HEADER = ["round", "global_accuracy", "submitted", "accepted", "producer"]


@dataclass(frozen=True)
class RunSummary:
    final_accuracy: float
    best_accuracy: float
    mean_accuracy: float
    rounds_to_90pct_of_best: int
    attack_kind: str | None
    attacker_fraction: float
    acceptance_rate_honest: float | None
    acceptance_rate_malicious: float | None
    final_model_digest: str
    config_digest: str

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunSummary":
        return cls(**d)


def acceptance_counts(chain, attackers, after_round: int = 0) -> dict:
    """Submitted/accepted counts split by authorship, for blocks above ``after_round``."""
    counts = {"honest_submitted": 0, "honest_accepted": 0, "malicious_submitted": 0, "malicious_accepted": 0}
    for block in chain.blocks[1:]:
        if block.height <= after_round:
            continue
        for rec in block.records:
            side = "malicious" if rec.author in attackers else "honest"
            counts[f"{side}_submitted"] += 1
            counts[f"{side}_accepted"] += int(rec.verdict.accepted)
    return counts


def _rate(accepted, submitted):
    return accepted / submitted if submitted else None


def summarize(run, config, after_round: int = 0) -> RunSummary:
    """Accuracy and acceptance statistics of a finished run.

    Acceptance rates only count blocks with height greater than ``after_round``;
    a side that submitted nothing gets ``None``.
    """
    if not run.metrics:
        raise ValueError("cannot summarize a run with no completed rounds")
    acc = [m.global_accuracy for m in run.metrics]
    best = max(acc)
    first_good = next(m.round for m in run.metrics if m.global_accuracy >= 0.9 * best)
    kinds = sorted({a.kind for a in config.attackers.values()})
    c = acceptance_counts(run.chain, run.attackers, after_round)
    return RunSummary(
        final_accuracy=acc[-1],
        best_accuracy=best,
        mean_accuracy=sum(acc) / len(acc),
        rounds_to_90pct_of_best=first_good,
        attack_kind="+".join(kinds) if kinds else None,
        attacker_fraction=len(config.attackers) / config.nodes,
        acceptance_rate_honest=_rate(c["honest_accepted"], c["honest_submitted"]),
        acceptance_rate_malicious=_rate(c["malicious_accepted"], c["malicious_submitted"]),
        final_model_digest=run.final_model_digest,
        config_digest=run.config_digest,
    )


def write_metrics_csv(metrics, path, num_classes: int | None = None) -> None:
    if num_classes is None:
        num_classes = len(metrics[0].per_class_accuracy) if metrics else 0
    header = METRICS_HEADER + [f"class_{i}_accuracy" for i in range(num_classes)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for m in metrics:
            writer.writerow(
                [m.round, f"{m.global_accuracy:.6f}", m.submitted, m.accepted, m.producer]
                + [f"{a:.6f}" for a in m.per_class_accuracy]
            )


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_outputs(run, summary: RunSummary | None, out_dir, num_classes: int | None = None) -> None:
    """``metrics.csv``, ``summary.json`` and ``chain.json`` under ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(run.metrics, out / "metrics.csv", num_classes)
        if summary is not None:
            _atomic_write(out / "summary.json", json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n")
        _atomic_write(out / "chain.json", run.chain.to_json())
    except OSError as exc:
        raise OSError(f"cannot write outputs to {out}: {exc}") from exc


def load_summary(path) -> RunSummary:
    return RunSummary.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
