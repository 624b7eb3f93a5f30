"""Experiment configuration: strict JSON schema, documented defaults, cross-field rules.

Structural problems are found by :mod:`jsonschema`; rules that tie fields
together (FedAvg needs weight-form updates, a committee must leave trainers,
Multi-Krum needs enough updates per round, ...) are checked afterwards. Every
violation is collected and reported with its JSON path before anything runs.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .aggregation import AGGREGATION_KINDS, UPDATE_FORMS, AggregationConfig
from .attacks import ATTACK_KINDS, AttackConfig
from .consensus import COMMITTEE_SELECTION, CONSENSUS_KINDS, MAX_DIFFICULTY_BITS, ConsensusConfig
from .dataset import ASSIGNMENT_STRATEGIES, PartitionPlan
from .encoding import digest
from .errors import ConfigurationError
from .model import TrainSpec
from .validation import VALIDATION_KINDS, ValidationConfig

# Seeds must fit the signed 8-byte canonical integer encoding.
_UINT64 = {"type": "integer", "minimum": 0, "maximum": 2**63 - 1}
_FRACTION = {"type": "number", "minimum": 0, "maximum": 1}
_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG_INT = {"type": "integer", "minimum": 0}
_NONNEG_NUM = {"type": "number", "minimum": 0}
_POS_NUM = {"type": "number", "exclusiveMinimum": 0}


def _obj(properties, required=()):
    return {"type": "object", "properties": properties, "required": list(required), "additionalProperties": False}


SCHEMA = _obj(
    {
        "rounds": _POS_INT,
        "nodes": _POS_INT,
        "master_seed": _UINT64,
        "output_dir": {"type": "string"},
        "update_form": {"enum": list(UPDATE_FORMS)},
        "update_sharing": {"enum": ["broadcast"]},
        "model": _obj({"hidden_dims": {"type": "array", "items": _POS_INT}}, ["hidden_dims"]),
        "dataset": _obj(
            {
                "kind": {"enum": ["blobs", "mnist"]},
                "num_classes": _POS_INT,
                "per_class": _POS_INT,
                "dim": _POS_INT,
                "spread": _POS_NUM,
                "images_path": {"type": "string"},
                "labels_path": {"type": "string"},
                "max_samples": _POS_INT,
                "test_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "shared_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "partition": _obj(
                    {
                        "num_partitions": _POS_INT,
                        "iid_fraction": _FRACTION,
                        "non_iid_alpha": _POS_NUM,
                        "assignment": {"enum": list(ASSIGNMENT_STRATEGIES)},
                        "holdout_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                    }
                ),
            },
            ["kind"],
        ),
        "consensus": _obj(
            {
                "kind": {"enum": list(CONSENSUS_KINDS)},
                "pow_difficulty_bits": {"type": "integer", "minimum": 0, "maximum": MAX_DIFFICULTY_BITS},
                "pow_hashpower": {
                    "type": "object",
                    "propertyNames": {"pattern": "^(0|[1-9][0-9]*)$"},
                    "additionalProperties": _POS_NUM,
                },
                "pos_initial_stake": _POS_NUM,
                "pos_reward": _NONNEG_NUM,
                "committee_size": _POS_INT,
                "committee_selection": {"enum": list(COMMITTEE_SELECTION)},
            },
            ["kind"],
        ),
        "validation": _obj(
            {
                "kind": {"enum": list(VALIDATION_KINDS)},
                "accuracy_threshold": _FRACTION,
                "assumed_byzantine": _NONNEG_INT,
                "accept_count": _POS_INT,
            },
            ["kind"],
        ),
        "aggregation": _obj({"kind": {"enum": list(AGGREGATION_KINDS)}, "server_lr": _POS_NUM}, ["kind"]),
        "train": _obj(
            {"local_epochs": _POS_INT, "batch_size": _POS_INT, "learning_rate": _NONNEG_NUM},
            ["local_epochs", "batch_size", "learning_rate"],
        ),
        "attackers": {
            "type": "array",
            "items": _obj(
                {
                    "node_id": _NONNEG_INT,
                    "kind": {"enum": list(ATTACK_KINDS)},
                    "flip_map": {
                        "type": "object",
                        "propertyNames": {"pattern": "^(0|[1-9][0-9]*)$"},
                        "additionalProperties": _NONNEG_INT,
                    },
                    "source_class": _NONNEG_INT,
                    "target_class": _NONNEG_INT,
                    "poison_fraction": _FRACTION,
                    "sigma": _NONNEG_NUM,
                    "seed": _UINT64,
                },
                ["node_id", "kind"],
            ),
        },
    },
    ["rounds", "nodes", "master_seed", "update_form", "model", "dataset", "consensus", "validation", "aggregation", "train"],
)

# Optional fields and the values they take when omitted.
DEFAULTS = {
    ("output_dir",): "out",
    ("update_sharing",): "broadcast",
    ("attackers",): [],
    ("dataset", "test_fraction"): 0.2,
    ("dataset", "shared_fraction"): 0.1,
    ("dataset", "partition"): {},
    ("dataset", "partition", "iid_fraction"): 1.0,
    ("dataset", "partition", "non_iid_alpha"): 0.5,
    ("dataset", "partition", "assignment"): "one-to-one",
    ("dataset", "partition", "holdout_fraction"): 0.1,
    ("consensus", "pow_difficulty_bits"): 8,
    ("consensus", "pow_hashpower"): {},
    ("consensus", "pos_initial_stake"): 1.0,
    ("consensus", "pos_reward"): 0.0,
    ("consensus", "committee_selection"): "uniform",
    ("validation", "accuracy_threshold"): 0.0,
    ("aggregation", "server_lr"): 0.1,
}

ATTACK_FIELDS = {
    "label_flip": {"flip_map"},
    "targeted_poison": {"source_class", "target_class", "poison_fraction"},
    "additive_noise": {"sigma"},
}


_Validator = jsonschema.validators.extend(
    jsonschema.Draft202012Validator,
    type_checker=jsonschema.Draft202012Validator.TYPE_CHECKER.redefine(
        "integer", lambda _, value: isinstance(value, int) and not isinstance(value, bool)
    ),
)


class ConfigError(ConfigurationError):
    """Every problem found in one configuration, each as ``(json_path, message)``."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("\n".join(f"{path}: {msg}" for path, msg in self.problems))


@dataclass(frozen=True)
class DatasetConfig:
    kind: str
    test_fraction: float
    shared_fraction: float
    partition: dict
    num_classes: int = 0
    per_class: int = 0
    dim: int = 0
    spread: float = 0.0
    images_path: str = ""
    labels_path: str = ""
    max_samples: int = 0

    def partition_plan(self, seed: int) -> PartitionPlan:
        p = self.partition
        return PartitionPlan(
            num_partitions=p["num_partitions"],
            iid_fraction=p["iid_fraction"],
            non_iid_alpha=p["non_iid_alpha"],
            assignment=p["assignment"],
            seed=seed,
            holdout_fraction=p["holdout_fraction"],
        )


@dataclass(frozen=True, eq=False)
class SimulationConfig:
    rounds: int
    nodes: int
    master_seed: int
    hidden_dims: tuple
    update_form: str
    dataset: DatasetConfig
    consensus: ConsensusConfig
    validation: ValidationConfig
    aggregation: AggregationConfig
    train: dict
    attackers: dict
    output_dir: str
    raw: dict

    def train_spec(self, seed: int) -> TrainSpec:
        return TrainSpec(self.train["local_epochs"], self.train["batch_size"], self.train["learning_rate"], seed)

    def trainers_per_round(self) -> int:
        if self.consensus.kind == "committee":
            return self.nodes - self.consensus.committee_size
        return self.nodes

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    @property
    def digest(self) -> str:
        """SHA-256 of the canonical resolved config, excluding ``output_dir``."""
        d = self.to_dict()
        d.pop("output_dir", None)
        return digest(d)

    def with_overrides(self, **changes) -> "SimulationConfig":
        d = self.to_dict()
        d.update(changes)
        return config_from_dict(d)


def _apply_defaults(d: dict) -> dict:
    d = copy.deepcopy(d)
    for path, value in DEFAULTS.items():
        node = d
        for key in path[:-1]:
            node = node.get(key)
            if not isinstance(node, dict):
                break
        else:
            node.setdefault(path[-1], copy.deepcopy(value))
    part = d.get("dataset", {}).get("partition")
    if isinstance(part, dict) and isinstance(d.get("nodes"), int):
        part.setdefault("num_partitions", d["nodes"])
    return d


def _cross_field(d: dict, base_dir: Path | None):
    problems = []
    nodes = d["nodes"]
    ds = d["dataset"]
    cons = d["consensus"]
    val = d["validation"]
    agg = d["aggregation"]

    if agg["kind"] == "fedavg" and d["update_form"] != "weights":
        problems.append(("$.aggregation.kind", "fedavg aggregates weight-form updates only; set update_form to 'weights'"))

    if ds["kind"] == "blobs":
        for key in ("num_classes", "per_class", "dim", "spread"):
            if key not in ds:
                problems.append((f"$.dataset.{key}", "required for blobs datasets"))
        for key in ("images_path", "labels_path", "max_samples"):
            if key in ds:
                problems.append((f"$.dataset.{key}", "only valid for mnist datasets"))
    else:
        for key in ("images_path", "labels_path"):
            if key not in ds:
                problems.append((f"$.dataset.{key}", "required for mnist datasets"))
            elif base_dir is not None:
                ds[key] = str((base_dir / ds[key]).resolve())
        for key in ("num_classes", "per_class", "dim", "spread"):
            if key in ds:
                problems.append((f"$.dataset.{key}", "only valid for blobs datasets"))
    if ds["test_fraction"] + ds["shared_fraction"] >= 1:
        problems.append(("$.dataset.shared_fraction", "test_fraction + shared_fraction must be < 1"))

    part = ds["partition"]
    if part["assignment"] == "one-to-one" and part["num_partitions"] != nodes:
        problems.append(("$.dataset.partition.num_partitions", f"one-to-one assignment needs exactly {nodes} partitions"))

    if cons["kind"] == "committee":
        if "committee_size" not in cons:
            problems.append(("$.consensus.committee_size", "required for committee consensus"))
        elif cons["committee_size"] >= nodes:
            problems.append(("$.consensus.committee_size", f"committee of {cons['committee_size']} leaves no trainers among {nodes} nodes"))
    elif "committee_size" in cons:
        problems.append(("$.consensus.committee_size", "only valid for committee consensus"))
    for key in cons["pow_hashpower"]:
        if int(key) >= nodes:
            problems.append((f"$.consensus.pow_hashpower.{key}", f"node id must be < {nodes}"))

    trainers = nodes - cons.get("committee_size", 0) if cons["kind"] == "committee" else nodes
    if val["kind"] == "multi_krum":
        for key in ("assumed_byzantine", "accept_count"):
            if key not in val:
                problems.append((f"$.validation.{key}", "required for multi_krum validation"))
        if "assumed_byzantine" in val and "accept_count" in val:
            need = max(val["accept_count"], val["assumed_byzantine"] + 3)
            if trainers < need:
                problems.append(
                    ("$.validation.assumed_byzantine", f"multi_krum needs >= {need} updates per round but only {trainers} nodes train")
                )
    else:
        for key in ("assumed_byzantine", "accept_count"):
            if key in val:
                problems.append((f"$.validation.{key}", "only valid for multi_krum validation"))
    if val["kind"] == "global_dataset" and ds["shared_fraction"] == 0:
        problems.append(("$.dataset.shared_fraction", "global_dataset validation needs a shared set (> 0)"))
    if val["kind"] == "local_dataset" and part["holdout_fraction"] == 0:
        problems.append(("$.dataset.partition.holdout_fraction", "local_dataset validation needs node holdouts (> 0)"))

    seen = set()
    num_classes = ds.get("num_classes", 10 if ds["kind"] == "mnist" else None)
    for i, atk in enumerate(d["attackers"]):
        where = f"$.attackers[{i}]"
        nid = atk["node_id"]
        if nid >= nodes:
            problems.append((f"{where}.node_id", f"node id must be < {nodes}"))
        if nid in seen:
            problems.append((f"{where}.node_id", f"node {nid} listed as attacker twice"))
        seen.add(nid)
        allowed = ATTACK_FIELDS[atk["kind"]] | {"node_id", "kind", "seed"}
        for key in sorted(set(atk) - allowed):
            problems.append((f"{where}.{key}", f"not a parameter of {atk['kind']} attacks"))
        for key in sorted(ATTACK_FIELDS[atk["kind"]] - set(atk)):
            problems.append((f"{where}.{key}", f"required for {atk['kind']} attacks"))
        if atk["kind"] == "label_flip" and "flip_map" in atk:
            for k, v in atk["flip_map"].items():
                if int(k) == v:
                    problems.append((f"{where}.flip_map.{k}", "flip_map may not map a class to itself"))
                if num_classes is not None and (int(k) >= num_classes or v >= num_classes):
                    problems.append((f"{where}.flip_map.{k}", f"classes must be < {num_classes}"))
        if atk["kind"] == "targeted_poison" and "source_class" in atk and "target_class" in atk:
            if atk["source_class"] == atk["target_class"]:
                problems.append((f"{where}.target_class", "must differ from source_class"))
            if num_classes is not None:
                for key in ("source_class", "target_class"):
                    if atk[key] >= num_classes:
                        problems.append((f"{where}.{key}", f"class must be < {num_classes}"))
    return problems


def config_from_dict(data: dict, base_dir=None) -> SimulationConfig:
    """Validate ``data`` against the schema and rules and build the typed config."""
    validator = _Validator(SCHEMA)
    problems = [
        (err.json_path, err.message) for err in sorted(validator.iter_errors(data), key=lambda e: (e.json_path, e.message))
    ]
    if problems:
        raise ConfigError(problems)
    d = _apply_defaults(data)
    problems = _cross_field(d, Path(base_dir) if base_dir is not None else None)
    if problems:
        raise ConfigError(problems)

    ds = d["dataset"]
    cons = d["consensus"]
    val = d["validation"]
    attackers = {}
    for atk in d["attackers"]:
        params = {k: v for k, v in atk.items() if k != "node_id"}
        attackers[atk["node_id"]] = AttackConfig(**params)
    return SimulationConfig(
        rounds=d["rounds"],
        nodes=d["nodes"],
        master_seed=d["master_seed"],
        hidden_dims=tuple(d["model"]["hidden_dims"]),
        update_form=d["update_form"],
        dataset=DatasetConfig(
            kind=ds["kind"],
            test_fraction=ds["test_fraction"],
            shared_fraction=ds["shared_fraction"],
            partition=dict(ds["partition"]),
            num_classes=ds.get("num_classes", 0),
            per_class=ds.get("per_class", 0),
            dim=ds.get("dim", 0),
            spread=float(ds.get("spread", 0.0)),
            images_path=ds.get("images_path", ""),
            labels_path=ds.get("labels_path", ""),
            max_samples=ds.get("max_samples", 0),
        ),
        consensus=ConsensusConfig(
            kind=cons["kind"],
            pow_difficulty_bits=cons["pow_difficulty_bits"],
            pow_hashpower=cons["pow_hashpower"],
            pos_initial_stake=float(cons["pos_initial_stake"]),
            pos_reward=float(cons["pos_reward"]),
            committee_size=cons.get("committee_size", 1),
            committee_selection=cons["committee_selection"],
            seed=d["master_seed"],
        ),
        validation=ValidationConfig(
            kind=val["kind"],
            accuracy_threshold=float(val["accuracy_threshold"]),
            assumed_byzantine=val.get("assumed_byzantine", 0),
            accept_count=val.get("accept_count", 1),
        ),
        aggregation=AggregationConfig(d["aggregation"]["kind"], float(d["aggregation"]["server_lr"])),
        train=dict(d["train"]),
        attackers=attackers,
        output_dir=d["output_dir"],
        raw=d,
    )


def load_config(path) -> SimulationConfig:
    """Read a JSON config file; relative dataset paths resolve against its directory."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError([("$", f"malformed JSON: {exc}")]) from exc
    except OSError as exc:
        raise ConfigError([("$", f"cannot read {path}: {exc}")]) from exc
    return config_from_dict(data, base_dir=path.parent)


def save_config(config: SimulationConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
