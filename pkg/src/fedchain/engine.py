"""Round loop: roles, local training, attacks, validation, aggregation, block append."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import aggregation, consensus, validation
from . import model as mlp
from .attacks import AttackConfig, perturb_payload, poison_labels
from .config import SimulationConfig
from .dataset import Dataset, Partition, assign, generate_blobs, load_idx, partition, split_holdout_sets
from .encoding import derive_seed, digest
from .errors import EmptyPartitionError, FedChainError, SimulationError, ValidationError
from .ledger import Chain, PayloadStore, UpdateRecord, append_block, genesis_block, make_block
from .model import Model, shapes_from_dims
from .validation import ModelUpdate

log = logging.getLogger(__name__)


@dataclass
class NodeState:
    id: int
    partition: Partition
    attack: AttackConfig | None = None
    stake: float = 1.0
    hashpower: float = 1.0

    @property
    def malicious(self) -> bool:
        return self.attack is not None


@dataclass
class RoundMetrics:
    round: int
    global_accuracy: float
    per_class_accuracy: list
    submitted: int
    accepted: int
    rejected_by_reason: dict
    producer: int
    wallclock_ms: int = 0


@dataclass
class SimulationState:
    config: SimulationConfig
    model: Model
    initial_model: Model
    chain: Chain
    nodes: list
    train_pool: Dataset
    shared: Dataset | None
    test: Dataset
    store: PayloadStore = field(default_factory=PayloadStore)
    holdouts: dict = field(default_factory=dict)

    @property
    def stakes(self) -> list:
        return [n.stake for n in self.nodes]


@dataclass
class RunResult:
    chain: Chain
    metrics: list
    final_model_digest: str
    config_digest: str
    final_model: Model
    initial_model: Model
    store: PayloadStore
    attackers: frozenset


def load_dataset(config: SimulationConfig) -> Dataset:
    ds = config.dataset
    if ds.kind == "blobs":
        seed = derive_seed(config.master_seed, 0, None, "blobs")
        return generate_blobs(ds.num_classes, ds.per_class, ds.dim, ds.spread, seed)
    data = load_idx(ds.images_path, ds.labels_path)
    if ds.max_samples and ds.max_samples < len(data):
        rng = np.random.default_rng(derive_seed(config.master_seed, 0, None, "subsample"))
        data = data.subset(np.sort(rng.choice(len(data), size=ds.max_samples, replace=False)))
    return data


def build_state(config: SimulationConfig, dataset: Dataset | None = None) -> SimulationState:
    """Everything a run needs before round 1: data splits, nodes, initial model, genesis."""
    seed = config.master_seed
    data = dataset if dataset is not None else load_dataset(config)
    for atk in config.attackers.values():
        atk.check_classes(data.num_classes)
    pool, shared, test = split_holdout_sets(
        data, config.dataset.test_fraction, config.dataset.shared_fraction, derive_seed(seed, 0, None, "split")
    )
    plan = config.dataset.partition_plan(derive_seed(seed, 0, None, "partition"))
    parts = partition(pool, plan)
    node_ids = list(range(config.nodes))
    mapping = assign(parts, node_ids, plan.assignment, derive_seed(seed, 0, None, "assign"))
    nodes = [
        NodeState(
            id=i,
            partition=mapping[i],
            attack=config.attackers.get(i),
            stake=config.consensus.pos_initial_stake,
            hashpower=config.consensus.hashpower(i),
        )
        for i in node_ids
    ]
    shapes = shapes_from_dims([data.dim, *config.hidden_dims, data.num_classes])
    initial = mlp.init_model(shapes, derive_seed(seed, 0, None, "init"))
    chain = Chain()
    append_block(chain, genesis_block(digest(initial.params)))
    holdouts = {}
    for n in nodes:
        if n.partition.holdout_indices.size:
            holdouts[n.id] = pool.subset(n.partition.holdout_indices, f"holdout-{n.id}")
    return SimulationState(config, initial, initial, chain, nodes, pool, shared, test, PayloadStore(), holdouts)


def local_update(state: SimulationState, node: NodeState, round_index: int) -> ModelUpdate:
    """One node's submission for the round, attack applied if it is malicious."""
    cfg = state.config
    idx = node.partition.indices
    x = state.train_pool.features[idx]
    y = poison_labels(
        node.attack,
        state.train_pool.labels[idx],
        derive_seed(cfg.master_seed, round_index, node.id, "poison"),
        state.train_pool.num_classes,
    )
    if len(y) == 0:
        raise EmptyPartitionError(f"node {node.id} has no training samples")
    if cfg.update_form == "weights":
        spec = cfg.train_spec(derive_seed(cfg.master_seed, round_index, node.id, "shuffle"))
        payload = mlp.train_local(state.model, x, y, spec).params
    else:
        payload = mlp.gradient(state.model, x, y)
    payload = perturb_payload(node.attack, payload, derive_seed(cfg.master_seed, round_index, node.id, "attack"))
    return ModelUpdate(node.id, cfg.update_form, payload, int(len(y)))


def trainers_for(state: SimulationState, roles: consensus.RoundRoles) -> list:
    committee = set(roles.committee)
    return [n for n in state.nodes if n.id not in committee]


def _verdicts(state: SimulationState, updates, update_ids, roles):
    cfg = state.config
    vcfg = cfg.validation
    voters = tuple(roles.validators)
    if vcfg.kind in validation.PASS_FORMS:
        expected = validation.PASS_FORMS[vcfg.kind]
        return [validation.validate_pass(u, expected, uid, voters) for u, uid in zip(updates, update_ids)]
    if vcfg.kind == "multi_krum":
        return validation.multi_krum_verdicts(updates, vcfg.assumed_byzantine, vcfg.accept_count, update_ids, voters)
    if vcfg.kind == "global_dataset":
        validators = [(v, state.shared) for v in voters]
    else:
        validators = [(v, state.holdouts.get(v)) for v in voters]
    return validation.committee_validate(
        updates, state.model, validators, vcfg.accuracy_threshold, cfg.aggregation.server_lr, update_ids
    )


def run_round(state: SimulationState, round_index: int, workers: int = 1, pool=None):
    """Advance ``state`` by one round; returns ``(state, RoundMetrics, Block)``.

    Failures are re-raised as :class:`SimulationError` carrying the stage.
    """
    cfg = state.config
    started = time.perf_counter()
    if state.chain.tip.height != round_index - 1:
        raise SimulationError("chain tip does not precede this round", round_index, "setup")
    stage = "consensus"
    try:
        header = consensus.block_header(round_index, state.chain.tip.block_hash)
        roles = consensus.select_roles(round_index, header, [n.id for n in state.nodes], state.stakes, cfg.consensus)

        stage = "training"
        trainers = trainers_for(state, roles)

        def work(node):
            try:
                return local_update(state, node, round_index)
            except EmptyPartitionError:
                log.info("round %d: node %d skipped (empty partition)", round_index, node.id)
                return None

        if pool is not None and workers > 1:
            results = list(pool.map(work, trainers))
        else:
            results = [work(n) for n in trainers]
        updates = [u for u in results if u is not None]

        stage = "validation"
        update_ids = [state.store.put(u.payload) for u in updates]
        if not updates:
            verdicts = []
        elif cfg.validation.kind == "multi_krum" and len(updates) < cfg.validation.min_updates():
            raise ValidationError(
                f"multi_krum needs {cfg.validation.min_updates()} updates but only {len(updates)} were submitted"
            )
        else:
            verdicts = _verdicts(state, updates, update_ids, roles)

        stage = "aggregation"
        accepted = [(u, v) for u, v in zip(updates, verdicts) if v.accepted]
        new_model = aggregation.apply(
            state.model,
            [u.payload for u, _ in accepted],
            cfg.aggregation,
            cfg.update_form,
            [u.num_samples for u, _ in accepted],
        )

        stage = "stake"
        stakes = consensus.update_stake(state.stakes, [u.author for u, _ in accepted], cfg.consensus.pos_reward)
        for node, s in zip(state.nodes, stakes):
            node.stake = s

        stage = "ledger"
        records = [
            UpdateRecord(uid, u.author, u.form, u.num_samples, uid, v) for u, uid, v in zip(updates, update_ids, verdicts)
        ]
        block = make_block(round_index, state.chain.tip.block_hash, records, roles.producer, roles.proof, digest(new_model.params))
        append_block(state.chain, block)
        state.model = new_model

        stage = "metrics"
        rejected: dict = {}
        for v in verdicts:
            if not v.accepted:
                rejected[v.reason] = rejected.get(v.reason, 0) + 1
        metrics = RoundMetrics(
            round=round_index,
            global_accuracy=mlp.evaluate(new_model, state.test.features, state.test.labels),
            per_class_accuracy=mlp.per_class_accuracy(new_model, state.test.features, state.test.labels).tolist(),
            submitted=len(updates),
            accepted=len(accepted),
            rejected_by_reason=rejected,
            producer=roles.producer,
            wallclock_ms=int((time.perf_counter() - started) * 1000),
        )
    except SimulationError:
        raise
    except (FedChainError, ValueError, ArithmeticError) as exc:
        raise SimulationError(str(exc), round_index, stage) from exc
    return state, metrics, block


def run(config: SimulationConfig, workers: int = 1, dataset: Dataset | None = None, on_round=None) -> RunResult:
    """Execute ``config.rounds`` rounds; deterministic in the config, whatever ``workers`` is."""
    state = build_state(config, dataset)
    metrics = []
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for r in range(1, config.rounds + 1):
            try:
                state, m, _ = run_round(state, r, workers, executor)
            except SimulationError as exc:
                exc.partial = metrics
                raise
            metrics.append(m)
            log.debug("round %d: acc=%.4f accepted=%d/%d", r, m.global_accuracy, m.accepted, m.submitted)
            if on_round is not None:
                on_round(m)
    finally:
        if executor is not None:
            executor.shutdown()
    return RunResult(
        chain=state.chain,
        metrics=metrics,
        final_model_digest=digest(state.model.params),
        config_digest=config.digest,
        final_model=state.model,
        initial_model=state.initial_model,
        store=state.store,
        attackers=frozenset(config.attackers),
    )


def replay(chain: Chain, store: PayloadStore, initial_model: Model, cfg: SimulationConfig) -> tuple[bool, str | None]:
    """Recompute every block's global model from its accepted payloads and compare digests."""
    model = initial_model
    if chain.blocks[0].global_model_digest != digest(model.params):
        return False, "genesis digest does not match the initial model"
    for block in chain.blocks[1:]:
        accepted = [r for r in block.records if r.verdict.accepted]
        try:
            payloads = [store.get(r.payload_digest) for r in accepted]
        except KeyError as exc:
            return False, f"height {block.height}: payload {exc} missing from store"
        model = aggregation.apply(
            model, payloads, cfg.aggregation, cfg.update_form, [r.claimed_num_samples for r in accepted]
        )
        if digest(model.params) != block.global_model_digest:
            return False, f"height {block.height}: replayed model digest differs"
    return True, None
