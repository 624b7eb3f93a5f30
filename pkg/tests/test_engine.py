import dataclasses

import numpy as np
import pytest

from fedchain import engine
from fedchain import model as mlp
from fedchain.attacks import AttackConfig
from fedchain.config import config_from_dict
from fedchain.encoding import derive_seed, digest
from fedchain.errors import EmptyPartitionError, SimulationError
from fedchain.ledger import verify_chain

import scenarios


def run(doc, **kw):
    return engine.run(config_from_dict(doc), **kw)


def test_zero_rounds_is_genesis_only():
    cfg = dataclasses.replace(config_from_dict(scenarios.small()), rounds=0)
    res = engine.run(cfg)
    assert len(res.chain) == 1 and res.metrics == []
    assert res.final_model_digest == digest(res.initial_model.params)


def test_same_config_same_result():
    a, b = run(scenarios.small()), run(scenarios.small())
    assert a.chain.to_json() == b.chain.to_json()
    assert a.final_model_digest == b.final_model_digest
    assert a.config_digest == b.config_digest


@pytest.mark.parametrize("kind", ["pow", "pos", "committee"])
def test_parallel_equals_serial(kind):
    cons = {"kind": kind}
    if kind == "committee":
        cons["committee_size"] = 2
    else:
        cons["pow_difficulty_bits"] = 4
    doc = scenarios.small(consensus=cons)
    doc["consensus"] = cons
    serial, parallel = run(doc), run(doc, workers=3)
    assert serial.chain.to_json() == parallel.chain.to_json()


def test_chain_length_and_accounting():
    res = run(scenarios.small(rounds=5, validation={"kind": "global_dataset", "accuracy_threshold": 0.6}))
    assert len(res.chain) == 6
    assert sum(m.accepted for m in res.metrics) == sum(len(b.accepted_ids) for b in res.chain.blocks)
    for m in res.metrics:
        assert m.accepted + sum(m.rejected_by_reason.values()) == m.submitted
        assert 0 <= m.global_accuracy <= 1


def test_committee_members_do_not_train():
    res = run(scenarios.small(rounds=3))
    for block, m in zip(res.chain.blocks[1:], res.metrics):
        committee = set(block.proof["committee"])
        assert m.submitted == 6 - 2
        assert not committee & {r.author for r in block.records}


def test_pos_everyone_trains():
    doc = scenarios.small()
    doc["consensus"] = {"kind": "pos", "pos_reward": 1.0}
    res = run(doc)
    assert all(m.submitted == 6 for m in res.metrics)


def test_replay_reproduces_every_digest():
    for doc in (scenarios.small(), scenarios.small(update_form="gradients", aggregation={"kind": "median"},
                                                  validation={"kind": "pass_gradients"})):
        cfg = config_from_dict(doc)
        res = engine.run(cfg)
        assert engine.replay(res.chain, res.store, res.initial_model, cfg) == (True, None)


def test_replay_detects_wrong_initial_model():
    cfg = config_from_dict(scenarios.small())
    res = engine.run(cfg)
    other = mlp.init_model(res.initial_model.shapes, 999)
    assert not engine.replay(res.chain, res.store, other, cfg)[0]


def test_lr_zero_keeps_accuracy_constant():
    doc = scenarios.small(rounds=4, train={"learning_rate": 0.0}, validation={"kind": "pass_weights"},
                          aggregation={"kind": "mean"})
    res = run(doc)
    assert len({m.global_accuracy for m in res.metrics}) == 1
    assert res.final_model_digest == digest(res.initial_model.params)


def test_clean_run_does_not_degrade():
    doc = scenarios.baseline(rounds=6, nodes=8, dataset={"per_class": 300}, consensus={"committee_size": 2},
                             validation={"kind": "pass_weights"}, aggregation={"kind": "mean"})
    res = run(doc)
    assert res.metrics[-1].global_accuracy >= res.metrics[0].global_accuracy


def test_all_rejected_round_keeps_model():
    doc = scenarios.small(rounds=2, validation={"kind": "global_dataset", "accuracy_threshold": 1.0},
                          dataset={"spread": 5.0})
    res = run(doc)
    assert all(m.accepted == 0 for m in res.metrics)
    assert all(b.accepted_ids == () for b in res.chain.blocks[1:])
    assert res.final_model_digest == digest(res.initial_model.params)
    assert verify_chain(res.chain)[0]


def test_krum_drops_single_noisy_node():
    doc = scenarios.small(
        rounds=3,
        nodes=8,
        validation={"kind": "multi_krum", "assumed_byzantine": 1, "accept_count": 4},
        aggregation={"kind": "mean"},
        attackers=[{"node_id": 0, "kind": "additive_noise", "sigma": 10.0}],
    )
    res = run(doc)
    for block in res.chain.blocks[1:]:
        for r in block.records:
            if r.author == 0:
                assert r.update_id not in block.accepted_ids


def _update_bytes(state, node, r):
    u = engine.local_update(state, node, r)
    return digest(u.payload)


def test_honest_path_matches_reference_pipeline():
    cfg = config_from_dict(scenarios.small())
    state = engine.build_state(cfg)
    node = state.nodes[3]
    x = state.train_pool.features[node.partition.indices]
    y = state.train_pool.labels[node.partition.indices]
    ref = mlp.train_local(state.model, x, y, cfg.train_spec(derive_seed(cfg.master_seed, 1, 3, "shuffle")))
    assert _update_bytes(state, node, 1) == digest(ref.params)


def test_attack_locality():
    cfg = config_from_dict(scenarios.small(attackers=scenarios.noise_attackers(1)))
    state = engine.build_state(cfg)
    honest_before = {n.id: _update_bytes(state, n, 1) for n in state.nodes[1:]}
    model_before = digest(state.model.params)
    parts_before = [n.partition.indices.tobytes() for n in state.nodes]
    engine.local_update(state, state.nodes[0], 1)
    assert {n.id: _update_bytes(state, n, 1) for n in state.nodes[1:]} == honest_before
    assert digest(state.model.params) == model_before
    assert [n.partition.indices.tobytes() for n in state.nodes] == parts_before
    clean = dataclasses.replace(state.nodes[0], attack=None)
    assert _update_bytes(state, state.nodes[0], 1) != _update_bytes(state, clean, 1)


def test_label_flip_trains_on_flipped_labels():
    cfg = config_from_dict(scenarios.small(attackers=scenarios.flip_attackers(1)))
    state = engine.build_state(cfg)
    node = state.nodes[0]
    assert node.attack == AttackConfig("label_flip", flip_map={0: 2, 2: 0})
    x = state.train_pool.features[node.partition.indices]
    y = state.train_pool.labels[node.partition.indices]
    y = np.where(y == 0, 2, np.where(y == 2, 0, y))
    ref = mlp.train_local(state.model, x, y, cfg.train_spec(derive_seed(cfg.master_seed, 1, 0, "shuffle")))
    assert _update_bytes(state, node, 1) == digest(ref.params)


def test_empty_partition_node_is_skipped(monkeypatch):
    cfg = config_from_dict(scenarios.small(rounds=1))
    real = engine.local_update

    def flaky(state, node, r):
        if node.id == 5:
            raise EmptyPartitionError("nothing here")
        return real(state, node, r)

    monkeypatch.setattr(engine, "local_update", flaky)
    res = engine.run(cfg)
    assert 5 not in {r.author for r in res.chain.tip.records}


def test_failure_carries_stage_and_partial_metrics(monkeypatch):
    cfg = config_from_dict(scenarios.small(rounds=3))
    real = engine.local_update

    def boom(state, node, r):
        if r == 2:
            raise FloatingPointError("diverged")
        return real(state, node, r)

    monkeypatch.setattr(engine, "local_update", boom)
    with pytest.raises(SimulationError) as info:
        engine.run(cfg)
    err = info.value
    assert (err.round_index, err.stage) == (2, "training")
    assert len(err.partial) == 1


def test_on_round_callback_streams_metrics():
    seen = []
    run(scenarios.small(), on_round=seen.append)
    assert [m.round for m in seen] == [1, 2, 3]


def test_mnist_subsample():
    doc = scenarios.mnist(rounds=1, dataset={"max_samples": 500})
    cfg = config_from_dict(doc)
    data = engine.load_dataset(cfg)
    assert len(data) == 500 and data.num_classes == 10
