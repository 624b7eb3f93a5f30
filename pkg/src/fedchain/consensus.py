"""Block producer and validator election: PoW, PoS and committee.

Every selector is a pure function of ``(round, seed, state)``. The returned
proof carries enough data for :func:`verify_proof` to re-check the election
from the block alone.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .encoding import canonical_encode, derive_seed
from .errors import ConfigurationError, ConsensusError

CONSENSUS_KINDS = ("pow", "pos", "committee")
COMMITTEE_SELECTION = ("uniform", "stake_weighted")
MAX_DIFFICULTY_BITS = 32


@dataclass(frozen=True)
class ConsensusConfig:
    kind: str
    pow_difficulty_bits: int = 8
    pow_hashpower: dict = field(default_factory=dict)
    pos_initial_stake: float = 1.0
    pos_reward: float = 0.0
    committee_size: int = 1
    committee_selection: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CONSENSUS_KINDS:
            raise ConfigurationError(f"unknown consensus kind {self.kind!r}")
        if not 0 <= self.pow_difficulty_bits <= MAX_DIFFICULTY_BITS:
            raise ConfigurationError(f"pow_difficulty_bits must lie in [0, {MAX_DIFFICULTY_BITS}]")
        object.__setattr__(self, "pow_hashpower", {int(k): float(v) for k, v in self.pow_hashpower.items()})
        if any(not (math.isfinite(v) and v > 0) for v in self.pow_hashpower.values()):
            raise ConfigurationError("hashpower values must be > 0")
        if not self.pos_initial_stake > 0:
            raise ConfigurationError("pos_initial_stake must be > 0")
        if not self.pos_reward >= 0:
            raise ConfigurationError("pos_reward must be >= 0")
        if self.committee_size < 1:
            raise ConfigurationError("committee_size must be >= 1")
        if self.committee_selection not in COMMITTEE_SELECTION:
            raise ConfigurationError(f"committee_selection must be one of {COMMITTEE_SELECTION}")

    def hashpower(self, node_id: int) -> float:
        return self.pow_hashpower.get(int(node_id), 1.0)


@dataclass(frozen=True)
class RoundRoles:
    producer: int
    validators: tuple
    proof: dict

    @property
    def committee(self) -> tuple:
        return self.validators if self.proof.get("kind") == "committee" else ()


def block_header(height: int, prev_hash: str) -> str:
    """Digest the PoW race hashes against; fixed before any update exists."""
    return hashlib.sha256(canonical_encode({"height": int(height), "prev_hash": prev_hash})).hexdigest()


def _pow_hash(header: bytes, node_id: int, nonce: int) -> bytes:
    return hashlib.sha256(header + struct.pack(">qq", node_id, nonce)).digest()


def meets_difficulty(digest: bytes, bits: int) -> bool:
    return bits == 0 or int.from_bytes(digest, "big") >> (256 - bits) == 0


def _pow_search(header: bytes, node_id: int, start: int, bits: int):
    nonce = start
    attempts = 1
    while not meets_difficulty(_pow_hash(header, node_id, nonce), bits):
        nonce = (nonce + 1) & 0x7FFFFFFFFFFFFFFF
        attempts += 1
    return nonce, attempts


def pow_select(round_index: int, header: str, node_ids, cfg: ConsensusConfig) -> RoundRoles:
    """Hashing race ranked by simulated time ``attempts / hashpower``.

    Ties on time go to the higher hashpower, then the lower node id. All nodes
    act as validators.
    """
    node_ids = sorted(int(n) for n in node_ids)
    if not node_ids:
        raise ConsensusError("no nodes to race")
    raw_header = bytes.fromhex(header)
    results = []
    for node in node_ids:
        start = derive_seed(cfg.seed, round_index, node, "pow") >> 1
        nonce, attempts = _pow_search(raw_header, node, start, cfg.pow_difficulty_bits)
        hp = cfg.hashpower(node)
        results.append((attempts / hp, -hp, node, nonce, attempts))
    sim_time, _, winner, nonce, attempts = min(results)
    proof = {
        "kind": "pow",
        "header": header,
        "difficulty_bits": cfg.pow_difficulty_bits,
        "node_id": winner,
        "nonce": nonce,
        "attempts": attempts,
        "sim_time": float(sim_time),
    }
    return RoundRoles(winner, tuple(node_ids), proof)


def cumulative_pick(weights, u: float) -> int:
    """Index ``i`` with ``cum[i-1] <= u < cum[i]`` on the normalized cumulative weights."""
    total = math.fsum(weights)
    if not total > 0:
        raise ConsensusError("total weight must be positive")
    acc = 0.0
    last_positive = None
    for i, w in enumerate(weights):
        if w < 0:
            raise ConsensusError("weights must be non-negative")
        if w > 0:
            last_positive = i
        acc += w
        if w > 0 and u < acc / total:
            return i
    return last_positive


def _round_rng(cfg: ConsensusConfig, round_index: int):
    return np.random.default_rng(derive_seed(cfg.seed, round_index, None, "roles"))


def pos_select(round_index: int, stakes, cfg: ConsensusConfig) -> RoundRoles:
    """Stake-proportional producer draw; every other node validates.

    Node ids are the positions in ``stakes``.
    """
    stakes = [float(s) for s in stakes]
    if any(s < 0 for s in stakes):
        raise ConsensusError("stakes must be non-negative")
    if not math.fsum(stakes) > 0:
        raise ConsensusError("total stake is zero")
    u = float(_round_rng(cfg, round_index).random())
    producer = cumulative_pick(stakes, u)
    validators = tuple(i for i in range(len(stakes)) if i != producer) or (producer,)
    return RoundRoles(producer, validators, {"kind": "pos", "u": u, "stakes": stakes})


def _sequential_draw(weights, draws):
    remaining = list(range(len(weights)))
    chosen = []
    for u in draws:
        w = [weights[i] for i in remaining]
        if not math.fsum(w) > 0:
            w = [1.0] * len(remaining)
        j = cumulative_pick(w, u)
        chosen.append(remaining.pop(j))
    return chosen


def committee_select(round_index: int, node_ids, stakes, cfg: ConsensusConfig) -> RoundRoles:
    """Elect ``committee_size`` validators without replacement; the first one produces.

    Stake-weighted selection renormalizes over the not-yet-chosen nodes after
    each draw (uniform weights if their stake is all zero).
    """
    node_ids = sorted(int(n) for n in node_ids)
    k = cfg.committee_size
    if k > len(node_ids):
        raise ConfigurationError(f"committee of {k} cannot be drawn from {len(node_ids)} nodes")
    if cfg.committee_selection == "stake_weighted":
        weights = [float(stakes[n]) for n in node_ids]
    else:
        weights = [1.0] * len(node_ids)
    draws = [float(u) for u in _round_rng(cfg, round_index).random(k)]
    committee = [node_ids[i] for i in _sequential_draw(weights, draws)]
    proof = {
        "kind": "committee",
        "selection": cfg.committee_selection,
        "nodes": node_ids,
        "weights": weights,
        "draws": draws,
        "committee": committee,
    }
    return RoundRoles(committee[0], tuple(committee), proof)


def select_roles(round_index: int, header: str, node_ids, stakes, cfg: ConsensusConfig) -> RoundRoles:
    if cfg.kind == "pow":
        return pow_select(round_index, header, node_ids, cfg)
    if cfg.kind == "pos":
        return pos_select(round_index, stakes, cfg)
    return committee_select(round_index, node_ids, stakes, cfg)


def update_stake(stakes, accepted_authors, reward: float) -> list:
    """Credit ``reward`` once per accepted update to its author."""
    out = [float(s) for s in stakes]
    for author in accepted_authors:
        out[int(author)] = max(0.0, out[int(author)] + reward)
    return out


def verify_proof(height: int, prev_hash: str, producer: int, proof: dict) -> str | None:
    """``None`` if the recorded election re-checks, else a description of the failure."""
    kind = proof.get("kind")
    if kind == "genesis":
        return None if height == 0 else "genesis proof outside height 0"
    if kind == "pow":
        header = block_header(height, prev_hash)
        if proof["header"] != header:
            return "pow header does not match block height/prev_hash"
        if proof["node_id"] != producer:
            return "pow winner is not the producer"
        bits = proof["difficulty_bits"]
        if not 0 <= bits <= MAX_DIFFICULTY_BITS:
            return "pow difficulty out of range"
        if not meets_difficulty(_pow_hash(bytes.fromhex(header), producer, proof["nonce"]), bits):
            return "pow nonce does not meet difficulty"
        return None
    if kind == "pos":
        try:
            expected = cumulative_pick(proof["stakes"], proof["u"])
        except ConsensusError as exc:
            return f"pos draw invalid: {exc}"
        if not 0.0 <= proof["u"] < 1.0:
            return "pos draw outside [0, 1)"
        return None if expected == producer else "pos draw does not select the producer"
    if kind == "committee":
        nodes = proof["nodes"]
        if len(proof["weights"]) != len(nodes) or len(proof["draws"]) > len(nodes):
            return "committee ticket malformed"
        if any(not 0.0 <= u < 1.0 for u in proof["draws"]):
            return "committee draw outside [0, 1)"
        try:
            replay = [nodes[i] for i in _sequential_draw(proof["weights"], proof["draws"])]
        except ConsensusError as exc:
            return f"committee ticket invalid: {exc}"
        if replay != list(proof["committee"]):
            return "committee ticket does not replay to the recorded committee"
        if not replay or replay[0] != producer:
            return "committee producer is not the first elected member"
        return None
    return f"unknown proof kind {kind!r}"
