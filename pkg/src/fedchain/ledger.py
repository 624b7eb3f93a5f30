"""Hash-linked chain of per-round blocks.

Blocks carry digests only; payloads live off-chain in a :class:`PayloadStore`
keyed by the same digests.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .consensus import verify_proof
from .encoding import ZERO_DIGEST, canonical_encode, digest
from .errors import ConsensusError, FormatError, IntegrityError, OrderingError
from .model import LayerShape, ParamVector
from .validation import ValidationVerdict

_HEX64 = re.compile(r"^[0-9a-f]{64}$")
BLOCK_FIELDS = (
    "height",
    "prev_hash",
    "records",
    "accepted_ids",
    "producer",
    "proof",
    "global_model_digest",
    "block_hash",
)
VERDICT_FIELDS = ("update_id", "accepted", "score", "voter_ids", "reason")
RECORD_FIELDS = ("update_id", "author", "form", "claimed_num_samples", "payload_digest", "verdict")


@dataclass(frozen=True)
class UpdateRecord:
    update_id: str
    author: int
    form: str
    claimed_num_samples: int
    payload_digest: str
    verdict: ValidationVerdict

    def to_dict(self) -> dict:
        return {
            "update_id": self.update_id,
            "author": int(self.author),
            "form": self.form,
            "claimed_num_samples": int(self.claimed_num_samples),
            "payload_digest": self.payload_digest,
            "verdict": self.verdict.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UpdateRecord":
        _require_keys(d, RECORD_FIELDS, "record")
        _require_keys(d["verdict"], VERDICT_FIELDS, "verdict")
        return cls(
            d["update_id"],
            d["author"],
            d["form"],
            d["claimed_num_samples"],
            d["payload_digest"],
            ValidationVerdict.from_dict(d["verdict"]),
        )


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: str
    records: tuple
    accepted_ids: tuple
    producer: int
    proof: dict
    global_model_digest: str
    block_hash: str = ""

    def header_dict(self) -> dict:
        return {
            "height": int(self.height),
            "prev_hash": self.prev_hash,
            "records": [r.to_dict() for r in self.records],
            "accepted_ids": list(self.accepted_ids),
            "producer": int(self.producer),
            "proof": self.proof,
            "global_model_digest": self.global_model_digest,
        }

    def compute_hash(self) -> str:
        return hashlib.sha256(canonical_encode(self.header_dict())).hexdigest()

    def sealed(self) -> "Block":
        return replace(self, block_hash=self.compute_hash())

    def to_dict(self) -> dict:
        d = self.header_dict()
        d["block_hash"] = self.block_hash
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Block":
        _require_keys(d, BLOCK_FIELDS, "block")
        return cls(
            d["height"],
            d["prev_hash"],
            tuple(UpdateRecord.from_dict(r) for r in d["records"]),
            tuple(d["accepted_ids"]),
            d["producer"],
            d["proof"],
            d["global_model_digest"],
            d["block_hash"],
        )


def _require_keys(d, keys, what):
    if not isinstance(d, dict) or set(d) != set(keys):
        raise FormatError(f"{what} must have exactly the fields {sorted(keys)}")


def make_block(height, prev_hash, records, producer, proof, global_model_digest) -> Block:
    records = tuple(records)
    accepted = tuple(r.update_id for r in records if r.verdict.accepted)
    return Block(height, prev_hash, records, accepted, producer, proof, global_model_digest).sealed()


def genesis_block(global_model_digest: str) -> Block:
    return make_block(0, ZERO_DIGEST, (), -1, {"kind": "genesis"}, global_model_digest)


def _check_block(block: Block) -> str | None:
    for name in ("prev_hash", "global_model_digest", "block_hash"):
        if not _HEX64.match(str(getattr(block, name))):
            return f"{name} is not a lowercase hex SHA-256 digest"
    try:
        computed = block.compute_hash()
    except Exception as exc:  # malformed values that cannot even be encoded
        return f"block cannot be encoded: {exc}"
    if computed != block.block_hash:
        return "block_hash does not match block contents"
    for r in block.records:
        if r.update_id != r.payload_digest:
            return "record update_id differs from payload_digest"
    expected = tuple(r.update_id for r in block.records if r.verdict.accepted)
    if tuple(block.accepted_ids) != expected:
        return "accepted_ids disagree with record verdicts"
    try:
        problem = verify_proof(block.height, block.prev_hash, block.producer, block.proof)
    except (KeyError, TypeError, ValueError) as exc:
        problem = f"malformed proof ({exc!r})"
    if problem:
        return f"consensus proof: {problem}"
    return None


@dataclass
class Chain:
    blocks: list = field(default_factory=list)

    def __len__(self):
        return len(self.blocks)

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    def to_json(self) -> str:
        """Compact, key-sorted JSON; byte-stable for identical chains."""
        return json.dumps([b.to_dict() for b in self.blocks], sort_keys=True, separators=(",", ":"), allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "Chain":
        data = json.loads(text)
        if not isinstance(data, list):
            raise FormatError("chain JSON must be a list of blocks")
        return cls([Block.from_dict(b) for b in data])

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Chain":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def append_block(chain: Chain, block: Block) -> Chain:
    """Extend ``chain`` in place after checking links, hash and proof."""
    if not chain.blocks:
        if block.height != 0:
            raise OrderingError(f"first block must have height 0, got {block.height}")
        if block.prev_hash != ZERO_DIGEST:
            raise IntegrityError("genesis prev_hash must be all zeros")
    else:
        if block.height != chain.tip.height + 1:
            raise OrderingError(f"expected height {chain.tip.height + 1}, got {block.height}")
        if block.prev_hash != chain.tip.block_hash:
            raise IntegrityError(f"block {block.height} does not link to the chain tip")
    problem = _check_block(block)
    if problem:
        if problem.startswith("consensus proof"):
            raise ConsensusError(f"block {block.height}: {problem}")
        raise IntegrityError(f"block {block.height}: {problem}")
    chain.blocks.append(block)
    return chain


def verify_chain(chain: Chain) -> tuple[bool, str | None]:
    """Re-check every link, block hash and proof; report the first failure."""
    if not chain.blocks:
        return False, "chain has no genesis block"
    prev = ZERO_DIGEST
    for expected_height, block in enumerate(chain.blocks):
        if block.height != expected_height:
            return False, f"height {expected_height}: found height {block.height}"
        if block.prev_hash != prev:
            return False, f"height {expected_height}: prev_hash does not link to the previous block"
        problem = _check_block(block)
        if problem:
            return False, f"height {expected_height}: {problem}"
        prev = block.block_hash
    return True, None


def verify_chain_text(text: str) -> tuple[bool, str | None]:
    """Verify an exported chain, including that it is in canonical JSON form.

    Raises :class:`FormatError` or ``ValueError`` when the text cannot be parsed
    into a chain at all.
    """
    chain = Chain.from_json(text)
    if chain.to_json() != text:
        return False, "chain JSON is not in canonical form (edited after export?)"
    return verify_chain(chain)


class PayloadStore:
    """Content-addressed payload storage, in memory and optionally on disk."""

    def __init__(self, root=None):
        self._items: dict[str, ParamVector] = {}
        self.root = Path(root) if root is not None else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def put(self, payload: ParamVector) -> str:
        key = digest(payload)
        if key not in self._items:
            self._items[key] = payload
            if self.root is not None:
                dims = [payload.shapes[0].input_dim] + [s.output_dim for s in payload.shapes]
                np.savez(self.root / f"{key}.npz", values=payload.values, dims=np.array(dims))
        return key

    def get(self, key: str) -> ParamVector:
        if key in self._items:
            return self._items[key]
        if self.root is not None and (self.root / f"{key}.npz").exists():
            with np.load(self.root / f"{key}.npz") as data:
                dims = [int(d) for d in data["dims"]]
                shapes = [LayerShape(a, b) for a, b in zip(dims[:-1], dims[1:])]
                pv = ParamVector(data["values"], shapes)
            if digest(pv) != key:
                raise IntegrityError(f"stored payload {key} fails its digest")
            self._items[key] = pv
            return pv
        raise KeyError(key)

    def __contains__(self, key):
        return key in self._items or (self.root is not None and (self.root / f"{key}.npz").exists())

    def __len__(self):
        return len(self._items)
