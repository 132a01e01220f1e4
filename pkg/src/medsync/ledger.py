"""Simulated single-producer ledger: mempool, hash-chained blocks, replay.

Blocks record every submitted transaction together with its verdict, accepted
or not, so denied attempts stay auditable. Within one block at most one update
per shared table is accepted; later updates on the same table are rejected
outright and must be resubmitted against the new version. The whole chain can
be re-executed from the genesis block to reconstruct the contract state, and
any tampering with a dumped chain is detected via the digest linkage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

from .contract import (
    ContractState,
    DeployTx,
    Notification,
    PermChangeTx,
    Principal,
    RejectReason,
    Transaction,
    UpdateTx,
    Verdict,
    apply_update,
    change_permission,
    deploy,
    tx_from_json_dict,
    tx_shared_id,
    tx_submitter,
    tx_to_json_dict,
    validate_deploy,
    validate_update,
)
from .relational import ZERO_DIGEST, canonical_json, sha256_hex


class ChainCorrupt(Exception):
    """The chain's linkage, digests, or encoding do not check out."""


@dataclass(frozen=True)
class Receipt:
    """Returned to a transaction's submitter once it has been sealed in a block."""

    tx: Transaction
    verdict: Verdict
    to: Principal


@dataclass(frozen=True)
class Block:
    index: int
    tick: int
    txs: tuple[tuple[Transaction, Verdict], ...]
    prev_digest: str
    block_digest: str

    @staticmethod
    def compute_digest(
        index: int, tick: int, txs: Sequence[tuple[Transaction, Verdict]], prev_digest: str
    ) -> str:
        body = {
            "index": index,
            "tick": tick,
            "prev_digest": prev_digest,
            "txs": [{"tx": tx_to_json_dict(tx), "verdict": v.to_json_dict()} for tx, v in txs],
        }
        return sha256_hex(canonical_json(body))

    @classmethod
    def build(
        cls, index: int, tick: int, txs: Sequence[tuple[Transaction, Verdict]], prev_digest: str
    ) -> "Block":
        digest = cls.compute_digest(index, tick, txs, prev_digest)
        return cls(index, tick, tuple(txs), prev_digest, digest)

    def to_json_dict(self) -> dict:
        return {
            "index": self.index,
            "tick": self.tick,
            "prev_digest": self.prev_digest,
            "block_digest": self.block_digest,
            "txs": [{"tx": tx_to_json_dict(tx), "verdict": v.to_json_dict()} for tx, v in self.txs],
        }

    @classmethod
    def from_json_dict(cls, d: Mapping) -> "Block":
        txs = tuple(
            (tx_from_json_dict(e["tx"]), Verdict.from_json_dict(e["verdict"])) for e in d["txs"]
        )
        return cls(d["index"], d["tick"], txs, d["prev_digest"], d["block_digest"])


class Chain:
    """The ledger: an append-only block list plus a FIFO mempool.

    Owned by a single driver; block production is the system's serialization
    point. The genesis block may carry the scenario's static deployments so a
    replay from scratch reproduces the full contract state.
    """

    def __init__(self, genesis_txs: Sequence[tuple[Transaction, Verdict]] = ()) -> None:
        self.blocks: list[Block] = [Block.build(0, 0, tuple(genesis_txs), ZERO_DIGEST)]
        self.mempool: list[tuple[int, Transaction]] = []
        self._next_seq = 0

    def submit(self, tx: Transaction) -> int:
        """Queue a transaction; returns its arrival sequence number."""
        seq = self._next_seq
        self._next_seq += 1
        self.mempool.append((seq, tx))
        return seq

    def produce_block(
        self, contract_state: ContractState, tick: int
    ) -> tuple[ContractState, list[Notification], list[Receipt]]:
        """Drain the mempool into one block, applying accepted transactions in
        arrival order against the evolving contract state.

        An update whose shared table already saw an accepted update in this
        block is rejected with BlockedBySerialization regardless of its own
        merits; the submitter must refetch and resubmit.
        """
        pending = self.mempool
        self.mempool = []
        state = contract_state
        recorded: list[tuple[Transaction, Verdict]] = []
        notes: list[Notification] = []
        receipts: list[Receipt] = []
        accepted_updates: set[str] = set()

        for _seq, tx in pending:
            if isinstance(tx, UpdateTx):
                if tx.shared_id in accepted_updates:
                    verdict = Verdict.reject(
                        RejectReason.BLOCKED_BY_SERIALIZATION,
                        f"{tx.shared_id!r} already updated in this block",
                    )
                else:
                    verdict = validate_update(state, tx)
                    if verdict.ok:
                        state, new_notes = apply_update(state, tx, tick)
                        notes.extend(new_notes)
                        accepted_updates.add(tx.shared_id)
            elif isinstance(tx, DeployTx):
                verdict = validate_deploy(state, tx.meta, tx.deployer)
                if verdict.ok:
                    state = deploy(state, tx.meta, tx.deployer, tick)
            elif isinstance(tx, PermChangeTx):
                state, verdict = change_permission(state, tx, tick)
            else:
                raise TypeError(f"unknown transaction {tx!r}")
            recorded.append((tx, verdict))
            receipts.append(Receipt(tx, verdict, tx_submitter(tx)))

        prev = self.blocks[-1]
        self.blocks.append(Block.build(prev.index + 1, tick, recorded, prev.block_digest))
        return state, notes, receipts

    def verify(self) -> None:
        """Raise ChainCorrupt unless every digest and link checks out."""
        prev_digest = ZERO_DIGEST
        for i, block in enumerate(self.blocks):
            if block.index != i:
                raise ChainCorrupt(f"block {i} carries index {block.index}")
            if block.prev_digest != prev_digest:
                raise ChainCorrupt(f"block {i} does not link to its predecessor")
            recomputed = Block.compute_digest(block.index, block.tick, block.txs, block.prev_digest)
            if recomputed != block.block_digest:
                raise ChainCorrupt(f"block {i} digest mismatch")
            prev_digest = block.block_digest

    def replay(self) -> ContractState:
        """Re-execute every accepted transaction from genesis.

        The result must equal the incrementally maintained contract state; a
        divergence means the chain was tampered with (and is reported as such).
        """
        self.verify()
        state = ContractState.empty()
        for block in self.blocks:
            for tx, verdict in block.txs:
                if not verdict.ok:
                    continue
                try:
                    if isinstance(tx, DeployTx):
                        state = deploy(state, tx.meta, tx.deployer, block.tick)
                    elif isinstance(tx, UpdateTx):
                        state, _ = apply_update(state, tx, block.tick)
                    elif isinstance(tx, PermChangeTx):
                        state, v = change_permission(state, tx, block.tick)
                        if not v.ok:
                            raise ChainCorrupt(
                                f"block {block.index}: recorded-accepted permission change re-rejected"
                            )
                    else:
                        raise ChainCorrupt(f"block {block.index}: unknown transaction kind")
                except ChainCorrupt:
                    raise
                except Exception as exc:
                    raise ChainCorrupt(
                        f"block {block.index}: accepted transaction fails on replay: {exc}"
                    ) from exc
        return state

    def history(self, shared_id: str) -> list[tuple[int, Transaction, Verdict]]:
        """Every transaction referencing the shared table, in chain order."""
        out = []
        for block in self.blocks:
            for tx, verdict in block.txs:
                if tx_shared_id(tx) == shared_id:
                    out.append((block.tick, tx, verdict))
        return out

    def to_json_list(self) -> list:
        return [b.to_json_dict() for b in self.blocks]

    def dumps(self) -> bytes:
        return canonical_json(self.to_json_list())

    @classmethod
    def from_json_list(cls, blocks: Sequence[Mapping]) -> "Chain":
        chain = cls.__new__(cls)
        chain.mempool = []
        chain._next_seq = 0
        try:
            chain.blocks = [Block.from_json_dict(b) for b in blocks]
        except ChainCorrupt:
            raise
        except Exception as exc:  # tampering can trip any decoding layer
            raise ChainCorrupt(f"malformed chain dump: {exc}") from exc
        if not chain.blocks:
            raise ChainCorrupt("chain dump has no genesis block")
        chain.verify()
        return chain

    @classmethod
    def loads(cls, data: bytes | str) -> "Chain":
        """Parse and verify a dumped chain; any tampering raises ChainCorrupt."""
        try:
            parsed = json.loads(data)
        except ValueError as exc:  # JSONDecodeError, or UnicodeDecodeError on mangled bytes
            raise ChainCorrupt(f"chain dump is not valid JSON: {exc}") from exc
        if not isinstance(parsed, list):
            raise ChainCorrupt("chain dump must be a JSON list of blocks")
        return cls.from_json_list(parsed)
