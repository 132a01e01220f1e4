"""Scenario loading, the deterministic simulation loop, dumps, and convergence checks.

A scenario declares the principals, their local tables and lenses, the shares
to deploy, and a script of scheduled actions. The driver advances a global
tick; each tick it (1) delivers due messages to peers in lexicographic order,
(2) executes the script actions scheduled for the tick, (3) collects peer
outboxes into the in-flight queue, then (4) produces a block and (5) enqueues
the resulting notifications and receipts. The loop stops at quiescence (no
messages in flight, empty mempool, no staged proposals, script exhausted).
There is no randomness anywhere: a scenario always yields the same trace,
chain, and dumps, byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from .contract import (
    ACCEPT,
    ContractState,
    DeployTx,
    Notification,
    PermChangeTx,
    SharedTableMetadata,
    Transaction,
    UpdateTx,
    Verdict,
    deploy,
    query_metadata,
    tx_shared_id,
    tx_submitter,
    tx_to_json_dict,
)
from .ledger import Chain, Receipt
from .lenses import Lens, LensSpec, compile_lens
from .peer import (
    RETRY,
    DataRequest,
    DataResponse,
    Edit,
    Message,
    PeerNode,
    ShareBinding,
)
from .relational import RelationalError, Table, canonical_json


class ScenarioError(Exception):
    """Base class for scenario file problems."""


class ParseError(ScenarioError):
    """The scenario file is not valid JSON."""


class ValidationError(ScenarioError):
    """The scenario parsed but its contents do not hold together."""


class SimulationError(Exception):
    """Base class for failures while driving a world."""


class MaxTicksExceeded(SimulationError):
    """The world did not quiesce within the tick budget."""


class NotQuiescent(SimulationError):
    """An operation that requires quiescence was called mid-run."""


class CascadeOverflow(SimulationError):
    """A share exceeded the cascade hop budget; the scenario is pathological."""


# --- scenario model ----------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    max_ticks: int = 100
    seed: int = 0  # reserved for randomized scenarios; the core loop is seed-free
    network_delay_ticks: int = 1
    blocks_per_tick: int = 1
    max_cascade_hops: int = 16


@dataclass(frozen=True)
class EditAction:
    table_id: str
    edit: Edit


@dataclass(frozen=True)
class ProposeAction:
    shared_id: str


@dataclass(frozen=True)
class PermChangeAction:
    shared_id: str
    attr: str
    principals: frozenset[str]


Action = Union[EditAction, ProposeAction, PermChangeAction]


@dataclass(frozen=True)
class ScheduledAction:
    tick: int
    principal: str
    action: Action


@dataclass(frozen=True)
class ShareDeployment:
    """A static share: who participates (with which lens), and the initial permissions."""

    shared_id: str
    deployer: str
    authority: str
    lens_by_peer: Mapping[str, str]
    perm: Mapping[str, frozenset[str]]


@dataclass(frozen=True)
class Scenario:
    name: str
    principals: tuple[str, ...]
    tables: Mapping[str, tuple[Table, ...]]
    lens_specs: Mapping[str, tuple[LensSpec, ...]]
    shares: tuple[ShareDeployment, ...]
    script: tuple[ScheduledAction, ...]
    config: SimConfig = field(default_factory=SimConfig)


def _parse_edit(d: Mapping, where: str) -> Edit:
    op = d.get("op")
    if op not in ("insert", "update", "delete"):
        raise ValidationError(f"{where}: edit op must be insert/update/delete, got {op!r}")
    return Edit(op=op, row=d.get("row"), key=d.get("key"), changes=d.get("changes"))


def _parse_action(d: Mapping, where: str) -> Action:
    kind = d.get("kind")
    if kind == "edit":
        if "table" not in d:
            raise ValidationError(f"{where}: edit action needs a table")
        return EditAction(d["table"], _parse_edit(d, where))
    if kind == "propose":
        if "shared_id" not in d:
            raise ValidationError(f"{where}: propose action needs a shared_id")
        return ProposeAction(d["shared_id"])
    if kind == "change_permission":
        for k in ("shared_id", "attr", "principals"):
            if k not in d:
                raise ValidationError(f"{where}: change_permission action needs {k!r}")
        return PermChangeAction(d["shared_id"], d["attr"], frozenset(d["principals"]))
    raise ValidationError(f"{where}: unknown action kind {kind!r}")


def scenario_from_json_dict(doc: Mapping, name: str = "scenario") -> Scenario:
    """Build and cross-validate a scenario from its parsed JSON form."""
    principals = tuple(doc.get("principals", ()))
    if not principals or len(set(principals)) != len(principals):
        raise ValidationError("principals must be a non-empty list of unique names")

    tables: dict[str, tuple[Table, ...]] = {}
    for p, docs in doc.get("tables", {}).items():
        if p not in principals:
            raise ValidationError(f"tables[{p}]: unknown principal")
        built = []
        for i, td in enumerate(docs):
            try:
                built.append(Table.from_json_dict(td))
            except (RelationalError, KeyError, TypeError) as exc:
                raise ValidationError(f"tables[{p}][{i}]: {exc}") from exc
        ids = [t.id for t in built]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"tables[{p}]: duplicate table ids")
        tables[p] = tuple(built)

    lens_specs: dict[str, tuple[LensSpec, ...]] = {}
    for p, docs in doc.get("lenses", {}).items():
        if p not in principals:
            raise ValidationError(f"lenses[{p}]: unknown principal")
        own_tables = {t.id: t for t in tables.get(p, ())}
        specs = []
        for i, ld in enumerate(docs):
            try:
                spec = LensSpec.from_json_dict(ld)
            except (KeyError, TypeError) as exc:
                raise ValidationError(f"lenses[{p}][{i}]: {exc}") from exc
            source = own_tables.get(spec.source_table_id)
            if source is None:
                raise ValidationError(
                    f"lenses[{p}][{i}]: source table {spec.source_table_id!r} not held by {p}"
                )
            try:
                compile_lens(spec, source.schema)
            except Exception as exc:
                raise ValidationError(f"lenses[{p}][{i}]: {exc}") from exc
            specs.append(spec)
        ids = [s.lens_id for s in specs]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"lenses[{p}]: duplicate lens ids")
        lens_specs[p] = tuple(specs)

    shares: list[ShareDeployment] = []
    for i, sd in enumerate(doc.get("shares", ())):
        where = f"shares[{i}]"
        try:
            share = ShareDeployment(
                shared_id=sd["shared_id"],
                deployer=sd["deployer"],
                authority=sd["authority"],
                lens_by_peer=dict(sd["peers"]),
                perm={a: frozenset(p) for a, p in sd["perm"].items()},
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"{where}: {exc}") from exc
        if len(share.lens_by_peer) != 2:
            raise ValidationError(f"{where}: a share has exactly two peers")
        view_shapes = set()
        for peer, lens_id in share.lens_by_peer.items():
            if peer not in principals:
                raise ValidationError(f"{where}: unknown principal {peer!r}")
            spec = next((s for s in lens_specs.get(peer, ()) if s.lens_id == lens_id), None)
            if spec is None:
                raise ValidationError(f"{where}: {peer!r} has no lens {lens_id!r}")
            view_shapes.add((spec.view_attrs, spec.view_key))
        if len(view_shapes) != 1:
            raise ValidationError(f"{where}: the two peers' lenses derive different view shapes")
        if share.deployer not in share.lens_by_peer or share.authority not in share.lens_by_peer:
            raise ValidationError(f"{where}: deployer and authority must be sharing peers")
        ((attrs, _key),) = view_shapes
        if set(share.perm) != set(attrs):
            raise ValidationError(f"{where}: perm must cover exactly the view attributes")
        for attr, who in share.perm.items():
            if not who <= set(share.lens_by_peer):
                raise ValidationError(f"{where}: perm[{attr}] names non-peers")
        shares.append(share)
    if len({s.shared_id for s in shares}) != len(shares):
        raise ValidationError("duplicate shared_id across shares")

    script: list[ScheduledAction] = []
    last_tick = 0
    known_shared = {s.shared_id for s in shares}
    for i, ad in enumerate(doc.get("script", ())):
        where = f"script[{i}]"
        try:
            tick = int(ad["tick"])
            principal = ad["principal"]
            action = _parse_action(ad["action"], where)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{where}: {exc}") from exc
        if tick < 0 or tick < last_tick:
            raise ValidationError(f"{where}: script ticks must be non-negative and non-decreasing")
        last_tick = tick
        if principal not in principals:
            raise ValidationError(f"{where}: unknown principal {principal!r}")
        if isinstance(action, EditAction):
            if action.table_id not in {t.id for t in tables.get(principal, ())}:
                raise ValidationError(f"{where}: {principal!r} has no table {action.table_id!r}")
        elif isinstance(action, (ProposeAction, PermChangeAction)):
            if action.shared_id not in known_shared:
                raise ValidationError(f"{where}: unknown shared_id {action.shared_id!r}")
            if isinstance(action, ProposeAction):
                share = next(s for s in shares if s.shared_id == action.shared_id)
                if principal not in share.lens_by_peer:
                    raise ValidationError(f"{where}: {principal!r} does not share {action.shared_id!r}")
        script.append(ScheduledAction(tick, principal, action))

    cfg = doc.get("config", {})
    config = SimConfig(
        max_ticks=int(cfg.get("max_ticks", SimConfig.max_ticks)),
        seed=int(cfg.get("seed", SimConfig.seed)),
        network_delay_ticks=int(cfg.get("network_delay_ticks", SimConfig.network_delay_ticks)),
        blocks_per_tick=int(cfg.get("blocks_per_tick", SimConfig.blocks_per_tick)),
        max_cascade_hops=int(cfg.get("max_cascade_hops", SimConfig.max_cascade_hops)),
    )
    return Scenario(
        name=doc.get("name", name),
        principals=principals,
        tables=tables,
        lens_specs=lens_specs,
        shares=tuple(shares),
        script=tuple(script),
        config=config,
    )


def load_scenario(path: str | Path) -> Scenario:
    """Read, parse, and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: scenario must be a JSON object")
    return scenario_from_json_dict(doc, name=path.stem.replace(".scenario", ""))


# --- tracing ------------------------------------------------------------------


@dataclass(frozen=True)
class TraceEvent:
    tick: int
    seq: int
    actor: str
    kind: str  # edit|propose|block|verdict|notify|data_req|data_resp|put_applied|cascade
    payload: Mapping[str, object]

    def to_json_dict(self) -> dict:
        return {
            "tick": self.tick,
            "seq": self.seq,
            "actor": self.actor,
            "kind": self.kind,
            "payload": dict(self.payload),
        }

    @classmethod
    def from_json_dict(cls, d: Mapping) -> "TraceEvent":
        return cls(d["tick"], d["seq"], d["actor"], d["kind"], dict(d["payload"]))


@dataclass(frozen=True)
class _Queued:
    deliver_tick: int
    seq: int
    message: Message


# --- the world ----------------------------------------------------------------


class World:
    """All simulation state: peers, chain, contract, in-flight messages, clock."""

    def __init__(self, scenario: Scenario) -> None:
        self.scenario: Optional[Scenario] = scenario
        self.name = scenario.name
        self.config = scenario.config
        self.clock = 0
        self.trace: list[TraceEvent] = []
        self.peers: dict[str, PeerNode] = {}
        self._inflight: list[_Queued] = []
        self._script: tuple[ScheduledAction, ...] = scenario.script
        self._script_pos = 0
        self._msg_seq = 0
        self._trace_seq = 0
        self._cascade_counts: dict[str, int] = {}
        self._build(scenario)

    @classmethod
    def from_parts(
        cls,
        *,
        name: str,
        peers: Mapping[str, PeerNode],
        chain: Chain,
        contract: ContractState,
        clock: int,
        trace: Sequence[TraceEvent] = (),
    ) -> "World":
        """Reassemble a world from dumped state (no scenario, no queues)."""
        world = cls.__new__(cls)
        world.scenario = None
        world.name = name
        world.config = SimConfig()
        world.clock = clock
        world.trace = list(trace)
        world.peers = dict(peers)
        world._inflight = []
        world._script = ()
        world._script_pos = 0
        world._msg_seq = 0
        world._trace_seq = len(world.trace)
        world._cascade_counts = {}
        world.chain = chain
        world.contract = contract
        return world

    def _build(self, scenario: Scenario) -> None:
        bindings: dict[str, dict[str, ShareBinding]] = {p: {} for p in scenario.principals}
        for share in scenario.shares:
            for peer, lens_id in share.lens_by_peer.items():
                (counterpart,) = set(share.lens_by_peer) - {peer}
                role = "initiator" if peer == share.deployer else "participant"
                bindings[peer][share.shared_id] = ShareBinding(
                    share.shared_id, lens_id, counterpart, role
                )

        for p in sorted(scenario.principals):
            tables = {t.id: t for t in scenario.tables.get(p, ())}
            lenses: dict[str, Lens] = {}
            for spec in scenario.lens_specs.get(p, ()):
                lenses[spec.lens_id] = compile_lens(spec, tables[spec.source_table_id].schema)
            self.peers[p] = PeerNode(p, tables, lenses, bindings[p])

        state = ContractState.empty()
        genesis: list[tuple[Transaction, Verdict]] = []
        for share in sorted(scenario.shares, key=lambda s: s.shared_id):
            views = {}
            for peer in sorted(share.lens_by_peer):
                views[peer] = self.peers[peer].install_share(share.shared_id)
            initial = views[share.deployer]
            others = [v for p, v in views.items() if p != share.deployer]
            if any(v != initial for v in others):
                raise ValidationError(
                    f"share {share.shared_id!r}: the peers' initial views disagree"
                )
            lens = self.peers[share.deployer].lenses[share.lens_by_peer[share.deployer]]
            meta = SharedTableMetadata(
                shared_id=share.shared_id,
                view_schema=lens.view_schema,
                peers=frozenset(share.lens_by_peer),
                perm=share.perm,
                authority=share.authority,
                content_digest=initial.digest(),
            )
            try:
                state = deploy(state, meta, share.deployer, 0)
            except Exception as exc:
                raise ValidationError(f"share {share.shared_id!r}: {exc}") from exc
            genesis.append((DeployTx(meta, share.deployer), ACCEPT))

        self.chain = Chain(genesis)
        self.contract = state

    # -- bookkeeping -----------------------------------------------------------

    def _trace(self, actor: str, kind: str, payload: Mapping[str, object]) -> None:
        self.trace.append(TraceEvent(self.clock, self._trace_seq, actor, kind, payload))
        self._trace_seq += 1

    def _enqueue(self, message: Message, deliver_tick: Optional[int] = None) -> None:
        if deliver_tick is None:
            deliver_tick = self.clock + self.config.network_delay_ticks
        self._inflight.append(_Queued(deliver_tick, self._msg_seq, message))
        self._msg_seq += 1

    def _submit_update(self, tx: UpdateTx) -> None:
        self.chain.submit(tx)
        self._trace(
            tx.requester,
            "propose",
            {
                "type": "update",
                "shared_id": tx.shared_id,
                "changed_attrs": sorted(tx.changed_attrs),
                "base_version": tx.base_version,
                "new_digest": tx.new_digest,
            },
        )

    def _bump_cascade(self, shared_id: str) -> None:
        count = self._cascade_counts.get(shared_id, 0) + 1
        self._cascade_counts[shared_id] = count
        if count > self.config.max_cascade_hops:
            raise CascadeOverflow(
                f"share {shared_id!r} exceeded {self.config.max_cascade_hops} cascade hops"
            )

    def quiescent(self) -> bool:
        """No messages in flight, empty mempool, nothing staged, script done."""
        return (
            not self._inflight
            and not self.chain.mempool
            and self._script_pos >= len(self._script)
            and all(not p.pending and not p.outbox for p in self.peers.values())
        )

    # -- the tick loop -----------------------------------------------------------

    def _dispatch(self, peer: PeerNode, message: Message) -> None:
        if isinstance(message, Notification):
            peer.on_notification(message)
        elif isinstance(message, Receipt):
            for tx in peer.on_receipt(message):
                self._submit_update(tx)
        elif isinstance(message, DataRequest):
            if peer.on_data_request(message) == RETRY:
                self._enqueue(message, deliver_tick=self.clock + 1)
        elif isinstance(message, DataResponse):
            meta = query_metadata(self.contract, message.shared_id)
            outcome = peer.on_data_response(message, meta)
            if outcome.applied:
                lens = peer.lenses[peer.bindings[message.shared_id].lens_id]
                self._trace(
                    peer.principal,
                    "put_applied",
                    {
                        "shared_id": message.shared_id,
                        "source_table": lens.spec.source_table_id,
                        "version": message.version,
                    },
                )
            for tx in outcome.cascade_txs:
                self._bump_cascade(tx.shared_id)
                self._trace(
                    peer.principal,
                    "cascade",
                    {"after_merge_of": message.shared_id, "shared_id": tx.shared_id},
                )
                self._submit_update(tx)
        else:
            raise TypeError(f"unroutable message {message!r}")

    def _run_action(self, scheduled: ScheduledAction) -> None:
        peer = self.peers[scheduled.principal]
        action = scheduled.action
        if isinstance(action, EditAction):
            peer.local_edit(action.table_id, action.edit)
            payload: dict[str, object] = {"table": action.table_id, "op": action.edit.op}
            if action.edit.key is not None:
                payload["key"] = dict(action.edit.key)
            if action.edit.changes is not None:
                payload["changes"] = dict(action.edit.changes)
            if action.edit.row is not None:
                payload["row"] = dict(action.edit.row)
            self._trace(peer.principal, "edit", payload)
        elif isinstance(action, ProposeAction):
            tx = peer.regenerate_and_propose(action.shared_id)
            if tx is not None:
                self._submit_update(tx)
        elif isinstance(action, PermChangeAction):
            tx = PermChangeTx(
                shared_id=action.shared_id,
                requester=peer.principal,
                attr=action.attr,
                new_principals=action.principals,
            )
            self.chain.submit(tx)
            self._trace(
                peer.principal,
                "propose",
                {
                    "type": "perm_change",
                    "shared_id": action.shared_id,
                    "attr": action.attr,
                    "principals": sorted(action.principals),
                },
            )
        else:
            raise TypeError(f"unknown action {action!r}")

    def step(self) -> None:
        """Advance one tick in the fixed phase order."""
        t = self.clock

        due = [q for q in self._inflight if q.deliver_tick <= t]
        if due:
            self._inflight = [q for q in self._inflight if q.deliver_tick > t]
            for principal in sorted({q.message.to for q in due}):
                inbox = sorted((q for q in due if q.message.to == principal), key=lambda q: q.seq)
                for q in inbox:
                    self._dispatch(self.peers[principal], q.message)

        while self._script_pos < len(self._script) and self._script[self._script_pos].tick <= t:
            self._run_action(self._script[self._script_pos])
            self._script_pos += 1

        for principal in sorted(self.peers):
            peer = self.peers[principal]
            for msg in peer.outbox:
                self._enqueue(msg)
                if isinstance(msg, DataRequest):
                    self._trace(
                        principal,
                        "data_req",
                        {
                            "shared_id": msg.shared_id,
                            "from": msg.sender,
                            "to": msg.to,
                            "requested_version": msg.requested_version,
                        },
                    )
                elif isinstance(msg, DataResponse):
                    self._trace(
                        principal,
                        "data_resp",
                        {
                            "shared_id": msg.shared_id,
                            "from": msg.sender,
                            "to": msg.to,
                            "version": msg.version,
                            "digest": msg.table.digest(),
                        },
                    )
            peer.outbox.clear()

        for _ in range(self.config.blocks_per_tick):
            self.contract, notes, receipts = self.chain.produce_block(self.contract, t)
            block = self.chain.blocks[-1]
            self._trace("ledger", "block", {"index": block.index, "txs": len(block.txs)})
            for tx, verdict in block.txs:
                payload = {
                    "shared_id": tx_shared_id(tx),
                    "tx": tx_to_json_dict(tx)["type"],
                    "ok": verdict.ok,
                }
                if not verdict.ok:
                    payload["reason"] = verdict.reason.value
                self._trace(tx_submitter(tx), "verdict", payload)
            for note in notes:
                self._enqueue(note)
                self._trace(
                    "contract",
                    "notify",
                    {
                        "shared_id": note.shared_id,
                        "from": note.source_peer,
                        "to": note.to,
                        "new_version": note.new_version,
                        "changed_attrs": sorted(note.changed_attrs),
                    },
                )
            for receipt in receipts:
                self._enqueue(receipt)

        self.clock = t + 1

    def run_to_quiescence(self, max_ticks: Optional[int] = None) -> "World":
        limit = self.config.max_ticks if max_ticks is None else max_ticks
        while not self.quiescent():
            if self.clock >= limit:
                raise MaxTicksExceeded(
                    f"world {self.name!r} still busy after {limit} ticks: "
                    f"{len(self._inflight)} messages in flight, "
                    f"{len(self.chain.mempool)} mempool transactions, "
                    f"pending proposals on "
                    f"{sorted(sid for p in self.peers.values() for sid in p.pending)}"
                )
            self.step()
        return self


def run(scenario: Scenario, max_ticks: Optional[int] = None) -> World:
    """Build a world from the scenario and drive it to quiescence."""
    return World(scenario).run_to_quiescence(max_ticks)


# --- dumps ---------------------------------------------------------------------


def _write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data + b"\n")


def dump(world: World, out_dir: str | Path) -> Path:
    """Write the world's state in canonical form: tables, copies, contract, chain, trace."""
    out = Path(out_dir)
    manifest: dict[str, object] = {
        "name": world.name,
        "clock": world.clock,
        "principals": sorted(world.peers),
        "peers": {},
    }
    for principal in sorted(world.peers):
        peer = world.peers[principal]
        manifest["peers"][principal] = {  # type: ignore[index]
            "tables": sorted(peer.tables),
            "lenses": [peer.lenses[k].spec.to_json_dict() for k in sorted(peer.lenses)],
            "bindings": [
                {
                    "shared_id": b.shared_id,
                    "lens_id": b.lens_id,
                    "counterpart": b.counterpart,
                    "role": b.role,
                }
                for _, b in sorted(peer.bindings.items())
            ],
            "versions": dict(sorted(peer.known_versions.items())),
        }
        for tid in sorted(peer.tables):
            _write(out / "tables" / principal / f"{tid}.json", peer.tables[tid].canonical_bytes())
        for sid in sorted(peer.shared_copies):
            _write(out / "shared" / principal / f"{sid}.json", peer.shared_copies[sid].canonical_bytes())
    _write(out / "world.json", canonical_json(manifest))
    _write(out / "contract.json", world.contract.canonical_bytes())
    _write(out / "chain.json", world.chain.dumps())
    trace_lines = b"".join(canonical_json(e.to_json_dict()) + b"\n" for e in world.trace)
    (out / "trace.jsonl").parent.mkdir(parents=True, exist_ok=True)
    (out / "trace.jsonl").write_bytes(trace_lines)
    return out


def load_dump(dump_dir: str | Path) -> World:
    """Rebuild a (quiescent) world from a dump directory."""
    root = Path(dump_dir)
    try:
        manifest = json.loads((root / "world.json").read_text(encoding="utf-8"))
        contract = ContractState.from_json_dict(
            json.loads((root / "contract.json").read_text(encoding="utf-8"))
        )
        chain = Chain.loads((root / "chain.json").read_bytes())
        trace = []
        trace_path = root / "trace.jsonl"
        if trace_path.exists():
            for line in trace_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    trace.append(TraceEvent.from_json_dict(json.loads(line)))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"unreadable dump at {root}: {exc}") from exc

    peers: dict[str, PeerNode] = {}
    for principal in manifest["principals"]:
        info = manifest["peers"][principal]
        tables = {}
        for tid in info["tables"]:
            doc = json.loads((root / "tables" / principal / f"{tid}.json").read_text(encoding="utf-8"))
            tables[tid] = Table.from_json_dict(doc)
        lenses = {}
        for spec_doc in info["lenses"]:
            spec = LensSpec.from_json_dict(spec_doc)
            lenses[spec.lens_id] = compile_lens(spec, tables[spec.source_table_id].schema)
        bindings = {
            b["shared_id"]: ShareBinding(b["shared_id"], b["lens_id"], b["counterpart"], b["role"])
            for b in info["bindings"]
        }
        peer = PeerNode(principal, tables, lenses, bindings)
        for sid, version in info["versions"].items():
            doc = json.loads((root / "shared" / principal / f"{sid}.json").read_text(encoding="utf-8"))
            peer.shared_copies[sid] = Table.from_json_dict(doc)
            peer.known_versions[sid] = version
        peers[principal] = peer

    return World.from_parts(
        name=manifest["name"],
        peers=peers,
        chain=chain,
        contract=contract,
        clock=manifest["clock"],
        trace=trace,
    )


# --- convergence ----------------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    shared_id: str
    check: str
    ok: bool
    detail: str = ""


@dataclass(frozen=True)
class Report:
    checks: tuple[CheckResult, ...]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def lines(self) -> list[str]:
        out = []
        for c in self.checks:
            mark = "PASS" if c.ok else "FAIL"
            suffix = f": {c.detail}" if c.detail and not c.ok else ""
            out.append(f"[{mark}] {c.shared_id}: {c.check}{suffix}")
        return out


def verify_convergence(world: World) -> Report:
    """Check that every share's two copies agree, match the contract digest,
    and equal the view regenerated from each holder's source."""
    if not world.quiescent():
        raise NotQuiescent("verify_convergence requires a quiescent world")
    checks: list[CheckResult] = []
    for sid, meta in sorted(world.contract.entries.items()):
        holders = sorted(meta.peers)
        copies = {}
        for p in holders:
            peer = world.peers.get(p)
            copy = peer.shared_copies.get(sid) if peer else None
            if copy is None:
                checks.append(CheckResult(sid, f"copy-present[{p}]", False, f"{p} holds no copy"))
            else:
                copies[p] = copy
        if len(copies) == 2:
            a, b = (copies[p] for p in holders)
            checks.append(
                CheckResult(sid, "copies-equal", a == b, "" if a == b else "peers' copies differ")
            )
        for p, copy in copies.items():
            ok = copy.digest() == meta.content_digest
            checks.append(
                CheckResult(
                    sid,
                    f"digest-matches-contract[{p}]",
                    ok,
                    "" if ok else f"copy digest {copy.digest()[:12]} != contract digest",
                )
            )
            regenerated = world.peers[p].regenerate_view(sid)
            ok = regenerated == copy
            checks.append(
                CheckResult(
                    sid,
                    f"copy-matches-source[{p}]",
                    ok,
                    "" if ok else "regenerated view differs from the held copy",
                )
            )
    return Report(tuple(checks))
