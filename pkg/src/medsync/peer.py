"""One participant's state machine.

A peer owns its full local tables, a lens per share it participates in, and a
copy of each shared table. Local edits stay local until the peer regenerates
the affected view and proposes the change to the ledger; copies move only on
an accepted receipt or on data fetched from the counterpart and verified
against the contract digest. After merging a counterpart's update into a
source table, the peer re-derives its other views over that source and
proposes any that changed (the cascade).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Union

from .contract import Notification, Principal, RejectReason, SharedTableMetadata, UpdateTx
from .ledger import Receipt
from .lenses import Lens, get as lens_get, put as lens_put
from .relational import Table, Value


class PeerError(Exception):
    """Base class for peer protocol errors (scenario bugs, not recoverable)."""


class UnknownShare(PeerError):
    """A message or call referenced a share this peer is not bound to."""


class UnknownTable(PeerError):
    """A local edit referenced a table this peer does not hold."""


# on_data_request outcomes
SERVED = "served"
RETRY = "retry"
REFUSED = "refused"


@dataclass(frozen=True)
class ShareBinding:
    """This peer's participation in one share: which lens feeds it and who the counterpart is."""

    shared_id: str
    lens_id: str
    counterpart: Principal
    role: str  # "initiator" deployed the share; "participant" joined it


@dataclass(frozen=True)
class DataRequest:
    shared_id: str
    requested_version: int
    sender: Principal
    to: Principal


@dataclass(frozen=True)
class DataResponse:
    shared_id: str
    version: int
    table: Table
    sender: Principal
    to: Principal


Message = Union[Notification, Receipt, DataRequest, DataResponse]


@dataclass(frozen=True)
class Edit:
    """One local CRUD operation against a peer's own table."""

    op: str  # "insert" | "update" | "delete"
    row: Optional[Mapping[str, Value]] = None
    key: Optional[Mapping[str, Value]] = None
    changes: Optional[Mapping[str, Value]] = None


@dataclass(frozen=True)
class PendingProposal:
    view: Table
    base_version: int


@dataclass(frozen=True)
class MergeOutcome:
    """What happened when a data response was merged."""

    applied: bool
    cascade_txs: tuple[UpdateTx, ...] = ()


def changed_view_attrs(old: Table, new: Table) -> frozenset[str]:
    """Attributes that differ between two versions of a view, aligned on the key.

    Rows present on only one side count as a change to every attribute.
    """
    schema = new.schema
    old_by_key = {tuple(r[k] for k in schema.key): r for r in old.rows}
    new_by_key = {tuple(r[k] for k in schema.key): r for r in new.rows}
    changed: set[str] = set()
    for k, nrow in new_by_key.items():
        orow = old_by_key.get(k)
        if orow is None:
            changed |= set(schema.attrs)
        else:
            changed |= {a for a in schema.attrs if orow[a] != nrow[a]}
    if old_by_key.keys() - new_by_key.keys():
        changed |= set(schema.attrs)
    return frozenset(changed)


class PeerNode:
    """Deterministic event-driven node; the driver feeds it one message at a time."""

    def __init__(
        self,
        principal: Principal,
        tables: Mapping[str, Table],
        lenses: Mapping[str, Lens],
        bindings: Mapping[str, ShareBinding],
    ) -> None:
        self.principal = principal
        self.tables: dict[str, Table] = dict(tables)
        self.lenses: dict[str, Lens] = dict(lenses)
        self.bindings: dict[str, ShareBinding] = dict(bindings)
        self.shared_copies: dict[str, Table] = {}
        self.known_versions: dict[str, int] = {}
        self.pending: dict[str, PendingProposal] = {}
        self.outbox: list[Message] = []

    # -- wiring ---------------------------------------------------------------

    def _binding(self, shared_id: str) -> ShareBinding:
        binding = self.bindings.get(shared_id)
        if binding is None:
            raise UnknownShare(f"{self.principal!r} is not bound to share {shared_id!r}")
        return binding

    def regenerate_view(self, shared_id: str) -> Table:
        """Derive the current view for a share from the local source table."""
        binding = self._binding(shared_id)
        lens = self.lenses[binding.lens_id]
        source = self.tables[lens.spec.source_table_id]
        return lens_get(lens, source).with_id(shared_id)

    def install_share(self, shared_id: str) -> Table:
        """Initialize the local copy of a share from the current source; version 0."""
        view = self.regenerate_view(shared_id)
        self.shared_copies[shared_id] = view
        self.known_versions[shared_id] = 0
        return view

    # -- local operations -----------------------------------------------------

    def local_edit(self, table_id: str, edit: Edit) -> None:
        """Apply one CRUD operation to a local table; nothing is propagated yet."""
        table = self.tables.get(table_id)
        if table is None:
            raise UnknownTable(f"{self.principal!r} has no table {table_id!r}")
        if edit.op == "insert":
            new = table.insert_row(edit.row or {})
        elif edit.op == "update":
            new = table.update_row(edit.key or {}, edit.changes or {})
        elif edit.op == "delete":
            new = table.delete_row(edit.key or {})
        else:
            raise ValueError(f"unknown edit op {edit.op!r}")
        self.tables[table_id] = new

    def read_shared(self, shared_id: str) -> Table:
        """Local query of a shared copy; no messages, no ledger interaction."""
        self._binding(shared_id)
        return self.shared_copies[shared_id]

    def regenerate_and_propose(self, shared_id: str) -> Optional[UpdateTx]:
        """Regenerate the view and, if it drifted from the shared copy, stage a proposal.

        The copy itself is replaced only once the ledger accepts the proposal.
        Returns None when nothing changed or a proposal is already in flight.
        """
        self._binding(shared_id)
        if shared_id in self.pending:
            return None
        new_view = self.regenerate_view(shared_id)
        old_view = self.shared_copies[shared_id]
        if new_view == old_view:
            return None
        base_version = self.known_versions[shared_id]
        tx = UpdateTx(
            shared_id=shared_id,
            requester=self.principal,
            changed_attrs=changed_view_attrs(old_view, new_view),
            base_version=base_version,
            new_digest=new_view.digest(),
        )
        self.pending[shared_id] = PendingProposal(new_view, base_version)
        return tx

    # -- message handlers -----------------------------------------------------

    def on_receipt(self, receipt: Receipt) -> list[UpdateTx]:
        """Close the propose loop; may return catch-up proposals to submit.

        Stale or serialization rejections trigger a refetch from the
        counterpart; all other rejections just drop the staged view.
        """
        tx = receipt.tx
        if not isinstance(tx, UpdateTx):
            return []
        shared_id = tx.shared_id
        staged = self.pending.pop(shared_id, None)
        if receipt.verdict.ok:
            if staged is not None:
                self.shared_copies[shared_id] = staged.view
                self.known_versions[shared_id] = staged.base_version + 1
            # The source may have moved again while the proposal was in flight.
            follow_up = self.regenerate_and_propose(shared_id)
            return [follow_up] if follow_up else []
        if receipt.verdict.reason in (
            RejectReason.STALE_VERSION,
            RejectReason.BLOCKED_BY_SERIALIZATION,
        ):
            # Refetch only if the winning version has not already been merged
            # through the notification path while this receipt was in flight.
            if self.known_versions[shared_id] <= tx.base_version:
                binding = self._binding(shared_id)
                self.outbox.append(
                    DataRequest(
                        shared_id=shared_id,
                        requested_version=tx.base_version + 1,
                        sender=self.principal,
                        to=binding.counterpart,
                    )
                )
        return []

    def on_notification(self, note: Notification) -> None:
        """A counterpart updated the share: ask them for the new data."""
        self._binding(note.shared_id)
        self.outbox.append(
            DataRequest(
                shared_id=note.shared_id,
                requested_version=note.new_version,
                sender=self.principal,
                to=note.source_peer,
            )
        )

    def on_data_request(self, req: DataRequest) -> str:
        """Serve the current copy, or signal a retry if we don't hold it yet.

        Requests from anyone but the share's counterpart are refused: shared
        data never travels to a third party.
        """
        binding = self._binding(req.shared_id)
        if req.sender != binding.counterpart:
            return REFUSED
        if self.known_versions[req.shared_id] < req.requested_version:
            return RETRY
        self.outbox.append(
            DataResponse(
                shared_id=req.shared_id,
                version=self.known_versions[req.shared_id],
                table=self.shared_copies[req.shared_id],
                sender=self.principal,
                to=req.sender,
            )
        )
        return SERVED

    def on_data_response(self, resp: DataResponse, meta: SharedTableMetadata) -> MergeOutcome:
        """Verify fetched data against the contract entry and merge it into the source.

        On a digest or version mismatch the response is discarded and a fresh
        request is sent. After a merge, every other share derived from the same
        source is regenerated; views that changed become cascade proposals.
        """
        binding = self._binding(resp.shared_id)
        if resp.table.digest() != meta.content_digest or resp.version != meta.version:
            self.outbox.append(
                DataRequest(
                    shared_id=resp.shared_id,
                    requested_version=meta.version,
                    sender=self.principal,
                    to=binding.counterpart,
                )
            )
            return MergeOutcome(applied=False)

        self.shared_copies[resp.shared_id] = resp.table.with_id(resp.shared_id)
        self.known_versions[resp.shared_id] = resp.version

        lens = self.lenses[binding.lens_id]
        source_id = lens.spec.source_table_id
        self.tables[source_id] = lens_put(lens, self.tables[source_id], resp.table)

        cascades: list[UpdateTx] = []
        for other_id in sorted(self.bindings):
            if other_id == resp.shared_id:
                continue
            other_lens = self.lenses[self.bindings[other_id].lens_id]
            if other_lens.spec.source_table_id != source_id:
                continue
            tx = self.regenerate_and_propose(other_id)
            if tx is not None:
                cascades.append(tx)
        return MergeOutcome(applied=True, cascade_txs=tuple(cascades))
