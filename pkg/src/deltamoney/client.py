"""Currency Client: the actor that owns trees and runs the handshake.

A transfer is three messages between the two peers and nothing else on
the critical path: the payer proposes, the payee appends the completed
record to its pair tree and answers with its new root, and the payer
appends, compares roots, and either commits or aborts.  Only after a
commit does each side insert a balance-change record into its own
balance tree and queue the two asynchronous reports (root hash to the
Integrity Manager, new balance to the Currency Manager).

A client handles one exchange at a time: while busy it rejects incoming
proposals and refuses to start new ones.  That serializes its balance
commitments, which bind the exact before/after amounts into the shared
record.

Transactions with the manager's treasury (client id 0) are issuance and
redemption.  They run through the same handshake but queue no reports;
the Currency Manager updates its rows as part of the issue/redeem call
itself.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .balance_tree import BalanceChangeRecord, BalanceMHT
from .currency_manager import MANAGER_ID
from .encoding import Reader, i64, u32, u64
from .errors import (
    ConservationViolation,
    CorruptSnapshot,
    NonMonotonicSequence,
    NotQuiescent,
    NotRegisteredPeers,
    PartnerRootDisagreement,
    PeerSuspended,
    WrongAddressee,
)
from .hashing import Digest, KeyStore
from .integrity_manager import TransactionReport
from .merkle import MerkleTree
from .peer_ledger import (
    AccountView,
    PeerTransactionTree,
    TransactionPairRecord,
    TransactionProposal,
    accept,
    local_view,
    net_position,
    propose,
)

DEFAULT_LIMIT = 2**32
TREASURY_RESERVE = 2**48


# ----------------------------------------------------------------------
# protocol messages


@dataclass(frozen=True)
class ProposeMsg:
    proposal: TransactionProposal


@dataclass(frozen=True)
class AcceptMsg:
    record: TransactionPairRecord
    payee_root: Digest


@dataclass(frozen=True)
class CommitMsg:
    pair_key: tuple[int, int]
    pair_seq: int
    payer_root: Digest


@dataclass(frozen=True)
class AbortMsg:
    pair_key: tuple[int, int]
    pair_seq: int
    payer_root: Digest
    reason: str


@dataclass(frozen=True)
class RejectMsg:
    pair_key: tuple[int, int]
    pair_seq: int
    reason: str


@dataclass(frozen=True)
class BalanceReport:
    client_id: int
    new_balance: int
    mhtr: Digest
    prior_mhtr: Digest
    peer_provenance: Digest
    timestamp: int


@dataclass(frozen=True)
class SupplyNotice:
    """Client-side notice that an issuance or redemption settled.

    The treasury pair skips the usual transaction/balance reports; the
    manager instead updates the supply ledger from this notice, using the
    client's post-exchange MHT root as the row provenance.
    """

    client_id: int
    amount: int
    issued: bool
    new_mhtr: Digest
    timestamp: int


@dataclass(frozen=True)
class TransactionOutcome:
    committed: bool
    pair_seq: int
    root: Optional[Digest] = None
    reason: str = ""


@dataclass(frozen=True)
class PartnerRecoveryData:
    """Everything a partner hands over to rebuild one shared pair tree."""

    peer_id: int
    records: tuple[TransactionPairRecord, ...]
    claimed_root: Digest
    epoch: int = 0
    archived_roots: tuple[tuple[int, Digest], ...] = ()
    carried_net_low: int = 0
    seq_at_epoch_start: int = 0


def pair_of(a: int, b: int) -> tuple[int, int]:
    return (min(a, b), max(a, b))


class ClientNode:
    """One currency client (or the manager's treasury when id is 0)."""

    def __init__(self, client_id: int, keystore: KeyStore,
                 transaction_limit: int = DEFAULT_LIMIT, fanout: int = 8,
                 opening_reserve: int = 0) -> None:
        self.id = client_id
        self.keystore = keystore
        if not keystore.has(client_id):
            keystore.generate(client_id)
        self.transaction_limit = transaction_limit
        self.fanout = fanout
        self.mht = BalanceMHT(fanout)
        self.ptts: dict[tuple[int, int], PeerTransactionTree] = {}
        self.local_views: dict[tuple[int, int], list] = {}
        self.client_seq = 0
        self.suspended = False
        self.opening_reserve = opening_reserve
        self._busy: Optional[tuple[int, int]] = None
        self._pending_out: dict[tuple[int, int], TransactionProposal] = {}
        self._pending_in: dict[tuple[int, int], TransactionPairRecord] = {}
        self._reports: list[tuple[str, object]] = []
        if opening_reserve:
            self.client_seq = 1
            self.mht.insert(BalanceChangeRecord(
                pair_seq=0, timestamp=0, client_seq=1, peer_id=client_id,
                delta=opening_reserve, new_balance=opening_reserve,
                causing_pttr=self.mht.root(),
            ))

    # ------------------------------------------------------------------
    # basic state

    @property
    def balance(self) -> int:
        return self.mht.latest_balance()

    @property
    def busy(self) -> bool:
        return self._busy is not None

    def register_peer(self, peer_id: int) -> PeerTransactionTree:
        key = pair_of(self.id, peer_id)
        if key not in self.ptts:
            self.ptts[key] = PeerTransactionTree(*key)
            self.local_views.setdefault(key, [])
        return self.ptts[key]

    def account_view(self) -> AccountView:
        return AccountView(
            self.id, self.balance, self.transaction_limit, self.mht.root()
        )

    def expected_balance(self) -> int:
        """Opening reserve plus the net of every pair history."""
        return self.opening_reserve + sum(
            net_position(ptt, self.id) for ptt in self.ptts.values()
        )

    def drain_reports(self) -> list[tuple[str, object]]:
        out, self._reports = self._reports, []
        return out

    # ------------------------------------------------------------------
    # handshake steps

    def start_transfer(self, peer_id: int, amount: int,
                       now: int) -> Optional[ProposeMsg]:
        """Open an exchange as payer; None means busy, try again later."""
        if self._busy is not None:
            return None
        key = pair_of(self.id, peer_id)
        proposal = propose(
            self.account_view(), self.ptts.get(key), peer_id, amount, now
        )
        self._busy = key
        self._pending_out[key] = proposal
        return ProposeMsg(proposal)

    def receive_propose(self, msg: ProposeMsg, now: int):
        proposal = msg.proposal
        key = pair_of(proposal.payer_id, proposal.payee_id)
        if self._busy is not None:
            return RejectMsg(key, proposal.pair_seq, "busy")
        ptt = self.ptts.get(key)
        if ptt is None:
            raise NotRegisteredPeers(f"pair {key} is not registered")
        if proposal.pair_seq != ptt.next_seq():
            raise NonMonotonicSequence(
                f"expected seq {ptt.next_seq()}, got {proposal.pair_seq}"
            )
        record = accept(proposal, self.account_view(), suspended=self.suspended)
        ptt.append_record(record)
        self._busy = key
        self._pending_in[key] = record
        return AcceptMsg(record, ptt.root())

    def receive_accept(self, msg: AcceptMsg, now: int):
        record = msg.record
        key = pair_of(record.payer_id, record.payee_id)
        proposal = self._pending_out.get(key)
        if proposal is None or self._busy != key:
            raise WrongAddressee(f"no pending proposal for pair {key}")
        if (record.pair_seq, record.amount, record.payer_id, record.payee_id,
                record.payer_prior_commit, record.payer_new_commit,
                record.payer_provenance, record.timestamp) != (
                proposal.pair_seq, proposal.amount, proposal.payer_id,
                proposal.payee_id, proposal.payer_prior_commit,
                proposal.payer_new_commit, proposal.payer_provenance,
                proposal.timestamp):
            return self._abort(key, record, "record does not match proposal")
        ptt = self.ptts[key]
        ptt.append_record(record)
        my_root = ptt.root()
        if my_root != msg.payee_root:
            ptt.rollback_last()
            return self._abort(key, record, "root mismatch", my_root)
        del self._pending_out[key]
        self._busy = None
        self._finalize(record, my_root)
        return CommitMsg(key, record.pair_seq, my_root)

    def receive_commit(self, msg: CommitMsg, now: int) -> None:
        record = self._pending_in.pop(msg.pair_key, None)
        if record is None:
            return
        self._busy = None
        root = self.ptts[msg.pair_key].root()
        if root != msg.payer_root:
            # should have been an abort; report the divergence
            self.ptts[msg.pair_key].rollback_last()
            self._report_divergence(record, root)
            return
        self._finalize(record, root)

    def receive_abort(self, msg: AbortMsg, now: int) -> None:
        record = self._pending_in.pop(msg.pair_key, None)
        self._busy = None
        if record is None:
            return
        ptt = self.ptts[msg.pair_key]
        divergent_root = ptt.root()
        ptt.rollback_last()
        self._report_divergence(record, divergent_root)

    def receive_reject(self, msg: RejectMsg, now: int) -> None:
        self._pending_out.pop(msg.pair_key, None)
        if self._busy == msg.pair_key:
            self._busy = None

    def _abort(self, key, record, reason: str,
               my_root: Optional[Digest] = None) -> AbortMsg:
        self._pending_out.pop(key, None)
        self._busy = None
        if my_root is not None:
            self._report_divergence(record, my_root)
        return AbortMsg(key, record.pair_seq, my_root or b"\x00" * 32, reason)

    def _report_divergence(self, record: TransactionPairRecord,
                           my_root: Digest) -> None:
        key = pair_of(record.payer_id, record.payee_id)
        if MANAGER_ID in key:
            return
        self._reports.append(("im", TransactionReport(
            self.id, key, record.pair_seq, my_root,
            hashlib.sha256(record.to_bytes()).digest(), record.timestamp,
            aborted=True,
        )))

    def _finalize(self, record: TransactionPairRecord, root: Digest) -> None:
        key = pair_of(record.payer_id, record.payee_id)
        prior_mhtr = self.mht.root()
        view = local_view(record, self.id, self.balance)
        self.client_seq += 1
        self.mht.insert(BalanceChangeRecord(
            pair_seq=record.pair_seq,
            timestamp=record.timestamp,
            client_seq=self.client_seq,
            peer_id=key[0] if key[1] == self.id else key[1],
            delta=view.own_new_balance - view.own_prior_balance,
            new_balance=view.own_new_balance,
            causing_pttr=root,
        ))
        self.local_views[key].append(view)
        if MANAGER_ID in key:
            if self.id != MANAGER_ID:
                self._reports.append(("supply", SupplyNotice(
                    self.id, record.amount, self.id == record.payee_id,
                    self.mht.root(), record.timestamp,
                )))
            return
        if self.id == record.payer_id:
            peer_provenance = record.payee_provenance
        else:
            peer_provenance = record.payer_provenance
        self._reports.append(("im", TransactionReport(
            self.id, key, record.pair_seq, root,
            hashlib.sha256(record.to_bytes()).digest(), record.timestamp,
        )))
        self._reports.append(("cm", BalanceReport(
            self.id, view.own_new_balance, self.mht.root(), prior_mhtr,
            peer_provenance, record.timestamp,
        )))

    # ------------------------------------------------------------------
    # recovery

    def export_recovery_data(self, peer_id: int) -> PartnerRecoveryData:
        """What this node hands a wiped partner about their shared pair."""
        key = pair_of(self.id, peer_id)
        ptt = self.ptts[key]
        return PartnerRecoveryData(
            peer_id=self.id,
            records=tuple(ptt.records),
            claimed_root=ptt.root(),
            epoch=ptt.epoch,
            archived_roots=tuple(ptt.archived_roots),
            carried_net_low=ptt._carried_net_low,
            seq_at_epoch_start=ptt.last_seq - len(ptt.records),
        )

    def wipe(self) -> None:
        """Drop all volatile state, as a crash would."""
        self.mht = BalanceMHT(self.fanout)
        self.ptts = {}
        self.local_views = {}
        self.client_seq = 0
        self._busy = None
        self._pending_out = {}
        self._pending_in = {}
        self._reports = []

    def recover_transactions(
        self,
        partners: Iterable[PartnerRecoveryData],
        validated_root: Callable[[tuple[int, int]], Optional[Digest]],
    ) -> None:
        """Rebuild all pair trees and the balance tree from partner data.

        Each partner's record set is replayed into a fresh tree; the
        rebuilt root must match both the partner's claim and, when the
        Integrity Manager has one, the archived validated root.  The
        balance tree is then rebuilt by replaying every record in
        timestamp order.
        """
        rebuilt: dict[tuple[int, int], PeerTransactionTree] = {}
        for data in partners:
            key = pair_of(self.id, data.peer_id)
            ptt = PeerTransactionTree(*key)
            ptt.epoch = data.epoch
            ptt.archived_roots = list(data.archived_roots)
            ptt._carried_net_low = data.carried_net_low
            ptt.last_seq = data.seq_at_epoch_start
            for record in data.records:
                ptt.append_record(record)
            root = ptt.root()
            if root != data.claimed_root:
                raise PartnerRootDisagreement(
                    f"pair {key}: partner claims {data.claimed_root.hex()[:16]}, "
                    f"records rebuild to {root.hex()[:16]}"
                )
            trusted = validated_root(key)
            if trusted is not None and root != trusted:
                raise PartnerRootDisagreement(
                    f"pair {key}: rebuilt root {root.hex()[:16]} does not match "
                    f"the validated root {trusted.hex()[:16]}"
                )
            rebuilt[key] = ptt

        self.wipe()
        self.ptts = rebuilt
        self.local_views = {key: [] for key in rebuilt}
        timeline = []
        for key, ptt in rebuilt.items():
            for record in ptt.records:
                timeline.append((record.timestamp, key, record))
        timeline.sort(key=lambda item: (item[0], item[1], item[2].pair_seq))
        replay: dict[tuple[int, int], MerkleTree] = {}
        balance = self.opening_reserve
        if self.opening_reserve:
            self.client_seq = 1
            self.mht.insert(BalanceChangeRecord(
                pair_seq=0, timestamp=0, client_seq=1, peer_id=self.id,
                delta=self.opening_reserve, new_balance=self.opening_reserve,
                causing_pttr=self.mht.root(),
            ))
        for timestamp, key, record in timeline:
            payload = record.to_bytes()
            tree = replay.get(key)
            if tree is None:
                tree = replay[key] = MerkleTree.build([payload])
            else:
                tree.append(payload)
            delta = record.amount if record.payee_id == self.id else -record.amount
            balance += delta
            self.client_seq += 1
            self.mht.insert(BalanceChangeRecord(
                pair_seq=record.pair_seq,
                timestamp=timestamp,
                client_seq=self.client_seq,
                peer_id=key[0] if key[1] == self.id else key[1],
                delta=delta,
                new_balance=balance,
                causing_pttr=tree.root(),
            ))
            self.local_views[key].append(local_view(
                record, self.id, balance - delta
            ))

    def recover_balance(self, manager) -> int:
        """Derive own balance from totals, cross-checked with the manager."""
        others = sum(
            row.valid_balance
            for row in manager.table.open_rows()
            if row.client_id != self.id
        )
        derived = manager.supply.net - others
        stored = manager.table.open_row(self.id).valid_balance
        if derived != stored:
            raise ConservationViolation(
                f"derived balance {derived} disagrees with the manager's "
                f"stored balance {stored}"
            )
        return derived

    # ------------------------------------------------------------------
    # persistence

    SNAPSHOT_MAGIC = b"DMCS"
    SNAPSHOT_VERSION = 1

    def persist_snapshot(self) -> bytes:
        if self.busy:
            raise NotQuiescent("an exchange is still in flight")
        parts = [
            self.SNAPSHOT_MAGIC,
            u32(self.SNAPSHOT_VERSION),
            u64(self.id),
            u64(self.client_seq),
            u64(self.transaction_limit),
            u64(self.opening_reserve),
        ]
        mht_blob = self.mht.snapshot_bytes()
        parts.append(u64(len(mht_blob)))
        parts.append(mht_blob)
        parts.append(u32(len(self.ptts)))
        for key in sorted(self.ptts):
            ptt = self.ptts[key]
            section = [
                u64(key[0]), u64(key[1]), u64(ptt.epoch), u64(ptt.last_seq),
                i64(ptt._carried_net_low), u32(len(ptt.archived_roots)),
            ]
            for epoch, root in ptt.archived_roots:
                section.append(u64(epoch))
                section.append(root)
            section.append(u64(len(ptt.records)))
            section.extend(rec.to_bytes() for rec in ptt.records)
            section.append(ptt.root())
            parts.extend(section)
        body = b"".join(parts)
        return body + hashlib.sha256(body).digest()

    @classmethod
    def load_snapshot(cls, data: bytes, keystore: KeyStore) -> "ClientNode":
        if len(data) < 36 or data[:4] != cls.SNAPSHOT_MAGIC:
            raise CorruptSnapshot("bad snapshot header")
        body, trailer = data[:-32], data[-32:]
        if hashlib.sha256(body).digest() != trailer:
            raise CorruptSnapshot("snapshot checksum mismatch")
        r = Reader(body[4:])
        version = r.u32()
        if version != cls.SNAPSHOT_VERSION:
            raise CorruptSnapshot(f"unsupported snapshot version {version}")
        client_id = r.u64()
        client_seq = r.u64()
        limit = r.u64()
        reserve = r.u64()
        node = cls(client_id, keystore, transaction_limit=limit)
        node.opening_reserve = reserve
        try:
            mht_blob = r.take(r.u64())
            node.mht = BalanceMHT.from_snapshot(mht_blob)
            node.fanout = node.mht.fanout
            node.client_seq = client_seq
            for _ in range(r.u32()):
                a, b = r.u64(), r.u64()
                ptt = PeerTransactionTree(a, b)
                ptt.epoch = r.u64()
                last_seq = r.u64()
                ptt._carried_net_low = r.i64()
                ptt.archived_roots = [
                    (r.u64(), r.take(32)) for _ in range(r.u32())
                ]
                n_records = r.u64()
                ptt.last_seq = last_seq - n_records
                for _ in range(n_records):
                    ptt.append_record(
                        TransactionPairRecord.from_bytes(r.take(232))
                    )
                expected_root = r.take(32)
                if ptt.root() != expected_root:
                    raise CorruptSnapshot(
                        f"pair {ptt.pair_key}: rebuilt root does not match"
                    )
                node.ptts[ptt.pair_key] = ptt
                node.local_views[ptt.pair_key] = []
            if not r.done():
                raise CorruptSnapshot("trailing bytes after the last section")
        except CorruptSnapshot:
            raise
        except Exception as exc:
            raise CorruptSnapshot(f"snapshot does not parse: {exc}") from exc
        node._rebuild_local_views()
        return node

    def _rebuild_local_views(self) -> None:
        by_peer_seq = {}
        for mrec in self.mht.records_in_order():
            by_peer_seq[(mrec.peer_id, mrec.pair_seq)] = mrec
        for key, ptt in self.ptts.items():
            peer = key[0] if key[1] == self.id else key[1]
            views = []
            for record in ptt.records:
                mrec = by_peer_seq.get((peer, record.pair_seq))
                if mrec is None:
                    continue
                views.append(local_view(
                    record, self.id, mrec.new_balance - mrec.delta
                ))
            self.local_views[key] = views


# ----------------------------------------------------------------------
# direct-mode driver


def transact(payer: ClientNode, payee: ClientNode, amount: int,
             timestamp: int) -> TransactionOutcome:
    """Run a whole exchange synchronously between two co-resident nodes."""
    msg = payer.start_transfer(payee.id, amount, timestamp)
    if msg is None:
        return TransactionOutcome(False, 0, reason="payer busy")
    try:
        reply = payee.receive_propose(msg, timestamp)
    except (PeerSuspended, NotRegisteredPeers, NonMonotonicSequence):
        payer.receive_reject(
            RejectMsg(pair_of(payer.id, payee.id), msg.proposal.pair_seq, "error"),
            timestamp,
        )
        raise
    if isinstance(reply, RejectMsg):
        payer.receive_reject(reply, timestamp)
        return TransactionOutcome(False, reply.pair_seq, reason=reply.reason)
    result = payer.receive_accept(reply, timestamp)
    if isinstance(result, AbortMsg):
        payee.receive_abort(result, timestamp)
        return TransactionOutcome(False, result.pair_seq, reason=result.reason)
    payee.receive_commit(result, timestamp)
    return TransactionOutcome(True, result.pair_seq, result.payer_root)
