"""Per-peer-pair transaction ledger.

Every transaction between two enrolled clients is expressed as a single
credit-debit pair record whose canonical encoding is byte-identical no
matter which side produced it.  Each peer appends the record to its copy
of the pair's transaction tree and the transaction counts as committed
only when both copies produce the same Merkle root.  Plaintext balances
never enter the shared record; each side keeps them in a private
LocalView alongside the blinded commitments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from .encoding import Reader, u64
from .errors import (
    EmptyTree,
    InsufficientBalance,
    LimitExceeded,
    MissingCounterSignature,
    NonMonotonicSequence,
    NonPositiveAmount,
    NotRegisteredPeers,
    PeerSuspended,
    UnknownClient,
    UnregisteredPair,
    WrongAddressee,
)
from .hashing import (
    EMPTY_TREE_DIGEST,
    SHA256,
    KeyStore,
    Signature,
    commit_balance,
)
from .merkle import MerkleTree

RECORD_SIZE = 232


@dataclass(frozen=True)
class TransactionPairRecord:
    """Shared leaf payload for one credit-debit transaction pair."""

    pair_seq: int
    timestamp: int
    payer_id: int
    payee_id: int
    amount: int
    payer_prior_commit: bytes
    payer_new_commit: bytes
    payee_prior_commit: bytes
    payee_new_commit: bytes
    payer_provenance: bytes
    payee_provenance: bytes

    def __post_init__(self) -> None:
        if self.amount <= 0:
            raise NonPositiveAmount(f"amount must be positive, got {self.amount}")
        if self.payer_id == self.payee_id:
            raise ValueError("payer and payee must be distinct clients")

    def to_bytes(self) -> bytes:
        return b"".join(
            (
                u64(self.pair_seq),
                u64(self.timestamp),
                u64(self.payer_id),
                u64(self.payee_id),
                u64(self.amount),
                self.payer_prior_commit,
                self.payer_new_commit,
                self.payee_prior_commit,
                self.payee_new_commit,
                self.payer_provenance,
                self.payee_provenance,
            )
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "TransactionPairRecord":
        if len(data) != RECORD_SIZE:
            raise ValueError(f"expected {RECORD_SIZE} bytes, got {len(data)}")
        r = Reader(data)
        rec = cls(
            pair_seq=r.u64(),
            timestamp=r.u64(),
            payer_id=r.u64(),
            payee_id=r.u64(),
            amount=r.u64(),
            payer_prior_commit=r.take(32),
            payer_new_commit=r.take(32),
            payee_prior_commit=r.take(32),
            payee_new_commit=r.take(32),
            payer_provenance=r.take(32),
            payee_provenance=r.take(32),
        )
        r.done()
        return rec

    def leg_id(self, client_id: int) -> str:
        if client_id == self.payer_id:
            return f"{self.pair_seq}.1"
        if client_id == self.payee_id:
            return f"{self.pair_seq}.2"
        raise UnknownClient(f"client {client_id} is not a party to this record")


@dataclass(frozen=True)
class TransactionProposal:
    """Payer half of a record, sent to the payee for completion."""

    pair_seq: int
    timestamp: int
    payer_id: int
    payee_id: int
    amount: int
    payer_prior_commit: bytes
    payer_new_commit: bytes
    payer_provenance: bytes


@dataclass(frozen=True)
class LocalView:
    """One party's private plaintext view of a committed pair record."""

    pair_seq: int
    leg_id: str
    own_prior_balance: int
    own_new_balance: int
    record: TransactionPairRecord


@dataclass(frozen=True)
class CommitOutcome:
    committed: bool
    root: Optional[bytes]
    reason: str = ""


@dataclass(frozen=True)
class AccountView:
    """The slice of client state the handshake needs.

    ``balance`` is the ledger balance the commitments are computed over;
    ``available`` (defaults to ``balance``) is what the payer may spend
    once in-flight reservations are subtracted.
    """

    client_id: int
    balance: int
    transaction_limit: int
    provenance: bytes
    available: Optional[int] = None

    @property
    def spendable(self) -> int:
        return self.balance if self.available is None else self.available


class PeerTransactionTree:
    """One client's replica of the transaction tree for a peer pair.

    Honest replicas hold byte-identical leaf sequences, so their roots
    agree.  ``pair_seq`` keeps increasing across epoch resets; the net
    amount of archived epochs is carried forward (stored from the lower
    client id's perspective so both replicas stay identical).
    """

    def __init__(self, client_a: int, client_b: int) -> None:
        if client_a == client_b:
            raise ValueError("a pair needs two distinct clients")
        self.pair_key = (min(client_a, client_b), max(client_a, client_b))
        self.epoch = 0
        self.records: list[TransactionPairRecord] = []
        self.archived_roots: list[tuple[int, bytes]] = []
        self.last_seq = 0
        self._carried_net_low = 0
        self._tree: Optional[MerkleTree] = None

    def __len__(self) -> int:
        return len(self.records)

    def next_seq(self) -> int:
        return self.last_seq + 1

    def append_record(self, record: TransactionPairRecord) -> None:
        if {record.payer_id, record.payee_id} != set(self.pair_key):
            raise UnregisteredPair(
                f"record for pair ({record.payer_id}, {record.payee_id}) "
                f"does not belong to {self.pair_key}"
            )
        if record.pair_seq != self.last_seq + 1:
            raise NonMonotonicSequence(
                f"expected pair_seq {self.last_seq + 1}, got {record.pair_seq}"
            )
        payload = record.to_bytes()
        if self._tree is None:
            self._tree = MerkleTree.build([payload])
        else:
            self._tree.append(payload)
        self.records.append(record)
        self.last_seq = record.pair_seq

    def rollback_last(self) -> None:
        if not self.records:
            raise EmptyTree("nothing to roll back")
        self.records.pop()
        assert self._tree is not None
        if len(self._tree) == 1:
            self._tree = None
        else:
            self._tree.remove_last()
        self.last_seq -= 1

    def root(self) -> bytes:
        if self._tree is None:
            return EMPTY_TREE_DIGEST
        return self._tree.root()

    def tamper_leaf(self, index: int, payload: bytes) -> None:
        """Overwrite a raw leaf payload in place (fault injection only)."""
        assert self._tree is not None
        self._tree.replace_leaf(index, payload)


def propose(
    payer: AccountView,
    ptt: Optional[PeerTransactionTree],
    payee_id: int,
    amount: int,
    timestamp: int,
) -> TransactionProposal:
    """Open the handshake: the payer commits to its before/after balances."""
    if ptt is None:
        raise NotRegisteredPeers(
            f"clients {payer.client_id} and {payee_id} are not registered peers"
        )
    if amount <= 0:
        raise NonPositiveAmount(f"amount must be positive, got {amount}")
    if amount > payer.transaction_limit:
        raise LimitExceeded(
            f"amount {amount} exceeds transaction limit {payer.transaction_limit}"
        )
    if amount > payer.spendable:
        raise InsufficientBalance(
            f"amount {amount} exceeds available balance {payer.spendable}"
        )
    seq = ptt.next_seq()
    return TransactionProposal(
        pair_seq=seq,
        timestamp=timestamp,
        payer_id=payer.client_id,
        payee_id=payee_id,
        amount=amount,
        payer_prior_commit=commit_balance(payer.client_id, seq, payer.balance),
        payer_new_commit=commit_balance(payer.client_id, seq, payer.balance - amount),
        payer_provenance=payer.provenance,
    )


def accept(
    proposal: TransactionProposal,
    payee: AccountView,
    suspended: bool = False,
) -> TransactionPairRecord:
    """Complete the record with the payee's commitments and provenance."""
    if proposal.payee_id != payee.client_id:
        raise WrongAddressee(
            f"proposal addressed to {proposal.payee_id}, not {payee.client_id}"
        )
    if suspended:
        raise PeerSuspended(f"client {payee.client_id} is suspended")
    seq = proposal.pair_seq
    return TransactionPairRecord(
        pair_seq=seq,
        timestamp=proposal.timestamp,
        payer_id=proposal.payer_id,
        payee_id=proposal.payee_id,
        amount=proposal.amount,
        payer_prior_commit=proposal.payer_prior_commit,
        payer_new_commit=proposal.payer_new_commit,
        payee_prior_commit=commit_balance(payee.client_id, seq, payee.balance),
        payee_new_commit=commit_balance(
            payee.client_id, seq, payee.balance + proposal.amount
        ),
        payer_provenance=proposal.payer_provenance,
        payee_provenance=payee.provenance,
    )


def commit(
    payer_ptt: PeerTransactionTree,
    payee_ptt: PeerTransactionTree,
    record: TransactionPairRecord,
    payee_record: Optional[TransactionPairRecord] = None,
) -> CommitOutcome:
    """Append on both sides, exchange roots, keep the leaf only on agreement.

    ``payee_record`` lets fault scenarios hand the payee divergent bytes;
    honest peers share one record.
    """
    payer_ptt.append_record(record)
    try:
        payee_ptt.append_record(payee_record or record)
    except Exception:
        payer_ptt.rollback_last()
        raise
    payer_root = payer_ptt.root()
    payee_root = payee_ptt.root()
    if payer_root == payee_root:
        return CommitOutcome(committed=True, root=payer_root)
    payer_ptt.rollback_last()
    payee_ptt.rollback_last()
    return CommitOutcome(
        committed=False,
        root=None,
        reason="root mismatch: replicas disagree after append",
    )


def local_view(
    record: TransactionPairRecord, self_id: int, prior_balance: int
) -> LocalView:
    """Build one party's plaintext view, checking it matches the record."""
    if self_id == record.payer_id:
        new_balance = prior_balance - record.amount
        expect_prior = record.payer_prior_commit
        expect_new = record.payer_new_commit
    elif self_id == record.payee_id:
        new_balance = prior_balance + record.amount
        expect_prior = record.payee_prior_commit
        expect_new = record.payee_new_commit
    else:
        raise UnknownClient(f"client {self_id} is not a party to this record")
    seq = record.pair_seq
    if commit_balance(self_id, seq, prior_balance) != expect_prior:
        raise ValueError("prior balance does not match the record's commitment")
    if commit_balance(self_id, seq, new_balance) != expect_new:
        raise ValueError("new balance does not match the record's commitment")
    return LocalView(
        pair_seq=seq,
        leg_id=record.leg_id(self_id),
        own_prior_balance=prior_balance,
        own_new_balance=new_balance,
        record=record,
    )


def net_position(ptt: PeerTransactionTree, self_id: int) -> int:
    """Signed net amount for ``self_id`` over the pair's whole history."""
    if self_id not in ptt.pair_key:
        raise UnknownClient(f"client {self_id} is not a member of {ptt.pair_key}")
    net = 0
    for rec in ptt.records:
        net += rec.amount if rec.payee_id == self_id else -rec.amount
    carried = ptt._carried_net_low
    net += carried if self_id == ptt.pair_key[0] else -carried
    return net


def reset_epoch(
    ptt: PeerTransactionTree,
    signatures: Iterable[Signature],
    keystore: Optional[KeyStore] = None,
) -> PeerTransactionTree:
    """Archive the current root and start a fresh epoch, same tree object.

    Both peers must countersign the root being archived.  When a keystore
    is supplied the signatures are verified cryptographically; otherwise
    only signer coverage is checked.
    """
    current = ptt.root()
    signers = set()
    for sig in signatures:
        if keystore is not None and not keystore.verify(sig, current):
            continue
        signers.add(sig.signer_id)
    missing = set(ptt.pair_key) - signers
    if missing:
        raise MissingCounterSignature(
            f"missing valid signatures from clients {sorted(missing)}"
        )
    low = ptt.pair_key[0]
    ptt._carried_net_low += sum(
        rec.amount if rec.payee_id == low else -rec.amount for rec in ptt.records
    )
    ptt.archived_roots.append((ptt.epoch, current))
    ptt.epoch += 1
    ptt.records = []
    ptt._tree = None
    return ptt
