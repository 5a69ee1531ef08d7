"""Currency Manager: enrollment, issuance, and conservation.

The manager never stores transaction records.  It keeps a temporal
table of plaintext balances (one open row per client, closed rows kept
forever), the provenance root each balance claims to descend from, and
the running totals of issued and redeemed currency.  Double spends
surface here: a balance report whose prior root matches an already
closed row is spending from a state that was spent from before.

Balance reports for the two legs of one transfer arrive independently
and possibly out of order.  Reports whose prior root is not yet known
are parked until the chain catches up, and conservation is checked
automatically only once both legs of a transfer have landed (the two
legs carry the same unordered {own prior, peer prior} digest pair,
which is how they are matched without the manager ever seeing the
transaction itself).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .encoding import FOREVER, u64
from .errors import (
    ClientSuspended,
    InsufficientBalance,
    NonPositiveAmount,
    StaleProvenance,
    UnknownClient,
    UnknownTransaction,
)
from .hashing import EMPTY_TREE_DIGEST, Digest, KeyStore, Signature

MANAGER_ID = 0


class ClientStatus(Enum):
    ACTIVE = "active"
    SUSPENDED = "suspended"
    DISENROLLED = "disenrolled"


@dataclass
class RegisteredClient:
    client_id: int
    public_key: object
    status: ClientStatus
    transaction_limit: int
    zone: str


@dataclass
class PairRegistration:
    pair_key: tuple[int, int]
    consents: set[int] = field(default_factory=set)

    @property
    def active(self) -> bool:
        return set(self.pair_key) <= self.consents


@dataclass
class BalanceRow:
    txn_timestamp: int
    client_id: int
    valid_balance: int
    valid_from: int
    valid_to: int
    provenance_mhtr: Digest
    remarks: str = ""

    @property
    def open(self) -> bool:
        return self.valid_to == FOREVER


class TemporalBalanceTable:
    """Valid-time balance history: closed rows are immutable facts."""

    def __init__(self) -> None:
        self.rows: list[BalanceRow] = []
        self._open: dict[int, BalanceRow] = {}

    def open_row(self, client_id: int) -> BalanceRow:
        return self._open[client_id]

    def start(self, client_id: int, timestamp: int, remarks: str = "") -> BalanceRow:
        row = BalanceRow(
            timestamp, client_id, 0, timestamp, FOREVER, EMPTY_TREE_DIGEST, remarks
        )
        self.rows.append(row)
        self._open[client_id] = row
        return row

    def advance(
        self,
        client_id: int,
        timestamp: int,
        new_balance: int,
        mhtr: Digest,
        remarks: str = "",
    ) -> BalanceRow:
        prev = self._open[client_id]
        prev.valid_to = timestamp
        prev.txn_timestamp = timestamp  # closed rows are re-stamped, as updates
        row = BalanceRow(
            timestamp, client_id, new_balance, timestamp, FOREVER, mhtr, remarks
        )
        self.rows.append(row)
        self._open[client_id] = row
        return row

    def balance_at(self, client_id: int, at: int) -> int:
        for row in self.rows:
            if row.client_id == client_id and row.valid_from <= at < row.valid_to:
                return row.valid_balance
        raise UnknownClient(f"no balance row for client {client_id} at {at}")

    def open_rows(self) -> list[BalanceRow]:
        return [row for row in self.rows if row.open]

    def closed_provenances(self, client_id: int) -> set[Digest]:
        return {
            row.provenance_mhtr
            for row in self.rows
            if row.client_id == client_id and not row.open
        }


@dataclass
class SupplyLedger:
    total_issued: int = 0
    total_redeemed: int = 0
    events: list[tuple[int, int]] = field(default_factory=list)  # (tick, +/- amount)

    def issue(self, amount: int, timestamp: int) -> None:
        self.total_issued += amount
        self.events.append((timestamp, amount))

    def redeem(self, amount: int, timestamp: int) -> None:
        self.total_redeemed += amount
        self.events.append((timestamp, -amount))

    def net_at(self, at: int) -> int:
        return sum(amount for tick, amount in self.events if tick <= at)

    @property
    def net(self) -> int:
        return self.total_issued - self.total_redeemed


@dataclass(frozen=True)
class ConservationVerdict:
    holds: bool
    expected: int
    actual: int
    at: Optional[int] = None

    @property
    def discrepancy(self) -> int:
        return self.actual - self.expected


@dataclass(frozen=True)
class IssuanceReceipt:
    client_id: int
    amount: int
    timestamp: int
    new_balance: int


@dataclass(frozen=True)
class RedemptionReceipt:
    client_id: int
    amount: int
    timestamp: int
    new_balance: int


@dataclass(frozen=True)
class ReportOutcome:
    status: str  # applied | parked | duplicate
    conservation: Optional[ConservationVerdict] = None


@dataclass(frozen=True)
class ReparationRecord:
    pair_key: tuple[int, int]
    original_pair_seq: int
    compensating_pair_seq: int
    amount: int
    timestamp: int


@dataclass(frozen=True)
class _Report:
    client_id: int
    new_balance: int
    mhtr: Digest
    prior_mhtr: Digest
    peer_provenance: Digest
    timestamp: int

    def fingerprint(self) -> Digest:
        return hashlib.sha256(
            u64(self.client_id)
            + u64(self.new_balance)
            + self.mhtr
            + self.prior_mhtr
            + self.peer_provenance
            + u64(self.timestamp)
        ).digest()


@dataclass(frozen=True)
class MHTRAttestation:
    """A signed statement: this is the client's latest reported root."""

    client_id: int
    mhtr: Digest
    signature: Signature

    def message(self) -> bytes:
        return u64(self.client_id) + self.mhtr


class CurrencyManager:
    """Single logical actor owning enrollment, supply, and balances."""

    def __init__(self, keystore: Optional[KeyStore] = None) -> None:
        self.keystore = keystore if keystore is not None else KeyStore()
        if not self.keystore.has(MANAGER_ID):
            self.keystore.generate(MANAGER_ID)
        self.registry: dict[int, RegisteredClient] = {}
        self.pairs: dict[tuple[int, int], PairRegistration] = {}
        self.table = TemporalBalanceTable()
        self.supply = SupplyLedger()
        self._next_id = 1
        self._seen_reports: set[Digest] = set()
        self._parked: dict[int, list[_Report]] = {}
        self._pending_legs: dict[frozenset, int] = {}
        self.suspension_log: list[tuple[int, str]] = []
        self.conservation_log: list[ConservationVerdict] = []

    # ------------------------------------------------------------------
    # enrollment and registration

    def enroll(self, public_key: object, limit: int, zone: str = "default",
               timestamp: int = 0) -> int:
        client_id = self._next_id
        self._next_id += 1
        self.registry[client_id] = RegisteredClient(
            client_id, public_key, ClientStatus.ACTIVE, limit, zone
        )
        self.table.start(client_id, timestamp, remarks="Initial Balance")
        return client_id

    def _require(self, client_id: int) -> RegisteredClient:
        client = self.registry.get(client_id)
        if client is None or client.status is ClientStatus.DISENROLLED:
            raise UnknownClient(f"client {client_id} is not enrolled")
        return client

    def _require_active(self, client_id: int) -> RegisteredClient:
        client = self._require(client_id)
        if client.status is ClientStatus.SUSPENDED:
            raise ClientSuspended(f"client {client_id} is suspended")
        return client

    def register_pair(self, a: int, b: int, consent_a: bool,
                      consent_b: bool) -> PairRegistration:
        self._require_active(a)
        self._require_active(b)
        key = (min(a, b), max(a, b))
        reg = self.pairs.setdefault(key, PairRegistration(key))
        if consent_a:
            reg.consents.add(a)
        if consent_b:
            reg.consents.add(b)
        return reg

    def pair_active(self, a: int, b: int) -> bool:
        key = (min(a, b), max(a, b))
        reg = self.pairs.get(key)
        if reg is None or not reg.active:
            return False
        return all(
            self.registry[c].status is ClientStatus.ACTIVE
            for c in key
            if c in self.registry
        )

    # ------------------------------------------------------------------
    # supply

    def issue(self, client_id: int, amount: int, timestamp: int,
              provenance: Optional[Digest] = None) -> IssuanceReceipt:
        self._require_active(client_id)
        if amount <= 0:
            raise NonPositiveAmount(f"issue amount must be positive, got {amount}")
        prev = self.table.open_row(client_id)
        new_balance = prev.valid_balance + amount
        self.table.advance(
            client_id,
            timestamp,
            new_balance,
            provenance if provenance is not None else prev.provenance_mhtr,
            remarks="Issued",
        )
        self.supply.issue(amount, timestamp)
        self._drain_parked(client_id)
        self._audit(timestamp)
        return IssuanceReceipt(client_id, amount, timestamp, new_balance)

    def redeem(self, client_id: int, amount: int, timestamp: int,
               provenance: Optional[Digest] = None) -> RedemptionReceipt:
        self._require_active(client_id)
        if amount <= 0:
            raise NonPositiveAmount(f"redeem amount must be positive, got {amount}")
        prev = self.table.open_row(client_id)
        if amount > prev.valid_balance:
            raise InsufficientBalance(
                f"redeem {amount} exceeds balance {prev.valid_balance}"
            )
        new_balance = prev.valid_balance - amount
        self.table.advance(
            client_id,
            timestamp,
            new_balance,
            provenance if provenance is not None else prev.provenance_mhtr,
            remarks="Redeemed",
        )
        self.supply.redeem(amount, timestamp)
        self._drain_parked(client_id)
        self._audit(timestamp)
        return RedemptionReceipt(client_id, amount, timestamp, new_balance)

    # ------------------------------------------------------------------
    # balance reports

    def report_balance(self, client_id: int, new_balance: int, mhtr: Digest,
                       prior_mhtr: Digest, peer_provenance: Digest,
                       timestamp: int) -> ReportOutcome:
        self._require_active(client_id)
        report = _Report(
            client_id, new_balance, mhtr, prior_mhtr, peer_provenance, timestamp
        )
        fp = report.fingerprint()
        if fp in self._seen_reports:
            return ReportOutcome("duplicate")
        open_row = self.table.open_row(client_id)
        if report.prior_mhtr == open_row.provenance_mhtr:
            self._seen_reports.add(fp)
            verdict = self._apply(report)
            verdict = self._drain_parked(client_id) or verdict
            return ReportOutcome("applied", verdict)
        if report.prior_mhtr in self.table.closed_provenances(client_id):
            raise StaleProvenance(
                f"client {client_id} reported from an already spent state"
            )
        self._seen_reports.add(fp)
        self._parked.setdefault(client_id, []).append(report)
        return ReportOutcome("parked")

    def _apply(self, report: _Report) -> Optional[ConservationVerdict]:
        self.table.advance(
            report.client_id,
            report.timestamp,
            report.new_balance,
            report.mhtr,
            remarks="Transaction",
        )
        leg = frozenset((report.prior_mhtr, report.peer_provenance))
        if leg in self._pending_legs:
            del self._pending_legs[leg]
            return self._audit(report.timestamp)
        self._pending_legs[leg] = report.client_id
        return None

    def _drain_parked(self, client_id: int) -> Optional[ConservationVerdict]:
        verdict = None
        queue = self._parked.get(client_id, [])
        progressed = True
        while progressed and queue:
            progressed = False
            open_row = self.table.open_row(client_id)
            for report in list(queue):
                if report.prior_mhtr == open_row.provenance_mhtr:
                    queue.remove(report)
                    verdict = self._apply(report) or verdict
                    progressed = True
                    break
        if not queue:
            self._parked.pop(client_id, None)
        return verdict

    def parked_count(self, client_id: Optional[int] = None) -> int:
        if client_id is None:
            return sum(len(q) for q in self._parked.values())
        return len(self._parked.get(client_id, []))

    def attest_mhtr(self, client_id: int) -> MHTRAttestation:
        """Sign the latest provenance root on file, for data clients."""
        row = self.table.open_row(client_id)
        unsigned = MHTRAttestation(client_id, row.provenance_mhtr, None)
        return MHTRAttestation(
            client_id, row.provenance_mhtr,
            self.keystore.sign(MANAGER_ID, unsigned.message()),
        )

    # ------------------------------------------------------------------
    # conservation

    def check_conservation(self, at: Optional[int] = None) -> ConservationVerdict:
        if at is None:
            actual = sum(row.valid_balance for row in self.table.open_rows())
            expected = self.supply.net
        else:
            actual = 0
            for client_id in self.registry:
                for row in self.table.rows:
                    if (row.client_id == client_id
                            and row.valid_from <= at < row.valid_to):
                        actual += row.valid_balance
                        break
            expected = self.supply.net_at(at)
        return ConservationVerdict(actual == expected, expected, actual, at)

    def _audit(self, timestamp: int) -> ConservationVerdict:
        verdict = self.check_conservation()
        self.conservation_log.append(verdict)
        return verdict

    # ------------------------------------------------------------------
    # suspension and reparation

    def suspend(self, client_id: int, cause: str) -> None:
        client = self._require(client_id)
        client.status = ClientStatus.SUSPENDED
        self.suspension_log.append((client_id, cause))

    def reinstate(self, client_id: int) -> None:
        self._require(client_id).status = ClientStatus.ACTIVE

    def repair(self, pair_key: tuple[int, int], pair_seq: int,
               executor: Callable[[tuple[int, int], int], ReparationRecord],
               ) -> ReparationRecord:
        """Reverse one committed transaction via a compensating transfer.

        The manager holds no transaction records, so the actual reversal
        is delegated: ``executor`` must locate the referenced record,
        run the reverse transfer through the normal commit path, and
        return what it did.  The manager then annotates both clients'
        balance rows.
        """
        record = executor(pair_key, pair_seq)
        if not isinstance(record, ReparationRecord):
            raise UnknownTransaction(
                f"no committed transaction {pair_seq} for pair {pair_key}"
            )
        note = f"Reparation of {pair_seq}"
        for client_id in pair_key:
            if client_id in self.table._open:
                row = self.table.open_row(client_id)
                row.remarks = (row.remarks + "; " + note).strip("; ")
        return record

    # ------------------------------------------------------------------
    # export

    def export_rows(self) -> str:
        """Delimiter-separated balance history in enrollment row order."""
        header = (
            "Transaction Time-stamp|Client ID|Valid Balance"
            "|Valid From|Valid To|Remarks|Provenance"
        )
        lines = [header]
        for row in self.table.rows:
            valid_to = "inf" if row.valid_to == FOREVER else str(row.valid_to)
            lines.append(
                f"{row.txn_timestamp}|{row.client_id}|{row.valid_balance}"
                f"|{row.valid_from}|{valid_to}|{row.remarks}"
                f"|{row.provenance_mhtr.hex()}"
            )
        return "\n".join(lines)
