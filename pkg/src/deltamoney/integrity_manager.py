"""Integrity Manager: root cross-validation and system-state grids.

Every committed transaction produces one report from each peer carrying
the new pair-tree root.  A report is held until its counterpart arrives;
matching roots validate the transaction, differing roots raise an alert
naming both peers, and a counterpart that stays silent past the
reporting deadline is alerted too.  Validated roots are archived and can
be attested to data clients.  Aborted exchanges send a separate report
flavor: their roots are compared the same way but never validated, so a
retried sequence number stays clean.

The manager also snapshots the whole system as a Merkle Hash Grid:
client balance-tree roots on the diagonal, pair-tree roots above it,
row and column hashes over the cells, and a signed hash over both hash
lists.  Because every cell feeds exactly one row hash and one column
hash, a single changed cell is localized by intersecting the mismatched
row with the mismatched column.

No balance ever enters this module: it sees digests only.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .encoding import u64
from .errors import (
    BadSignature,
    NotQuiescent,
    UnknownReporter,
    UnregisteredPair,
)
from .hashing import EMPTY_CELL_DIGEST, SHA256, Digest, KeyStore, Signature

DEFAULT_REPORTING_DEADLINE = 10


class AlertKind(Enum):
    ROOT_MISMATCH = "RootMismatch"
    MISSING_COUNTERPART_REPORT = "MissingCounterpartReport"
    BALANCE_CROSS_CHECK_FAILURE = "BalanceCrossCheckFailure"
    STALE_PROVENANCE = "StaleProvenance"
    CONSERVATION_VIOLATION = "ConservationViolation"
    GRID_MISMATCH = "GridMismatch"


@dataclass(frozen=True)
class Alert:
    kind: AlertKind
    subjects: tuple[int, ...]
    evidence: str
    raised_at: int


@dataclass(frozen=True)
class TransactionReport:
    reporter: int
    pair_key: tuple[int, int]
    pair_seq: int
    pttr: Digest
    record_digest: Digest
    timestamp: int
    aborted: bool = False

    def fingerprint(self) -> Digest:
        return hashlib.sha256(
            u64(self.reporter)
            + u64(self.pair_key[0])
            + u64(self.pair_key[1])
            + u64(self.pair_seq)
            + self.pttr
            + self.record_digest
            + u64(self.timestamp)
            + (b"\x01" if self.aborted else b"\x00")
        ).digest()


@dataclass(frozen=True)
class ValidationOutcome:
    status: str  # held | validated | mismatch | replay | duplicate | aborted
    alert: Optional[Alert] = None


@dataclass(frozen=True)
class MerkleHashGrid:
    epoch: int
    client_index: tuple[int, ...]
    cells: tuple[tuple[Digest, ...], ...]
    row_hashes: tuple[Digest, ...]
    column_hashes: tuple[Digest, ...]
    grid_hash: Digest
    signature: Signature


@dataclass(frozen=True)
class GridVerdict:
    matches: bool
    mismatched_cells: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class PTTRAttestation:
    """A signed statement: this root is the validated one for (pair, seq)."""

    pair_key: tuple[int, int]
    pair_seq: int
    root: Digest
    signature: Signature

    def message(self) -> bytes:
        return (
            u64(self.pair_key[0])
            + u64(self.pair_key[1])
            + u64(self.pair_seq)
            + self.root
        )


@dataclass
class _PendingPair:
    reports: dict[int, TransactionReport] = field(default_factory=dict)
    first_seen: Optional[int] = None
    deadline_alerted: bool = False


def _grid_hashes(cells, scheme=SHA256):
    n = len(cells)
    rows = tuple(scheme(b"".join(cells[i][j] for j in range(n))) for i in range(n))
    cols = tuple(scheme(b"".join(cells[i][j] for i in range(n))) for j in range(n))
    grid = scheme(b"".join(rows) + b"".join(cols))
    return rows, cols, grid


class IntegrityManager:
    """Single logical actor ingesting reports and capturing grids."""

    def __init__(self, keystore: KeyStore, signer_id: int,
                 store_full_records: bool = False,
                 reporting_deadline: int = DEFAULT_REPORTING_DEADLINE) -> None:
        self.keystore = keystore
        self.signer_id = signer_id
        if not keystore.has(signer_id):
            keystore.generate(signer_id)
        self.store_full_records = store_full_records
        self.reporting_deadline = reporting_deadline
        self.known_clients: set[int] = set()
        self.known_pairs: set[tuple[int, int]] = set()
        self.alerts: list[Alert] = []
        self._seen_reports: set[Digest] = set()
        self._pending: dict[tuple, _PendingPair] = {}
        self._pending_aborts: dict[tuple, dict[int, TransactionReport]] = {}
        self._validated: dict[tuple, TransactionReport] = {}
        self.latest_validated: dict[tuple[int, int], tuple[int, Digest]] = {}
        self.archived_epochs: dict[tuple[int, int], list[tuple[int, Digest]]] = {}
        self.record_store: dict[Digest, Optional[bytes]] = {}
        self.grids: list[MerkleHashGrid] = []

    # ------------------------------------------------------------------
    # roster

    def note_client(self, client_id: int) -> None:
        self.known_clients.add(client_id)

    def note_pair(self, a: int, b: int) -> None:
        self.known_pairs.add((min(a, b), max(a, b)))

    # ------------------------------------------------------------------
    # report ingestion

    def _raise_alert(self, kind: AlertKind, subjects, evidence: str,
                     at: int) -> Alert:
        alert = Alert(kind, tuple(subjects), evidence, at)
        self.alerts.append(alert)
        return alert

    def ingest_report(self, report: TransactionReport,
                      now: Optional[int] = None) -> ValidationOutcome:
        now = report.timestamp if now is None else now
        if report.reporter not in self.known_clients:
            raise UnknownReporter(f"client {report.reporter} is not enrolled")
        if report.pair_key not in self.known_pairs:
            raise UnregisteredPair(f"pair {report.pair_key} is not registered")
        if report.reporter not in report.pair_key:
            raise UnknownReporter(
                f"client {report.reporter} is not a member of {report.pair_key}"
            )
        fp = report.fingerprint()
        if fp in self._seen_reports:
            return ValidationOutcome("duplicate")
        self._seen_reports.add(fp)

        key = (report.pair_key, report.pair_seq)
        if report.aborted:
            return self._ingest_abort(key, report, now)
        if key in self._validated:
            alert = self._raise_alert(
                AlertKind.ROOT_MISMATCH,
                report.pair_key,
                f"replay: pair {report.pair_key} seq {report.pair_seq} "
                f"re-reported by {report.reporter} after validation",
                now,
            )
            return ValidationOutcome("replay", alert)

        pending = self._pending.setdefault(key, _PendingPair())
        if pending.first_seen is None:
            pending.first_seen = now
        pending.reports[report.reporter] = report
        if len(pending.reports) < 2:
            return ValidationOutcome("held")

        a, b = report.pair_key
        left, right = pending.reports[a], pending.reports[b]
        del self._pending[key]
        if left.pttr == right.pttr and left.record_digest == right.record_digest:
            self._validated[key] = report
            # reports may cross on the wire: keep the highest sequence, not
            # the most recently validated one
            current = self.latest_validated.get(report.pair_key)
            if current is None or report.pair_seq > current[0]:
                self.latest_validated[report.pair_key] = (
                    report.pair_seq, report.pttr,
                )
            return ValidationOutcome("validated")
        alert = self._raise_alert(
            AlertKind.ROOT_MISMATCH,
            report.pair_key,
            f"pair {report.pair_key} seq {report.pair_seq}: "
            f"{a} says {left.pttr.hex()[:16]}, {b} says {right.pttr.hex()[:16]}",
            now,
        )
        return ValidationOutcome("mismatch", alert)

    def _ingest_abort(self, key, report: TransactionReport,
                      now: int) -> ValidationOutcome:
        """Compare the divergent roots of an aborted exchange.

        Nothing is ever validated here: the peers rolled the leaf back,
        so a later retry of the same sequence number must still be able
        to validate normally.  Matching roots mean the abort was a
        transport artifact and the reports are simply discarded.
        """
        held = self._pending_aborts.setdefault(key, {})
        held[report.reporter] = report
        if len(held) < 2:
            return ValidationOutcome("held")
        a, b = report.pair_key
        left, right = held[a], held[b]
        del self._pending_aborts[key]
        if left.pttr == right.pttr:
            return ValidationOutcome("aborted")
        alert = self._raise_alert(
            AlertKind.ROOT_MISMATCH,
            report.pair_key,
            f"aborted exchange for pair {report.pair_key} seq "
            f"{report.pair_seq}: {a} says {left.pttr.hex()[:16]}, "
            f"{b} says {right.pttr.hex()[:16]}",
            now,
        )
        return ValidationOutcome("mismatch", alert)

    def check_deadlines(self, now: int) -> list[Alert]:
        raised = []
        for (pair_key, pair_seq), pending in self._pending.items():
            if pending.deadline_alerted or pending.first_seen is None:
                continue
            if now - pending.first_seen > self.reporting_deadline:
                silent = [c for c in pair_key if c not in pending.reports]
                alert = self._raise_alert(
                    AlertKind.MISSING_COUNTERPART_REPORT,
                    silent or pair_key,
                    f"pair {pair_key} seq {pair_seq}: no counterpart report "
                    f"within {self.reporting_deadline} ticks",
                    now,
                )
                pending.deadline_alerted = True
                raised.append(alert)
        return raised

    def cross_check_balance(self, client: int, mhtr_from_client: Digest,
                            mhtr_from_manager: Digest,
                            now: int = 0) -> ValidationOutcome:
        if mhtr_from_client == mhtr_from_manager:
            return ValidationOutcome("validated")
        alert = self._raise_alert(
            AlertKind.BALANCE_CROSS_CHECK_FAILURE,
            (client,),
            f"client {client}: client root {mhtr_from_client.hex()[:16]} "
            f"!= manager root {mhtr_from_manager.hex()[:16]}",
            now,
        )
        return ValidationOutcome("mismatch", alert)

    # ------------------------------------------------------------------
    # archives

    def archive(self, pair_key: tuple[int, int], epoch: int,
                root: Digest) -> None:
        self.archived_epochs.setdefault(pair_key, []).append((epoch, root))

    def archived(self, pair_key: tuple[int, int]) -> list[tuple[int, Digest]]:
        return list(self.archived_epochs.get(pair_key, []))

    def store_record(self, record_digest: Digest,
                     full_record: Optional[bytes] = None) -> None:
        if self.store_full_records and full_record is not None:
            self.record_store[record_digest] = full_record
        else:
            self.record_store[record_digest] = None

    def validated_root(self, pair_key: tuple[int, int],
                       pair_seq: int) -> Optional[Digest]:
        report = self._validated.get((pair_key, pair_seq))
        return None if report is None else report.pttr

    def attest_pttr(self, pair_key: tuple[int, int]) -> Optional[PTTRAttestation]:
        """Sign the latest validated root for a pair, for data clients."""
        latest = self.latest_validated.get(pair_key)
        if latest is None:
            return None
        seq, root = latest
        unsigned = PTTRAttestation(pair_key, seq, root, None)
        return PTTRAttestation(
            pair_key, seq, root,
            self.keystore.sign(self.signer_id, unsigned.message()),
        )

    # ------------------------------------------------------------------
    # merkle hash grid

    def capture_grid(self, epoch: int, mhtrs: dict[int, Digest],
                     pttrs: dict[tuple[int, int], Digest],
                     quiescent: bool = True) -> MerkleHashGrid:
        if not quiescent:
            raise NotQuiescent("grid capture requires a quiet period")
        if not mhtrs:
            raise ValueError("a grid needs at least one client")
        index = tuple(sorted(mhtrs))  # ids are assigned in enrollment order
        n = len(index)
        cells = []
        for i in range(n):
            row = []
            for j in range(n):
                if i == j:
                    row.append(mhtrs[index[i]])
                elif i < j:
                    row.append(pttrs.get((index[i], index[j]), EMPTY_CELL_DIGEST))
                else:
                    row.append(EMPTY_CELL_DIGEST)
            cells.append(tuple(row))
        cells = tuple(cells)
        rows, cols, grid_hash = _grid_hashes(cells)
        grid = MerkleHashGrid(
            epoch, index, cells, rows, cols, grid_hash,
            self.keystore.sign(self.signer_id, grid_hash),
        )
        self.grids.append(grid)
        return grid

    def verify_grid(self, grid: MerkleHashGrid, mhtrs: dict[int, Digest],
                    pttrs: dict[tuple[int, int], Digest]) -> GridVerdict:
        rows, cols, grid_hash = _grid_hashes(grid.cells)
        if (rows, cols, grid_hash) != (grid.row_hashes, grid.column_hashes,
                                       grid.grid_hash):
            raise BadSignature("grid hashes do not recompute from its cells")
        if not self.keystore.verify(grid.signature, grid.grid_hash):
            raise BadSignature("grid signature does not verify")
        current = self.capture_grid(grid.epoch, mhtrs, pttrs)
        self.grids.pop()  # verification capture is not a new snapshot
        if current.client_index != grid.client_index:
            raise ValueError("grid covers a different client roster")
        if current.grid_hash == grid.grid_hash:
            return GridVerdict(True)
        bad_rows = [i for i, h in enumerate(current.row_hashes)
                    if h != grid.row_hashes[i]]
        bad_cols = [j for j, h in enumerate(current.column_hashes)
                    if h != grid.column_hashes[j]]
        cells = tuple(
            (i, j)
            for i in bad_rows
            for j in bad_cols
            if current.cells[i][j] != grid.cells[i][j]
        )
        return GridVerdict(False, cells)


# ----------------------------------------------------------------------
# textual grid format


def export_grid(grid: MerkleHashGrid) -> str:
    def cell(d: Digest) -> str:
        return "-" if d == EMPTY_CELL_DIGEST else d.hex()

    lines = [
        f"epoch|{grid.epoch}",
        "clients|" + ",".join(str(c) for c in grid.client_index),
    ]
    for row in grid.cells:
        lines.append("cell|" + "|".join(cell(d) for d in row))
    lines.append("rowhash|" + "|".join(h.hex() for h in grid.row_hashes))
    lines.append("colhash|" + "|".join(h.hex() for h in grid.column_hashes))
    lines.append(f"gridhash|{grid.grid_hash.hex()}")
    lines.append(
        f"signature|{grid.signature.signer_id}|{grid.signature.bytes.hex()}"
    )
    return "\n".join(lines) + "\n"


def parse_grid(text: str) -> MerkleHashGrid:
    epoch = None
    clients: tuple[int, ...] = ()
    cells = []
    rows = cols = ()
    grid_hash = b""
    signature = None
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("|")
        tag = parts[0]
        if tag == "epoch":
            epoch = int(parts[1])
        elif tag == "clients":
            clients = tuple(int(c) for c in parts[1].split(",") if c)
        elif tag == "cell":
            cells.append(tuple(
                EMPTY_CELL_DIGEST if p == "-" else bytes.fromhex(p)
                for p in parts[1:]
            ))
        elif tag == "rowhash":
            rows = tuple(bytes.fromhex(p) for p in parts[1:])
        elif tag == "colhash":
            cols = tuple(bytes.fromhex(p) for p in parts[1:])
        elif tag == "gridhash":
            grid_hash = bytes.fromhex(parts[1])
        elif tag == "signature":
            signature = Signature(bytes.fromhex(parts[2]), int(parts[1]))
        else:
            raise ValueError(f"unknown grid line tag {tag!r}")
    if epoch is None or signature is None or not cells:
        raise ValueError("incomplete grid file")
    return MerkleHashGrid(
        epoch, clients, tuple(cells), rows, cols, grid_hash, signature
    )
