"""Deterministic discrete-event simulation of the whole system.

Actors (currency clients, the treasury, the Currency Manager, the
Integrity Manager) are isolated state machines exchanging typed messages
through a single event queue ordered by (tick, insertion order).  With a
fixed seed the run is fully deterministic: same scenario, same log,
byte for byte.

The three-message transfer handshake travels the peer channel and is
always delivered next tick.  Asynchronous manager traffic (transaction
reports, balance reports, supply notices) goes through the configurable
delivery policy, which may delay or duplicate; clients keep retrying
unacknowledged reports with exponential backoff, so every report is
eventually processed even across manager partitions.

Fault injection covers the adversary catalogue: leaf tampering, double
spends, report replays, forged manager rows, client crashes, manager
partitions, and record omission in data-client queries.  Each fault maps
to one documented detection (an alert kind or a failed verdict).
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field, replace
from typing import Optional

from .client import (
    AbortMsg,
    AcceptMsg,
    BalanceReport,
    ClientNode,
    CommitMsg,
    ProposeMsg,
    RejectMsg,
    SupplyNotice,
    TREASURY_RESERVE,
    pair_of,
)
from .currency_manager import MANAGER_ID, CurrencyManager
from .data_client import authorize, query_transactions, verify_vo
from .errors import (
    DeltaMoneyError,
    StaleProvenance,
    StepLimitExceeded,
    UnknownTarget,
)
from .hashing import KeyStore
from .integrity_manager import (
    AlertKind,
    IntegrityManager,
    TransactionReport,
)

IM_SIGNER = 10_000
RETRY_BASE = 4
RETRY_MAX_ATTEMPTS = 40
BUSY_RETRY_DELAY = 2
BUSY_MAX_ATTEMPTS = 400


# ----------------------------------------------------------------------
# sim-internal messages


@dataclass(frozen=True)
class StartTransferCmd:
    payer: int
    payee: int
    amount: int
    attempts: int = 0


@dataclass(frozen=True)
class ReportEnvelope:
    env_id: int
    kind: str  # im | cm | supply
    payload: object
    reporter: int


@dataclass(frozen=True)
class ReportAck:
    env_id: int


@dataclass(frozen=True)
class RetryCmd:
    env_id: int
    interval: int


@dataclass(frozen=True)
class DeliveryPolicy:
    """How manager-bound messages travel; peers always get next-tick."""

    kind: str = "normal"  # normal | delay | duplicate | random
    delay: int = 0
    p_delay: float = 0.0
    max_delay: int = 0
    p_duplicate: float = 0.0

    def offsets(self, rng: random.Random) -> list[int]:
        if self.kind == "normal":
            return [1]
        if self.kind == "delay":
            return [1 + self.delay]
        if self.kind == "duplicate":
            return [1, 2]
        if self.kind == "random":
            base = 1
            if rng.random() < self.p_delay:
                base += rng.randint(1, max(1, self.max_delay))
            out = [base]
            if rng.random() < self.p_duplicate:
                out.append(base + rng.randint(1, max(1, self.max_delay)))
            return out
        raise ValueError(f"unknown delivery policy {self.kind}")


@dataclass
class SimulationLog:
    lines: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def text(self) -> str:
        return "\n".join(self.lines)

    @property
    def passed(self) -> bool:
        return not self.failures


def _junk(tag: str, size: int) -> bytes:
    out = b""
    counter = 0
    while len(out) < size:
        out += hashlib.sha256(f"{tag}:{counter}".encode()).digest()
        counter += 1
    return out[:size]


class Simulation:
    """Event loop, actor roster, fault injection, and scripted asserts."""

    def __init__(self, seed: int = 0, scheme: str = "stub",
                 default_limit: int = 2**32,
                 step_limit: int = 100_000) -> None:
        self.seed = seed
        self.rng = random.Random(seed)
        self.keystore = KeyStore(scheme)
        self.default_limit = default_limit
        self.step_limit = step_limit
        self.now = 0
        self.steps = 0
        self._seq = 0
        self._env_seq = 0
        self.queue: list = []
        self.log = SimulationLog()
        self.policy = DeliveryPolicy()
        self.cm = CurrencyManager(self.keystore)
        self.im = IntegrityManager(self.keystore, IM_SIGNER)
        self._im_alerts_seen = 0
        self.treasury = ClientNode(MANAGER_ID, self.keystore,
                                   transaction_limit=2**62,
                                   opening_reserve=TREASURY_RESERVE)
        self.clients: dict[int, ClientNode] = {MANAGER_ID: self.treasury}
        self.registered_pairs: set = set()
        self.crashed: set = set()
        self.alerts: list = []  # (kind name, subjects tuple, tick)
        self.partitions: list = []  # (start, end) manager unreachability
        self.unacked: dict[int, tuple] = {}  # env_id -> (target, envelope, attempts)
        self._seen_envelopes: set = set()  # manager-side transport dedup
        self.inflight_cmd: dict = {}  # (payer, pair) -> StartTransferCmd
        self.query_omissions: dict = {}  # (subject, pair) -> set of seqs
        self.last_verdict = None
        self.grids: list = []

    # ------------------------------------------------------------------
    # plumbing

    def emit(self, actor: str, event: str, details: str = "") -> None:
        self.log.lines.append(f"{self.now}|{actor}|{event}|{details}")

    def send(self, target: str, sender: str, message,
             policy: bool = False) -> None:
        offsets = self.policy.offsets(self.rng) if policy else [1]
        for offset in offsets:
            self._seq += 1
            heapq.heappush(
                self.queue, (self.now + offset, self._seq, target, sender, message)
            )

    def _partitioned(self, tick: int) -> bool:
        return any(start <= tick < end for start, end in self.partitions)

    def _client_actor(self, client_id: int) -> str:
        return f"client:{client_id}"

    def _new_alerts(self) -> None:
        while self._im_alerts_seen < len(self.im.alerts):
            alert = self.im.alerts[self._im_alerts_seen]
            self._im_alerts_seen += 1
            self.alerts.append((alert.kind.value, alert.subjects, alert.raised_at))
            self.emit(
                "im", "alert",
                f"kind={alert.kind.value} subjects={list(alert.subjects)} "
                f"evidence={alert.evidence}",
            )

    # ------------------------------------------------------------------
    # event loop

    def _advance_time_to(self, tick: int) -> None:
        while self.now < tick:
            self.now += 1
            for alert in self.im.check_deadlines(self.now):
                pass  # logged via _new_alerts below
            self._new_alerts()

    def run_until(self, target_tick: Optional[int]) -> None:
        """Process events up to target_tick; None means drain everything."""
        while self.queue:
            tick, _, target, sender, message = self.queue[0]
            if target_tick is not None and tick > target_tick:
                break
            heapq.heappop(self.queue)
            self._advance_time_to(tick)
            self.steps += 1
            if self.steps > self.step_limit:
                raise StepLimitExceeded(
                    f"exceeded {self.step_limit} events at tick {self.now}"
                )
            self._deliver(target, sender, message)
            self._new_alerts()
        if target_tick is not None:
            self._advance_time_to(target_tick)

    def advance(self, ticks: int) -> None:
        self.run_until(self.now + ticks)

    def quiesce(self) -> None:
        self.run_until(None)
        self.emit("sim", "quiesce", f"steps={self.steps}")

    # ------------------------------------------------------------------
    # delivery and actors

    def _deliver(self, target: str, sender: str, message) -> None:
        managers = {"cm", "im"}
        if (target in managers or sender in managers) and self._partitioned(self.now):
            self.emit("net", "drop", f"target={target} reason=partition")
            return
        if target == "cm":
            self._handle_cm(sender, message)
        elif target == "im":
            self._handle_im(sender, message)
        elif target.startswith("client:"):
            client_id = int(target.split(":", 1)[1])
            if client_id in self.crashed:
                self.emit("net", "drop", f"target={target} reason=crashed")
                return
            self._handle_client(client_id, sender, message)
        else:
            raise UnknownTarget(f"no actor {target}")

    # -- client actor ---------------------------------------------------

    def _handle_client(self, client_id: int, sender: str, message) -> None:
        node = self.clients[client_id]
        actor = self._client_actor(client_id)
        if isinstance(message, StartTransferCmd):
            self._start_transfer(node, actor, message)
        elif isinstance(message, ProposeMsg):
            try:
                reply = node.receive_propose(message, self.now)
            except DeltaMoneyError as exc:
                key = pair_of(message.proposal.payer_id, message.proposal.payee_id)
                self.emit(actor, "refuse", f"pair={key} reason={exc}")
                reply = RejectMsg(key, message.proposal.pair_seq,
                                  type(exc).__name__)
            if isinstance(reply, RejectMsg):
                self.emit(actor, "reject",
                          f"pair={reply.pair_key} reason={reply.reason}")
            self.send(sender, actor, reply)
        elif isinstance(message, AcceptMsg):
            result = node.receive_accept(message, self.now)
            key = pair_of(message.record.payer_id, message.record.payee_id)
            if isinstance(result, CommitMsg):
                self.emit(actor, "commit",
                          f"pair={key} seq={result.pair_seq} "
                          f"root={result.payer_root.hex()[:16]}")
                self.inflight_cmd.pop((client_id, key), None)
            else:
                self.emit(actor, "abort",
                          f"pair={key} seq={result.pair_seq} "
                          f"reason={result.reason}")
                self.inflight_cmd.pop((client_id, key), None)
            self.send(sender, actor, result)
            self._flush_reports(node, actor)
        elif isinstance(message, CommitMsg):
            node.receive_commit(message, self.now)
            self.emit(actor, "commit",
                      f"pair={message.pair_key} seq={message.pair_seq} "
                      f"root={message.payer_root.hex()[:16]}")
            self._flush_reports(node, actor)
        elif isinstance(message, AbortMsg):
            node.receive_abort(message, self.now)
            self.emit(actor, "abort",
                      f"pair={message.pair_key} seq={message.pair_seq} "
                      f"reason={message.reason}")
            self._flush_reports(node, actor)
        elif isinstance(message, RejectMsg):
            node.receive_reject(message, self.now)
            cmd = self.inflight_cmd.pop((client_id, message.pair_key), None)
            if cmd is not None and message.reason == "busy":
                self._requeue_busy(actor, cmd)
        elif isinstance(message, RetryCmd):
            self._retry_report(actor, message)
        elif isinstance(message, ReportAck):
            self.unacked.pop(message.env_id, None)
        else:
            raise UnknownTarget(f"unhandled message {type(message).__name__}")

    def _start_transfer(self, node: ClientNode, actor: str,
                        cmd: StartTransferCmd) -> None:
        try:
            msg = node.start_transfer(cmd.payee, cmd.amount, self.now)
        except DeltaMoneyError as exc:
            self.emit(actor, "refuse",
                      f"payee={cmd.payee} amount={cmd.amount} reason={exc}")
            return
        if msg is None:
            self._requeue_busy(actor, cmd)
            return
        key = pair_of(cmd.payer, cmd.payee)
        self.inflight_cmd[(cmd.payer, key)] = cmd
        self.emit(actor, "propose",
                  f"pair={key} seq={msg.proposal.pair_seq} amount={cmd.amount}")
        self.send(self._client_actor(cmd.payee), actor, msg)

    def _requeue_busy(self, actor: str, cmd: StartTransferCmd) -> None:
        if cmd.attempts >= BUSY_MAX_ATTEMPTS:
            self.emit(actor, "give-up",
                      f"payee={cmd.payee} amount={cmd.amount} reason=busy")
            return
        retry = replace(cmd, attempts=cmd.attempts + 1)
        self._seq += 1
        heapq.heappush(
            self.queue,
            (self.now + BUSY_RETRY_DELAY, self._seq,
             self._client_actor(cmd.payer), actor, retry),
        )

    def _flush_reports(self, node: ClientNode, actor: str) -> None:
        for kind, payload in node.drain_reports():
            self._env_seq += 1
            envelope = ReportEnvelope(self._env_seq, kind, payload, node.id)
            target = "im" if kind == "im" else "cm"
            self.unacked[envelope.env_id] = (target, envelope, 0)
            self.send(target, actor, envelope, policy=True)
            self._seq += 1
            heapq.heappush(
                self.queue,
                (self.now + RETRY_BASE, self._seq, actor, actor,
                 RetryCmd(envelope.env_id, RETRY_BASE)),
            )

    def _retry_report(self, actor: str, cmd: RetryCmd) -> None:
        entry = self.unacked.get(cmd.env_id)
        if entry is None:
            return
        target, envelope, attempts = entry
        if attempts >= RETRY_MAX_ATTEMPTS:
            self.emit(actor, "give-up", f"report={envelope.env_id}")
            del self.unacked[cmd.env_id]
            return
        self.unacked[cmd.env_id] = (target, envelope, attempts + 1)
        self.send(target, actor, envelope, policy=True)
        interval = min(cmd.interval * 2, 64)
        self._seq += 1
        heapq.heappush(
            self.queue,
            (self.now + interval, self._seq, actor, actor,
             RetryCmd(cmd.env_id, interval)),
        )

    # -- manager actors ---------------------------------------------------

    def _handle_cm(self, sender: str, message) -> None:
        if isinstance(message, ReportEnvelope):
            if message.env_id in self._seen_envelopes:
                self.send(sender, "cm", ReportAck(message.env_id))
                return
            self._seen_envelopes.add(message.env_id)
            if message.kind == "supply":
                notice: SupplyNotice = message.payload
                if notice.issued:
                    self.cm.issue(notice.client_id, notice.amount,
                                  notice.timestamp, provenance=notice.new_mhtr)
                    self.emit("cm", "issued",
                              f"client={notice.client_id} amount={notice.amount}")
                else:
                    self.cm.redeem(notice.client_id, notice.amount,
                                   notice.timestamp, provenance=notice.new_mhtr)
                    self.emit("cm", "redeemed",
                              f"client={notice.client_id} amount={notice.amount}")
            else:
                report: BalanceReport = message.payload
                try:
                    outcome = self.cm.report_balance(
                        report.client_id, report.new_balance, report.mhtr,
                        report.prior_mhtr, report.peer_provenance,
                        report.timestamp,
                    )
                    self.emit("cm", "balance-report",
                              f"client={report.client_id} "
                              f"balance={report.new_balance} "
                              f"status={outcome.status}")
                except StaleProvenance as exc:
                    self.alerts.append(
                        (AlertKind.STALE_PROVENANCE.value,
                         (report.client_id,), self.now)
                    )
                    self.emit("cm", "alert",
                              f"kind=StaleProvenance "
                              f"subjects=[{report.client_id}] evidence={exc}")
            self.send(sender, "cm", ReportAck(message.env_id))
        else:
            raise UnknownTarget(f"cm cannot handle {type(message).__name__}")

    def _handle_im(self, sender: str, message) -> None:
        if isinstance(message, ReportEnvelope):
            if message.env_id in self._seen_envelopes:
                self.send(sender, "im", ReportAck(message.env_id))
                return
            self._seen_envelopes.add(message.env_id)
            report: TransactionReport = message.payload
            outcome = self.im.ingest_report(report, now=self.now)
            self.emit("im", "txn-report",
                      f"pair={report.pair_key} seq={report.pair_seq} "
                      f"reporter={report.reporter} status={outcome.status}")
            self.send(sender, "im", ReportAck(message.env_id))
        else:
            raise UnknownTarget(f"im cannot handle {type(message).__name__}")

    # ------------------------------------------------------------------
    # scripted operations

    def enroll(self, client_id: int, limit: Optional[int] = None) -> None:
        limit = self.default_limit if limit is None else limit
        assigned = self.cm.enroll(b"pk", limit, timestamp=self.now)
        if assigned != client_id:
            raise UnknownTarget(
                f"enrollment order mismatch: wanted {client_id}, got {assigned}"
            )
        node = ClientNode(client_id, self.keystore, transaction_limit=limit)
        self.clients[client_id] = node
        self.im.note_client(client_id)
        self.treasury.register_peer(client_id)
        node.register_peer(MANAGER_ID)
        self.registered_pairs.add(pair_of(MANAGER_ID, client_id))
        self.emit("cm", "enroll", f"client={client_id} limit={limit}")

    def register(self, a: int, b: int) -> None:
        self.cm.register_pair(a, b, consent_a=True, consent_b=True)
        self.im.note_pair(a, b)
        self.clients[a].register_peer(b)
        self.clients[b].register_peer(a)
        self.registered_pairs.add(pair_of(a, b))
        self.emit("cm", "register", f"pair={pair_of(a, b)}")

    def issue(self, client_id: int, amount: int) -> None:
        self._command(StartTransferCmd(MANAGER_ID, client_id, amount))
        self.emit("sim", "issue-cmd", f"client={client_id} amount={amount}")

    def redeem(self, client_id: int, amount: int) -> None:
        self._command(StartTransferCmd(client_id, MANAGER_ID, amount))
        self.emit("sim", "redeem-cmd", f"client={client_id} amount={amount}")

    def transfer(self, payer: int, payee: int, amount: int) -> None:
        self._command(StartTransferCmd(payer, payee, amount))
        self.emit("sim", "transfer-cmd",
                  f"payer={payer} payee={payee} amount={amount}")

    def _command(self, cmd: StartTransferCmd) -> None:
        self._seq += 1
        heapq.heappush(
            self.queue,
            (self.now + 1, self._seq, self._client_actor(cmd.payer), "sim", cmd),
        )

    def capture(self, epoch: int):
        mhtrs = {
            cid: node.mht.root()
            for cid, node in sorted(self.clients.items())
            if cid != MANAGER_ID and cid not in self.crashed
        }
        pttrs = {}
        for key in sorted(self.registered_pairs):
            if MANAGER_ID in key:
                continue
            holder = self.clients[key[0]]
            pttrs[key] = holder.ptts[key].root()
        grid = self.im.capture_grid(epoch, mhtrs, pttrs)
        self.grids.append(grid)
        self.emit("im", "capture",
                  f"epoch={epoch} clients={list(grid.client_index)} "
                  f"grid={grid.grid_hash.hex()[:16]}")
        return grid

    def recover(self, client_id: int) -> None:
        node = self.clients[client_id]
        partners = sorted(
            other
            for key in self.registered_pairs
            if client_id in key
            for other in key
            if other != client_id and other not in self.crashed
        )
        data = [self.clients[p].export_recovery_data(client_id) for p in partners]
        node.recover_transactions(
            data,
            lambda key: (self.im.latest_validated.get(key) or (None, None))[1],
        )
        self.crashed.discard(client_id)
        self.emit(self._client_actor(client_id), "recover",
                  f"partners={partners} balance={node.balance} "
                  f"mhtr={node.mht.root().hex()[:16]}")

    def query(self, subject: int, pair, seq_lo: int, seq_hi: int) -> None:
        key = pair_of(*pair)
        grant = authorize(9000, subject, [key], enrolled=set(self.clients))
        attestation = self.im.attest_pttr(key)
        omit = frozenset(self.query_omissions.get((subject, key), ()))
        records, vo = query_transactions(
            grant, key, seq_lo, seq_hi, self.clients[subject], attestation,
            omit=omit,
        )
        latest = (self.im.latest_validated.get(key) or (None, None))[1]
        verdict = verify_vo(vo, self.keystore, latest)
        self.last_verdict = verdict
        self.emit("dataclient", "query",
                  f"subject={subject} pair={key} range=[{seq_lo},{seq_hi}] "
                  f"returned={len(records)} correct={verdict.correct} "
                  f"complete={verdict.complete} fresh={verdict.fresh}")

    # ------------------------------------------------------------------
    # fault injection

    def inject(self, kind: str, *args) -> None:
        handler = {
            "tamper-leaf": self._fault_tamper_leaf,
            "double-spend": self._fault_double_spend,
            "replay-report": self._fault_replay_report,
            "forge-balance": self._fault_forge_balance,
            "crash-client": self._fault_crash_client,
            "partition-manager": self._fault_partition,
            "omit-record": self._fault_omit_record,
        }.get(kind)
        if handler is None:
            raise UnknownTarget(f"unknown fault kind {kind}")
        handler(*args)
        self.emit("sim", "inject", f"kind={kind} args={list(args)}")

    def _fault_tamper_leaf(self, client_id: int, pair, index: int) -> None:
        key = pair_of(*pair)
        node = self.clients.get(client_id)
        if node is None or key not in node.ptts:
            raise UnknownTarget(f"client {client_id} has no pair {key}")
        if not 0 <= index < len(node.ptts[key].records):
            raise UnknownTarget(f"pair {key} has no leaf {index}")
        node.ptts[key].tamper_leaf(
            index, _junk(f"tamper:{client_id}:{key}:{index}", 232)
        )

    def _fault_double_spend(self, client_id: int, amount: int) -> None:
        if client_id not in self.clients:
            raise UnknownTarget(f"no client {client_id}")
        closed = self.cm.table.closed_provenances(client_id)
        if not closed:
            raise UnknownTarget(
                f"client {client_id} has no spent state to double spend from"
            )
        node = self.clients[client_id]
        forged = BalanceReport(
            client_id,
            node.balance + amount,
            _junk(f"ds-mhtr:{client_id}:{self.now}", 32),
            sorted(closed)[-1],
            _junk(f"ds-peer:{client_id}:{self.now}", 32),
            self.now,
        )
        self._env_seq += 1
        self.send("cm", self._client_actor(client_id),
                  ReportEnvelope(self._env_seq, "cm", forged, client_id))

    def _fault_replay_report(self, pair) -> None:
        key = pair_of(*pair)
        latest = self.im.latest_validated.get(key)
        if latest is None:
            raise UnknownTarget(f"nothing validated yet for pair {key}")
        seq, root = latest
        forged = TransactionReport(
            key[0], key, seq, root,
            _junk(f"replay:{key}:{self.now}", 32), self.now,
        )
        self._env_seq += 1
        self.send("im", self._client_actor(key[0]),
                  ReportEnvelope(self._env_seq, "im", forged, key[0]))

    def _fault_forge_balance(self, client_id: int, delta: int) -> None:
        row = self.cm.table.open_row(client_id)
        row.valid_balance += delta

    def _fault_crash_client(self, client_id: int) -> None:
        if client_id not in self.clients or client_id == MANAGER_ID:
            raise UnknownTarget(f"cannot crash {client_id}")
        self.clients[client_id].wipe()
        self.crashed.add(client_id)
        for env_id in [e for e, (_, env, _) in self.unacked.items()
                       if env.reporter == client_id]:
            del self.unacked[env_id]
        self.emit(self._client_actor(client_id), "crash", "")

    def _fault_partition(self, ticks: int) -> None:
        self.partitions.append((self.now, self.now + ticks))

    def _fault_omit_record(self, subject: int, pair, seq: int) -> None:
        key = pair_of(*pair)
        self.query_omissions.setdefault((subject, key), set()).add(seq)

    # ------------------------------------------------------------------
    # assertions

    def check(self, name: str, ok: bool, details: str) -> None:
        outcome = "pass" if ok else "FAIL"
        self.emit("assert", name, f"{outcome} {details}")
        if not ok:
            self.log.failures.append(f"{name}: {details}")

    def assert_balance(self, client_id: int, amount: int) -> None:
        actual = self.clients[client_id].balance
        self.check("balance", actual == amount,
                   f"client={client_id} want={amount} got={actual}")

    def assert_conservation(self, want_holds: bool) -> None:
        verdict = self.cm.check_conservation()
        self.check(
            "conservation", verdict.holds == want_holds,
            f"want={'holds' if want_holds else 'violated'} "
            f"expected={verdict.expected} actual={verdict.actual}",
        )

    def assert_alert(self, kind: str, count: int) -> None:
        actual = sum(1 for k, _, _ in self.alerts if k == kind)
        self.check("alert", actual == count,
                   f"kind={kind} want={count} got={actual}")

    def assert_no_alerts(self) -> None:
        self.check("no-alerts", not self.alerts, f"got={len(self.alerts)}")

    def assert_verdict(self, correct: bool, complete: bool,
                       fresh: bool) -> None:
        v = self.last_verdict
        ok = (v is not None and (v.correct, v.complete, v.fresh)
              == (correct, complete, fresh))
        got = None if v is None else (v.correct, v.complete, v.fresh)
        self.check("verdict", ok,
                   f"want=({correct},{complete},{fresh}) got={got}")
