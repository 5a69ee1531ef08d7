import hashlib

import pytest

from deltamoney.currency_manager import (
    ClientStatus,
    CurrencyManager,
    ReparationRecord,
    TemporalBalanceTable,
)
from deltamoney.encoding import FOREVER
from deltamoney.errors import (
    ClientSuspended,
    InsufficientBalance,
    NonPositiveAmount,
    StaleProvenance,
    UnknownClient,
    UnknownTransaction,
)
from deltamoney.hashing import EMPTY_TREE_DIGEST


def digest(tag):
    return hashlib.sha256(tag.encode()).digest()


def manager_with_two_clients():
    cm = CurrencyManager()
    c1 = cm.enroll(b"pk1", 10_000, "zone-a", timestamp=1)
    c2 = cm.enroll(b"pk2", 10_000, "zone-a", timestamp=2)
    return cm, c1, c2


def report_transfer(cm, payer, payee, amount, t, payer_prior, payee_prior,
                    payer_new, payee_new, payer_bal, payee_bal):
    """Deliver both legs of a transfer to the manager."""
    out1 = cm.report_balance(payer, payer_bal, payer_new,
                             prior_mhtr=payer_prior,
                             peer_provenance=payee_prior, timestamp=t)
    out2 = cm.report_balance(payee, payee_bal, payee_new,
                             prior_mhtr=payee_prior,
                             peer_provenance=payer_prior, timestamp=t)
    return out1, out2


def test_enrollment_ids_unique_and_active():
    cm, c1, c2 = manager_with_two_clients()
    assert c1 != c2
    assert cm.registry[c1].status is ClientStatus.ACTIVE
    assert cm.registry[c1].transaction_limit == 10_000
    verdict = cm.check_conservation()
    assert verdict.holds and verdict.actual == 0


def test_register_pair_needs_both_consents():
    cm, c1, c2 = manager_with_two_clients()
    reg = cm.register_pair(c1, c2, consent_a=True, consent_b=False)
    assert not reg.active
    assert not cm.pair_active(c1, c2)
    reg = cm.register_pair(c1, c2, consent_a=False, consent_b=True)
    assert reg.active
    assert cm.pair_active(c1, c2)


def test_register_pair_guards():
    cm, c1, c2 = manager_with_two_clients()
    with pytest.raises(UnknownClient):
        cm.register_pair(c1, 99, True, True)
    cm.suspend(c2, "test")
    with pytest.raises(ClientSuspended):
        cm.register_pair(c1, c2, True, True)
    assert not cm.pair_active(c1, c2)


def test_issue_matches_table_rows():
    cm, c1, c2 = manager_with_two_clients()
    cm.issue(c1, 1000, timestamp=1, provenance=digest("m1"))
    cm.issue(c2, 2000, timestamp=2, provenance=digest("m2"))
    open_rows = {r.client_id: r for r in cm.table.open_rows()}
    assert open_rows[c1].valid_balance == 1000
    assert open_rows[c2].valid_balance == 2000
    assert open_rows[c2].valid_to == FOREVER
    verdict = cm.check_conservation()
    assert verdict.holds and verdict.actual == 3000
    assert cm.supply.total_issued == 3000


def test_issue_guards():
    cm, c1, _ = manager_with_two_clients()
    with pytest.raises(NonPositiveAmount):
        cm.issue(c1, 0, 1)
    with pytest.raises(UnknownClient):
        cm.issue(42, 100, 1)


def test_redeem_updates_supply_and_rows():
    cm, c1, _ = manager_with_two_clients()
    cm.issue(c1, 1000, 1)
    cm.redeem(c1, 400, 2)
    assert cm.table.open_row(c1).valid_balance == 600
    assert cm.supply.net == 600
    assert cm.check_conservation().holds
    cm.redeem(c1, 600, 3)
    assert cm.table.open_row(c1).valid_balance == 0
    assert cm.check_conservation().holds
    with pytest.raises(InsufficientBalance):
        cm.redeem(c1, 1, 4)


def test_table4_transfer_rows_and_conservation():
    cm, c1, c2 = manager_with_two_clients()
    m1, m2 = digest("mhtr1@issue"), digest("mhtr2@issue")
    cm.issue(c1, 1000, 1, provenance=m1)
    cm.issue(c2, 2000, 2, provenance=m2)
    n1, n2 = digest("mhtr1@t3"), digest("mhtr2@t3")
    out_payer, out_payee = report_transfer(
        cm, c2, c1, 500, 3, payer_prior=m2, payee_prior=m1,
        payer_new=n2, payee_new=n1, payer_bal=1500, payee_bal=1500,
    )
    assert out_payer.status == "applied" and out_payer.conservation is None
    assert out_payee.status == "applied"
    assert out_payee.conservation is not None and out_payee.conservation.holds
    closed = [r for r in cm.table.rows if not r.open and r.remarks != "Initial Balance"]
    assert {(r.client_id, r.valid_balance, r.valid_to) for r in closed} == {
        (c1, 1000, 3), (c2, 2000, 3),
    }
    assert all(r.txn_timestamp == 3 for r in closed)
    open_rows = {r.client_id: r for r in cm.table.open_rows()}
    assert open_rows[c1].valid_balance == 1500
    assert open_rows[c2].valid_balance == 1500
    assert open_rows[c1].valid_from == 3
    verdict = cm.check_conservation()
    assert verdict.holds and verdict.actual == 3000


def test_historical_conservation_windows():
    cm, c1, c2 = manager_with_two_clients()
    m1, m2 = digest("m1"), digest("m2")
    cm.issue(c1, 1000, 1, provenance=m1)
    cm.issue(c2, 2000, 2, provenance=m2)
    report_transfer(cm, c2, c1, 500, 3, m2, m1, digest("n2"), digest("n1"),
                    1500, 1500)
    at1 = cm.check_conservation(at=1)
    assert at1.holds and at1.actual == 1000
    at2 = cm.check_conservation(at=2)
    assert at2.holds and at2.actual == 3000
    at3 = cm.check_conservation(at=3)
    assert at3.holds and at3.actual == 3000
    assert cm.table.balance_at(c1, 2) == 1000
    assert cm.table.balance_at(c1, 3) == 1500


def test_double_spend_raises_stale_provenance():
    cm, c1, c2 = manager_with_two_clients()
    m1, m2 = digest("m1"), digest("m2")
    cm.issue(c1, 1000, 1, provenance=m1)
    cm.issue(c2, 2000, 2, provenance=m2)
    report_transfer(cm, c2, c1, 500, 3, m2, m1, digest("n2"), digest("n1"),
                    1500, 1500)
    # second spend from the same prior state m2
    with pytest.raises(StaleProvenance):
        cm.report_balance(c2, 1200, digest("forged"), prior_mhtr=m2,
                          peer_provenance=m1, timestamp=4)


def test_duplicate_report_is_idempotent():
    cm, c1, c2 = manager_with_two_clients()
    m1, m2 = digest("m1"), digest("m2")
    cm.issue(c1, 1000, 1, provenance=m1)
    cm.issue(c2, 2000, 2, provenance=m2)
    args = dict(prior_mhtr=m2, peer_provenance=m1, timestamp=3)
    first = cm.report_balance(c2, 1500, digest("n2"), **args)
    assert first.status == "applied"
    again = cm.report_balance(c2, 1500, digest("n2"), **args)
    assert again.status == "duplicate"
    rows_before = len(cm.table.rows)
    cm.report_balance(c2, 1500, digest("n2"), **args)
    assert len(cm.table.rows) == rows_before


def test_out_of_order_reports_park_then_apply():
    cm, c1, c2 = manager_with_two_clients()
    m1 = digest("m1")
    cm.issue(c1, 1000, 1, provenance=m1)
    a, b = digest("after-first"), digest("after-second")
    # second hop arrives first: prior is a state the manager has not seen
    out = cm.report_balance(c1, 700, b, prior_mhtr=a,
                            peer_provenance=digest("peer2"), timestamp=4)
    assert out.status == "parked"
    assert cm.parked_count(c1) == 1
    out = cm.report_balance(c1, 900, a, prior_mhtr=m1,
                            peer_provenance=digest("peer1"), timestamp=3)
    assert out.status == "applied"
    assert cm.parked_count() == 0
    assert cm.table.open_row(c1).valid_balance == 700
    assert cm.table.open_row(c1).provenance_mhtr == b


def test_report_for_unknown_or_suspended_client():
    cm, c1, _ = manager_with_two_clients()
    with pytest.raises(UnknownClient):
        cm.report_balance(77, 10, digest("x"), EMPTY_TREE_DIGEST,
                          digest("p"), 1)
    cm.suspend(c1, "alert")
    with pytest.raises(ClientSuspended):
        cm.report_balance(c1, 10, digest("x"), EMPTY_TREE_DIGEST,
                          digest("p"), 1)


def test_suspension_log_and_reinstate():
    cm, c1, _ = manager_with_two_clients()
    cm.suspend(c1, "root mismatch")
    assert cm.suspension_log == [(c1, "root mismatch")]
    assert cm.registry[c1].status is ClientStatus.SUSPENDED
    cm.reinstate(c1)
    assert cm.registry[c1].status is ClientStatus.ACTIVE


def test_repair_annotates_rows_and_delegates():
    cm, c1, c2 = manager_with_two_clients()
    cm.issue(c1, 1000, 1)
    calls = []

    def executor(pair_key, pair_seq):
        calls.append((pair_key, pair_seq))
        return ReparationRecord(pair_key, pair_seq, pair_seq + 1, 500, 9)

    record = cm.repair((c1, c2), 3, executor)
    assert calls == [((c1, c2), 3)]
    assert record.compensating_pair_seq == 4
    assert "Reparation of 3" in cm.table.open_row(c1).remarks
    assert "Reparation of 3" in cm.table.open_row(c2).remarks


def test_repair_unknown_transaction():
    cm, c1, c2 = manager_with_two_clients()

    def executor(pair_key, pair_seq):
        raise UnknownTransaction(f"no transaction {pair_seq}")

    with pytest.raises(UnknownTransaction):
        cm.repair((c1, c2), 99, executor)
    with pytest.raises(UnknownTransaction):
        cm.repair((c1, c2), 99, lambda *_: None)


def test_forged_balance_breaks_conservation():
    cm, c1, c2 = manager_with_two_clients()
    m1 = digest("m1")
    cm.issue(c1, 1000, 1, provenance=m1)
    out = cm.report_balance(c1, 1100, digest("forged-root"), prior_mhtr=m1,
                            peer_provenance=digest("nobody"), timestamp=2)
    assert out.status == "applied"
    verdict = cm.check_conservation()
    assert not verdict.holds
    assert verdict.discrepancy == 100


def test_export_mirrors_table_columns():
    cm, c1, c2 = manager_with_two_clients()
    cm.issue(c1, 1000, 1, provenance=digest("m1"))
    text = cm.export_rows()
    lines = text.splitlines()
    assert lines[0].split("|")[:6] == [
        "Transaction Time-stamp", "Client ID", "Valid Balance",
        "Valid From", "Valid To", "Remarks",
    ]
    issued = [l for l in lines if "Issued" in l]
    assert len(issued) == 1
    fields = issued[0].split("|")
    assert fields[1] == str(c1) and fields[2] == "1000" and fields[4] == "inf"


def test_no_transaction_records_stored():
    from deltamoney.peer_ledger import TransactionPairRecord

    cm, c1, c2 = manager_with_two_clients()
    m1, m2 = digest("m1"), digest("m2")
    cm.issue(c1, 1000, 1, provenance=m1)
    cm.issue(c2, 2000, 2, provenance=m2)
    report_transfer(cm, c2, c1, 500, 3, m2, m1, digest("n2"), digest("n1"),
                    1500, 1500)

    seen = set()

    def walk(obj):
        if id(obj) in seen:
            return
        seen.add(id(obj))
        assert not isinstance(obj, TransactionPairRecord)
        if isinstance(obj, dict):
            for k, v in obj.items():
                walk(k)
                walk(v)
        elif isinstance(obj, (list, tuple, set, frozenset)):
            for item in obj:
                walk(item)
        elif hasattr(obj, "__dict__"):
            walk(vars(obj))

    walk(cm)
