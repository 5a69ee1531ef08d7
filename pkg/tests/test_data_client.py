"""Data client tests: grants, VO round trips, and the verification triad."""

import inspect

import pytest

from deltamoney.client import ClientNode, TREASURY_RESERVE, pair_of, transact
from deltamoney.currency_manager import MANAGER_ID, CurrencyManager
from deltamoney.data_client import (
    BalanceRangeVO,
    Grant,
    TransactionInclusionVO,
    Verdict,
    authorize,
    parse_vo,
    query_balance_history,
    query_transactions,
    verify_vo,
)
from deltamoney.errors import (
    NotRegisteredPeers,
    ScopeViolation,
    UnknownSubject,
    UnknownTransaction,
)
from deltamoney.hashing import KeyStore, Signature
from deltamoney.integrity_manager import IntegrityManager, PTTRAttestation


def build_world(n_transfers=6):
    ks = KeyStore("stub")
    treasury = ClientNode(MANAGER_ID, ks, opening_reserve=TREASURY_RESERVE)
    a = ClientNode(1, ks)
    b = ClientNode(2, ks)
    im = IntegrityManager(ks, signer_id=900)
    for node in (a, b):
        treasury.register_peer(node.id)
        node.register_peer(MANAGER_ID)
        im.note_client(node.id)
    im.note_pair(1, 2)
    a.register_peer(2)
    b.register_peer(1)
    transact(treasury, a, 5_000, 1)
    transact(treasury, b, 5_000, 2)
    tick = 3
    for i in range(n_transfers):
        payer, payee = (a, b) if i % 2 == 0 else (b, a)
        transact(payer, payee, 100 + i, tick)
        tick += 1
    pump_im(im, a, b)
    return ks, treasury, a, b, im, tick


def pump_im(im, *nodes):
    for node in nodes:
        for kind, payload in node.drain_reports():
            if kind == "im":
                im.ingest_report(payload)


def latest_for(im, pair):
    latest = im.latest_validated.get(pair)
    return None if latest is None else latest[1]


def test_authorize_requires_known_subject():
    with pytest.raises(UnknownSubject):
        authorize(50, 9, [(1, 9)], enrolled={1, 2})


def test_empty_scope_refuses_everything():
    grant = authorize(50, 1, [], enrolled={1, 2})
    ks, treasury, a, b, im, tick = build_world()
    with pytest.raises(ScopeViolation):
        query_transactions(grant, (1, 2), 1, 3, a, im.attest_pttr((1, 2)))


def test_out_of_scope_pair_refused():
    ks, treasury, a, b, im, tick = build_world()
    grant = authorize(50, 1, [(1, 3)], enrolled={1, 2, 3})
    with pytest.raises(ScopeViolation):
        query_transactions(grant, (1, 2), 1, 3, a, im.attest_pttr((1, 2)))


def test_unattested_pair_refused():
    ks, treasury, a, b, im, tick = build_world()
    grant = authorize(50, 1, [(1, 2)], enrolled={1, 2})
    with pytest.raises(UnknownTransaction):
        query_transactions(grant, (1, 2), 1, 3, a, None)


def test_honest_transaction_vo_passes_the_triad():
    ks, treasury, a, b, im, tick = build_world()
    grant = authorize(50, 1, [(1, 2)], enrolled={1, 2})
    att = im.attest_pttr((1, 2))
    records, vo = query_transactions(grant, (1, 2), 1, 6, a, att)
    assert [r.pair_seq for r in records] == [1, 2, 3, 4, 5, 6]
    verdict = verify_vo(vo, ks, latest_for(im, (1, 2)))
    assert verdict == Verdict(True, True, True)
    assert bool(verdict)


def test_vo_serialization_round_trips():
    ks, treasury, a, b, im, tick = build_world()
    grant = authorize(50, 1, [(1, 2)], enrolled={1, 2})
    records, vo = query_transactions(
        grant, (1, 2), 2, 4, a, im.attest_pttr((1, 2))
    )
    blob = vo.to_bytes()
    parsed = parse_vo(blob)
    assert isinstance(parsed, TransactionInclusionVO)
    assert parsed == vo
    assert parsed.to_bytes() == blob
    verdict = verify_vo(parsed, ks, latest_for(im, (1, 2)))
    assert verdict == Verdict(True, True, True)


def test_omitted_record_fails_only_completeness():
    ks, treasury, a, b, im, tick = build_world()
    grant = authorize(50, 1, [(1, 2)], enrolled={1, 2})
    records, vo = query_transactions(
        grant, (1, 2), 1, 6, a, im.attest_pttr((1, 2)), omit=frozenset({3})
    )
    assert [r.pair_seq for r in records] == [1, 2, 4, 5, 6]
    verdict = verify_vo(vo, ks, latest_for(im, (1, 2)))
    assert verdict == Verdict(True, False, True)


def test_mutated_record_fails_only_correctness():
    ks, treasury, a, b, im, tick = build_world()
    grant = authorize(50, 1, [(1, 2)], enrolled={1, 2})
    records, vo = query_transactions(
        grant, (1, 2), 1, 6, a, im.attest_pttr((1, 2))
    )
    entries = list(vo.entries)
    record, proof = entries[2]
    tampered = bytearray(record)
    tampered[40] ^= 0x01  # somewhere in the amount field
    entries[2] = (bytes(tampered), proof)
    forged = TransactionInclusionVO(
        vo.pair_key, vo.seq_lo, vo.seq_hi, vo.epoch_start,
        tuple(entries), vo.attestation,
    )
    verdict = verify_vo(forged, ks, latest_for(im, (1, 2)))
    assert verdict == Verdict(False, True, True)


def test_superseded_attestation_fails_only_freshness():
    ks, treasury, a, b, im, tick = build_world()
    grant = authorize(50, 1, [(1, 2)], enrolled={1, 2})
    att = im.attest_pttr((1, 2))
    records, vo = query_transactions(grant, (1, 2), 1, 6, a, att)
    transact(a, b, 7, tick)
    pump_im(im, a, b)
    verdict = verify_vo(vo, ks, latest_for(im, (1, 2)))
    assert verdict == Verdict(True, True, False)


def test_forged_attestation_signature_fails_correctness():
    ks, treasury, a, b, im, tick = build_world()
    grant = authorize(50, 1, [(1, 2)], enrolled={1, 2})
    att = im.attest_pttr((1, 2))
    forged_att = PTTRAttestation(
        att.pair_key, att.pair_seq, att.root,
        Signature(b"\x00" * 32, att.signature.signer_id),
    )
    records, vo = query_transactions(grant, (1, 2), 1, 6, a, forged_att)
    verdict = verify_vo(vo, ks, latest_for(im, (1, 2)))
    assert not verdict.correct


def test_subject_without_pair_refused():
    ks, treasury, a, b, im, tick = build_world()
    c = ClientNode(3, ks)
    grant = authorize(50, 3, [(1, 2)], enrolled={1, 2, 3})
    att = im.attest_pttr((1, 2))
    with pytest.raises(NotRegisteredPeers):
        query_transactions(grant, (1, 2), 1, 3, c, att)


class TestBalanceVO:
    def setup_world(self):
        ks, treasury, a, b, im, tick = build_world()
        cm = CurrencyManager(ks)
        for node in (a, b):
            assert cm.enroll(b"pk", limit=10**9) == node.id
        cm.issue(1, a.balance, timestamp=tick, provenance=a.mht.root())
        cm.issue(2, b.balance, timestamp=tick, provenance=b.mht.root())
        return ks, a, b, cm, tick

    def grant_for(self, subject):
        return authorize(51, subject, [], enrolled={1, 2}, balance=True)

    def test_honest_balance_vo_passes(self):
        ks, a, b, cm, tick = self.setup_world()
        grant = self.grant_for(1)
        att = cm.attest_mhtr(1)
        records, vo = query_balance_history(grant, (0, 0), (tick, 999), a, att)
        assert len(records) == len(list(a.mht.records_in_order()))
        verdict = verify_vo(vo, ks, cm.attest_mhtr(1).mhtr)
        assert verdict == Verdict(True, True, True)
        # byte round trip preserves the verdict
        parsed = parse_vo(vo.to_bytes())
        assert isinstance(parsed, BalanceRangeVO)
        assert parsed.to_bytes() == vo.to_bytes()
        assert verify_vo(parsed, ks, att.mhtr) == Verdict(True, True, True)

    def test_balance_scope_enforced(self):
        ks, a, b, cm, tick = self.setup_world()
        plain = authorize(51, 1, [(1, 2)], enrolled={1, 2})
        with pytest.raises(ScopeViolation):
            query_balance_history(plain, (0, 0), (99, 99), a, cm.attest_mhtr(1))
        wrong_subject = self.grant_for(2)
        with pytest.raises(ScopeViolation):
            query_balance_history(
                wrong_subject, (0, 0), (99, 99), a, cm.attest_mhtr(1)
            )

    def test_tampered_balance_record_fails_correctness(self):
        ks, a, b, cm, tick = self.setup_world()
        grant = self.grant_for(1)
        att = cm.attest_mhtr(1)
        records, vo = query_balance_history(grant, (0, 0), (tick, 999), a, att)
        tampered = bytearray(vo.records[1])
        tampered[-1] ^= 0x80
        forged = BalanceRangeVO(
            vo.client_id,
            vo.records[:1] + (bytes(tampered),) + vo.records[2:],
            vo.range_vo, vo.attestation,
        )
        verdict = verify_vo(forged, ks, att.mhtr)
        assert not verdict.correct

    def test_stale_balance_attestation_fails_freshness(self):
        ks, a, b, cm, tick = self.setup_world()
        grant = self.grant_for(1)
        att = cm.attest_mhtr(1)
        records, vo = query_balance_history(grant, (0, 0), (tick, 999), a, att)
        verdict = verify_vo(vo, ks, b"\x99" * 32)
        assert verdict.correct and verdict.complete and not verdict.fresh


def test_verify_never_touches_the_subject():
    params = list(inspect.signature(verify_vo).parameters)
    assert params == ["vo", "keystore", "latest"]


def test_parse_vo_rejects_garbage():
    with pytest.raises(ValueError):
        parse_vo(b"")
    with pytest.raises(ValueError):
        parse_vo(b"\x07junk")
    ks, treasury, a, b, im, tick = build_world(n_transfers=2)
    grant = authorize(50, 1, [(1, 2)], enrolled={1, 2})
    records, vo = query_transactions(
        grant, (1, 2), 1, 2, a, im.attest_pttr((1, 2))
    )
    blob = vo.to_bytes()
    with pytest.raises(ValueError):
        parse_vo(blob + b"\x00")
