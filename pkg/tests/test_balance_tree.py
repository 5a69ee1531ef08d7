import hashlib
import math
import random

import pytest

from deltamoney.balance_tree import (
    BalanceChangeRecord,
    BalanceMHT,
    RangeVO,
    _Internal,
    _Leaf,
    examine_range,
    verify_range,
)
from deltamoney.errors import (
    CorruptSnapshot,
    InvertedRange,
    NegativeBalance,
    NonMonotonicKey,
)
from deltamoney.hashing import EMPTY_TREE_DIGEST


def sha(data):
    return hashlib.sha256(data).digest()


def rebuild_hash(node):
    """From-scratch recompute of a node's hash, ignoring caches."""
    if isinstance(node, _Leaf):
        return sha(b"\x04" + b"".join(sha(r.to_bytes()) for r in node.records))
    child = b"".join(rebuild_hash(c) for c in node.children)
    keys = b"".join(
        k[0].to_bytes(8, "big") + k[1].to_bytes(8, "big") for k in node.keys
    )
    return sha(b"\x05" + child + keys)


def history(n, seed=0, start_tick=1):
    """n records with a valid running balance, one tick apart."""
    rng = random.Random(seed)
    records = []
    balance = 0
    for i in range(n):
        delta = rng.randint(-balance, 400) if balance else rng.randint(1, 400)
        balance += delta
        records.append(
            BalanceChangeRecord(
                pair_seq=i + 1,
                timestamp=start_tick + i,
                client_seq=i + 1,
                peer_id=rng.randint(1, 5),
                delta=delta,
                new_balance=balance,
                causing_pttr=sha(b"pttr%d" % i),
            )
        )
    return records


def build(records, fanout=4):
    tree = BalanceMHT(fanout)
    for rec in records:
        tree.insert(rec)
    return tree


def leaves_of(tree):
    found = []
    leaf = tree._first_leaf()
    while leaf is not None:
        found.append(leaf)
        leaf = leaf.next
    return found


def depths(node, d=0):
    if isinstance(node, _Leaf):
        return [d]
    out = []
    for child in node.children:
        out.extend(depths(child, d + 1))
    return out


def internal_key_counts(node, is_root=True):
    if isinstance(node, _Leaf):
        return []
    out = [] if is_root else [len(node.keys)]
    for child in node.children:
        out.extend(internal_key_counts(child, is_root=False))
    return out


def test_record_encoding_round_trip():
    rec = history(3)[2]
    data = rec.to_bytes()
    assert len(data) == 80
    assert BalanceChangeRecord.from_bytes(data) == rec


def test_record_rejects_negative_balance():
    with pytest.raises(NegativeBalance):
        BalanceChangeRecord(1, 1, 1, 2, -5, -5, sha(b"x"))


def test_empty_tree_sentinel_and_zero_balance():
    tree = BalanceMHT()
    assert tree.root() == EMPTY_TREE_DIGEST
    assert tree.latest_balance() == 0
    assert len(tree) == 0


def test_single_record_root_is_tagged_leaf_hash():
    rec = BalanceChangeRecord(1, 1, 1, 2, 1000, 1000, sha(b"p"))
    tree = build([rec])
    assert tree.root() == sha(b"\x04" + sha(rec.to_bytes()))
    assert tree.latest_balance() == 1000


def test_fanout_bounds():
    for bad in (2, 65, 0):
        with pytest.raises(ValueError):
            BalanceMHT(bad)
    BalanceMHT(3)
    BalanceMHT(64)


def test_twenty_inserts_fanout_4_shape_and_order():
    records = history(20)
    tree = build(records, fanout=4)
    assert isinstance(tree._root, _Internal)
    assert list(tree.records_in_order()) == records
    assert sorted(r.key for r in records) == [r.key for r in records]


def test_non_monotonic_key_rejected():
    records = history(5)
    tree = build(records)
    stale = BalanceChangeRecord(
        9, records[-1].timestamp, records[-1].client_seq,
        2, 0 if tree.latest_balance() else 1,
        tree.latest_balance(), sha(b"x"),
    )
    with pytest.raises(NonMonotonicKey):
        tree.insert(stale)


def test_running_sum_violation_rejected():
    tree = build(history(3))
    bad = BalanceChangeRecord(4, 99, 99, 2, 10, tree.latest_balance() + 11, sha(b"x"))
    with pytest.raises(ValueError):
        tree.insert(bad)


def test_latest_balance_matches_delta_fold():
    for seed in range(5):
        records = history(50, seed=seed)
        tree = build(records, fanout=5)
        assert tree.latest_balance() == sum(r.delta for r in records)


def test_same_history_same_root_changed_delta_changes_root():
    for seed in range(10):
        records = history(30, seed=seed)
        a, b = build(records, fanout=4), build(records, fanout=4)
        assert a.root() == b.root()
        mutated = list(records)
        idx = seed % len(records)
        victim = mutated[idx]
        bumped = BalanceChangeRecord(
            victim.pair_seq, victim.timestamp, victim.client_seq, victim.peer_id,
            victim.delta + 1, victim.new_balance + 1, victim.causing_pttr,
        )
        mutated[idx] = bumped
        for j in range(idx + 1, len(mutated)):
            r = mutated[j]
            mutated[j] = BalanceChangeRecord(
                r.pair_seq, r.timestamp, r.client_seq, r.peer_id,
                r.delta, r.new_balance + 1, r.causing_pttr,
            )
        assert build(mutated, fanout=4).root() != a.root()


@pytest.mark.parametrize("fanout", range(3, 9))
def test_cached_hashes_equal_full_rebuild(fanout):
    records = history(200, seed=fanout)
    tree = build(records, fanout=fanout)
    assert tree.root() == rebuild_hash(tree._root)


@pytest.mark.parametrize("fanout", range(3, 9))
def test_bplus_shape_invariants(fanout):
    records = history(200, seed=fanout + 10)
    tree = build(records, fanout=fanout)
    assert len(set(depths(tree._root))) == 1
    low = math.ceil(fanout / 2) - 1
    for count in internal_key_counts(tree._root):
        assert low <= count <= fanout - 1
    assert sum(len(l.records) for l in leaves_of(tree)) == 200


def test_different_fanouts_differ_in_root():
    records = history(40)
    assert build(records, 3).root() != build(records, 8).root()


def full_range(tree):
    return (0, 0), (2**64 - 1, 2**64 - 1)


def test_full_range_query_verifies():
    records = history(30)
    tree = build(records, fanout=4)
    lo, hi = full_range(tree)
    got, vo = tree.range_query(lo, hi)
    assert got == records
    assert verify_range(got, vo, tree.root())


def test_subrange_query_and_boundaries():
    records = history(30)
    tree = build(records, fanout=4)
    lo, hi = records[7].key, records[19].key
    got, vo = tree.range_query(lo, hi)
    assert got == records[7:20]
    assert verify_range(got, vo, tree.root())


def test_empty_range_between_adjacent_keys():
    records = history(10)
    tree = build(records, fanout=4)
    t = records[4].timestamp
    got, vo = tree.range_query((t, records[4].client_seq + 1), (t + 1, 0))
    assert got == []
    assert verify_range(got, vo, tree.root())
    # scan oracle: nothing lies strictly between those records
    assert [r for r in records if (t, records[4].client_seq + 1) <= r.key <= (t + 1, 0)] == []


def test_inverted_range_rejected():
    tree = build(history(5))
    with pytest.raises(InvertedRange):
        tree.range_query((5, 0), (4, 0))


def test_empty_tree_range_query():
    tree = BalanceMHT()
    got, vo = tree.range_query((0, 0), (10, 0))
    assert got == []
    assert verify_range(got, vo, tree.root())
    assert not verify_range(got, vo, sha(b"other"))


def test_dropped_record_detected():
    records = history(30)
    tree = build(records, fanout=4)
    lo, hi = records[5].key, records[15].key
    got, vo = tree.range_query(lo, hi)
    assert not verify_range(got[:-1], vo, tree.root())
    assert not verify_range(got[1:], vo, tree.root())


def test_every_single_omission_and_mutation_detected():
    records = history(30, seed=2)
    tree = build(records, fanout=4)
    lo, hi = full_range(tree)
    got, vo = tree.range_query(lo, hi)
    root = tree.root()
    for i in range(len(got)):
        omitted = got[:i] + got[i + 1 :]
        assert not verify_range(omitted, vo, root)
        r = got[i]
        mutated = list(got)
        mutated[i] = BalanceChangeRecord(
            r.pair_seq, r.timestamp, r.client_seq, r.peer_id,
            r.delta, r.new_balance + 1, r.causing_pttr,
        )
        correct, _ = examine_range(mutated, vo, root)
        assert not correct


def test_stale_vo_fails_against_new_root():
    records = history(12)
    tree = build(records, fanout=4)
    lo, hi = records[2].key, records[6].key
    got, vo = tree.range_query(lo, hi)
    old_root = tree.root()
    extra = history(13)[-1]
    tree.insert(extra)
    assert verify_range(got, vo, old_root)
    assert not verify_range(got, vo, tree.root())
    correct, complete = examine_range(got, vo, vo.mhtr)
    assert correct and complete


def test_hidden_qualifying_record_as_boundary_detected():
    records = history(8)
    tree = build(records, fanout=4)
    lo, hi = records[2].key, records[5].key
    got, vo = tree.range_query(lo, hi)

    def demote(node):
        if node[0] == "leaf":
            slots = []
            for slot in node[1]:
                if slot == ("result", 3):
                    slots.append(("boundary", records[5].to_bytes()))
                else:
                    slots.append(slot)
            return ("leaf", tuple(slots))
        if node[0] == "node":
            return ("node", node[1], tuple(demote(c) for c in node[2]))
        return node

    forged = RangeVO(vo.key_lo, vo.key_hi, vo.mhtr, demote(vo.skeleton))
    assert not verify_range(got[:3], forged, tree.root())


def test_vo_serialization_round_trip():
    records = history(25)
    tree = build(records, fanout=4)
    for lo, hi in (((0, 0), (2**64 - 1, 2**64 - 1)),
                   (records[3].key, records[9].key),
                   ((records[5].timestamp, records[5].client_seq + 1), (records[5].timestamp + 1, 0))):
        got, vo = tree.range_query(lo, hi)
        back = RangeVO.from_bytes(vo.to_bytes())
        assert back == vo
        assert verify_range(got, back, tree.root())


def test_snapshot_round_trip_and_tamper():
    records = history(37, seed=9)
    tree = build(records, fanout=5)
    blob = tree.snapshot_bytes()
    loaded = BalanceMHT.from_snapshot(blob)
    assert loaded.root() == tree.root()
    assert loaded.latest_balance() == tree.latest_balance()
    assert list(loaded.records_in_order()) == records
    for pos in (0, 7, 25, len(blob) - 1):
        bad = bytearray(blob)
        bad[pos] ^= 0x40
        with pytest.raises(CorruptSnapshot):
            BalanceMHT.from_snapshot(bytes(bad))


def test_empty_snapshot_round_trip():
    tree = BalanceMHT(fanout=6)
    loaded = BalanceMHT.from_snapshot(tree.snapshot_bytes())
    assert loaded.root() == EMPTY_TREE_DIGEST
    assert loaded.fanout == 6
