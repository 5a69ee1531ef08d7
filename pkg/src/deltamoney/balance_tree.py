"""Per-client balance history as a hashed B+ tree.

Each balance change lands in a leaf in key order, keys only ever grow,
and every node carries a hash over what sits below it: leaves hash their
record digests, internal nodes hash their child digests plus separator
keys.  The root digest (MHTR) is the client's balance commitment.

Range queries return a verification object: a pruned skeleton of the
tree in which untouched subtrees collapse to digest stubs, qualifying
records are referenced by position in the result list, and the records
just outside the range ride along in full as boundary witnesses.  A
verifier refolds the skeleton to check correctness against a trusted
root and scans the flattened leaf order to check nothing in range was
skipped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

from .encoding import Reader, i64, u32, u64
from .errors import (
    CorruptSnapshot,
    InvertedRange,
    NegativeBalance,
    NonMonotonicKey,
)
from .hashing import (
    EMPTY_TREE_DIGEST,
    SHA256,
    TAG_BTREE_INTERNAL,
    TAG_BTREE_LEAF,
    Digest,
    HashScheme,
)

RECORD_SIZE = 80
MIN_FANOUT = 3
MAX_FANOUT = 64
SNAPSHOT_MAGIC = b"DMHT"
SNAPSHOT_VERSION = 1

Key = tuple[int, int]  # (timestamp, client_seq)


@dataclass(frozen=True)
class BalanceChangeRecord:
    """One leaf entry: a signed delta and the balance it produced."""

    pair_seq: int
    timestamp: int
    client_seq: int
    peer_id: int
    delta: int
    new_balance: int
    causing_pttr: bytes

    def __post_init__(self) -> None:
        if self.new_balance < 0:
            raise NegativeBalance(
                f"balance may not go negative, got {self.new_balance}"
            )

    @property
    def key(self) -> Key:
        return (self.timestamp, self.client_seq)

    def to_bytes(self) -> bytes:
        return (
            u64(self.pair_seq)
            + u64(self.timestamp)
            + u64(self.client_seq)
            + u64(self.peer_id)
            + i64(self.delta)
            + u64(self.new_balance)
            + self.causing_pttr
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "BalanceChangeRecord":
        if len(data) != RECORD_SIZE:
            raise ValueError(f"expected {RECORD_SIZE} bytes, got {len(data)}")
        r = Reader(data)
        rec = cls(
            pair_seq=r.u64(),
            timestamp=r.u64(),
            client_seq=r.u64(),
            peer_id=r.u64(),
            delta=r.i64(),
            new_balance=r.u64(),
            causing_pttr=r.take(32),
        )
        r.done()
        return rec


def _key_bytes(key: Key) -> bytes:
    return u64(key[0]) + u64(key[1])


class _Leaf:
    __slots__ = ("records", "digests", "next", "hash")

    def __init__(self) -> None:
        self.records: list[BalanceChangeRecord] = []
        self.digests: list[Digest] = []
        self.next: Optional["_Leaf"] = None
        self.hash = b""

    def rehash(self, scheme: HashScheme) -> None:
        self.hash = scheme(TAG_BTREE_LEAF + b"".join(self.digests))


class _Internal:
    __slots__ = ("keys", "children", "hash")

    def __init__(self) -> None:
        self.keys: list[Key] = []
        self.children: list = []
        self.hash = b""

    def rehash(self, scheme: HashScheme) -> None:
        self.hash = scheme(
            TAG_BTREE_INTERNAL
            + b"".join(child.hash for child in self.children)
            + b"".join(_key_bytes(k) for k in self.keys)
        )


class BalanceMHT:
    """Append-ordered hashed B+ tree of balance-change records.

    ``fanout`` is the maximum number of children of an internal node;
    nodes split at fanout - 1 keys.  Keys are (timestamp, client_seq)
    and must strictly increase, so inserts always land in the rightmost
    leaf and only the rightmost path is rehashed.
    """

    def __init__(self, fanout: int = 8, scheme: HashScheme = SHA256) -> None:
        if not MIN_FANOUT <= fanout <= MAX_FANOUT:
            raise ValueError(
                f"fanout must be within [{MIN_FANOUT}, {MAX_FANOUT}], got {fanout}"
            )
        self.fanout = fanout
        self.scheme = scheme
        self._root = None
        self._count = 0
        self._max_record: Optional[BalanceChangeRecord] = None

    def __len__(self) -> int:
        return self._count

    @property
    def max_key(self) -> Optional[Key]:
        return None if self._max_record is None else self._max_record.key

    def root(self) -> Digest:
        if self._root is None:
            return EMPTY_TREE_DIGEST
        return self._root.hash

    def latest_balance(self) -> int:
        return 0 if self._max_record is None else self._max_record.new_balance

    def insert(self, record: BalanceChangeRecord) -> None:
        if self._max_record is not None and record.key <= self._max_record.key:
            raise NonMonotonicKey(
                f"key {record.key} not greater than current max {self._max_record.key}"
            )
        if record.new_balance != self.latest_balance() + record.delta:
            raise ValueError(
                "new_balance breaks the running sum: "
                f"{self.latest_balance()} + {record.delta} != {record.new_balance}"
            )
        if self._root is None:
            leaf = _Leaf()
            self._root = leaf
        split = self._insert(self._root, record)
        if split is not None:
            sep, right = split
            new_root = _Internal()
            new_root.keys = [sep]
            new_root.children = [self._root, right]
            new_root.rehash(self.scheme)
            self._root = new_root
        self._count += 1
        self._max_record = record

    def _insert(self, node, record):
        if isinstance(node, _Leaf):
            node.records.append(record)
            node.digests.append(self.scheme(record.to_bytes()))
            if len(node.records) <= self.fanout - 1:
                node.rehash(self.scheme)
                return None
            mid = self.fanout // 2
            right = _Leaf()
            right.records = node.records[mid:]
            right.digests = node.digests[mid:]
            node.records = node.records[:mid]
            node.digests = node.digests[:mid]
            right.next = node.next
            node.next = right
            node.rehash(self.scheme)
            right.rehash(self.scheme)
            return right.records[0].key, right
        # append-only keys: new records always belong under the last child
        split = self._insert(node.children[-1], record)
        if split is not None:
            sep, right = split
            node.keys.append(sep)
            node.children.append(right)
            if len(node.keys) > self.fanout - 1:
                mid = len(node.keys) // 2
                new_right = _Internal()
                new_right.keys = node.keys[mid + 1 :]
                new_right.children = node.children[mid + 1 :]
                promoted = node.keys[mid]
                node.keys = node.keys[:mid]
                node.children = node.children[: mid + 1]
                node.rehash(self.scheme)
                new_right.rehash(self.scheme)
                return promoted, new_right
        node.rehash(self.scheme)
        return None

    def _first_leaf(self) -> Optional[_Leaf]:
        node = self._root
        if node is None:
            return None
        while isinstance(node, _Internal):
            node = node.children[0]
        return node

    def records_in_order(self) -> Iterator[BalanceChangeRecord]:
        leaf = self._first_leaf()
        while leaf is not None:
            yield from leaf.records
            leaf = leaf.next

    # ------------------------------------------------------------------
    # verifiable range queries

    def range_query(self, key_lo: Key, key_hi: Key):
        if key_lo > key_hi:
            raise InvertedRange(f"range [{key_lo}, {key_hi}] is inverted")
        if self._root is None:
            vo = RangeVO(key_lo, key_hi, EMPTY_TREE_DIGEST, ("empty",))
            return [], vo
        results = []
        left_boundary = right_boundary = None
        for rec in self.records_in_order():
            if rec.key < key_lo:
                left_boundary = rec
            elif rec.key > key_hi:
                right_boundary = rec
                break
            else:
                results.append(rec)
        witnesses = {id(left_boundary), id(right_boundary)}
        index_of = {id(rec): i for i, rec in enumerate(results)}
        skeleton = self._prune(self._root, index_of, witnesses)
        return results, RangeVO(key_lo, key_hi, self._root.hash, skeleton)

    def _prune(self, node, index_of, witnesses):
        if isinstance(node, _Leaf):
            slots = []
            keep = False
            for rec, digest in zip(node.records, node.digests):
                if id(rec) in index_of:
                    slots.append(("result", index_of[id(rec)]))
                    keep = True
                elif id(rec) in witnesses:
                    slots.append(("boundary", rec.to_bytes()))
                    keep = True
                else:
                    slots.append(("stub", digest))
            if keep:
                return ("leaf", tuple(slots))
            return ("stub", node.hash)
        children = [self._prune(c, index_of, witnesses) for c in node.children]
        if all(c[0] == "stub" for c in children):
            return ("stub", node.hash)
        return ("node", tuple(node.keys), tuple(children))

    # ------------------------------------------------------------------
    # persistence

    def snapshot_bytes(self) -> bytes:
        body = b"".join(rec.to_bytes() for rec in self.records_in_order())
        header = (
            SNAPSHOT_MAGIC
            + u32(SNAPSHOT_VERSION)
            + u32(self.fanout)
            + u64(self._count)
        )
        return header + body + self.root()

    @classmethod
    def from_snapshot(cls, data: bytes, scheme: HashScheme = SHA256) -> "BalanceMHT":
        if len(data) < 20 + 32 or data[:4] != SNAPSHOT_MAGIC:
            raise CorruptSnapshot("bad snapshot header")
        r = Reader(data[4:])
        version = r.u32()
        if version != SNAPSHOT_VERSION:
            raise CorruptSnapshot(f"unsupported snapshot version {version}")
        fanout = r.u32()
        count = r.u64()
        if len(data) != 20 + count * RECORD_SIZE + 32:
            raise CorruptSnapshot("snapshot length does not match record count")
        try:
            tree = cls(fanout, scheme)
            for _ in range(count):
                tree.insert(BalanceChangeRecord.from_bytes(r.take(RECORD_SIZE)))
        except (ValueError, NonMonotonicKey, NegativeBalance) as exc:
            raise CorruptSnapshot(f"snapshot records are inconsistent: {exc}") from exc
        checksum = r.take(32)
        r.done()
        if tree.root() != checksum:
            raise CorruptSnapshot("recomputed root does not match stored checksum")
        return tree


@dataclass(frozen=True)
class RangeVO:
    """Pruned-skeleton proof for one range query."""

    key_lo: Key
    key_hi: Key
    mhtr: Digest
    skeleton: tuple

    def to_bytes(self) -> bytes:
        return (
            _key_bytes(self.key_lo)
            + _key_bytes(self.key_hi)
            + self.mhtr
            + _encode_skeleton(self.skeleton)
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "RangeVO":
        r = Reader(data)
        key_lo = (r.u64(), r.u64())
        key_hi = (r.u64(), r.u64())
        mhtr = r.take(32)
        skeleton = _decode_skeleton(r)
        r.done()
        return cls(key_lo, key_hi, mhtr, skeleton)


def _encode_skeleton(node) -> bytes:
    kind = node[0]
    if kind == "empty":
        return b"\x03"
    if kind == "stub":
        return b"\x00" + node[1]
    if kind == "leaf":
        parts = [b"\x01", u32(len(node[1]))]
        for slot in node[1]:
            if slot[0] == "stub":
                parts.append(b"\x00" + slot[1])
            elif slot[0] == "result":
                parts.append(b"\x01" + u32(slot[1]))
            else:
                parts.append(b"\x02" + slot[1])
        return b"".join(parts)
    parts = [b"\x02", u32(len(node[1]))]
    parts.extend(_key_bytes(k) for k in node[1])
    parts.append(u32(len(node[2])))
    parts.extend(_encode_skeleton(c) for c in node[2])
    return b"".join(parts)


def _decode_skeleton(r: Reader):
    kind = r.take(1)[0]
    if kind == 3:
        return ("empty",)
    if kind == 0:
        return ("stub", r.take(32))
    if kind == 1:
        slots = []
        for _ in range(r.u32()):
            tag = r.take(1)[0]
            if tag == 0:
                slots.append(("stub", r.take(32)))
            elif tag == 1:
                slots.append(("result", r.u32()))
            elif tag == 2:
                slots.append(("boundary", r.take(RECORD_SIZE)))
            else:
                raise ValueError(f"unknown slot tag {tag}")
        return ("leaf", tuple(slots))
    if kind == 2:
        keys = tuple((r.u64(), r.u64()) for _ in range(r.u32()))
        children = tuple(_decode_skeleton(r) for _ in range(r.u32()))
        return ("node", keys, children)
    raise ValueError(f"unknown skeleton tag {kind}")


def _fold_skeleton(node, records, scheme) -> Digest:
    kind = node[0]
    if kind == "stub":
        return node[1]
    if kind == "leaf":
        digests = []
        for slot in node[1]:
            if slot[0] == "stub":
                digests.append(slot[1])
            elif slot[0] == "result":
                digests.append(scheme(records[slot[1]].to_bytes()))
            else:
                digests.append(scheme(slot[1]))
        return scheme(TAG_BTREE_LEAF + b"".join(digests))
    child_digests = b"".join(_fold_skeleton(c, records, scheme) for c in node[2])
    keys = b"".join(_key_bytes(k) for k in node[1])
    return scheme(TAG_BTREE_INTERNAL + child_digests + keys)


def _flatten(node, out) -> None:
    kind = node[0]
    if kind == "stub":
        out.append(("gap",))
    elif kind == "leaf":
        for slot in node[1]:
            if slot[0] == "stub":
                out.append(("gap",))
            elif slot[0] == "result":
                out.append(("result", slot[1]))
            else:
                rec = BalanceChangeRecord.from_bytes(slot[1])
                out.append(("boundary", rec.key))
    else:
        for child in node[2]:
            _flatten(child, out)


def examine_range(records, vo: RangeVO, trusted_mhtr: Digest,
                  scheme: HashScheme = SHA256) -> tuple[bool, bool]:
    """(correct, complete) for a range response against a trusted root.

    Correctness folds the skeleton and compares digests.  Completeness
    checks the flattened leaf order: the returned records must sit in a
    contiguous run bracketed by out-of-range boundary witnesses (or the
    edges of the tree), with no elided gaps in between.
    """
    try:
        if vo.skeleton[0] == "empty":
            return trusted_mhtr == EMPTY_TREE_DIGEST, not records
        correct = _fold_skeleton(vo.skeleton, records, scheme) == trusted_mhtr
        items: list = []
        _flatten(vo.skeleton, items)
    except Exception:
        return False, False

    lo, hi = vo.key_lo, vo.key_hi
    result_positions = [i for i, item in enumerate(items) if item[0] == "result"]
    indices = [items[i][1] for i in result_positions]
    if indices != list(range(len(records))):
        return correct, False
    keys = [records[i].key for i in indices]
    if any(not lo <= k <= hi for k in keys) or keys != sorted(set(keys)):
        return correct, False

    left_positions, right_positions = [], []
    for i, item in enumerate(items):
        if item[0] != "boundary":
            continue
        if item[1] < lo:
            left_positions.append(i)
        elif item[1] > hi:
            right_positions.append(i)
        else:
            return correct, False  # a qualifying record hidden as a witness
    if result_positions:
        if any(p > result_positions[0] for p in left_positions):
            return correct, False
        if any(p < result_positions[-1] for p in right_positions):
            return correct, False
    start = max(left_positions) + 1 if left_positions else 0
    end = min(right_positions) if right_positions else len(items)
    if any(items[i][0] != "result" for i in range(start, end)):
        return correct, False
    return correct, True


def verify_range(records, vo: RangeVO, trusted_mhtr: Digest,
                 scheme: HashScheme = SHA256) -> bool:
    correct, complete = examine_range(records, vo, trusted_mhtr, scheme)
    return correct and complete
