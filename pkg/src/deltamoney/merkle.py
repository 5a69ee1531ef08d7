"""Append-capable binary Merkle tree with inclusion proofs.

Leaves are hashed with the leaf tag, adjacent nodes are paired left to right
with the internal tag, and an unpaired rightmost node is promoted unchanged
to the next level (no duplicate-and-hash, which is malleable). The root is a
pure function of the ordered leaf payloads.

Proofs carry explicit sides so verification needs no knowledge of the tree
shape: each path entry says on which side the sibling digest sits.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import _kernels
from .encoding import Reader, u32, u64
from .errors import EmptyTree, IndexOutOfRange
from .hashing import DIGEST_SIZE, SHA256, Digest, HashScheme, hash_internal, hash_leaf

SIDE_LEFT = 0  # sibling hashes in on the left
SIDE_RIGHT = 1


@dataclass(frozen=True)
class InclusionProof:
    """Authentication path for one leaf against a claimed root."""

    leaf_index: int
    path: tuple[tuple[int, Digest], ...]  # (side, sibling digest)
    claimed_root: Digest

    def to_bytes(self) -> bytes:
        parts = [u64(self.leaf_index), u32(len(self.path))]
        for side, sibling in self.path:
            parts.append(bytes([side]))
            parts.append(sibling)
        parts.append(self.claimed_root)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "InclusionProof":
        r = Reader(data)
        leaf_index = r.u64()
        count = r.u32()
        path = tuple((r.take(1)[0], r.take(DIGEST_SIZE)) for _ in range(count))
        return cls(leaf_index, path, r.take(DIGEST_SIZE))


class MerkleTree:
    """Binary hash tree over an ordered list of byte payloads."""

    def __init__(self, scheme: HashScheme = SHA256):
        self.scheme = scheme
        self._leaves: list[Digest] = []
        self._levels: list[list[Digest]] | None = None

    @classmethod
    def build(cls, leaf_payloads, scheme: HashScheme = SHA256) -> "MerkleTree":
        payloads = list(leaf_payloads)
        if not payloads:
            raise EmptyTree("cannot build a tree with no leaves")
        tree = cls(scheme)
        if scheme is SHA256:
            tree._leaves = _kernels.hash_leaves(payloads)
        else:
            tree._leaves = [hash_leaf(p, scheme) for p in payloads]
        return tree

    def append(self, payload: bytes) -> None:
        self._leaves.append(hash_leaf(payload, self.scheme) if self.scheme is not SHA256
                            else _kernels.hash_leaves([payload])[0])
        self._levels = None

    def remove_last(self) -> None:
        if not self._leaves:
            raise EmptyTree("nothing to remove")
        self._leaves.pop()
        self._levels = None

    def replace_leaf(self, leaf_index: int, payload: bytes) -> None:
        if not 0 <= leaf_index < len(self._leaves):
            raise IndexOutOfRange(
                f"leaf {leaf_index} outside tree of {len(self._leaves)}"
            )
        self._leaves[leaf_index] = hash_leaf(payload, self.scheme)
        self._levels = None

    def __len__(self) -> int:
        return len(self._leaves)

    @property
    def leaf_digests(self) -> list[Digest]:
        return list(self._leaves)

    def _computed_levels(self) -> list[list[Digest]]:
        if not self._leaves:
            raise EmptyTree("tree has no leaves")
        if self._levels is None:
            if self.scheme is SHA256:
                self._levels = _kernels.build_levels(self._leaves)
            else:
                levels = [list(self._leaves)]
                level = levels[0]
                while len(level) > 1:
                    nxt = [
                        hash_internal(level[i], level[i + 1], self.scheme)
                        for i in range(0, len(level) - 1, 2)
                    ]
                    if len(level) % 2:
                        nxt.append(level[-1])
                    levels.append(nxt)
                    level = nxt
                self._levels = levels
        return self._levels

    def root(self) -> Digest:
        return self._computed_levels()[-1][0]

    def prove(self, leaf_index: int) -> InclusionProof:
        if not 0 <= leaf_index < len(self._leaves):
            raise IndexOutOfRange(
                f"leaf {leaf_index} outside tree of {len(self._leaves)}"
            )
        levels = self._computed_levels()
        path = []
        index = leaf_index
        for level in levels[:-1]:
            sibling = index ^ 1
            if sibling < len(level):
                side = SIDE_LEFT if sibling < index else SIDE_RIGHT
                path.append((side, level[sibling]))
            # an unpaired rightmost node was promoted: no path entry
            index //= 2
        return InclusionProof(leaf_index, tuple(path), self.root())


def verify(
    payload: bytes,
    proof: InclusionProof,
    expected_root: Digest,
    scheme: HashScheme = SHA256,
) -> bool:
    """True iff folding the payload's leaf digest up the path hits the root."""
    try:
        leaf = hash_leaf(payload, scheme)
    except Exception:
        return False
    if scheme is SHA256:
        return _kernels.fold_proof(leaf, list(proof.path)) == expected_root
    node = leaf
    for side, sibling in proof.path:
        if side == SIDE_LEFT:
            node = hash_internal(sibling, node, scheme)
        else:
            node = hash_internal(node, sibling, scheme)
    return node == expected_root
