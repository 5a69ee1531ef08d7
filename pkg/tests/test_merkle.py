import hashlib
import math
import os
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deltamoney.errors import EmptyTree, IndexOutOfRange
from deltamoney.hashing import HashScheme, hash_internal, hash_leaf
from deltamoney.merkle import InclusionProof, MerkleTree, verify


def brute_force_root(payloads):
    """Independent level-by-level fold, coded apart from the tree."""
    level = [hashlib.sha256(b"\x00" + p).digest() for p in payloads]
    while len(level) > 1:
        nxt = []
        i = 0
        while i + 1 < len(level):
            nxt.append(hashlib.sha256(b"\x01" + level[i] + level[i + 1]).digest())
            i += 2
        if i < len(level):
            nxt.append(level[i])
        level = nxt
    return level[0]


def payloads(n):
    return [b"payload-%d" % i for i in range(n)]


def test_build_rejects_empty():
    with pytest.raises(EmptyTree):
        MerkleTree.build([])


def test_single_leaf_root_is_leaf_digest():
    tree = MerkleTree.build([b"p"])
    assert tree.root() == hash_leaf(b"p")


def test_two_leaf_root():
    tree = MerkleTree.build([b"p", b"q"])
    assert tree.root() == hash_internal(hash_leaf(b"p"), hash_leaf(b"q"))


def test_four_leaf_root_matches_brute_force():
    items = payloads(4)
    assert MerkleTree.build(items).root() == brute_force_root(items)


@pytest.mark.parametrize("n", range(1, 33))
def test_roots_match_brute_force_all_small_sizes(n):
    items = payloads(n)
    assert MerkleTree.build(items).root() == brute_force_root(items)


def test_append_equals_batch_build():
    tree = MerkleTree.build([b"p0"])
    for i in range(1, 7):
        tree.append(b"p%d" % i)
    batch = MerkleTree.build([b"p%d" % i for i in range(7)])
    assert tree.root() == batch.root()


def test_append_keeps_existing_leaf_digests():
    tree = MerkleTree.build(payloads(5))
    before = tree.leaf_digests
    tree.append(b"new")
    assert tree.leaf_digests[:5] == before


@given(st.lists(st.binary(min_size=1, max_size=40), min_size=1, max_size=64))
@settings(max_examples=60, deadline=None)
def test_incremental_append_equals_batch(items):
    tree = MerkleTree.build(items[:1])
    for payload in items[1:]:
        tree.append(payload)
    assert tree.root() == MerkleTree.build(items).root()


def test_single_leaf_proof_is_empty_path():
    tree = MerkleTree.build([b"only"])
    proof = tree.prove(0)
    assert proof.path == ()
    assert proof.claimed_root == hash_leaf(b"only")


def test_eight_leaf_proofs_have_length_three():
    items = payloads(8)
    tree = MerkleTree.build(items)
    for i in range(8):
        proof = tree.prove(i)
        assert len(proof.path) == 3
        assert verify(items[i], proof, brute_force_root(items))


def test_prove_out_of_range():
    tree = MerkleTree.build(payloads(4))
    with pytest.raises(IndexOutOfRange):
        tree.prove(4)


def test_round_trip_all_leaves_16():
    items = payloads(16)
    tree = MerkleTree.build(items)
    root = tree.root()
    for i, payload in enumerate(items):
        assert verify(payload, tree.prove(i), root)


def test_verify_rejects_flipped_path_digest():
    items = payloads(8)
    tree = MerkleTree.build(items)
    proof = tree.prove(3)
    side, sib = proof.path[1]
    bad = proof.path[:1] + ((side, bytes([sib[0] ^ 1]) + sib[1:]),) + proof.path[2:]
    assert not verify(items[3], InclusionProof(3, bad, proof.claimed_root), tree.root())


def test_foreign_payload_rejected_against_all_proofs():
    items = payloads(16)
    tree = MerkleTree.build(items)
    root = tree.root()
    rng = random.Random(3)
    for _ in range(20):
        foreign = bytes([rng.randrange(256) for _ in range(12)]) + b"!"
        assert foreign not in items
        for i in range(16):
            assert not verify(foreign, tree.prove(i), root)


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8, 13, 21, 33, 64])
def test_proof_length_bound_and_completeness(n):
    items = payloads(n)
    tree = MerkleTree.build(items)
    root = tree.root()
    bound = math.ceil(math.log2(n)) if n > 1 else 0
    for i in range(n):
        proof = tree.prove(i)
        assert len(proof.path) <= bound
        assert verify(items[i], proof, root)


def test_root_sensitive_to_single_bit_flips():
    rng = random.Random(11)
    for n in range(1, 33):
        items = [bytes([i]) for i in range(n)]
        root = MerkleTree.build(items).root()
        idx = rng.randrange(n)
        bit = rng.randrange(8)
        mutated = list(items)
        mutated[idx] = bytes([items[idx][0] ^ (1 << bit)])
        assert MerkleTree.build(mutated).root() != root


def test_forged_proofs_rejected():
    items = payloads(16)
    tree = MerkleTree.build(items)
    root = tree.root()
    rng = random.Random(5)
    rejected = 0
    for _ in range(10_000):
        depth = rng.randrange(0, 5)
        path = tuple(
            (rng.randrange(2), bytes(rng.randrange(256) for _ in range(32)))
            for _ in range(depth)
        )
        payload = bytes(rng.randrange(256) for _ in range(8)) + b"forged"
        if not verify(payload, InclusionProof(0, path, root), root):
            rejected += 1
    assert rejected == 10_000


def test_proof_serialization_round_trip():
    tree = MerkleTree.build(payloads(11))
    for i in (0, 5, 10):
        proof = tree.prove(i)
        assert InclusionProof.from_bytes(proof.to_bytes()) == proof


def test_custom_scheme_path():
    def doubled(data: bytes) -> bytes:
        return hashlib.sha256(data + data).digest()

    scheme = HashScheme("doubled", doubled)
    items = payloads(6)
    tree = MerkleTree.build(items, scheme)
    assert tree.root() != MerkleTree.build(items).root()
    for i in range(6):
        assert verify(items[i], tree.prove(i), tree.root(), scheme)


def test_backends_agree(tmp_path):
    from deltamoney._kernels import BACKEND, pure

    items = payloads(13)
    tree = MerkleTree.build(items)
    leaves = pure.hash_leaves(items)
    assert pure.build_levels(leaves)[-1][0] == tree.root()
    if BACKEND == "python":
        pytest.skip("compiled kernels unavailable")
