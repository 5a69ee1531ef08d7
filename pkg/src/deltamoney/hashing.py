"""Hashing primitives, balance commitments and root signatures.

Every hash in the engine is domain-separated by a single prefix byte so a
leaf digest can never be replayed as an internal node, a balance commitment,
or a grid cell:

    0x00  transaction-tree leaf
    0x01  transaction-tree internal node
    0x02  balance commitment
    0x03  empty-tree sentinel
    0x04  balance-tree leaf node
    0x05  balance-tree internal node
    0x06  empty grid cell

The hash function itself is pluggable (tests substitute counting doubles);
the default is SHA-256. Root signatures are equally pluggable: a real
Ed25519 scheme and a deterministic HMAC-style stub ship with the engine.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass
from typing import Callable

from .encoding import u64
from .errors import EmptyPayload, NegativeBalance, UnknownKey

Digest = bytes

DIGEST_SIZE = 32

TAG_LEAF = b"\x00"
TAG_INTERNAL = b"\x01"
TAG_BALANCE = b"\x02"
TAG_EMPTY_TREE = b"\x03"
TAG_BTREE_LEAF = b"\x04"
TAG_BTREE_INTERNAL = b"\x05"
TAG_EMPTY_CELL = b"\x06"


@dataclass(frozen=True)
class HashScheme:
    """A named collision-resistant hash with 32-byte output."""

    name: str
    function: Callable[[bytes], Digest]

    def __call__(self, data: bytes) -> Digest:
        return self.function(data)


def _sha256(data: bytes) -> Digest:
    return hashlib.sha256(data).digest()


SHA256 = HashScheme("sha256", _sha256)

#: Root reported by a client whose balance tree holds no records yet.
EMPTY_TREE_DIGEST = _sha256(TAG_EMPTY_TREE)

#: Digest standing in for a grid cell with no registered pair behind it.
EMPTY_CELL_DIGEST = _sha256(TAG_EMPTY_CELL)


def hash_leaf(payload: bytes, scheme: HashScheme = SHA256) -> Digest:
    """Digest of a data block destined for a tree leaf."""
    if not payload:
        raise EmptyPayload("leaf payload must be non-empty")
    return scheme(TAG_LEAF + payload)


def hash_internal(left: Digest, right: Digest, scheme: HashScheme = SHA256) -> Digest:
    """Digest of two concatenated child digests."""
    return scheme(TAG_INTERNAL + left + right)


def commit_balance(
    client_id: int, seq: int, balance: int, scheme: HashScheme = SHA256
) -> Digest:
    """Binding commitment to a client's balance at a given sequence number.

    The sequence number salts the commitment so equal balances at different
    points in a pair's history commit differently, while any verifier holding
    the plaintext triple can recompute the digest.
    """
    if balance < 0:
        raise NegativeBalance(f"cannot commit negative balance {balance}")
    return scheme(TAG_BALANCE + u64(client_id) + u64(seq) + u64(balance))


# --- root signatures -------------------------------------------------------


@dataclass(frozen=True)
class Signature:
    bytes: bytes
    signer_id: int


class StubKeyPair:
    """Deterministic signing double for simulations and tests.

    Signatures are keyed digests of the message; the "public" half carries
    the secret, which is fine for a test scheme that never leaves a process.
    """

    scheme = "stub"

    def __init__(self, signer_id: int, secret: bytes):
        self.signer_id = signer_id
        self._secret = secret

    def sign(self, message: bytes) -> Signature:
        mac = hmac.new(self._secret, message, hashlib.sha256).digest()
        return Signature(mac, self.signer_id)

    def public_key(self) -> "StubPublicKey":
        return StubPublicKey(self.signer_id, self._secret)


class StubPublicKey:
    scheme = "stub"

    def __init__(self, signer_id: int, secret: bytes):
        self.signer_id = signer_id
        self._secret = secret

    def verify(self, message: bytes, signature: Signature) -> bool:
        expected = hmac.new(self._secret, message, hashlib.sha256).digest()
        return hmac.compare_digest(expected, signature.bytes)


class Ed25519KeyPair:
    """Real asymmetric scheme; deterministic given a 32-byte seed."""

    scheme = "ed25519"

    def __init__(self, signer_id: int, seed: bytes):
        from cryptography.hazmat.primitives.asymmetric import ed25519

        self.signer_id = signer_id
        self._private = ed25519.Ed25519PrivateKey.from_private_bytes(seed)

    def sign(self, message: bytes) -> Signature:
        return Signature(self._private.sign(message), self.signer_id)

    def public_key(self) -> "Ed25519PublicKey":
        from cryptography.hazmat.primitives import serialization

        raw = self._private.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return Ed25519PublicKey(self.signer_id, raw)


class Ed25519PublicKey:
    scheme = "ed25519"

    def __init__(self, signer_id: int, raw: bytes):
        from cryptography.hazmat.primitives.asymmetric import ed25519

        self.signer_id = signer_id
        self.raw = raw
        self._key = ed25519.Ed25519PublicKey.from_public_bytes(raw)

    def verify(self, message: bytes, signature: Signature) -> bool:
        from cryptography.exceptions import InvalidSignature

        try:
            self._key.verify(signature.bytes, message)
            return True
        except InvalidSignature:
            return False


def sign_root(root: Digest, keypair) -> Signature:
    return keypair.sign(root)


def verify_root(root: Digest, signature: Signature, public_key) -> bool:
    return public_key.verify(root, signature)


class KeyStore:
    """Per-participant key handles, indexed by signer id."""

    def __init__(self, scheme: str = "stub", seed: bytes = b"deltamoney"):
        self.scheme = scheme
        self._seed = seed
        self._pairs: dict[int, object] = {}

    def generate(self, signer_id: int):
        material = hashlib.sha256(self._seed + u64(signer_id)).digest()
        if self.scheme == "ed25519":
            pair = Ed25519KeyPair(signer_id, material)
        else:
            pair = StubKeyPair(signer_id, material)
        self._pairs[signer_id] = pair
        return pair

    def has(self, signer_id: int) -> bool:
        return signer_id in self._pairs

    def pair(self, signer_id: int):
        try:
            return self._pairs[signer_id]
        except KeyError:
            raise UnknownKey(f"no key registered for signer {signer_id}") from None

    def sign(self, signer_id: int, message: bytes) -> Signature:
        return self.pair(signer_id).sign(message)

    def public(self, signer_id: int):
        return self.pair(signer_id).public_key()

    def verify(self, signature: Signature, message: bytes) -> bool:
        try:
            public = self.public(signature.signer_id)
        except UnknownKey:
            return False
        return verify_root(message, signature, public)
