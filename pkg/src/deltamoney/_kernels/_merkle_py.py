"""Pure-Python Merkle kernels (SHA-256, fixed domain tags).

Mirrors the compiled `_merkle_cy` extension bit for bit; selected as the
fallback when the extension is unavailable or explicitly disabled.
"""

import hashlib

BACKEND = "python"

_LEAF = b"\x00"
_INTERNAL = b"\x01"


def hash_leaves(payloads):
    """SHA-256 of the leaf tag plus each payload."""
    sha = hashlib.sha256
    return [sha(_LEAF + p).digest() for p in payloads]


def build_levels(leaves):
    """All tree levels bottom-up; an unpaired rightmost node is promoted."""
    sha = hashlib.sha256
    levels = [list(leaves)]
    level = levels[0]
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level) - 1, 2):
            nxt.append(sha(_INTERNAL + level[i] + level[i + 1]).digest())
        if len(level) % 2:
            nxt.append(level[-1])
        levels.append(nxt)
        level = nxt
    return levels


def fold_proof(leaf_digest, path):
    """Fold a leaf digest up an authentication path of (side, sibling)."""
    sha = hashlib.sha256
    node = leaf_digest
    for side, sibling in path:
        if side == 0:  # sibling sits to the left
            node = sha(_INTERNAL + sibling + node).digest()
        else:
            node = sha(_INTERNAL + node + sibling).digest()
    return node
