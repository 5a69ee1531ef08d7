# cython: boundscheck=False, wraparound=False
"""Compiled Merkle kernels: SHA-256 level folding without Python overhead.

Byte-compatible with `_merkle_py`; links against OpenSSL's one-shot SHA256.
"""

from cpython.bytes cimport PyBytes_AsStringAndSize, PyBytes_FromStringAndSize
from cpython.mem cimport PyMem_Free, PyMem_Malloc
from libc.string cimport memcpy

cdef extern from "openssl/sha.h":
    unsigned char *SHA256(const unsigned char *d, size_t n, unsigned char *md) nogil

BACKEND = "cython"

DEF DIGEST = 32


cdef inline bytes _pair_hash(const unsigned char *left, const unsigned char *right):
    cdef unsigned char buf[1 + 2 * DIGEST]
    cdef unsigned char out[DIGEST]
    buf[0] = 0x01
    memcpy(buf + 1, left, DIGEST)
    memcpy(buf + 1 + DIGEST, right, DIGEST)
    SHA256(buf, sizeof(buf), out)
    return PyBytes_FromStringAndSize(<char *> out, DIGEST)


def hash_leaves(payloads):
    """SHA-256 of the leaf tag plus each payload."""
    cdef unsigned char out[DIGEST]
    cdef unsigned char *buf
    cdef char *raw
    cdef Py_ssize_t n
    result = []
    for payload in payloads:
        PyBytes_AsStringAndSize(payload, &raw, &n)
        buf = <unsigned char *> PyMem_Malloc(n + 1)
        if buf is NULL:
            raise MemoryError()
        buf[0] = 0x00
        memcpy(buf + 1, raw, n)
        SHA256(buf, n + 1, out)
        PyMem_Free(buf)
        result.append(PyBytes_FromStringAndSize(<char *> out, DIGEST))
    return result


def build_levels(leaves):
    """All tree levels bottom-up; an unpaired rightmost node is promoted."""
    cdef Py_ssize_t i, count
    cdef char *l
    cdef char *r
    cdef Py_ssize_t ln, rn
    levels = [list(leaves)]
    level = levels[0]
    while len(level) > 1:
        count = len(level)
        nxt = []
        for i in range(0, count - 1, 2):
            PyBytes_AsStringAndSize(level[i], &l, &ln)
            PyBytes_AsStringAndSize(level[i + 1], &r, &rn)
            if ln != DIGEST or rn != DIGEST:
                raise ValueError("digests must be 32 bytes")
            nxt.append(_pair_hash(<unsigned char *> l, <unsigned char *> r))
        if count % 2:
            nxt.append(level[count - 1])
        levels.append(nxt)
        level = nxt
    return levels


def fold_proof(leaf_digest, path):
    """Fold a leaf digest up an authentication path of (side, sibling)."""
    cdef unsigned char buf[1 + 2 * DIGEST]
    cdef unsigned char cur[DIGEST]
    cdef char *raw
    cdef Py_ssize_t n
    cdef int side
    PyBytes_AsStringAndSize(leaf_digest, &raw, &n)
    if n != DIGEST:
        raise ValueError("digests must be 32 bytes")
    memcpy(cur, raw, DIGEST)
    buf[0] = 0x01
    for side, sibling in path:
        PyBytes_AsStringAndSize(sibling, &raw, &n)
        if n != DIGEST:
            raise ValueError("digests must be 32 bytes")
        if side == 0:
            memcpy(buf + 1, raw, DIGEST)
            memcpy(buf + 1 + DIGEST, cur, DIGEST)
        else:
            memcpy(buf + 1, cur, DIGEST)
            memcpy(buf + 1 + DIGEST, raw, DIGEST)
        SHA256(buf, sizeof(buf), cur)
    return PyBytes_FromStringAndSize(<char *> cur, DIGEST)
