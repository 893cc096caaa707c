# cython: language_level=3, boundscheck=False, wraparound=False
"""Merkle kernels over contiguous buffers, hashing with OpenSSL's SHA-256."""

from libc.stdlib cimport malloc, free
from libc.string cimport memcpy

cdef extern from "openssl/sha.h":
    unsigned char *SHA256(const unsigned char *d, size_t n, unsigned char *md) nogil

DEF W = 32

ZERO = bytes(32)


def merkle_root(leaves):
    cdef Py_ssize_t n = len(leaves)
    cdef Py_ssize_t i, width
    cdef unsigned char *buf
    cdef bytes leaf
    if n == 0:
        return ZERO
    # level stored as n (+1 pad) digests; hashing pairs in place halves it each round
    buf = <unsigned char *>malloc((n + 1) * W)
    if buf == NULL:
        raise MemoryError()
    try:
        for i in range(n):
            leaf = leaves[i]
            if len(leaf) != W:
                raise ValueError("leaves must be 32-byte digests")
            memcpy(buf + i * W, <const char *>leaf, W)
        width = n
        with nogil:
            while True:
                if width & 1:
                    memcpy(buf + width * W, buf + (width - 1) * W, W)
                    width += 1
                for i in range(0, width, 2):
                    SHA256(buf + i * W, 2 * W, buf + (i // 2) * W)
                width //= 2
                if width == 1:
                    break
        return bytes((<char *>buf)[:W])
    finally:
        free(buf)


def merkle_levels(leaves):
    cdef list level = list(leaves)
    cdef list levels = []
    cdef list nxt
    cdef Py_ssize_t i
    cdef unsigned char out[32]
    cdef unsigned char pair[64]
    cdef bytes left, right
    while True:
        if len(level) & 1:
            level.append(level[len(level) - 1])
        levels.append(level)
        nxt = []
        for i in range(0, len(level), 2):
            left = level[i]
            right = level[i + 1]
            memcpy(pair, <const char *>left, W)
            memcpy(pair + W, <const char *>right, W)
            SHA256(pair, 2 * W, out)
            nxt.append((<char *>out)[:W])
        level = nxt
        if len(level) == 1:
            levels.append(level)
            return levels


def merkle_fold(bytes leaf, Py_ssize_t index, siblings):
    cdef unsigned char pair[64]
    cdef bytes sib
    if len(leaf) != W:
        return b""
    memcpy(pair, <const char *>leaf, W)
    for sib in siblings:
        if len(sib) != W:
            return b""
        if index & 1:
            memcpy(pair + W, pair, W)
            memcpy(pair, <const char *>sib, W)
        else:
            memcpy(pair + W, <const char *>sib, W)
        SHA256(pair, 2 * W, pair)
        index >>= 1
    return (<char *>pair)[:W]
