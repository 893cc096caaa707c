"""Pure-Python Merkle kernels (fallback when the compiled extension is absent)."""

from __future__ import annotations

from hashlib import sha256

ZERO = bytes(32)


def merkle_root(leaves):
    n = len(leaves)
    if n == 0:
        return ZERO
    level = list(leaves)
    if any(len(d) != 32 for d in level):
        raise ValueError("leaves must be 32-byte digests")
    while True:
        if len(level) & 1:
            level.append(level[-1])
        level = [sha256(level[i] + level[i + 1]).digest() for i in range(0, len(level), 2)]
        if len(level) == 1:
            return level[0]


def merkle_levels(leaves):
    """All tree levels bottom-up, each already padded to even length (except the root)."""
    level = list(leaves)
    levels = []
    while True:
        if len(level) & 1:
            level.append(level[-1])
        levels.append(level)
        level = [sha256(level[i] + level[i + 1]).digest() for i in range(0, len(level), 2)]
        if len(level) == 1:
            levels.append(level)
            return levels


def merkle_fold(leaf, index, siblings):
    if len(leaf) != 32:
        return b""
    node = leaf
    for sib in siblings:
        if len(sib) != 32:
            return b""
        if index & 1:
            node = sha256(sib + node).digest()
        else:
            node = sha256(node + sib).digest()
        index >>= 1
    return node
