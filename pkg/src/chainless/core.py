"""State-machine abstraction, execution traces and commitment primitives.

Canonical encodings (bit-exact, so digests are reproducible elsewhere):

* integers are fixed-width big-endian: ``u64`` unless noted;
* byte strings are framed as ``u64(len) || bytes``;
* transition digest = SHA256(u64 seq_no || u64 len(input) || input ||
  pre_state_root || post_state_root);
* block hash = SHA256(prev_block_hash || u64 block_no || transitions_root ||
  pre_root || post_root);
* state root = SHA256(serialized_state);
* Merkle trees pad odd levels by duplicating the last node; the empty tree
  commits to 32 zero bytes.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass, field
from typing import Any, Iterable, Protocol, Sequence

from . import kernels
from .errors import ContinuityError, ProofIndexError, RejectedInput

Digest = bytes

DIGEST_SIZE = 32
ZERO_DIGEST: Digest = bytes(DIGEST_SIZE)

_U64 = struct.Struct(">Q")
_U32 = struct.Struct(">I")


def sha256(*parts: bytes) -> Digest:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return h.digest()


def u64(n: int) -> bytes:
    return _U64.pack(n)


def u32(n: int) -> bytes:
    return _U32.pack(n)


def framed(data: bytes) -> bytes:
    return _U64.pack(len(data)) + data


def text(s: str) -> bytes:
    return framed(s.encode("utf-8"))


class Reader:
    """Cursor over a canonical encoding; raises ``ValueError`` on truncation."""

    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise ValueError("truncated encoding")
        out = self.buf[self.pos:end]
        self.pos = end
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def digest(self) -> Digest:
        return self.take(DIGEST_SIZE)

    def framed(self) -> bytes:
        return self.take(self.u64())

    def text(self) -> str:
        return self.framed().decode("utf-8")

    def done(self) -> bool:
        return self.pos == len(self.buf)

    def finish(self) -> None:
        if not self.done():
            raise ValueError("trailing bytes after encoding")


# --------------------------------------------------------------------------
# Merkle commitments
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MerkleProof:
    """Inclusion path: sibling digests bottom-up; directions come from ``index`` bits."""

    index: int
    siblings: tuple[Digest, ...]

    @property
    def directions(self) -> tuple[bool, ...]:
        """True where the sibling sits on the left."""
        return tuple(bool((self.index >> k) & 1) for k in range(len(self.siblings)))

    def encode(self) -> bytes:
        return u64(self.index) + u64(len(self.siblings)) + b"".join(self.siblings)

    @classmethod
    def decode(cls, data: bytes) -> "MerkleProof":
        r = Reader(data)
        index = r.u64()
        sibs = tuple(r.digest() for _ in range(r.u64()))
        r.finish()
        return cls(index, sibs)


def merkle_root(leaves: Sequence[Digest]) -> Digest:
    return kernels.merkle_root(leaves)


def merkle_proof(leaves: Sequence[Digest], index: int) -> MerkleProof:
    if not 0 <= index < len(leaves):
        raise ProofIndexError(f"leaf index {index} out of range for {len(leaves)} leaves")
    levels = kernels.merkle_levels(leaves)
    siblings = []
    i = index
    for level in levels[:-1]:
        siblings.append(level[i ^ 1])
        i >>= 1
    return MerkleProof(index, tuple(siblings))


def verify_merkle_proof(root: Digest, leaf: Digest, proof: MerkleProof) -> bool:
    if proof.index < 0 or proof.index >> len(proof.siblings):
        return False
    return kernels.merkle_fold(leaf, proof.index, proof.siblings) == root


# --------------------------------------------------------------------------
# State machine and trace types
# --------------------------------------------------------------------------


class Application(Protocol):
    """A deterministic transition function over an application-defined state.

    ``apply`` returns the successor state and may reuse (mutate) the object it
    was given, but must raise :class:`RejectedInput` *before* touching it when
    an input is invalid. ``encode_state`` must be canonical.
    """

    name: str

    def initial_state(self) -> Any: ...

    def apply(self, state: Any, payload: bytes) -> Any: ...

    def encode_state(self, state: Any) -> bytes: ...

    def decode_state(self, data: bytes) -> Any: ...

    def tamper(self, state: Any) -> Any:
        """Fault hook: return an illegitimately altered state."""
        ...


def state_root(serialized_state: bytes) -> Digest:
    return hashlib.sha256(serialized_state).digest()


@dataclass(frozen=True)
class AppStateView:
    app_id: int
    serialized_state: bytes
    version: int = 0

    @property
    def root(self) -> Digest:
        return state_root(self.serialized_state)


@dataclass(frozen=True)
class TransitionRecord:
    seq_no: int
    input: bytes
    pre_state_root: Digest
    post_state_root: Digest

    @property
    def digest(self) -> Digest:
        return sha256(
            _U64.pack(self.seq_no), _U64.pack(len(self.input)), self.input,
            self.pre_state_root, self.post_state_root,
        )

    def encode(self) -> bytes:
        return u64(self.seq_no) + framed(self.input) + self.pre_state_root + self.post_state_root

    @classmethod
    def read(cls, r: Reader) -> "TransitionRecord":
        return cls(r.u64(), r.framed(), r.digest(), r.digest())


def compute_block_hash(prev_block_hash: Digest, block_no: int, transitions_root: Digest,
                       pre_root: Digest, post_root: Digest) -> Digest:
    return sha256(prev_block_hash, _U64.pack(block_no), transitions_root, pre_root, post_root)


def transitions_root(transitions: Iterable[TransitionRecord]) -> Digest:
    return merkle_root([t.digest for t in transitions])


@dataclass(frozen=True)
class TraceBlock:
    block_no: int
    transitions: tuple[TransitionRecord, ...]
    transitions_root: Digest
    prev_block_hash: Digest
    block_hash: Digest
    pre_root: Digest
    post_root: Digest
    sealed_at: int

    def header_hash(self) -> Digest:
        """Block hash recomputed from the header fields."""
        return compute_block_hash(self.prev_block_hash, self.block_no, self.transitions_root,
                                  self.pre_root, self.post_root)

    def commitments_ok(self) -> bool:
        return (transitions_root(self.transitions) == self.transitions_root
                and self.header_hash() == self.block_hash)

    def encode(self) -> bytes:
        parts = [u64(self.block_no), self.prev_block_hash, self.transitions_root,
                 self.pre_root, self.post_root, self.block_hash, u64(self.sealed_at),
                 u64(len(self.transitions))]
        parts.extend(t.encode() for t in self.transitions)
        return b"".join(parts)

    @classmethod
    def decode(cls, data: bytes) -> "TraceBlock":
        r = Reader(data)
        block_no = r.u64()
        prev, troot, pre, post, bh = (r.digest() for _ in range(5))
        sealed_at = r.u64()
        txs = tuple(TransitionRecord.read(r) for _ in range(r.u64()))
        r.finish()
        return cls(block_no, txs, troot, prev, bh, pre, post, sealed_at)


@dataclass(frozen=True)
class Checkpoint:
    block_no: int
    state_root: Digest
    trace_head: Digest
    created_at: int


GENESIS = None  # marker accepted by chain_extend in place of a predecessor block


def apply_transition(app: Application, state: AppStateView, payload: bytes,
                     seq_no: int = 0) -> tuple[AppStateView, TransitionRecord]:
    """Apply one input to a serialized state; pure with respect to ``state``.

    Raises :class:`RejectedInput` (state untouched) when the app refuses the input.
    """
    live = app.decode_state(state.serialized_state)
    live = app.apply(live, payload)
    after = AppStateView(state.app_id, app.encode_state(live), state.version)
    return after, TransitionRecord(seq_no, payload, state.root, after.root)


def build_block(block_no: int, transitions: Sequence[TransitionRecord], prev_block_hash: Digest,
                pre_root: Digest, post_root: Digest, sealed_at: int) -> TraceBlock:
    """Assemble a block without continuity checks (fault injection uses this directly)."""
    txs = tuple(transitions)
    troot = transitions_root(txs)
    return TraceBlock(block_no, txs, troot, prev_block_hash,
                      compute_block_hash(prev_block_hash, block_no, troot, pre_root, post_root),
                      pre_root, post_root, sealed_at)


def chain_extend(prev: TraceBlock | None, transitions: Sequence[TransitionRecord], now: int,
                 genesis_root: Digest | None = None) -> TraceBlock:
    """Seal ``transitions`` into the block following ``prev`` (``None`` for genesis)."""
    if not transitions:
        raise ContinuityError("a block needs at least one transition")
    if prev is None:
        if genesis_root is None:
            raise ContinuityError("genesis_root is required for the first block")
        block_no, prev_hash, pre_root = 0, ZERO_DIGEST, genesis_root
    else:
        block_no, prev_hash, pre_root = prev.block_no + 1, prev.block_hash, prev.post_root
    expect = pre_root
    for i, t in enumerate(transitions):
        if t.seq_no != i:
            raise ContinuityError(f"seq_no {t.seq_no} at position {i}")
        if t.pre_state_root != expect:
            raise ContinuityError(f"transition {i} does not continue from the previous state root")
        expect = t.post_state_root
    return build_block(block_no, transitions, prev_hash, pre_root, expect, now)


# --------------------------------------------------------------------------
# Simulated signatures
# --------------------------------------------------------------------------


@dataclass
class KeyRegistry:
    """Simulation-wide key registry. HMAC-SHA256 stands in for real signatures;
    verification looks the signer's key up here, as a PKI would."""

    keys: dict[str, bytes] = field(default_factory=dict)

    def register(self, signer: str, key: bytes | None = None) -> bytes:
        if key is None:
            key = sha256(b"chainless/key", signer.encode())
        self.keys[signer] = key
        return key

    def sign(self, signer: str, message: bytes) -> bytes:
        return hmac.new(self.keys[signer], message, hashlib.sha256).digest()

    def verify(self, signer: str, message: bytes, signature: bytes) -> bool:
        key = self.keys.get(signer)
        if key is None:
            return False
        return hmac.compare_digest(hmac.new(key, message, hashlib.sha256).digest(), signature)


def derive_seed(root_seed: int, component: str) -> int:
    """Sub-seed for one stochastic consumer; independent of what other components exist."""
    return int.from_bytes(sha256(u64(root_seed & (2**64 - 1)), component.encode())[:8], "big")


__all__ = [
    "AppStateView", "Application", "Checkpoint", "DIGEST_SIZE", "Digest", "GENESIS", "KeyRegistry",
    "MerkleProof", "Reader", "RejectedInput", "TraceBlock", "TransitionRecord", "ZERO_DIGEST",
    "apply_transition", "build_block", "chain_extend", "compute_block_hash", "derive_seed",
    "framed", "merkle_proof", "merkle_root", "sha256", "state_root", "text",
    "transitions_root", "u32", "u64", "verify_merkle_proof",
]
