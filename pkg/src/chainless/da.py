"""Data-availability store for execution traces.

Public mode keeps the full encoded block. Private mode keeps only the
commitment header ``(block_no, block_hash, prev_block_hash,
transitions_root, pre_root, post_root)``, from which the block hash still
recomputes.

Snapshot file layout: a sequence of records, each
``u8 mode || u64 len || body`` where mode 0 is a public block encoding and
mode 1 a private commitment encoding.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .core import Digest, Reader, TraceBlock, compute_block_hash, framed, u64
from .errors import DataUnavailable, IntegrityError, UnknownReference


class DaMode(str, Enum):
    PUBLIC = "public"
    PRIVATE = "private"


@dataclass(frozen=True)
class DaPolicy:
    mode: DaMode = DaMode.PUBLIC

    def __post_init__(self):
        object.__setattr__(self, "mode", DaMode(self.mode))


@dataclass(frozen=True)
class Commitment:
    block_no: int
    block_hash: Digest
    prev_block_hash: Digest
    transitions_root: Digest
    pre_root: Digest
    post_root: Digest

    @classmethod
    def of(cls, block: TraceBlock) -> "Commitment":
        return cls(block.block_no, block.block_hash, block.prev_block_hash, block.transitions_root,
                   block.pre_root, block.post_root)

    def recomputed_hash(self) -> Digest:
        return compute_block_hash(self.prev_block_hash, self.block_no, self.transitions_root,
                                  self.pre_root, self.post_root)

    def encode(self) -> bytes:
        return (u64(self.block_no) + self.block_hash + self.prev_block_hash + self.transitions_root
                + self.pre_root + self.post_root)

    @classmethod
    def decode(cls, data: bytes) -> "Commitment":
        r = Reader(data)
        c = cls(r.u64(), r.digest(), r.digest(), r.digest(), r.digest(), r.digest())
        r.finish()
        return c


class DaStore:
    def __init__(self, snapshot: str | Path | None = None):
        self._data: dict[Digest, tuple[DaMode, bytes]] = {}
        self._lock = threading.Lock()
        self.snapshot = Path(snapshot) if snapshot else None

    def publish(self, block: TraceBlock, policy: DaPolicy = DaPolicy()) -> Digest:
        if policy.mode is DaMode.PUBLIC:
            body = block.encode()
        else:
            body = Commitment.of(block).encode()
        ref = block.block_hash
        with self._lock:
            existing = self._data.get(ref)
            if existing is not None:
                return ref  # references are immutable once published
            self._data[ref] = (policy.mode, body)
            if self.snapshot is not None:
                with self.snapshot.open("ab") as fh:
                    fh.write(bytes([0 if policy.mode is DaMode.PUBLIC else 1]) + framed(body))
        return ref

    def __contains__(self, ref: Digest) -> bool:
        return ref in self._data

    def mode_of(self, ref: Digest) -> DaMode:
        return self._entry(ref)[0]

    def _entry(self, ref: Digest) -> tuple[DaMode, bytes]:
        entry = self._data.get(ref)
        if entry is None:
            raise UnknownReference(f"no record for {ref.hex()[:16]}")
        return entry

    def fetch(self, ref: Digest) -> TraceBlock:
        """Full block; raises :class:`DataUnavailable` for private records."""
        mode, body = self._entry(ref)
        if mode is DaMode.PRIVATE:
            raise DataUnavailable(f"trace {ref.hex()[:16]} is committed privately")
        try:
            block = TraceBlock.decode(body)
        except ValueError as exc:
            raise IntegrityError(f"stored record does not decode: {exc}") from None
        if block.block_hash != ref or not block.commitments_ok():
            raise IntegrityError(f"stored record does not hash to {ref.hex()[:16]}")
        return block

    def fetch_commitment(self, ref: Digest) -> Commitment:
        mode, body = self._entry(ref)
        try:
            c = Commitment.of(TraceBlock.decode(body)) if mode is DaMode.PUBLIC else Commitment.decode(body)
        except ValueError as exc:
            raise IntegrityError(f"stored record does not decode: {exc}") from None
        if c.block_hash != ref or c.recomputed_hash() != ref:
            raise IntegrityError(f"stored commitment does not hash to {ref.hex()[:16]}")
        return c

    def tamper(self, ref: Digest, offset: int = -1) -> None:
        """Fault hook: flip one stored byte."""
        with self._lock:
            mode, body = self._entry(ref)
            buf = bytearray(body)
            buf[offset] ^= 0xFF
            self._data[ref] = (mode, bytes(buf))

    @staticmethod
    def load_snapshot(path: str | Path) -> "DaStore":
        store = DaStore()
        data = Path(path).read_bytes()
        r = Reader(data)
        while not r.done():
            mode = DaMode.PUBLIC if r.u8() == 0 else DaMode.PRIVATE
            body = r.framed()
            ref = (TraceBlock.decode(body).block_hash if mode is DaMode.PUBLIC
                   else Commitment.decode(body).block_hash)
            store._data[ref] = (mode, body)
        return store
