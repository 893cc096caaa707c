"""Execution layer: app-specific sequencing, block sealing and attestation stubs.

Ordering rule: inputs execute in (arrival tick, submission order) order. A
block seals as soon as it holds ``mu`` transitions, or once ``nu`` ticks have
passed since its first transition, whichever comes first; empty blocks are
never sealed. Every sealed block also yields a :class:`Checkpoint`.

Fault modes and the verifier that catches them:

=======================  ==================================================
mode                     detected by
=======================  ==================================================
corrupt_post_root        full replay, committee, fraud proof, spot check (sampled)
reorder_against_policy   full replay / committee (inbox order check)
drop_transitions         full replay, committee, fraud proof (broken root link)
forge_attestation        any verifier that checks attestations
=======================  ==================================================
"""

from __future__ import annotations

import base64
import heapq
import threading
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Iterable

from .core import (AppStateView, Application, Checkpoint, Digest, KeyRegistry, TraceBlock,
                   TransitionRecord, build_block, chain_extend, sha256, state_root, text)
from .errors import LateArrival, QueueClosed, RejectedInput, UnknownBlock


class FaultMode(str, Enum):
    HONEST = "honest"
    CORRUPT_POST_ROOT = "corrupt_post_root"
    REORDER_AGAINST_POLICY = "reorder_against_policy"
    DROP_TRANSITIONS = "drop_transitions"
    FORGE_ATTESTATION = "forge_attestation"


@dataclass(frozen=True)
class FaultPolicy:
    """When ``mode`` is not honest, the fault fires once, in the first eligible
    block at or after ``block_no``. ``seq_no`` picks the position inside the
    block; ``predicate(position, input)`` can pick it instead (corrupt mode)."""

    mode: FaultMode = FaultMode.HONEST
    block_no: int = 0
    seq_no: int | None = None
    predicate: Callable[[int, bytes], bool] | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", FaultMode(self.mode))


HONEST = FaultPolicy()


@dataclass(frozen=True)
class SequencerConfig:
    app_id: int
    genesis_state: AppStateView
    mu: int = 16
    nu: int = 4
    enclave_id: str = ""
    keep_witnesses: bool = True

    def __post_init__(self):
        if self.mu < 1 or self.nu < 1:
            raise ValueError("mu and nu must both be >= 1")
        if not self.enclave_id:
            object.__setattr__(self, "enclave_id", f"enclave-{self.app_id}")


@dataclass(frozen=True)
class AttestationStub:
    enclave_id: str
    block_hash: Digest
    signature: bytes

    @staticmethod
    def message(enclave_id: str, block_hash: Digest) -> bytes:
        return sha256(text(enclave_id), block_hash)


def verify_attestation(att: AttestationStub, block_hash: Digest, registry: KeyRegistry) -> bool:
    if att.block_hash != block_hash:
        return False
    return registry.verify(att.enclave_id, AttestationStub.message(att.enclave_id, block_hash),
                           att.signature)


@dataclass(frozen=True)
class BatchReceipt:
    block: TraceBlock
    attestation: AttestationStub
    checkpoint: Checkpoint | None = None


@dataclass
class Ack:
    submission_id: int
    arrival: int
    seq_no: int | None = None  # fixed when the input is ordered, before it executes


@dataclass(frozen=True)
class InboxEntry:
    seq_no: int
    arrival: int
    input: bytes


@dataclass(frozen=True)
class RejectedEntry:
    seq_no: int
    input: bytes
    reason: str


class Sequencer:
    """Single-writer sequencer for one application.

    ``submit`` is thread-safe (it only pushes onto the ordered mailbox);
    ``process``/``seal_if_due`` must be driven by one thread.
    """

    def __init__(self, config: SequencerConfig, app: Application, registry: KeyRegistry,
                 fault: FaultPolicy = HONEST):
        self.config = config
        self.app = app
        self.registry = registry
        self.fault = fault
        self._fault_fired = False
        registry.register(config.enclave_id)

        self._mailbox: list[tuple[int, int, bytes, Ack]] = []
        self._lock = threading.Lock()
        self._next_submission = 0
        self._closed = False
        self.clock = -1  # last tick drained

        self._live = app.decode_state(config.genesis_state.serialized_state)
        self._bytes = config.genesis_state.serialized_state
        self._root = state_root(self._bytes)
        self.genesis_root = self._root
        self.version = config.genesis_state.version

        self._pending: list[TransitionRecord] = []
        self._pending_inputs: list[bytes] = []
        self._open_tick: int | None = None
        self._block_pre_bytes = self._bytes

        self.inbox: list[InboxEntry] = []
        self.rejected: list[RejectedEntry] = []
        self.receipts: list[BatchReceipt] = []
        self.block_states: dict[int, bytes] = {}
        self.witnesses: dict[Digest, bytes] = {self._root: self._bytes}
        self._attestations: dict[Digest, AttestationStub] = {}
        self.executed = 0

    # -- submission ------------------------------------------------------
    def submit(self, payload: bytes, arrival: int) -> Ack:
        with self._lock:
            if self._closed:
                raise QueueClosed("sequencer has shut down")
            if arrival <= self.clock:
                raise LateArrival(f"tick {arrival} already ordered (clock at {self.clock})")
            ack = Ack(self._next_submission, arrival)
            heapq.heappush(self._mailbox, (arrival, self._next_submission, bytes(payload), ack))
            self._next_submission += 1
            return ack

    def shutdown(self) -> None:
        with self._lock:
            self._closed = True

    @property
    def pending_count(self) -> int:
        return len(self._pending)

    @property
    def mailbox_size(self) -> int:
        return len(self._mailbox)

    def next_event_tick(self) -> int | None:
        """Earliest tick at which ``process`` has something to do."""
        ticks = []
        if self._mailbox:
            ticks.append(self._mailbox[0][0])
        if self._pending:
            ticks.append(self._open_tick + self.config.nu)
        return min(ticks) if ticks else None

    # -- execution -------------------------------------------------------
    def process(self, now: int) -> list[BatchReceipt]:
        """Drain every input that has arrived by ``now`` and seal what is due."""
        return self.drain(now, seal=True)

    def drain(self, now: int, seal: bool = True) -> list[BatchReceipt]:
        out = []
        while True:
            with self._lock:
                if not self._mailbox or self._mailbox[0][0] > now:
                    self.clock = max(self.clock, now)
                    break
                arrival, _, payload, ack = heapq.heappop(self._mailbox)
            self._execute(payload, ack, now)
            if seal and len(self._pending) >= self.config.mu:
                out.append(self._seal(now))
        if seal:
            r = self.seal_if_due(now)
            if r is not None:
                out.append(r)
        return out

    def _execute(self, payload: bytes, ack: Ack, now: int) -> None:
        seq = len(self.inbox)
        ack.seq_no = seq
        self.inbox.append(InboxEntry(seq, ack.arrival, payload))
        try:
            live = self.app.apply(self._live, payload)
        except RejectedInput as exc:
            self.rejected.append(RejectedEntry(seq, payload, str(exc)))
            return
        self.executed += 1
        if self._should_corrupt(payload):
            live = self.app.tamper(live)
        new_bytes = self.app.encode_state(live)
        new_root = state_root(new_bytes)
        if not self._pending:
            self._open_tick = now
            self._block_pre_bytes = self._bytes
        self._pending.append(TransitionRecord(len(self._pending), payload, self._root, new_root))
        self._pending_inputs.append(payload)
        self._live, self._bytes, self._root = live, new_bytes, new_root
        if self.config.keep_witnesses:
            self.witnesses[new_root] = new_bytes

    def _should_corrupt(self, payload: bytes) -> bool:
        f = self.fault
        if f.mode is not FaultMode.CORRUPT_POST_ROOT or self._fault_fired:
            return False
        if len(self.receipts) < f.block_no:
            return False
        pos = len(self._pending)
        if f.predicate is not None:
            hit = f.predicate(pos, payload)
        else:
            hit = pos == (f.seq_no or 0)
        if hit:
            self._fault_fired = True
        return hit

    # -- sealing ---------------------------------------------------------
    def seal_if_due(self, now: int) -> BatchReceipt | None:
        if not self._pending:
            return None
        if len(self._pending) >= self.config.mu or now - self._open_tick >= self.config.nu:
            return self._seal(now)
        return None

    def _seal(self, now: int) -> BatchReceipt:
        mu = self.config.mu
        records, inputs = self._pending[:mu], self._pending_inputs[:mu]
        rest = self._pending[mu:]
        block_no = len(self.receipts)
        prev = self.receipts[-1].block if self.receipts else None
        pre_root = prev.post_root if prev else self.genesis_root

        block = self._faulty_block(block_no, records, inputs, prev, pre_root, now)
        if block is None:
            block = chain_extend(prev, records, now, genesis_root=self.genesis_root)

        if rest:
            # only reachable via drain(seal=False): renumber the carry-over
            self._pending = [TransitionRecord(i, t.input, t.pre_state_root, t.post_state_root)
                             for i, t in enumerate(rest)]
            self._pending_inputs = self._pending_inputs[mu:]
            self._open_tick = now
            self._block_pre_bytes = self.witnesses.get(rest[0].pre_state_root, self._bytes)
        else:
            self._pending, self._pending_inputs, self._open_tick = [], [], None

        self.version += 1
        # with a carry-over, _block_pre_bytes now holds this block's post-state
        self.block_states[block_no] = self._block_pre_bytes if rest else self._bytes
        self._attestations.setdefault(block.block_hash, None)
        checkpoint = Checkpoint(block_no, block.post_root, block.block_hash, now)
        receipt = BatchReceipt(block, self.attest(block), checkpoint)
        self.receipts.append(receipt)
        return receipt

    def _faulty_block(self, block_no, records, inputs, prev, pre_root, now) -> TraceBlock | None:
        f = self.fault
        if self._fault_fired or block_no < f.block_no:
            return None
        prev_hash = prev.block_hash if prev else bytes(32)
        if f.mode is FaultMode.DROP_TRANSITIONS:
            idx = f.seq_no if f.seq_no is not None and f.seq_no < len(records) else len(records) // 2
            kept = [t for i, t in enumerate(records) if i != idx]
            kept = [TransitionRecord(i, t.input, t.pre_state_root, t.post_state_root)
                    for i, t in enumerate(kept)]
            self._fault_fired = True
            # the header still claims the real post-state, which includes the hidden input
            return build_block(block_no, kept, prev_hash, pre_root, records[-1].post_state_root, now)
        if f.mode is FaultMode.REORDER_AGAINST_POLICY:
            start = f.seq_no or 0
            swap = next((i for i in range(start, len(inputs) - 1) if inputs[i] != inputs[i + 1]), None)
            if swap is None:
                return None  # try again in a later block
            order = list(inputs)
            order[swap], order[swap + 1] = order[swap + 1], order[swap]
            live = self.app.decode_state(self._block_pre_bytes)
            root = pre_root
            cur_bytes = self._block_pre_bytes
            out = []
            for payload in order:
                try:
                    live = self.app.apply(live, payload)
                except RejectedInput:
                    continue
                cur_bytes = self.app.encode_state(live)
                new_root = state_root(cur_bytes)
                out.append(TransitionRecord(len(out), payload, root, new_root))
                if self.config.keep_witnesses:
                    self.witnesses[new_root] = cur_bytes
                root = new_root
            self._live, self._bytes, self._root = live, cur_bytes, root
            self._fault_fired = True
            return build_block(block_no, out, prev_hash, pre_root, root, now)
        return None

    def attest(self, block: TraceBlock) -> AttestationStub:
        if block.block_hash not in self._attestations:
            raise UnknownBlock("block was not sealed by this sequencer")
        att = self._attestations[block.block_hash]
        if att is not None:
            return att
        eid = self.config.enclave_id
        msg = AttestationStub.message(eid, block.block_hash)
        f = self.fault
        if (f.mode is FaultMode.FORGE_ATTESTATION and not self._fault_fired
                and block.block_no >= f.block_no):
            self._fault_fired = True
            sig = sha256(b"forged", msg)
        else:
            sig = self.registry.sign(eid, msg)
        att = AttestationStub(eid, block.block_hash, sig)
        self._attestations[block.block_hash] = att
        return att

    def set_fault(self, policy: FaultPolicy) -> None:
        """Arm a new fault; it fires no earlier than the next block to be sealed."""
        self.fault = replace(policy, block_no=max(policy.block_no, len(self.receipts)))
        self._fault_fired = False

    # -- views -----------------------------------------------------------
    @property
    def state_view(self) -> AppStateView:
        return AppStateView(self.config.app_id, self._bytes, self.version)

    @property
    def live_state(self):
        return self._live

    def witness(self, root: Digest) -> bytes | None:
        return self.witnesses.get(root)


def run_with_faults(config: SequencerConfig, app: Application, registry: KeyRegistry,
                    policy: FaultPolicy, inputs: Iterable[tuple[int, bytes]]) -> tuple[Sequencer, list[BatchReceipt]]:
    """Run a scripted ``(tick, payload)`` schedule to completion under ``policy``."""
    seq = Sequencer(config, app, registry, policy)
    for tick, payload in sorted(inputs, key=lambda e: e[0]):
        seq.submit(payload, tick)
    out = []
    while True:
        t = seq.next_event_tick()
        if t is None:
            break
        out.extend(seq.process(t))
    return seq, out


# --------------------------------------------------------------------------
# Schedule files: one record per line, ``tick,app_id,base64(payload)``
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleEntry:
    tick: int
    app_id: int
    payload: bytes


def parse_schedule(source: str) -> list[ScheduleEntry]:
    out = []
    for lineno, raw in enumerate(source.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 'tick,app_id,payload'")
        try:
            entry = ScheduleEntry(int(parts[0]), int(parts[1]), base64.b64decode(parts[2], validate=True))
        except Exception as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        out.append(entry)
    return out


def format_schedule(entries: Iterable[ScheduleEntry]) -> str:
    return "".join(f"{e.tick},{e.app_id},{base64.b64encode(e.payload).decode()}\n" for e in entries)
