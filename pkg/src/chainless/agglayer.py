"""Interoperability layer: unified bridge, exit roots, pessimistic accounting
and receipt aggregation.

Bridge event encoding (digest = SHA256(b"bridge-event" || encoding)):
``u8 kind || u32 origin || u32 destination || u32 token || u64 amount ||
u64 nonce || u64 recipient || framed(payload)``; kind is 0 deposit,
1 claim, 2 message.

Accounting is kept in two integer matrices, both of which must stay
non-negative:

* ``position[(origin, token)]``: deposited into the bridge by ``origin``
  minus claimed out against those deposits;
* ``exposure[(chain, token)]`` for chains that are not the token's home:
  claimed into ``chain`` minus deposited out of it. A chain can therefore
  never push more of a foreign token into the bridge than it received,
  whatever its internal state says.
"""

from __future__ import annotations

import heapq
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Protocol, Sequence

from . import kernels
from .core import Digest, MerkleProof, Reader, framed, merkle_root, sha256, u32, u64, verify_merkle_proof
from .errors import (DoubleClaim, DuplicateDelivery, InvalidAmount, MissingChain, NonAcceptedReceipt,
                     PessimisticViolation, StaleOrInvalidProof)
from .trust import VerificationReceipt, Verdict

ChainId = int


class EventKind(str, Enum):
    DEPOSIT = "deposit"
    CLAIM = "claim"
    MESSAGE = "message"


_KIND_CODE = {EventKind.DEPOSIT: 0, EventKind.CLAIM: 1, EventKind.MESSAGE: 2}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


@dataclass(frozen=True)
class BridgeEvent:
    kind: EventKind
    origin: ChainId
    destination: ChainId
    token: int
    amount: int
    nonce: int
    payload: bytes = b""
    recipient: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", EventKind(self.kind))
        if self.amount < 0 or (self.amount == 0 and self.kind is not EventKind.MESSAGE):
            raise InvalidAmount(f"{self.kind.value} amount must be positive, got {self.amount}")

    def encode(self) -> bytes:
        return (bytes([_KIND_CODE[self.kind]]) + u32(self.origin) + u32(self.destination) + u32(self.token)
                + u64(self.amount) + u64(self.nonce) + u64(self.recipient) + framed(self.payload))

    @classmethod
    def decode(cls, data: bytes) -> "BridgeEvent":
        r = Reader(data)
        kind = _CODE_KIND[r.u8()]
        ev = cls(kind, r.u32(), r.u32(), r.u32(), r.u64(), r.u64(), recipient=r.u64(), payload=r.framed())
        r.finish()
        return ev

    @property
    def digest(self) -> Digest:
        return sha256(b"bridge-event", self.encode())

    @property
    def key(self) -> tuple[ChainId, int]:
        return (self.origin, self.nonce)

    def log_line(self) -> str:
        return (f"{self.kind.value}\t{self.origin}\t{self.destination}\t{self.token}\t{self.amount}"
                f"\t{self.nonce}\t{self.digest.hex()}")


class LocalExitTree:
    """Append-only list of event digests. The root is cached and recomputed on demand."""

    def __init__(self, chain: ChainId):
        self.chain = chain
        self._leaves: list[Digest] = []
        self._root: Digest | None = merkle_root([])

    @property
    def leaves(self) -> tuple[Digest, ...]:
        return tuple(self._leaves)

    def __len__(self) -> int:
        return len(self._leaves)

    def append(self, leaf: Digest) -> int:
        self._leaves.append(leaf)
        self._root = None
        return len(self._leaves) - 1

    @property
    def root(self) -> Digest:
        if self._root is None:
            self._root = merkle_root(self._leaves)
        return self._root

    def levels_at(self, size: int) -> list[list[Digest]]:
        return kernels.merkle_levels(self._leaves[:size])


@dataclass(frozen=True)
class GlobalExitRoot:
    roots: tuple[tuple[ChainId, Digest], ...]
    ger: Digest
    epoch: int

    def root_of(self, chain: ChainId) -> Digest:
        return dict(self.roots)[chain]

    def recompute(self) -> Digest:
        return merkle_root([r for _, r in sorted(self.roots)])


def update_global_exit_root(roots: Mapping[ChainId, Digest], chains: Iterable[ChainId] | None = None,
                            prev_epoch: int = -1) -> GlobalExitRoot:
    """GER over per-chain roots in ascending chain order; epoch = prev_epoch + 1."""
    if chains is not None:
        missing = sorted(set(chains) - set(roots))
        if missing:
            raise MissingChain(f"no exit root for chain(s) {missing}")
    ordered = tuple(sorted(roots.items()))
    return GlobalExitRoot(ordered, merkle_root([r for _, r in ordered]), prev_epoch + 1)


@dataclass(frozen=True)
class ClaimProof:
    leaf_proof: MerkleProof    # event digest -> origin's local exit root
    chain_root: Digest
    chain_proof: MerkleProof   # origin's root -> GER
    ger: Digest


def verify_claim_proof(event: BridgeEvent, proof: ClaimProof, anchored: GlobalExitRoot) -> bool:
    if proof.ger != anchored.ger:
        return False
    chains = [c for c, _ in anchored.roots]
    if event.origin not in chains or proof.chain_proof.index != chains.index(event.origin):
        return False
    return (verify_merkle_proof(proof.chain_root, event.digest, proof.leaf_proof)
            and verify_merkle_proof(anchored.ger, proof.chain_root, proof.chain_proof))


# --------------------------------------------------------------------------
# Pessimistic accounting
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Decision:
    allow: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.allow


class PessimisticLedger:
    def __init__(self, token_homes: Mapping[int, ChainId] | None = None):
        self.token_homes: dict[int, ChainId] = dict(token_homes or {})
        self.position: dict[tuple[ChainId, int], int] = {}
        self.exposure: dict[tuple[ChainId, int], int] = {}

    def is_foreign(self, chain: ChainId, token: int) -> bool:
        home = self.token_homes.get(token)
        return home is not None and home != chain

    def net(self, chain: ChainId, token: int) -> int:
        return self.position.get((chain, token), 0)

    def escrow(self, token: int) -> int:
        """Units of ``token`` currently held by the bridge."""
        return sum(v for (c, t), v in self.position.items() if t == token)

    def apply(self, event: BridgeEvent) -> None:
        if event.kind is EventKind.DEPOSIT:
            k = (event.origin, event.token)
            self.position[k] = self.position.get(k, 0) + event.amount
            if self.is_foreign(event.origin, event.token):
                self.exposure[k] = self.exposure.get(k, 0) - event.amount
        elif event.kind is EventKind.CLAIM:
            k = (event.origin, event.token)
            self.position[k] = self.position.get(k, 0) - event.amount
            if self.is_foreign(event.destination, event.token):
                d = (event.destination, event.token)
                self.exposure[d] = self.exposure.get(d, 0) + event.amount

    def healthy(self) -> bool:
        return all(v >= 0 for v in self.position.values()) and all(v >= 0 for v in self.exposure.values())


def pessimistic_check(ledger: PessimisticLedger, proposed: BridgeEvent) -> Decision:
    """Would applying ``proposed`` drive any net position negative? Pure."""
    if proposed.kind is EventKind.CLAIM:
        have = ledger.net(proposed.origin, proposed.token)
        if have < proposed.amount:
            return Decision(False, f"chain {proposed.origin} has {have} of token {proposed.token} "
                                   f"in the bridge, claim wants {proposed.amount}")
    elif proposed.kind is EventKind.DEPOSIT and ledger.is_foreign(proposed.origin, proposed.token):
        have = ledger.exposure.get((proposed.origin, proposed.token), 0)
        if have < proposed.amount:
            return Decision(False, f"chain {proposed.origin} received {have} of foreign token "
                                   f"{proposed.token}, deposit wants {proposed.amount}")
    return Decision(True)


# --------------------------------------------------------------------------
# Aggregation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AggregatedProof:
    epoch: int
    receipts: tuple[VerificationReceipt, ...]
    bridge_roots: tuple[tuple[ChainId, Digest], ...]
    aggregate_digest: Digest

    @staticmethod
    def compute_digest(epoch: int, receipts: Sequence[VerificationReceipt],
                       bridge_roots: Sequence[tuple[ChainId, Digest]]) -> Digest:
        parts = [b"aggregate", u64(epoch), u64(len(receipts))]
        parts.extend(framed(r.encode()) for r in receipts)
        parts.append(u64(len(bridge_roots)))
        parts.extend(u32(c) + root for c, root in bridge_roots)
        return sha256(*parts)

    def digest_ok(self) -> bool:
        return self.compute_digest(self.epoch, self.receipts, self.bridge_roots) == self.aggregate_digest

    @property
    def ger(self) -> Digest:
        return merkle_root([r for _, r in self.bridge_roots])


def aggregate(receipts: Iterable[VerificationReceipt], roots: Mapping[ChainId, Digest],
              epoch: int) -> AggregatedProof:
    receipts = tuple(receipts)
    for r in receipts:
        if r.verdict is not Verdict.ACCEPTED:
            raise NonAcceptedReceipt(f"receipt for app {r.app_id} block {r.block_no} is {r.verdict.value}")
    ordered = tuple(sorted(roots.items()))
    return AggregatedProof(epoch, receipts, ordered, AggregatedProof.compute_digest(epoch, receipts, ordered))


# --------------------------------------------------------------------------
# The bridge itself
# --------------------------------------------------------------------------


class ChainEndpoint(Protocol):
    def credit(self, event: BridgeEvent, now: int) -> None: ...

    def deliver(self, event: BridgeEvent, now: int) -> None: ...


@dataclass(frozen=True)
class LogRecord:
    kind: str
    event: BridgeEvent
    tick: int

    def line(self) -> str:
        e = self.event
        return (f"{self.tick}\t{self.kind}\t{e.origin}\t{e.destination}\t{e.token}\t{e.amount}\t{e.nonce}"
                f"\t{e.digest.hex()}")


class Agglayer:
    """Single owner of bridge state; every mutating call takes the same lock."""

    def __init__(self, chains: Iterable[ChainId] = (), token_homes: Mapping[int, ChainId] | None = None):
        self.trees: dict[ChainId, LocalExitTree] = {}
        self.endpoints: dict[ChainId, ChainEndpoint] = {}
        self.ledger = PessimisticLedger(token_homes)
        self._nonce: dict[ChainId, int] = {}
        self.events: dict[tuple[ChainId, int], BridgeEvent] = {}
        self._leaf_index: dict[tuple[ChainId, int], int] = {}
        self.claimed: set[tuple[ChainId, int]] = set()
        self.delivered: set[tuple[ChainId, int]] = set()
        self.log: list[LogRecord] = []
        self.latest: GlobalExitRoot | None = None
        self.anchored: GlobalExitRoot | None = None
        self._anchored_sizes: dict[ChainId, int] = {}
        self._root_sizes: dict[tuple[ChainId, Digest], int] = {}
        self._anchored_levels: dict[ChainId, list[list[Digest]]] = {}
        self._outbox: list[tuple[int, int, BridgeEvent]] = []
        self._outbox_seq = 0
        self.denials = 0
        self.accept_forged_inclusion = False  # fault hook: skip inclusion checks
        self._lock = threading.RLock()
        for c in chains:
            self.add_chain(c)

    def add_chain(self, chain: ChainId, endpoint: ChainEndpoint | None = None) -> None:
        with self._lock:
            self.trees.setdefault(chain, LocalExitTree(chain))
            self._nonce.setdefault(chain, 0)
            if endpoint is not None:
                self.endpoints[chain] = endpoint

    def _require(self, *chains: ChainId) -> None:
        for c in chains:
            if c not in self.trees:
                raise MissingChain(f"chain {c} is not connected")

    def _emit(self, kind: EventKind, origin, destination, token, amount, payload, recipient) -> BridgeEvent:
        ev = BridgeEvent(kind, origin, destination, token, amount, self._nonce[origin], payload, recipient)
        self._nonce[origin] += 1
        return ev

    def bridge_deposit(self, origin: ChainId, destination: ChainId, token: int, amount: int, now: int,
                       recipient: int = 0) -> tuple[BridgeEvent, Digest]:
        """Escrow ``amount`` from ``origin`` (the caller has already debited it)."""
        with self._lock:
            self._require(origin, destination)
            if amount <= 0:
                raise InvalidAmount(f"deposit amount must be positive, got {amount}")
            ev = BridgeEvent(EventKind.DEPOSIT, origin, destination, token, amount, self._nonce[origin],
                             recipient=recipient)
            decision = pessimistic_check(self.ledger, ev)
            if not decision:
                self.denials += 1
                raise PessimisticViolation(decision.reason)
            self._nonce[origin] += 1
            self._append(ev, now)
            self.ledger.apply(ev)
            return ev, self.trees[origin].root

    def send_message(self, origin: ChainId, destination: ChainId, payload: bytes,
                     now: int) -> tuple[BridgeEvent, Digest]:
        with self._lock:
            self._require(origin, destination)
            ev = self._emit(EventKind.MESSAGE, origin, destination, 0, 0, bytes(payload), 0)
            self._append(ev, now)
            return ev, self.trees[origin].root

    def _append(self, ev: BridgeEvent, now: int) -> None:
        self._leaf_index[ev.key] = self.trees[ev.origin].append(ev.digest)
        self.events[ev.key] = ev
        self.log.append(LogRecord(ev.kind.value, ev, now))

    # -- exit roots -------------------------------------------------------
    def update_global_exit_root(self) -> GlobalExitRoot:
        with self._lock:
            prev = self.latest.epoch if self.latest else -1
            for c, t in self.trees.items():
                self._root_sizes.setdefault((c, t.root), len(t))
            self.latest = update_global_exit_root({c: t.root for c, t in self.trees.items()},
                                                  self.trees, prev)
            return self.latest

    def anchor(self, ger: GlobalExitRoot) -> None:
        """Make ``ger`` the root claims are checked against (called by settlement)."""
        with self._lock:
            if ger.recompute() != ger.ger:
                raise StaleOrInvalidProof("global exit root does not recompute")
            sizes = {chain: self._size_for_root(self.trees[chain], root) for chain, root in ger.roots}
            self.anchored = ger
            self._anchored_sizes = sizes
            self._anchored_levels = {}

    def _size_for_root(self, tree: LocalExitTree, root: Digest) -> int:
        size = self._root_sizes.get((tree.chain, root))
        if size is None:
            raise StaleOrInvalidProof(f"root {root.hex()[:16]} was never published for chain {tree.chain}")
        return size

    def inclusion_proof(self, event: BridgeEvent) -> ClaimProof:
        """Proof of ``event`` against the anchored GER."""
        with self._lock:
            if self.anchored is None:
                raise StaleOrInvalidProof("no exit root has been anchored yet")
            idx = self._leaf_index.get(event.key)
            if idx is None or self.events[event.key] != event:
                raise StaleOrInvalidProof("event was never emitted")
            size = self._anchored_sizes[event.origin]
            if idx >= size:
                raise StaleOrInvalidProof("event is not under the anchored exit root yet")
            levels = self._anchored_levels.get(event.origin)
            if levels is None:
                levels = self._anchored_levels[event.origin] = self.trees[event.origin].levels_at(size)
            leaf_proof = _proof_from_levels(levels, idx)
            chains = [c for c, _ in self.anchored.roots]
            roots = [r for _, r in self.anchored.roots]
            pos = chains.index(event.origin)
            chain_proof = _proof_from_levels(kernels.merkle_levels(roots), pos)
            return ClaimProof(leaf_proof, roots[pos], chain_proof, self.anchored.ger)

    def is_claimable(self, event: BridgeEvent) -> bool:
        return (self.anchored is not None and event.key in self._leaf_index
                and self._leaf_index[event.key] < self._anchored_sizes.get(event.origin, 0))

    def _check_inclusion(self, event: BridgeEvent, proof: ClaimProof | None) -> None:
        if self.accept_forged_inclusion:
            return
        if self.anchored is None or proof is None or not verify_claim_proof(event, proof, self.anchored):
            raise StaleOrInvalidProof("inclusion proof does not verify against the anchored exit root")

    # -- claims and messages ----------------------------------------------
    def bridge_claim(self, event: BridgeEvent, proof: ClaimProof | None, now: int) -> BridgeEvent:
        """Credit ``event.amount`` on the destination chain; returns the claim record."""
        with self._lock:
            if event.kind is not EventKind.DEPOSIT:
                raise StaleOrInvalidProof("only deposits can be claimed")
            if event.key in self.claimed:
                raise DoubleClaim(f"deposit {event.key} already claimed")
            self._check_inclusion(event, proof)
            claim = BridgeEvent(EventKind.CLAIM, event.origin, event.destination, event.token, event.amount,
                                event.nonce, event.payload, event.recipient)
            decision = pessimistic_check(self.ledger, claim)
            if not decision:
                self.denials += 1
                raise PessimisticViolation(decision.reason)
            self.claimed.add(event.key)
            self.ledger.apply(claim)
            self.log.append(LogRecord(EventKind.CLAIM.value, claim, now))
            endpoint = self.endpoints.get(event.destination)
            if endpoint is not None:
                endpoint.credit(claim, now)
            return claim

    def route_message(self, event: BridgeEvent, proof: ClaimProof | None, now: int) -> int:
        """Queue ``event`` for delivery on the next tick; returns the delivery tick."""
        with self._lock:
            if event.kind is not EventKind.MESSAGE:
                raise StaleOrInvalidProof("only messages can be routed")
            if event.key in self.delivered:
                raise DuplicateDelivery(f"message {event.key} already delivered")
            self._check_inclusion(event, proof)
            self.delivered.add(event.key)
            heapq.heappush(self._outbox, (now + 1, self._outbox_seq, event))
            self._outbox_seq += 1
            return now + 1

    def deliver_due(self, now: int) -> list[BridgeEvent]:
        out = []
        with self._lock:
            while self._outbox and self._outbox[0][0] <= now:
                _, _, ev = heapq.heappop(self._outbox)
                endpoint = self.endpoints.get(ev.destination)
                if endpoint is not None:
                    endpoint.deliver(ev, now)
                self.log.append(LogRecord("delivery", ev, now))
                out.append(ev)
        return out

    @property
    def in_flight(self) -> int:
        return len(self._outbox)

    def export_log(self) -> str:
        return "".join(r.line() + "\n" for r in self.log)


def _proof_from_levels(levels: list[list[Digest]], index: int) -> MerkleProof:
    sibs = []
    i = index
    for level in levels[:-1]:
        sibs.append(level[i ^ 1])
        i >>= 1
    return MerkleProof(index, tuple(sibs))
