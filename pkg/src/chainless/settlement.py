"""Simulated base chain: checks aggregates and anchors roots immutably.

The chain never re-executes application logic. It checks the aggregate
digest, receipt verdicts and signatures, and that each app's receipts
continue from its last finalized root. Any failure rejects the whole
aggregate.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from .agglayer import AggregatedProof, Agglayer, GlobalExitRoot
from .core import Digest, KeyRegistry, ZERO_DIGEST
from .errors import (ChainlessError, ContinuityViolation, DigestMismatch, FinalityViolation, NonAcceptedReceipt,
                     UnknownApp)
from .trust import Verdict


class RecordStatus(str, Enum):
    FINALIZED = "finalized"
    REJECTED = "rejected"


@dataclass(frozen=True)
class SettlementRecord:
    epoch: int
    app_id: int
    state_root: Digest
    bridge_root: Digest
    finalized_at: int
    status: RecordStatus
    reason: str = ""

    def line(self) -> str:
        return (f"{self.epoch}\t{self.app_id}\t{self.state_root.hex()}\t{self.bridge_root.hex()}"
                f"\t{self.finalized_at}\t{self.status.value}")


@dataclass(frozen=True)
class CanonicalView:
    roots: tuple[tuple[int, Digest, int], ...]   # (app_id, state_root, epoch), sorted by app
    ger: Digest | None
    ger_epoch: int | None


def fold_records(records: Iterable[SettlementRecord]) -> dict[int, tuple[Digest, int]]:
    """Latest finalized root per app, by folding the log in epoch order."""
    out: dict[int, tuple[Digest, int]] = {}
    for r in sorted((r for r in records if r.status is RecordStatus.FINALIZED), key=lambda r: r.epoch):
        out[r.app_id] = (r.state_root, r.epoch)
    return out


class SettlementChain:
    def __init__(self, registry: KeyRegistry | None = None, trusted_signers: Iterable[str] = (),
                 agglayer: Agglayer | None = None):
        self.registry = registry
        self.trusted_signers = set(trusted_signers)
        self.agglayer = agglayer
        self.records: list[SettlementRecord] = []
        self._genesis: dict[int, Digest] = {}
        self._latest: dict[int, tuple[Digest, int]] = {}
        self._finalized: set[tuple[int, int]] = set()
        self._finalized_epochs: set[int] = set()
        self._last_epoch = -1
        self.anchored: GlobalExitRoot | None = None
        self._lock = threading.Lock()

    def register_app(self, app_id: int, genesis_root: Digest) -> None:
        self._genesis[app_id] = genesis_root

    def expected_root(self, app_id: int) -> Digest:
        if app_id in self._latest:
            return self._latest[app_id][0]
        if app_id in self._genesis:
            return self._genesis[app_id]
        raise UnknownApp(f"app {app_id} is not registered")

    def submit_aggregate(self, agg: AggregatedProof, now: int) -> list[SettlementRecord]:
        with self._lock:
            try:
                finals = self._check(agg)
            except ChainlessError as exc:
                for app_id in sorted({r.app_id for r in agg.receipts}):
                    self.records.append(SettlementRecord(agg.epoch, app_id, ZERO_DIGEST,
                                                         self._bridge_root(agg, app_id), now,
                                                         RecordStatus.REJECTED, type(exc).__name__))
                raise
            out = []
            for app_id, root in finals.items():
                key = (agg.epoch, app_id)
                if key in self._finalized:
                    raise FinalityViolation(f"epoch {agg.epoch} of app {app_id} is already final")
                rec = SettlementRecord(agg.epoch, app_id, root, self._bridge_root(agg, app_id), now,
                                       RecordStatus.FINALIZED)
                self.records.append(rec)
                self._finalized.add(key)
                self._latest[app_id] = (root, agg.epoch)
                out.append(rec)
            self._finalized_epochs.add(agg.epoch)
            self._last_epoch = agg.epoch
            return out

    @staticmethod
    def _bridge_root(agg: AggregatedProof, app_id: int) -> Digest:
        return dict(agg.bridge_roots).get(app_id, ZERO_DIGEST)

    def _check(self, agg: AggregatedProof) -> dict[int, Digest]:
        if not agg.digest_ok():
            raise DigestMismatch("aggregate_digest does not recompute")
        if agg.epoch <= self._last_epoch:
            raise FinalityViolation(f"epoch {agg.epoch} is not after the last settled epoch {self._last_epoch}")
        running: dict[int, Digest] = {}
        for r in agg.receipts:
            if r.verdict is not Verdict.ACCEPTED:
                raise NonAcceptedReceipt(f"receipt for app {r.app_id} block {r.block_no} is {r.verdict.value}")
            if self.registry is not None and self.trusted_signers:
                if r.signer not in self.trusted_signers or not r.signature_ok(self.registry):
                    raise NonAcceptedReceipt(f"receipt for app {r.app_id} block {r.block_no} is not validly signed")
            if r.app_id not in running:
                try:
                    running[r.app_id] = self.expected_root(r.app_id)
                except UnknownApp as exc:
                    raise ContinuityViolation(str(exc)) from None
            if r.pre_root != running[r.app_id]:
                raise ContinuityViolation(f"app {r.app_id} block {r.block_no} does not continue from "
                                          f"the last finalized root")
            running[r.app_id] = r.post_root
        return running

    def record_bridge_events(self, agg: AggregatedProof) -> GlobalExitRoot:
        """Anchor the aggregate's bridge roots; claims are checked against these only."""
        with self._lock:
            if agg.epoch not in self._finalized_epochs:
                raise FinalityViolation(f"aggregate for epoch {agg.epoch} was not finalized")
            ger = GlobalExitRoot(agg.bridge_roots, agg.ger, agg.epoch)
            self.anchored = ger
        if self.agglayer is not None:
            self.agglayer.anchor(ger)
        return ger

    def query_canonical_root(self, app_id: int) -> tuple[Digest, int]:
        try:
            return self._latest[app_id]
        except KeyError:
            raise UnknownApp(f"app {app_id} has no finalized record") from None

    def canonical_view(self) -> CanonicalView:
        return CanonicalView(tuple((a, r, e) for a, (r, e) in sorted(self._latest.items())),
                             self.anchored.ger if self.anchored else None,
                             self.anchored.epoch if self.anchored else None)

    def export_log(self) -> str:
        return "".join(r.line() + "\n" for r in self.records)
