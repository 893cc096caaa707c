"""Discrete-tick simulation wiring sequencers, verifiers, bridge and settlement.

Phase order inside one tick (fixed, for determinism):

1. bridge message deliveries due this tick
2. scheduled actions (submissions, deposits, withdrawals, fault injection)
3. sequencers drain and seal; sealed blocks go to the DA store
4. trust-layer verification (apps in parallel unless serial, merged by app id)
5. aggregation and settlement on epoch ticks; conservation check
6. withdrawal exports, claims and message routing against the anchored root

Nothing here reads the wall clock; every seed derives from the scenario seed.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .. import zkspot
from ..agglayer import Agglayer, BridgeEvent, EventKind, aggregate
from ..core import AppStateView, KeyRegistry, derive_seed, sha256, state_root, text
from ..counter import CounterApp
from ..da import DaPolicy, DaStore
from ..errors import (ChainlessError, DataUnavailable, InsufficientFunds, InsufficientValidators,
                      IntegrityError, StaleOrInvalidProof)
from ..sequencer import BatchReceipt, FaultPolicy, Sequencer, SequencerConfig
from ..settlement import RecordStatus, SettlementChain, fold_records
from ..trust import (ChallengeWindow, Committee, Optimistic, OperatorTrust, TeePlusSpotCheck,
                     ValidatorSet, VerificationReceipt, Verdict, file_fraud_proof, operator_accept,
                     replay_block, verify_committee_detailed, verify_full_detailed, verify_tee_spotcheck)
from .scenario import Action, AppSpec, Expectation, FaultSpec, Scenario

TRUST_SIGNER = "trust-layer"
FORGED_NONCE_BASE = 1 << 31


def make_app(spec: AppSpec):
    if spec.kind == "counter":
        return CounterApp(spec.start)
    return zkspot.ZkSpotApp(spec.markets)


# --------------------------------------------------------------------------
# Chains
# --------------------------------------------------------------------------


class PlainChain:
    """A chain with a flat account ledger; the bridge's view of an L1/L2."""

    def __init__(self, chain_id: int, balances=()):
        self.id = chain_id
        self.balances: dict[tuple[int, int], int] = {}
        for acct, tok, amt in balances:
            self.balances[(acct, tok)] = self.balances.get((acct, tok), 0) + amt
        self.messages: list[BridgeEvent] = []

    def balance(self, account: int, token: int) -> int:
        return self.balances.get((account, token), 0)

    def debit(self, account: int, token: int, amount: int) -> None:
        have = self.balance(account, token)
        if have < amount:
            raise InsufficientFunds(f"account {account} on chain {self.id} has {have} of token {token}")
        self.balances[(account, token)] = have - amount

    def credit(self, event: BridgeEvent, now: int) -> None:
        key = (event.recipient, event.token)
        self.balances[key] = self.balances.get(key, 0) + event.amount

    def deliver(self, event: BridgeEvent, now: int) -> None:
        self.messages.append(event)

    def total(self, token: int) -> int:
        return sum(v for (_, t), v in self.balances.items() if t == token)


class AppChain:
    """Bridge endpoint of a Chainless App: credits and messages become inputs."""

    def __init__(self, spec: AppSpec, seq: Sequencer):
        self.spec = spec
        self.seq = seq
        self.credits: list[tuple[int, int, int]] = []   # (nonce key, token, amount)
        self.messages = 0

    def credit(self, event: BridgeEvent, now: int) -> None:
        key = zkspot.bridge_nonce_key(event.origin, event.nonce)
        self.credits.append((key, event.token, event.amount))
        self.seq.submit(zkspot.DepositCredit(event.recipient, event.token, event.amount, key).encode(), now + 1)

    def deliver(self, event: BridgeEvent, now: int) -> None:
        self.messages += 1
        self.seq.submit(event.payload, now)


# --------------------------------------------------------------------------
# Per-app verification
# --------------------------------------------------------------------------


class AppVerifier:
    """Trust-layer state for one app. Touched by one thread at a time."""

    def __init__(self, spec: AppSpec, app, seq: Sequencer, da: DaStore, registry: KeyRegistry, seed: int):
        self.spec = spec
        self.model = spec.trust
        self.app = app
        self.seq = seq
        self.da = da
        self.registry = registry
        self.seed = seed
        genesis = AppStateView(spec.id, seq.config.genesis_state.serialized_state)
        self.pre = genesis
        self.cursor = 0
        self.halted = False
        self.queue: list[BatchReceipt] = []
        self.final: dict[int, VerificationReceipt] = {}
        self.emitted: list[VerificationReceipt] = []
        self.accepted_states: dict[int, bytes] = {}
        self.work = 0
        self.unavailable = 0
        self.validators: ValidatorSet | None = None
        self.window: ChallengeWindow | None = None
        if isinstance(self.model, Committee):
            self.validators = ValidatorSet.create(registry, self.model.n, self.model.stake, spec.byzantine,
                                                  prefix=f"app{spec.id}-validator")
        if isinstance(self.model, Optimistic):
            self.window = ChallengeWindow(app, self.model.window, spec.id)
            self.challenger_pre: AppStateView | None = genesis if spec.challengers > 0 else None

    def _reject(self, br: BatchReceipt, why: str) -> VerificationReceipt:
        b = br.block
        return VerificationReceipt(self.spec.id, b.block_no, b.pre_root, b.post_root, b.block_hash,
                                   self.model.tag, Verdict.REJECTED, None, f"{why}@".encode())

    def _fetch(self, br: BatchReceipt):
        return self.da.fetch(br.block.block_hash)

    def step(self, now: int) -> None:
        """Verify queued blocks; final verdicts are appended to ``emitted``."""
        queue, self.queue = self.queue, []
        for br in queue:
            if isinstance(self.model, Optimistic):
                self._open_optimistic(br, now)
                continue
            if self.halted:
                rec = self._reject(br, "orphaned")
            else:
                rec = self._verify(br)
                if rec.verdict is Verdict.REJECTED:
                    self.halted = True
            self._finish(rec)
        if self.window is not None:
            self.window.finalize(now)
            for k in sorted(self.window.receipts):
                r = self.window.receipts[k]
                if r.verdict is not Verdict.PENDING and k not in self.final:
                    if r.verdict is Verdict.ACCEPTED:
                        self.accepted_states[k] = self.seq.block_states[k]
                    self._finish(r)

    def _finish(self, rec: VerificationReceipt) -> None:
        self.final[rec.block_no] = rec
        self.emitted.append(rec)

    def _verify(self, br: BatchReceipt) -> VerificationReceipt:
        model = self.model
        if isinstance(model, OperatorTrust):
            self.accepted_states[br.block.block_no] = self.seq.block_states[br.block.block_no]
            return operator_accept(br.block, self.spec.id)
        try:
            block = self._fetch(br)
        except DataUnavailable:
            self.unavailable += 1
            return self._reject(br, "data-unavailable")
        except IntegrityError:
            return self._reject(br, "integrity")
        if isinstance(model, TeePlusSpotCheck):
            pre_bytes = self.seq.witness(block.pre_root)
            if pre_bytes is None:
                return self._reject(br, "witness")
            rec = verify_tee_spotcheck(BatchReceipt(block, br.attestation), self.app,
                                       AppStateView(self.spec.id, pre_bytes), model.sample_rate,
                                       derive_seed(self.seed, f"spotcheck/{self.spec.id}"),
                                       registry=self.registry, witness=self.seq.witness)
            self.work += rec.work
            if rec.verdict is Verdict.ACCEPTED:
                self.accepted_states[block.block_no] = self.seq.block_states[block.block_no]
            return rec
        inbox = self.seq.inbox[self.cursor:]
        if isinstance(model, Committee):
            try:
                rec, out = verify_committee_detailed(block, self.app, self.pre, self.validators, model.q,
                                                     inbox=inbox, attestation=br.attestation)
            except InsufficientValidators:
                return self._reject(br, "insufficient-validators")
        else:
            rec, out = verify_full_detailed(block, self.app, self.pre, inbox=inbox,
                                            attestation=br.attestation, registry=self.registry)
        self.work += rec.work
        if rec.verdict is Verdict.ACCEPTED and out is not None and out.ok:
            self.cursor += out.consumed
            self.pre = out.post_state
            self.accepted_states[block.block_no] = out.post_state.serialized_state
        return rec

    def _open_optimistic(self, br: BatchReceipt, now: int) -> None:
        self.window.open(br.block, now)
        pre = self.challenger_pre
        if pre is None or pre.root != br.block.pre_root:
            return
        try:
            block = self._fetch(br)
        except DataUnavailable:
            self.unavailable += 1
            self.challenger_pre = None   # the challenger is blind from here on
            return
        except IntegrityError:
            self.challenger_pre = None
            return
        out = replay_block(block, self.app, pre)
        self.work += out.replayed
        if out.ok:
            self.challenger_pre = out.post_state
            return
        proof = file_fraud_proof(block, self.app, pre)
        if proof is not None:
            self.window.challenge(block.block_no, proof, now)
        self.challenger_pre = None

    def pending(self) -> bool:
        if self.queue:
            return True
        return self.window is not None and any(r.verdict is Verdict.PENDING for r in self.window.receipts.values())

    @property
    def slashed(self) -> int:
        return sum(r.slashed for r in self.validators.records) if self.validators else 0


# --------------------------------------------------------------------------
# Report
# --------------------------------------------------------------------------


@dataclass
class CheckResult:
    label: str
    expected: Any
    observed: Any
    passed: bool
    line: int


@dataclass
class ActionError:
    tick: int
    line: int
    action: str
    error: str
    message: str


@dataclass
class RunReport:
    scenario: str
    seed: int
    ticks: int
    epochs: list[dict] = field(default_factory=list)
    checks: list[CheckResult] = field(default_factory=list)
    action_errors: list[ActionError] = field(default_factory=list)
    totals: dict = field(default_factory=dict)
    fingerprint: str = ""
    exports: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario, "seed": self.seed, "ticks": self.ticks, "fingerprint": self.fingerprint,
            "ok": self.ok, "epochs": self.epochs, "totals": self.totals,
            "checks": [{"check": c.label, "expected": c.expected, "observed": c.observed, "passed": c.passed,
                        "line": c.line} for c in self.checks],
            "action_errors": [vars(e) for e in self.action_errors],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str)

    def to_text(self) -> str:
        lines = [f"scenario {self.scenario}  seed {self.seed}  ticks {self.ticks}",
                 f"fingerprint {self.fingerprint}", ""]
        lines.append("epoch  tick  executed  re-executed  sealed  accepted  rejected  pending  bridge  denials")
        for e in self.epochs:
            r = e["receipts"]
            lines.append(f"{e['epoch']:>5}  {e['tick']:>4}  {e['transitions_executed']:>8}  "
                         f"{e['transitions_reexecuted']:>11}  {e['blocks_sealed']:>6}  {r['accepted']:>8}  "
                         f"{r['rejected']:>8}  {r['pending']:>7}  {e['bridge_events']:>6}  {e['denials']:>7}")
        if self.action_errors:
            lines.append("")
            for a in self.action_errors:
                where = f"action at line {a.line}" if a.line else "harness"
                lines.append(f"{where} (tick {a.tick}, {a.action}) failed: {a.error}: {a.message}")
        lines.append("")
        for c in self.checks:
            mark = "PASS" if c.passed else "FAIL"
            lines.append(f"{mark}  {c.label}: expected {c.expected!r}, observed {c.observed!r}")
        lines.append("")
        lines.append("all expectations met" if self.ok else
                     f"{sum(not c.passed for c in self.checks)} expectation(s) failed")
        return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Simulation
# --------------------------------------------------------------------------


class Simulation:
    MAX_EXTRA_TICKS = 10_000

    def __init__(self, scenario: Scenario, seed: int | None = None, serial: bool = False):
        self.scenario = scenario if seed is None else scenario.with_seed(seed)
        sc = self.scenario
        self.serial = serial
        self.registry = KeyRegistry()
        self.registry.register(TRUST_SIGNER)
        self.da = DaStore()
        self.agglayer = Agglayer(token_homes={t.id: t.home for t in sc.tokens if t.home is not None})
        self.settlement = SettlementChain(self.registry, {TRUST_SIGNER}, self.agglayer)
        self.plain: dict[int, PlainChain] = {}
        self.apps: dict[int, AppChain] = {}
        self.verifiers: dict[int, AppVerifier] = {}
        self.sequencers: dict[int, Sequencer] = {}
        self.genesis: dict[int, AppStateView] = {}
        for c in sorted(sc.chains, key=lambda c: c.id):
            self.plain[c.id] = PlainChain(c.id, c.balances)
            self.agglayer.add_chain(c.id, self.plain[c.id])
        for a in sorted(sc.apps, key=lambda a: a.id):
            app = make_app(a)
            genesis = AppStateView(a.id, app.encode_state(app.initial_state()))
            seq = Sequencer(SequencerConfig(a.id, genesis, a.mu, a.nu), app, self.registry, a.fault)
            self.genesis[a.id] = genesis
            self.sequencers[a.id] = seq
            self.apps[a.id] = AppChain(a, seq)
            self.agglayer.add_chain(a.id, self.apps[a.id])
            self.settlement.register_app(a.id, genesis.root)
            self.verifiers[a.id] = AppVerifier(a, make_app(a), seq, self.da, self.registry, sc.seed)

        self.now = -1
        self.epochs: list[dict] = []
        self.action_errors: list[ActionError] = []
        self.receipt_log: list[str] = []
        self._ready: dict[int, list[VerificationReceipt]] = {a: [] for a in self.apps}
        self._settled_block: dict[int, int] = {}
        self._exported: dict[int, dict[int, tuple[int, int]]] = {a: {} for a in self.apps}
        self._failed_exports: dict[int, set[int]] = {a: set() for a in self.apps}
        self._done_events: set[tuple[int, int]] = set()
        self.claims = 0
        self.pessimistic_ok = True
        self.conservation_ok = True
        self.conservation_checks = 0
        self._baseline = self._token_totals()
        self._counters = self._snapshot_counters()
        self._pool = None if serial or len(self.apps) < 2 else ThreadPoolExecutor(max_workers=min(8, len(self.apps)))

    # -- bookkeeping ------------------------------------------------------
    def _tokens(self) -> list[int]:
        toks = {t.id for t in self.scenario.tokens}
        for c in self.plain.values():
            toks.update(t for _, t in c.balances)
        return sorted(toks)

    def accepted_state(self, app_id: int) -> bytes:
        v = self.verifiers[app_id]
        if v.accepted_states:
            return v.accepted_states[max(v.accepted_states)]
        return self.genesis[app_id].serialized_state

    def finalized_state(self, app_id: int) -> bytes:
        k = self._settled_block.get(app_id)
        if k is None:
            return self.genesis[app_id].serialized_state
        return self.verifiers[app_id].accepted_states[k]

    def _token_totals(self) -> dict[int, int]:
        """Per-token total across plain chains, bridge escrow and app ledgers.

        App ledgers are taken at their last accepted state; credits claimed to
        an app but not yet in that state count as in flight, and withdrawals
        already exported to the bridge but not yet burned there are subtracted.
        """
        totals = {t: 0 for t in self._tokens()}
        for c in self.plain.values():
            for (_, t), v in c.balances.items():
                totals[t] = totals.get(t, 0) + v
        for (_, t), v in self.agglayer.ledger.position.items():
            totals[t] = totals.get(t, 0) + v
        for app_id, chain in self.apps.items():
            if chain.spec.kind != "zkspot":
                continue
            st = zkspot.SpotState.decode(self.accepted_state(app_id))
            for t, v in st.supply.items():
                totals[t] = totals.get(t, 0) + v
            for key, t, amount in chain.credits:
                if key not in st.nonces:
                    totals[t] = totals.get(t, 0) + amount
            for wid, (t, amount) in self._exported[app_id].items():
                if wid in st.withdrawals:
                    totals[t] -= amount
        return totals

    def _snapshot_counters(self) -> dict:
        return {
            "executed": sum(s.executed for s in self.sequencers.values()),
            "work": sum(v.work for v in self.verifiers.values()),
            "sealed": sum(len(s.receipts) for s in self.sequencers.values()),
            "bridge": len(self.agglayer.log),
            "denials": self.agglayer.denials,
            "accepted": sum(r.verdict is Verdict.ACCEPTED for v in self.verifiers.values() for r in v.emitted),
            "rejected": sum(r.verdict is Verdict.REJECTED for v in self.verifiers.values() for r in v.emitted),
        }

    def _error(self, action: Action | None, exc: Exception, kind: str = "") -> None:
        self.action_errors.append(ActionError(self.now, action.line if action else 0,
                                              action.kind if action else kind, type(exc).__name__, str(exc)))

    # -- phases -----------------------------------------------------------
    def step(self, t: int, actions: list[Action]) -> None:
        self.now = t
        self.agglayer.deliver_due(t)
        settle = t > 0 and t % self.scenario.epoch_interval == 0
        for a in actions:
            if a.kind == "settle":
                settle = True
            else:
                self._do(a, t)
        for app_id, seq in self.sequencers.items():
            for br in seq.process(t):
                self.da.publish(br.block, DaPolicy(self.apps[app_id].spec.da))
                self.verifiers[app_id].queue.append(br)
        self._verify(t)
        if settle:
            self._settle(t)
        self._exports_and_claims(t)
        self.pessimistic_ok &= self.agglayer.ledger.healthy()

    def _verify(self, t: int) -> None:
        ids = sorted(self.verifiers)
        before = {i: len(self.verifiers[i].emitted) for i in ids}
        if self._pool is not None:
            list(self._pool.map(lambda i: self.verifiers[i].step(t), ids))
        else:
            for i in ids:
                self.verifiers[i].step(t)
        for i in ids:
            for r in self.verifiers[i].emitted[before[i]:]:
                self.receipt_log.append(r.export_line())
                if r.verdict is Verdict.ACCEPTED:
                    self._ready[i].append(r)

    def _settle(self, t: int) -> None:
        receipts = []
        for app_id in sorted(self._ready):
            receipts.extend(r.signed(self.registry, TRUST_SIGNER) for r in self._ready[app_id])
        ger = self.agglayer.update_global_exit_root()
        agg = aggregate(receipts, dict(ger.roots), ger.epoch)
        try:
            self.settlement.submit_aggregate(agg, t)
            self.settlement.record_bridge_events(agg)
        except ChainlessError as exc:
            self._error(None, exc, "settle")
        else:
            for app_id, rs in self._ready.items():
                if rs:
                    self._settled_block[app_id] = rs[-1].block_no
                rs.clear()
        totals = self._token_totals()
        held = totals == self._baseline
        self.conservation_ok &= held
        self.conservation_checks += 1
        cur = self._snapshot_counters()
        prev = self._counters
        self._counters = cur
        self.epochs.append({
            "epoch": ger.epoch, "tick": t,
            "transitions_executed": cur["executed"] - prev["executed"],
            "transitions_reexecuted": cur["work"] - prev["work"],
            "blocks_sealed": cur["sealed"] - prev["sealed"],
            "receipts": {"accepted": cur["accepted"] - prev["accepted"],
                         "rejected": cur["rejected"] - prev["rejected"],
                         "pending": sum(v.pending() for v in self.verifiers.values())},
            "bridge_events": cur["bridge"] - prev["bridge"],
            "denials": cur["denials"] - prev["denials"],
            "conservation": held,
        })

    def _exports_and_claims(self, t: int) -> None:
        for app_id, chain in self.apps.items():
            if chain.spec.kind != "zkspot" or app_id not in self._settled_block:
                continue
            st = zkspot.SpotState.decode(self.finalized_state(app_id))
            for w in st.pending_withdrawals():
                if w.withdrawal_id in self._exported[app_id] or w.withdrawal_id in self._failed_exports[app_id]:
                    continue
                try:
                    self.agglayer.bridge_deposit(app_id, w.destination, w.token, w.amount, t, recipient=w.account)
                except ChainlessError as exc:
                    self._failed_exports[app_id].add(w.withdrawal_id)
                    self._error(None, exc, f"export withdrawal {w.withdrawal_id} of app {app_id}")
                    continue
                self._exported[app_id][w.withdrawal_id] = (w.token, w.amount)
                chain.seq.submit(zkspot.WithdrawFinalize(w.withdrawal_id).encode(), t + 1)
        for key, ev in list(self.agglayer.events.items()):
            if key in self._done_events or not self.agglayer.is_claimable(ev):
                continue
            self._done_events.add(key)
            try:
                proof = self.agglayer.inclusion_proof(ev)
                if ev.kind is EventKind.DEPOSIT:
                    if key not in self.agglayer.claimed:
                        self.agglayer.bridge_claim(ev, proof, t)
                        self.claims += 1
                elif key not in self.agglayer.delivered:
                    self.agglayer.route_message(ev, proof, t)
            except ChainlessError as exc:
                self._error(None, exc, f"claim {ev.kind.value} {key}")

    def _do(self, a: Action, t: int) -> None:
        args = a.args
        try:
            if a.kind == "submit":
                self.sequencers[args["app"]].submit(args["payload"], t)
            elif a.kind == "deposit":
                src = self.plain[args["from"]]
                amount = args["amount"]
                if amount > 0:
                    src.debit(args["account"], args["token"], amount)
                try:
                    self.agglayer.bridge_deposit(args["from"], args["to"], args["token"], amount, t,
                                                 recipient=args["recipient"])
                except ChainlessError:
                    if amount > 0:
                        src.balances[(args["account"], args["token"])] += amount
                    raise
            elif a.kind == "withdraw":
                payload = zkspot.WithdrawLock(args["account"], args["token"], args["amount"], args["to"]).encode()
                self.sequencers[args["app"]].submit(payload, t)
            elif a.kind == "message":
                self.agglayer.send_message(args["from"], args["to"], args["payload"], t)
            elif a.kind == "claim":
                ev = self.agglayer.events.get((args["origin"], args["nonce"]))
                if ev is None:
                    raise StaleOrInvalidProof(f"no event {args['nonce']} from chain {args['origin']}")
                proof = self.agglayer.inclusion_proof(ev)
                self.agglayer.bridge_claim(ev, proof, t)
                self.claims += 1
                self._done_events.add(ev.key)
            elif a.kind == "forge_claim":
                nonce = FORGED_NONCE_BASE + a.index
                ev = BridgeEvent(EventKind.DEPOSIT, args["origin"], args["to"], args["token"], args["amount"],
                                 nonce, recipient=args["recipient"])
                self.agglayer.accept_forged_inclusion = True
                try:
                    self.agglayer.bridge_claim(ev, None, t)
                    self.claims += 1
                finally:
                    self.agglayer.accept_forged_inclusion = False
            elif a.kind == "inject_fault":
                self.sequencers[args["app"]].set_fault(args["policy"])
            elif a.kind == "tamper_da":
                seq = self.sequencers[args["app"]]
                if args["block"] >= len(seq.receipts):
                    raise IntegrityError(f"app {args['app']} has not sealed block {args['block']} yet")
                self.da.tamper(seq.receipts[args["block"]].block.block_hash)
        except ChainlessError as exc:
            self._error(a, exc)

    # -- driver -------------------------------------------------------------
    def busy(self) -> bool:
        if any(s.mailbox_size or s.pending_count for s in self.sequencers.values()):
            return True
        if any(v.pending() for v in self.verifiers.values()):
            return True
        if any(self._ready.values()) or self.agglayer.in_flight:
            return True
        anchored = self.agglayer.anchored
        for c, tree in self.agglayer.trees.items():
            if len(tree) and (anchored is None or self.agglayer._anchored_sizes.get(c, 0) < len(tree)):
                return True
        return False

    def run(self) -> RunReport:
        sc = self.scenario
        by_tick: dict[int, list[Action]] = {}
        for a in sc.schedule:
            by_tick.setdefault(a.tick, []).append(a)
        horizon = max([sc.ticks] + [a.tick for a in sc.schedule])
        t = 0
        try:
            while t <= horizon or self.busy():
                if t > horizon + self.MAX_EXTRA_TICKS:
                    self.action_errors.append(ActionError(t, 0, "run", "NoQuiescence",
                                                          "simulation did not settle down"))
                    break
                self.step(t, by_tick.get(t, []))
                t += 1
        finally:
            if self._pool is not None:
                self._pool.shutdown()
        return self._report(t)

    # -- exports and checks ------------------------------------------------
    def exports(self) -> dict[str, str]:
        out = {}
        for app_id, seq in self.sequencers.items():
            spec = self.apps[app_id].spec
            header = {"app": spec.kind, "app_id": app_id,
                      "genesis_state": self.genesis[app_id].serialized_state.hex()}
            if spec.kind == "zkspot":
                header["markets"] = [list(m) for m in spec.markets]
            else:
                header["start"] = spec.start
            lines = [json.dumps(header, sort_keys=True)]
            lines.extend(br.block.encode().hex() for br in seq.receipts)
            out[f"trace-{app_id}.jsonl"] = "\n".join(lines) + "\n"
        out["receipts.tsv"] = "".join(line + "\n" for line in self.receipt_log)
        out["bridge.log"] = self.agglayer.export_log()
        out["settlement.log"] = self.settlement.export_log()
        return out

    @staticmethod
    def fingerprint(exports: dict[str, str]) -> str:
        return sha256(*(text(name) + text(exports[name]) for name in sorted(exports))).hex()

    def observe(self, exp: Expectation) -> Any:
        a = exp.args
        c = exp.check
        if c == "pessimistic_invariant":
            return self.pessimistic_ok
        if c == "conservation":
            return self.conservation_ok and self._token_totals() == self._baseline
        if c == "denials":
            return self.agglayer.denials
        if c == "claims":
            return self.claims
        if c == "action_errors":
            errs = self.action_errors
            if "error" in a:
                errs = [e for e in errs if e.error == a["error"]]
            return len(errs)
        if c == "balance":
            return self.plain[a["chain"]].balance(a.get("account", 0), a["token"])
        if c == "delivered_messages":
            if "app" in a:
                return self.apps[a["app"]].messages
            return sum(len(p.messages) for p in self.plain.values()) + sum(x.messages for x in self.apps.values())
        app_id = a.get("app")
        if app_id not in self.verifiers:
            raise KeyError(f"check {c} needs an app id")
        v = self.verifiers[app_id]
        seq = self.sequencers[app_id]
        if c == "all_blocks_accepted":
            return len(seq.receipts) > 0 and all(
                v.final.get(k) is not None and v.final[k].verdict is Verdict.ACCEPTED for k in range(len(seq.receipts)))
        if c == "rejected_blocks":
            return sum(r.verdict is Verdict.REJECTED for r in v.final.values())
        if c == "first_rejected_block":
            rej = [k for k, r in v.final.items() if r.verdict is Verdict.REJECTED]
            return min(rej) if rej else None
        if c == "blocks_sealed":
            return len(seq.receipts)
        if c == "transitions":
            return seq.executed
        if c == "finalized_epochs":
            return sum(r.app_id == app_id and r.status is RecordStatus.FINALIZED for r in self.settlement.records)
        if c == "slashed":
            return v.slashed
        if c == "data_unavailable":
            return v.unavailable
        if c == "canonical_root_matches":
            if app_id not in self._settled_block:
                return False
            root, _ = self.settlement.query_canonical_root(app_id)
            folded = fold_records(self.settlement.records)[app_id][0]
            return root == folded == state_root(self.finalized_state(app_id))
        if c == "app_balance":
            source = a.get("state", "finalized")
            data = self.finalized_state(app_id) if source == "finalized" else seq.app.encode_state(seq.live_state)
            avail, locked = zkspot.SpotState.decode(data).balance(a.get("account", 0), a["token"])
            return {"available": avail, "locked": locked}.get(a.get("field", "total"), avail + locked)
        raise KeyError(c)

    def _report(self, ticks: int) -> RunReport:
        exports = self.exports()
        report = RunReport(self.scenario.name, self.scenario.seed, ticks, self.epochs,
                           action_errors=self.action_errors, exports=exports)
        report.fingerprint = self.fingerprint(exports)
        report.totals = {
            "transitions_executed": sum(s.executed for s in self.sequencers.values()),
            "transitions_reexecuted": sum(v.work for v in self.verifiers.values()),
            "blocks_sealed": sum(len(s.receipts) for s in self.sequencers.values()),
            "claims": self.claims, "denials": self.agglayer.denials,
            "conservation_checks": self.conservation_checks,
            "rejected_blocks": {str(i): sum(r.verdict is Verdict.REJECTED for r in v.final.values())
                                for i, v in self.verifiers.items()},
        }
        for exp in self.scenario.expectations:
            try:
                observed = self.observe(exp)
            except (KeyError, ChainlessError) as exc:
                observed = f"error: {exc}"
            report.checks.append(CheckResult(exp.label, exp.expect, observed, exp.matches(observed), exp.line))
        return report


def run_scenario(scenario: Scenario, seed: int | None = None, serial: bool = False,
                 out_dir: str | Path | None = None) -> RunReport:
    report = Simulation(scenario, seed, serial).run()
    if out_dir is not None:
        write_exports(report, out_dir)
    return report


def write_exports(report: RunReport, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, content in report.exports.items():
        (out / name).write_text(content)
    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.to_text())


# --------------------------------------------------------------------------
# Trust-model comparison
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonRow:
    model: str
    detected: frozenset[str]
    work: int
    false_rejects: int
    corpus: tuple[str, ...]


def compare_trust_models(scenario: Scenario, models, serial: bool = True) -> list[ComparisonRow]:
    """Run the honest baseline plus one variant per corpus fault under each model.

    A fault counts as detected when the faulted app has at least one rejected
    block. ``work`` sums transitions re-executed over every run of the model.
    """
    corpus = list(scenario.faults) or [
        FaultSpec(a.id, a.fault, a.line) for a in scenario.apps if a.fault.mode.value != "honest"]
    if not corpus:
        raise ValueError("compare-trust needs a scenario with at least one fault")
    honest_apps = tuple(replace(a, fault=FaultPolicy()) for a in scenario.apps)
    rows = []
    for model in models:
        apps = tuple(replace(a, trust=model, byzantine=()) for a in honest_apps)
        base = replace(scenario, apps=apps, expectations=())
        work = 0
        detected = set()
        sim = Simulation(base, serial=serial)
        sim.run()
        work += sum(v.work for v in sim.verifiers.values())
        false_rejects = sum(r.verdict is Verdict.REJECTED for v in sim.verifiers.values() for r in v.final.values())
        for f in corpus:
            variant = base.with_app(replace(base.app(f.app), fault=f.policy))
            sim = Simulation(variant, serial=serial)
            sim.run()
            work += sum(v.work for v in sim.verifiers.values())
            if any(r.verdict is Verdict.REJECTED for r in sim.verifiers[f.app].final.values()):
                detected.add(f.label)
        rows.append(ComparisonRow(model.tag if not isinstance(model, Committee) else
                                  f"Committee(n={model.n},q={model.q})", frozenset(detected), work,
                                  false_rejects, tuple(f.label for f in corpus)))
    return rows


def format_comparison(rows: list[ComparisonRow]) -> str:
    lines = [f"{'model':<26} {'detected':>8} {'re-executed':>12} {'false rejects':>14}"]
    for r in rows:
        lines.append(f"{r.model:<26} {len(r.detected):>5}/{len(r.corpus):<2} {r.work:>12} {r.false_rejects:>14}")
    if rows:
        lines.append("")
        for label in rows[0].corpus:
            marks = " ".join("x" if label in r.detected else "." for r in rows)
            lines.append(f"  {marks}  {label}")
    return "\n".join(lines) + "\n"
