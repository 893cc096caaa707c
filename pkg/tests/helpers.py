"""Generators and drivers shared by the unit and acceptance suites."""

from __future__ import annotations

import random

import oracles
from chainless import zkspot as z
from chainless.core import AppStateView, KeyRegistry
from chainless.counter import CounterApp
from chainless.errors import RejectedInput
from chainless.sequencer import FaultMode, FaultPolicy, SequencerConfig, run_with_faults
from chainless.trust import verify_full_detailed

BASE, QUOTE = 2, 1
FUNDING = 10**9


def order_stream(rng: random.Random, n_orders: int, accounts: int = 4) -> list[tuple]:
    """``("place", acct, side, price, qty)`` and ``("cancel", acct, oid)`` ops."""
    ops = []
    placed = 0
    for _ in range(n_orders):
        if placed and rng.random() < 0.15:
            ops.append(("cancel", rng.randrange(accounts), rng.randrange(placed + 2)))
        ops.append(("place", rng.randrange(accounts), rng.randrange(2), rng.randint(1, 12), rng.randint(1, 9)))
        placed += 1
    return ops


def run_engine(ops, accounts: int = 4):
    """Feed ``ops`` to the engine; returns (fills, balances, resting ids)."""
    state = z.SpotState([(BASE, QUOTE)])
    nonce = 0
    for a in range(accounts):
        for t in (BASE, QUOTE):
            z.deposit_credit(state, z.DepositCredit(a, t, FUNDING, nonce))
            nonce += 1
    fills = []
    for op in ops:
        try:
            if op[0] == "place":
                _, a, side, px, q = op
                fills += [(e.maker_order_id, e.taker_order_id, e.price, e.quantity)
                          for e in z.place_limit(state, z.PlaceLimit(a, 0, side, px, q))]
            else:
                z.cancel(state, op[1], op[2])
        except RejectedInput:
            pass
    bal = {k: tuple(v) for k, v in state.balances.items() if tuple(v) != (0, 0)}
    return fills, bal, sorted(state.orders)


def run_reference(ops, accounts: int = 4):
    book = oracles.RefBook(BASE, QUOTE)
    for a in range(accounts):
        for t in (BASE, QUOTE):
            book.fund(a, t, FUNDING)
    fills = []
    for op in ops:
        if op[0] == "place":
            got = book.place(*op[1:])
            fills += got or []
        else:
            book.cancel(op[1], op[2])
    return fills, book.balances(), sorted(o.oid for o in book.resting)


# --------------------------------------------------------------------------
# Soundness corpus: sequencer runs under each fault mode, verified by replay
# --------------------------------------------------------------------------


def counter_inputs(rng: random.Random, n: int) -> list[tuple[int, bytes]]:
    out = []
    tick = 1
    for _ in range(n):
        tick += rng.random() < 0.4
        if rng.random() < 0.1:
            out.append((tick, b"-999999"))   # rejected by the app
        else:
            out.append((tick, b"+%d" % rng.randint(1, 50)))
    return out


def spot_inputs(rng: random.Random, n: int) -> list[tuple[int, bytes]]:
    out = [(1, z.DepositCredit(a, t, 10**6, a * 2 + t).encode()) for a in range(3) for t in (1, 2)]
    tick = 2
    for _ in range(n):
        tick += rng.random() < 0.4
        out.append((tick, z.PlaceLimit(rng.randrange(3), 0, rng.randrange(2), rng.randint(1, 9),
                                       rng.randint(1, 5)).encode()))
    return out


def corpus_case(i: int, mode: FaultMode):
    """Deterministic case ``i``: (app, config, inputs, policy)."""
    rng = random.Random(f"soundness/{mode.value}/{i}")
    if i % 2:
        app = z.ZkSpotApp()
        inputs = spot_inputs(rng, rng.randint(12, 40))
    else:
        app = CounterApp()
        inputs = counter_inputs(rng, rng.randint(12, 40))
    cfg = SequencerConfig(1, AppStateView(1, app.encode_state(app.initial_state())),
                          mu=rng.randint(2, 6), nu=rng.randint(1, 3))
    policy = FaultPolicy(mode, block_no=rng.randint(0, 2), seq_no=rng.randint(0, 3))
    return app, cfg, inputs, policy


def verify_chain(app, cfg, seq, receipts, registry):
    """Full-replay verdicts per block, halting after the first rejection."""
    pre = cfg.genesis_state
    cursor = 0
    verdicts = []
    halted = False
    for r in receipts:
        if halted:
            verdicts.append(False)
            continue
        rec, out = verify_full_detailed(r.block, app, pre, inbox=seq.inbox[cursor:], attestation=r.attestation,
                                        registry=registry)
        ok = rec.verdict.value == "accepted"
        verdicts.append(ok)
        if ok:
            pre, cursor = out.post_state, cursor + out.consumed
        else:
            halted = True
    return verdicts


def soundness_case(i: int, mode: FaultMode):
    """Returns (verdicts, truth): truth[k] is True iff receipts 0..k match the honest run."""
    app, cfg, inputs, policy = corpus_case(i, mode)
    reg = KeyRegistry()
    seq, receipts = run_with_faults(cfg, app, reg, policy, inputs)
    _, honest = run_with_faults(cfg, app, KeyRegistry(), FaultPolicy(), inputs)
    truth = []
    clean = True
    for k, r in enumerate(receipts):
        clean = clean and k < len(honest) and r.block == honest[k].block and r.attestation == honest[k].attestation
        truth.append(clean)
    return verify_chain(app, cfg, seq, receipts, reg), truth, seq._fault_fired


# --------------------------------------------------------------------------
# Bridge fuzz: deposit / claim / fault interleavings across three chains
# --------------------------------------------------------------------------

CHAINS = (1, 2, 3)
HOMES = {1: 1, 2: 2}
INITIAL = {(1, 1): 1000, (2, 2): 1000}


class FuzzFailure(AssertionError):
    pass


def bridge_interleaving(seed: int, steps: int = 25) -> dict:
    """Run one random interleaving; raises FuzzFailure on any broken invariant."""
    from chainless.agglayer import Agglayer, BridgeEvent, EventKind
    from chainless.errors import DoubleClaim, PessimisticViolation, StaleOrInvalidProof

    rng = random.Random(seed)
    bridge = Agglayer(CHAINS, HOMES)
    hist = oracles.BridgeHistory(dict(HOMES))
    held = dict(INITIAL)                  # (chain, token) -> units held on that chain
    unclaimed: list[BridgeEvent] = []
    claimed: list[BridgeEvent] = []
    stats = {"deposits": 0, "claims": 0, "denied": 0, "settles": 0, "faults": 0}

    def check(what):
        if not bridge.ledger.healthy() or not hist.all_non_negative(CHAINS, HOMES):
            raise FuzzFailure(f"seed {seed}: negative position after {what}")
        for c in CHAINS:
            for t in HOMES:
                if bridge.ledger.net(c, t) != hist.escrowed(c, t):
                    raise FuzzFailure(f"seed {seed}: position ({c},{t}) disagrees with oracle after {what}")
                if HOMES[t] != c and bridge.ledger.exposure.get((c, t), 0) != hist.received(c, t):
                    raise FuzzFailure(f"seed {seed}: exposure ({c},{t}) disagrees with oracle after {what}")

    def conserved():
        for t in HOMES:
            total = sum(v for (c, tok), v in held.items() if tok == t) + bridge.ledger.escrow(t)
            if total != sum(v for (c, tok), v in INITIAL.items() if tok == t):
                raise FuzzFailure(f"seed {seed}: token {t} not conserved")

    for now in range(steps):
        op = rng.choices(("deposit", "claim", "settle", "mint", "forge", "early", "double"),
                         (5, 4, 2, 1, 1, 1, 1))[0]
        if op == "deposit":
            origin, token = rng.choice(CHAINS), rng.choice(tuple(HOMES))
            have = held.get((origin, token), 0)
            if not have:
                continue
            dest = rng.choice([c for c in CHAINS if c != origin])
            amount = rng.randint(1, have)
            allowed = hist.deposit_allowed(origin, token, amount)
            try:
                ev, _ = bridge.bridge_deposit(origin, dest, token, amount, now)
            except PessimisticViolation:
                if allowed:
                    raise FuzzFailure(f"seed {seed}: honest deposit denied")
                stats["denied"] += 1
            else:
                if not allowed:
                    raise FuzzFailure(f"seed {seed}: deposit allowed against oracle")
                held[(origin, token)] = have - amount
                hist.deposits.append((origin, dest, token, amount))
                unclaimed.append(ev)
                stats["deposits"] += 1
        elif op == "claim":
            ready = [e for e in unclaimed if bridge.is_claimable(e)]
            if not ready:
                continue
            ev = rng.choice(ready)
            if not hist.claim_allowed(ev.origin, ev.token, ev.amount):
                raise FuzzFailure(f"seed {seed}: oracle refuses an honest claim")
            bridge.bridge_claim(ev, bridge.inclusion_proof(ev), now)
            unclaimed.remove(ev)
            claimed.append(ev)
            hist.claims.append((ev.origin, ev.destination, ev.token, ev.amount))
            k = (ev.destination, ev.token)
            held[k] = held.get(k, 0) + ev.amount
            stats["claims"] += 1
        elif op == "settle":
            bridge.anchor(bridge.update_global_exit_root())
            conserved()
            stats["settles"] += 1
        elif op == "mint":
            # a corrupted chain tries to push out more of a foreign token than it ever received
            origin = rng.choice(CHAINS)
            token = rng.choice([t for t, h in HOMES.items() if h != origin] or [0])
            if token == 0:
                continue
            amount = held.get((origin, token), 0) + rng.randint(1, 500)
            try:
                bridge.bridge_deposit(origin, rng.choice([c for c in CHAINS if c != origin]), token, amount, now)
            except PessimisticViolation:
                stats["faults"] += 1
            else:
                raise FuzzFailure(f"seed {seed}: minted deposit accepted")
        elif op == "forge":
            # inclusion checks disabled: only the accounting stands in the way
            origin, token = rng.choice(CHAINS), rng.choice(tuple(HOMES))
            amount = hist.escrowed(origin, token) + rng.randint(1, 500)
            fake = BridgeEvent(EventKind.DEPOSIT, origin, rng.choice(CHAINS), token, amount, 10**6 + now)
            bridge.accept_forged_inclusion = True
            try:
                bridge.bridge_claim(fake, None, now)
            except PessimisticViolation:
                stats["faults"] += 1
            else:
                raise FuzzFailure(f"seed {seed}: forged claim paid out")
            finally:
                bridge.accept_forged_inclusion = False
        elif op == "early":
            fresh = [e for e in unclaimed if not bridge.is_claimable(e)]
            if fresh:
                try:
                    bridge.bridge_claim(fresh[0], None, now)
                except StaleOrInvalidProof:
                    stats["faults"] += 1
                else:
                    raise FuzzFailure(f"seed {seed}: claim before anchoring succeeded")
        elif op == "double" and claimed:
            ev = rng.choice(claimed)
            try:
                bridge.bridge_claim(ev, bridge.inclusion_proof(ev), now)
            except DoubleClaim:
                stats["faults"] += 1
            else:
                raise FuzzFailure(f"seed {seed}: double claim succeeded")
        check(op)
    bridge.anchor(bridge.update_global_exit_root())
    conserved()
    return stats


# --------------------------------------------------------------------------
# Whole-system scenarios: two plain chains and one zkSpot app chain
# --------------------------------------------------------------------------


def random_scenario(seed: int, trust="full", faults: bool = True) -> str:
    import yaml

    rng = random.Random(f"scenario/{seed}")
    schedule = []
    tick = 1
    for _ in range(rng.randint(6, 18)):
        tick += rng.randint(0, 2)
        kind = rng.choices(("deposit", "place", "withdraw", "forge", "fault"), (4, 6, 2, 1, 1 if faults else 0))[0]
        acct = rng.randrange(2)
        if kind == "deposit":
            src = rng.choice((1, 2))
            schedule.append({"tick": tick, "action": "deposit", "from": src, "to": 10, "token": src,
                             "amount": rng.randint(1, 60), "account": acct})
        elif kind == "place":
            schedule.append({"tick": tick, "action": "submit", "app": 10, "input": {"place": {
                "account": acct, "side": rng.choice(("buy", "sell")), "price": rng.randint(1, 4),
                "quantity": rng.randint(1, 8)}}})
        elif kind == "withdraw":
            tok = rng.choice((1, 2))
            schedule.append({"tick": tick, "action": "withdraw", "app": 10, "account": acct, "token": tok,
                             "amount": rng.randint(1, 40), "to": rng.choice((1, 2))})
        elif kind == "forge":
            schedule.append({"tick": tick, "action": "forge_claim", "origin": rng.choice((1, 2, 10)),
                             "to": rng.choice((1, 2)), "token": rng.choice((1, 2)),
                             "amount": rng.randint(1, 10**4), "recipient": acct})
        else:
            schedule.append({"tick": tick, "action": "inject_fault", "app": 10,
                             "mode": rng.choice(["corrupt_post_root", "drop_transitions",
                                                 "reorder_against_policy", "forge_attestation"])})
    doc = {
        "name": f"fuzz-{seed}", "seed": seed, "epoch_interval": rng.randint(2, 5),
        "tokens": [{"id": 1, "name": "USD", "home": 1}, {"id": 2, "name": "ETH", "home": 2}],
        "chains": [{"id": 1, "balances": {0: {1: 500}, 1: {1: 500}}},
                   {"id": 2, "balances": {0: {2: 500}, 1: {2: 500}}}],
        "apps": [{"id": 10, "kind": "zkspot", "markets": [[2, 1]], "trust": trust,
                  "mu": rng.randint(1, 4), "nu": rng.randint(1, 3)}],
        "schedule": schedule,
        "expectations": [{"check": "pessimistic_invariant", "expect": True},
                         {"check": "conservation", "expect": True}],
    }
    return yaml.safe_dump(doc, sort_keys=False)
