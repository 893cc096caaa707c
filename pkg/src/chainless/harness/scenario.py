"""Scenario files: YAML documents validated into :class:`Scenario`.

Schema (all ids are small integers; chains and apps share one id space)::

    name: str
    seed: int                       # 64-bit root seed
    ticks: int                      # optional minimum horizon
    epoch_interval: int             # settle every N ticks (default 5)
    tokens:   [{id, name, home}]    # home = chain id that issues the token
    chains:   [{id, name, balances: {account: {token: amount}}}]
    apps:
      - id: int
        kind: zkspot | counter
        markets: [[base, quote], ...]        # zkspot only
        trust: full | operator | {model: committee, n, q, stake, byzantine: [idx]}
               | {model: optimistic, window, challengers} | {model: tee, sample_rate}
        mu: int
        nu: int
        da: public | private
        fault: {mode, block, seq}            # optional
    faults: [{app, mode, block, seq}]        # corpus for compare-trust
    schedule:
      - {tick, action: submit, app, input}   # input: counter delta string, or
                                             #   {place: {account, market, side, price, quantity}},
                                             #   {cancel: {account, order}}, {raw: hex}
      - {tick, action: deposit, from, to, token, amount, account, recipient}
      - {tick, action: withdraw, app, account, token, amount, to}
      - {tick, action: claim, origin, nonce}
      - {tick, action: message, from, to, input}
      - {tick, action: forge_claim, origin, to, token, amount, recipient}
      - {tick, action: inject_fault, app, mode, seq}
      - {tick, action: tamper_da, app, block}
      - {tick, action: settle}
      - {tick, action: advance}
    expectations:
      - {check: <name>, expect: <value or "op N">, ...check arguments}
"""

from __future__ import annotations

import operator
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import yaml

from ..da import DaMode
from ..errors import ScenarioError
from ..sequencer import FaultMode, FaultPolicy
from ..trust import Committee, FullReexecution, Optimistic, OperatorTrust, TeePlusSpotCheck, TrustModel
from .. import zkspot


# --------------------------------------------------------------------------
# YAML with line numbers
# --------------------------------------------------------------------------


class Node(dict):
    """Mapping that remembers where it (and each key) came from."""

    line: int = 0

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.key_lines: dict[Any, int] = {}

    def line_of(self, key) -> int:
        return self.key_lines.get(key, self.line)


class Seq(list):
    line: int = 0


class _Loader(yaml.SafeLoader):
    pass


def _mapping(loader: _Loader, node: yaml.MappingNode) -> Node:
    loader.flatten_mapping(node)
    out = Node()
    out.line = node.start_mark.line + 1
    for k_node, v_node in node.value:
        key = loader.construct_object(k_node, deep=True)
        if key in out:
            raise ScenarioError(f"duplicate key {key!r}", k_node.start_mark.line + 1)
        out[key] = loader.construct_object(v_node, deep=True)
        out.key_lines[key] = k_node.start_mark.line + 1
    return out


def _sequence(loader: _Loader, node: yaml.SequenceNode) -> Seq:
    out = Seq(loader.construct_object(n, deep=True) for n in node.value)
    out.line = node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _mapping)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _sequence)


# --------------------------------------------------------------------------
# Model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TokenSpec:
    id: int
    name: str
    home: int | None


@dataclass(frozen=True)
class ChainSpec:
    id: int
    name: str
    balances: tuple[tuple[int, int, int], ...] = ()   # (account, token, amount)


@dataclass(frozen=True)
class FaultSpec:
    app: int
    policy: FaultPolicy
    line: int = 0

    @property
    def label(self) -> str:
        p = self.policy
        seq = "" if p.seq_no is None else f"/seq{p.seq_no}"
        return f"app{self.app}:{p.mode.value}@block{p.block_no}{seq}"


@dataclass(frozen=True)
class AppSpec:
    id: int
    name: str
    kind: str
    trust: TrustModel
    mu: int = 8
    nu: int = 3
    da: DaMode = DaMode.PUBLIC
    fault: FaultPolicy = FaultPolicy()
    markets: tuple[tuple[int, int], ...] = ((2, 1),)
    byzantine: tuple[int, ...] = ()
    challengers: int = 1
    start: int = 0
    line: int = 0


@dataclass(frozen=True)
class Action:
    tick: int
    kind: str
    args: dict
    line: int
    index: int


_COMPARATORS = {"==": operator.eq, "!=": operator.ne, ">=": operator.ge, "<=": operator.le,
                ">": operator.gt, "<": operator.lt}
_CMP = re.compile(r"\s*(==|!=|>=|<=|>|<)\s*(-?\d+)\s*$")


@dataclass(frozen=True)
class Expectation:
    check: str
    args: dict
    expect: Any
    line: int

    @property
    def label(self) -> str:
        extra = ",".join(f"{k}={v}" for k, v in sorted(self.args.items()))
        return f"{self.check}({extra})" if extra else self.check

    def matches(self, observed: Any) -> bool:
        exp = self.expect
        if isinstance(exp, str):
            m = _CMP.fullmatch(exp)
            if m and isinstance(observed, int) and not isinstance(observed, bool):
                return _COMPARATORS[m.group(1)](observed, int(m.group(2)))
        return observed == exp


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    tokens: tuple[TokenSpec, ...]
    chains: tuple[ChainSpec, ...]
    apps: tuple[AppSpec, ...]
    schedule: tuple[Action, ...]
    expectations: tuple[Expectation, ...]
    faults: tuple[FaultSpec, ...] = ()
    epoch_interval: int = 5
    ticks: int = 0
    source: str = ""

    def app(self, app_id: int) -> AppSpec:
        for a in self.apps:
            if a.id == app_id:
                return a
        raise KeyError(app_id)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)

    def with_app(self, app: AppSpec) -> "Scenario":
        return replace(self, apps=tuple(app if a.id == app.id else a for a in self.apps))


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------

CHECKS = {
    "pessimistic_invariant", "conservation", "all_blocks_accepted", "rejected_blocks",
    "first_rejected_block", "blocks_sealed", "balance", "app_balance", "claims", "denials",
    "finalized_epochs", "slashed", "data_unavailable", "delivered_messages", "action_errors",
    "transitions", "canonical_root_matches",
}

ACTIONS = {"submit", "deposit", "withdraw", "claim", "message", "forge_claim", "inject_fault",
           "tamper_da", "settle", "advance"}


class _V:
    """Small helpers that raise ScenarioError with the right line."""

    def __init__(self, node: Node, where: str):
        self.node = node
        self.where = where

    def fail(self, msg: str, key=None):
        line = self.node.line_of(key) if key is not None and isinstance(self.node, Node) else getattr(
            self.node, "line", 0)
        raise ScenarioError(f"{self.where}: {msg}", line)

    def get(self, key, typ, default=..., *, minimum=None):
        if key not in self.node:
            if default is ...:
                self.fail(f"missing required field {key!r}")
            return default
        val = self.node[key]
        if typ is int and (isinstance(val, bool) or not isinstance(val, int)):
            self.fail(f"{key!r} must be an integer", key)
        if typ is float and (isinstance(val, bool) or not isinstance(val, (int, float))):
            self.fail(f"{key!r} must be a number", key)
        if typ is str and not isinstance(val, str):
            self.fail(f"{key!r} must be a string", key)
        if minimum is not None and val < minimum:
            self.fail(f"{key!r} must be >= {minimum}", key)
        return float(val) if typ is float else val

    def only(self, allowed: set[str]):
        for k in self.node:
            if k not in allowed:
                self.fail(f"unknown field {k!r}", k)


def _as_node(val, where: str, line: int) -> Node:
    if not isinstance(val, Node):
        raise ScenarioError(f"{where}: expected a mapping", getattr(val, "line", line))
    return val


def _as_seq(val, where: str, line: int) -> Seq:
    if val is None:
        return Seq()
    if not isinstance(val, Seq):
        raise ScenarioError(f"{where}: expected a list", line)
    return val


def _trust(val, where: str, line: int) -> tuple[TrustModel, tuple[int, ...], int]:
    if isinstance(val, str):
        val = Node(model=val)
        val.line = line
    node = _as_node(val, where, line)
    v = _V(node, where)
    model = v.get("model", str).lower()
    try:
        if model in ("full", "fullreexecution"):
            v.only({"model"})
            return FullReexecution(), (), 1
        if model in ("operator", "operatortrust"):
            v.only({"model"})
            return OperatorTrust(), (), 1
        if model == "committee":
            v.only({"model", "n", "q", "stake", "byzantine"})
            n = v.get("n", int, minimum=1)
            q = v.get("q", int, -(-2 * n // 3), minimum=1)
            byz = tuple(_as_seq(node.get("byzantine"), where, line))
            if any(not isinstance(b, int) or not 0 <= b < n for b in byz):
                v.fail("byzantine entries must be validator indices in [0, n)", "byzantine")
            return Committee(n, q, v.get("stake", int, 100, minimum=0)), byz, 1
        if model == "optimistic":
            v.only({"model", "window", "challengers"})
            return Optimistic(v.get("window", int, minimum=1)), (), v.get("challengers", int, 1, minimum=0)
        if model in ("tee", "teeplusspotcheck"):
            v.only({"model", "sample_rate"})
            return TeePlusSpotCheck(v.get("sample_rate", float)), (), 1
    except ValueError as exc:
        v.fail(str(exc))
    v.fail(f"unknown trust model {model!r}", "model")


def _fault(node: Node, where: str) -> FaultPolicy:
    v = _V(node, where)
    mode = v.get("mode", str)
    try:
        fm = FaultMode(mode)
    except ValueError:
        v.fail(f"unknown fault mode {mode!r}; expected one of {[m.value for m in FaultMode]}", "mode")
    return FaultPolicy(fm, v.get("block", int, 0, minimum=0), v.get("seq", int, None, minimum=0))


def _encode_input(kind: str, val, where: str, line: int, app: AppSpec) -> bytes:
    if app.kind == "counter":
        if not isinstance(val, (str, int)) or isinstance(val, bool):
            raise ScenarioError(f"{where}: counter input must be a delta like '+5'", line)
        s = val if isinstance(val, str) else f"{val:+d}"
        return s.encode()
    node = _as_node(val, where, line)
    if len(node) != 1:
        raise ScenarioError(f"{where}: input must have exactly one of place/cancel/raw", node.line)
    (op, body), = node.items()
    if op == "raw":
        try:
            return bytes.fromhex(body)
        except (TypeError, ValueError):
            raise ScenarioError(f"{where}: raw input must be hex", node.line_of(op)) from None
    b = _as_node(body, where, node.line_of(op))
    v = _V(b, where)
    if op == "place":
        v.only({"account", "market", "side", "price", "quantity"})
        side = v.get("side", str).lower()
        if side not in ("buy", "sell"):
            v.fail("side must be buy or sell", "side")
        market = v.get("market", int, 0, minimum=0)
        if market >= len(app.markets):
            v.fail(f"app {app.id} has no market {market}", "market")
        return zkspot.PlaceLimit(v.get("account", int, minimum=0), market,
                                 zkspot.BUY if side == "buy" else zkspot.SELL,
                                 v.get("price", int, minimum=1), v.get("quantity", int, minimum=1)).encode()
    if op == "cancel":
        v.only({"account", "order"})
        return zkspot.Cancel(v.get("account", int, minimum=0), v.get("order", int, minimum=0)).encode()
    raise ScenarioError(f"{where}: unknown input kind {op!r}", node.line_of(op))


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ScenarioError(f"YAML syntax: {exc.problem}", mark.line + 1 if mark else 0) from None
    if not isinstance(doc, Node):
        raise ScenarioError("scenario must be a mapping at top level", 1)
    top = _V(doc, "scenario")
    top.only({"name", "seed", "ticks", "epoch_interval", "tokens", "chains", "apps", "faults", "schedule",
              "expectations"})
    seed = top.get("seed", int, 0)
    if not 0 <= seed < 2**64:
        top.fail("seed must fit in 64 bits", "seed")

    tokens = []
    for i, t in enumerate(_as_seq(doc.get("tokens"), "tokens", doc.line_of("tokens"))):
        tn = _as_node(t, f"tokens[{i}]", doc.line_of("tokens"))
        v = _V(tn, f"tokens[{i}]")
        v.only({"id", "name", "home"})
        tokens.append(TokenSpec(v.get("id", int, minimum=0), v.get("name", str, ""), v.get("home", int, None)))

    ids: dict[int, int] = {}

    def claim_id(i, line, where):
        if i in ids:
            raise ScenarioError(f"{where}: id {i} already declared on line {ids[i]}", line)
        ids[i] = line

    chains = []
    for i, c in enumerate(_as_seq(doc.get("chains"), "chains", doc.line_of("chains"))):
        cn = _as_node(c, f"chains[{i}]", doc.line_of("chains"))
        v = _V(cn, f"chains[{i}]")
        v.only({"id", "name", "balances"})
        cid = v.get("id", int, minimum=0)
        claim_id(cid, cn.line, f"chains[{i}]")
        bal = []
        raw = cn.get("balances") or Node()
        raw = _as_node(raw, f"chains[{i}].balances", cn.line_of("balances"))
        for acct, per in raw.items():
            per = _as_node(per, f"chains[{i}].balances", raw.line_of(acct))
            for tok, amt in per.items():
                if not all(isinstance(x, int) and not isinstance(x, bool) and x >= 0 for x in (acct, tok, amt)):
                    raise ScenarioError(f"chains[{i}].balances: account, token and amount must be "
                                        f"non-negative integers", per.line_of(tok))
                bal.append((acct, tok, amt))
        chains.append(ChainSpec(cid, v.get("name", str, f"chain-{cid}"), tuple(sorted(bal))))

    apps = []
    for i, a in enumerate(_as_seq(doc.get("apps"), "apps", doc.line_of("apps"))):
        an = _as_node(a, f"apps[{i}]", doc.line_of("apps"))
        where = f"apps[{i}]"
        v = _V(an, where)
        v.only({"id", "name", "kind", "markets", "trust", "mu", "nu", "da", "fault", "start"})
        aid = v.get("id", int, minimum=0)
        claim_id(aid, an.line, where)
        kind = v.get("kind", str)
        if kind not in ("zkspot", "counter"):
            v.fail(f"kind must be zkspot or counter, got {kind!r}", "kind")
        markets = ((2, 1),)
        if "markets" in an:
            ms = _as_seq(an["markets"], where, an.line_of("markets"))
            if not ms or not all(isinstance(m, list) and len(m) == 2 and all(isinstance(x, int) for x in m)
                                 for m in ms):
                v.fail("markets must be a non-empty list of [base, quote] token pairs", "markets")
            markets = tuple(tuple(m) for m in ms)
        trust, byz, challengers = _trust(an.get("trust", "full"), f"{where}.trust", an.line_of("trust"))
        da = v.get("da", str, "public")
        if da not in ("public", "private"):
            v.fail("da must be public or private", "da")
        fault = FaultPolicy()
        if "fault" in an:
            fault = _fault(_as_node(an["fault"], f"{where}.fault", an.line_of("fault")), f"{where}.fault")
        apps.append(AppSpec(aid, v.get("name", str, f"app-{aid}"), kind, trust, v.get("mu", int, 8, minimum=1),
                            v.get("nu", int, 3, minimum=1), DaMode(da), fault, markets, byz, challengers,
                            v.get("start", int, 0, minimum=0), an.line))
    if not chains and not apps:
        raise ScenarioError("scenario declares no chains or apps", doc.line)
    app_by_id = {a.id: a for a in apps}
    chain_ids = {c.id for c in chains}
    token_ids = {t.id for t in tokens}
    for t in tokens:
        if t.home is not None and t.home not in ids:
            raise ScenarioError(f"token {t.id}: home {t.home} is not a declared chain or app", doc.line_of("tokens"))

    def ref(v: _V, key: str, pool, what: str, default=...):
        val = v.get(key, int, default)
        if val is not None and val is not ... and val not in pool:
            v.fail(f"{key!r} refers to undeclared {what} {val}", key)
        return val

    faults = []
    for i, f in enumerate(_as_seq(doc.get("faults"), "faults", doc.line_of("faults"))):
        fn = _as_node(f, f"faults[{i}]", doc.line_of("faults"))
        v = _V(fn, f"faults[{i}]")
        v.only({"app", "mode", "block", "seq"})
        faults.append(FaultSpec(ref(v, "app", app_by_id, "app"), _fault(fn, f"faults[{i}]"), fn.line))

    schedule = []
    last_tick = 0
    for i, s in enumerate(_as_seq(doc.get("schedule"), "schedule", doc.line_of("schedule"))):
        sn = _as_node(s, f"schedule[{i}]", doc.line_of("schedule"))
        where = f"schedule[{i}]"
        v = _V(sn, where)
        tick = v.get("tick", int, minimum=0)
        if tick < last_tick:
            v.fail(f"tick {tick} goes backwards (previous action at tick {last_tick})", "tick")
        last_tick = tick
        kind = v.get("action", str)
        if kind not in ACTIONS:
            v.fail(f"unknown action {kind!r}", "action")
        args: dict[str, Any] = {}
        if kind == "submit":
            v.only({"tick", "action", "app", "input"})
            app = app_by_id[ref(v, "app", app_by_id, "app")]
            if "input" not in sn:
                v.fail("missing required field 'input'")
            args = {"app": app.id, "payload": _encode_input(kind, sn["input"], where, sn.line_of("input"), app)}
        elif kind == "message":
            v.only({"tick", "action", "from", "to", "input"})
            src = ref(v, "from", ids, "chain")
            dst = ref(v, "to", app_by_id, "app")
            if "input" not in sn:
                v.fail("missing required field 'input'")
            args = {"from": src, "to": dst,
                    "payload": _encode_input(kind, sn["input"], where, sn.line_of("input"), app_by_id[dst])}
        elif kind == "deposit":
            v.only({"tick", "action", "from", "to", "token", "amount", "account", "recipient"})
            src = ref(v, "from", chain_ids, "plain chain")
            dst = ref(v, "to", ids, "chain")
            if dst in app_by_id and app_by_id[dst].kind != "zkspot":
                v.fail(f"app {dst} cannot hold tokens", "to")
            args = {"from": src, "to": dst, "token": ref(v, "token", token_ids, "token"),
                    "amount": v.get("amount", int), "account": v.get("account", int, 0, minimum=0),
                    "recipient": v.get("recipient", int, None, minimum=0)}
            if args["recipient"] is None:
                args["recipient"] = args["account"]
        elif kind == "withdraw":
            v.only({"tick", "action", "app", "account", "token", "amount", "to"})
            app = ref(v, "app", app_by_id, "app")
            if app_by_id[app].kind != "zkspot":
                v.fail(f"app {app} has no withdrawals", "app")
            args = {"app": app, "account": v.get("account", int, minimum=0),
                    "token": ref(v, "token", token_ids, "token"), "amount": v.get("amount", int, minimum=1),
                    "to": ref(v, "to", ids, "chain")}
        elif kind == "claim":
            v.only({"tick", "action", "origin", "nonce"})
            args = {"origin": ref(v, "origin", ids, "chain"), "nonce": v.get("nonce", int, minimum=0)}
        elif kind == "forge_claim":
            v.only({"tick", "action", "origin", "to", "token", "amount", "recipient"})
            args = {"origin": ref(v, "origin", ids, "chain"), "to": ref(v, "to", ids, "chain"),
                    "token": ref(v, "token", token_ids, "token"), "amount": v.get("amount", int, minimum=1),
                    "recipient": v.get("recipient", int, 0, minimum=0)}
        elif kind == "inject_fault":
            v.only({"tick", "action", "app", "mode", "block", "seq"})
            app = ref(v, "app", app_by_id, "app")
            args = {"app": app, "policy": _fault(sn, where)}
        elif kind == "tamper_da":
            v.only({"tick", "action", "app", "block"})
            args = {"app": ref(v, "app", app_by_id, "app"), "block": v.get("block", int, minimum=0)}
        else:
            v.only({"tick", "action"})
        schedule.append(Action(tick, kind, args, sn.line, i))

    expectations = []
    seen = set()
    for i, e in enumerate(_as_seq(doc.get("expectations"), "expectations", doc.line_of("expectations"))):
        en = _as_node(e, f"expectations[{i}]", doc.line_of("expectations"))
        v = _V(en, f"expectations[{i}]")
        check = v.get("check", str)
        if check not in CHECKS:
            v.fail(f"unknown check {check!r}; known: {sorted(CHECKS)}", "check")
        if "expect" not in en:
            v.fail("missing required field 'expect'")
        args = {k: val for k, val in en.items() if k not in ("check", "expect")}
        for k in ("app", "chain"):
            if k in args and args[k] not in ids:
                v.fail(f"{k!r} refers to undeclared id {args[k]}", k)
        exp = Expectation(check, args, en["expect"], en.line)
        if exp.label in seen:
            v.fail(f"expectation {exp.label} is listed twice")
        seen.add(exp.label)
        expectations.append(exp)

    return Scenario(top.get("name", str, Path(source).stem), seed, tuple(tokens), tuple(chains), tuple(apps),
                    tuple(schedule), tuple(expectations), tuple(faults),
                    top.get("epoch_interval", int, 5, minimum=1), top.get("ticks", int, 0, minimum=0), source)


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {p}: {exc.strerror}") from None
    return parse_scenario(text, str(p))


def bundled_scenario(name: str) -> Path:
    """Path of a scenario shipped with the package (``happy_path``, ...)."""
    base = Path(__file__).resolve().parent.parent / "scenarios"
    p = base / (name if name.endswith(".yaml") else f"{name}.yaml")
    if not p.exists():
        raise ScenarioError(f"no bundled scenario {name!r}")
    return p
