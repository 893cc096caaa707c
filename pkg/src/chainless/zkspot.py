"""zkSpot: a central limit order book with a bridge-fed balance ledger.

The engine is a deterministic transition function (see :class:`ZkSpotApp`), so
blocks it produces can be replayed by any verifier.

Matching rules: price-time priority, where "time" is the order id assigned in
sequencing order; fills execute at the resting (maker) order's price. Funds
are locked when an order is placed: ``price * quantity`` quote units for a buy,
``quantity`` base units for a sell. A buyer filled below its limit gets the
difference released back to available. No fees, no market orders, no
self-trade prevention.

Input codec (big-endian, 1-byte tag)::

    0x01 PlaceLimit       u32 account | u32 market | u8 side (0 buy, 1 sell) | u64 price | u64 quantity
    0x02 Cancel           u32 account | u64 order_id
    0x03 DepositCredit    u32 account | u32 token | u64 amount | u64 bridge_nonce
    0x04 WithdrawLock     u32 account | u32 token | u64 amount | u32 destination
    0x05 WithdrawFinalize u64 withdrawal_id

State encoding::

    u32 n_markets, then (u32 base, u32 quote) per market
    u64 next_order_id | u64 next_withdrawal_id
    u32 n, then n x (u32 account, u32 token, u64 available, u64 locked), sorted, zero rows omitted
    per market: u32 n_bids, bids in priority order; u32 n_asks, asks in priority order;
                each order is u64 order_id | u32 account | u64 price | u64 remaining
    u32 n, then n x u64 consumed bridge nonce, ascending
    u32 n, then n x (u64 id, u32 account, u32 token, u64 amount, u32 destination), by id
"""

from __future__ import annotations

import struct
from bisect import bisect_left, insort
from collections import deque
from dataclasses import dataclass

from .errors import RejectedInput

U64_MAX = 2**64 - 1
BUY, SELL = 0, 1


class InsufficientBalance(RejectedInput):
    pass


class UnknownOrder(RejectedInput):
    pass


class NotOwner(RejectedInput):
    pass


class DuplicateNonce(RejectedInput):
    pass


class UnknownWithdrawal(RejectedInput):
    pass


class MalformedInput(RejectedInput):
    pass


# --------------------------------------------------------------------------
# Inputs
# --------------------------------------------------------------------------

_PLACE = struct.Struct(">BIIBQQ")
_CANCEL = struct.Struct(">BIQ")
_DEPOSIT = struct.Struct(">BIIQQ")
_WLOCK = struct.Struct(">BIIQI")
_WFIN = struct.Struct(">BQ")


@dataclass(frozen=True)
class PlaceLimit:
    account: int
    market: int
    side: int
    price: int
    quantity: int

    def encode(self) -> bytes:
        return _PLACE.pack(1, self.account, self.market, self.side, self.price, self.quantity)


@dataclass(frozen=True)
class Cancel:
    account: int
    order_id: int

    def encode(self) -> bytes:
        return _CANCEL.pack(2, self.account, self.order_id)


@dataclass(frozen=True)
class DepositCredit:
    account: int
    token: int
    amount: int
    bridge_nonce: int

    def encode(self) -> bytes:
        return _DEPOSIT.pack(3, self.account, self.token, self.amount, self.bridge_nonce)


@dataclass(frozen=True)
class WithdrawLock:
    account: int
    token: int
    amount: int
    destination: int

    def encode(self) -> bytes:
        return _WLOCK.pack(4, self.account, self.token, self.amount, self.destination)


@dataclass(frozen=True)
class WithdrawFinalize:
    withdrawal_id: int

    def encode(self) -> bytes:
        return _WFIN.pack(5, self.withdrawal_id)


SpotInput = PlaceLimit | Cancel | DepositCredit | WithdrawLock | WithdrawFinalize

_CODECS = {1: (_PLACE, PlaceLimit), 2: (_CANCEL, Cancel), 3: (_DEPOSIT, DepositCredit),
           4: (_WLOCK, WithdrawLock), 5: (_WFIN, WithdrawFinalize)}


def decode_input(payload: bytes) -> SpotInput:
    if not payload or payload[0] not in _CODECS:
        raise MalformedInput("unknown input tag")
    codec, cls = _CODECS[payload[0]]
    if len(payload) != codec.size:
        raise MalformedInput(f"bad length {len(payload)} for {cls.__name__}")
    return cls(*codec.unpack(payload)[1:])


def bridge_nonce_key(origin_chain: int, nonce: int) -> int:
    """Fold (origin chain, per-origin nonce) into the u64 nonce DepositCredit carries."""
    return (origin_chain << 32) | nonce


# --------------------------------------------------------------------------
# State
# --------------------------------------------------------------------------


class Order:
    __slots__ = ("order_id", "account", "market", "side", "price", "remaining")

    def __init__(self, order_id, account, market, side, price, remaining):
        self.order_id = order_id
        self.account = account
        self.market = market
        self.side = side
        self.price = price
        self.remaining = remaining

    def __repr__(self):
        side = "buy" if self.side == BUY else "sell"
        return f"Order(#{self.order_id} acct={self.account} {side} {self.remaining}@{self.price})"


@dataclass(frozen=True)
class TradeEvent:
    maker_order_id: int
    taker_order_id: int
    price: int
    quantity: int
    tick: int = 0


@dataclass(frozen=True)
class Withdrawal:
    withdrawal_id: int
    account: int
    token: int
    amount: int
    destination: int


_ORD = struct.Struct(">QIQQ")


class BookSide:
    """Price levels of one side; ``prices`` ascending, each level a FIFO of orders.

    Encoded levels are cached and dropped via ``touch`` whenever a level changes.
    """

    __slots__ = ("levels", "prices", "is_bid", "size", "_enc")

    def __init__(self, is_bid: bool):
        self.levels: dict[int, deque[Order]] = {}
        self.prices: list[int] = []
        self.is_bid = is_bid
        self.size = 0
        self._enc: dict[int, bytes] = {}

    def best(self) -> int | None:
        if not self.prices:
            return None
        return self.prices[-1] if self.is_bid else self.prices[0]

    def refresh_front(self, price: int) -> None:
        """The front order of ``price`` changed its remaining quantity."""
        chunk = self._enc.get(price)
        if chunk is not None:
            o = self.levels[price][0]
            self._enc[price] = _ORD.pack(o.order_id, o.account, o.price, o.remaining) + chunk[_ORD.size:]

    def add(self, order: Order) -> None:
        level = self.levels.get(order.price)
        if level is None:
            level = self.levels[order.price] = deque()
            insort(self.prices, order.price)
        level.append(order)
        self.size += 1
        chunk = self._enc.get(order.price)
        if chunk is not None:
            self._enc[order.price] = chunk + _ORD.pack(order.order_id, order.account, order.price, order.remaining)

    def drop_level(self, price: int) -> None:
        del self.levels[price]
        del self.prices[bisect_left(self.prices, price)]
        self._enc.pop(price, None)

    def pop_front(self, price: int) -> None:
        level = self.levels[price]
        level.popleft()
        self.size -= 1
        if level:
            chunk = self._enc.get(price)
            if chunk is not None:
                self._enc[price] = chunk[_ORD.size:]
        else:
            self.drop_level(price)

    def remove(self, order: Order) -> None:
        level = self.levels[order.price]
        level.remove(order)
        self.size -= 1
        if level:
            self._enc.pop(order.price, None)
        else:
            self.drop_level(order.price)

    def in_priority(self):
        prices = reversed(self.prices) if self.is_bid else self.prices
        for p in prices:
            yield from self.levels[p]

    def encode(self) -> bytes:
        enc = self._enc
        parts = [struct.pack(">I", self.size)]
        for p in (reversed(self.prices) if self.is_bid else self.prices):
            chunk = enc.get(p)
            if chunk is None:
                chunk = enc[p] = b"".join([_ORD.pack(o.order_id, o.account, o.price, o.remaining)
                                           for o in self.levels[p]])
            parts.append(chunk)
        return b"".join(parts)

    def __len__(self):
        return self.size


_BAL = struct.Struct(">IIQQ")
_WD = struct.Struct(">QIIQI")
_PAIR = struct.Struct(">II")


class SpotState:
    """Mutable zkSpot state with per-section encoding caches."""

    def __init__(self, markets):
        self.markets: list[tuple[int, int]] = [tuple(m) for m in markets]
        self.balances: dict[tuple[int, int], list[int]] = {}
        self.bids = [BookSide(True) for _ in self.markets]
        self.asks = [BookSide(False) for _ in self.markets]
        self.orders: dict[int, Order] = {}
        self.next_order_id = 0
        self.nonces: set[int] = set()
        self.withdrawals: dict[int, Withdrawal] = {}
        self.next_withdrawal_id = 0
        self.supply: dict[int, int] = {}
        # encoding caches
        self._bal_keys: list[tuple[int, int]] = []
        self._bal_rows: dict[tuple[int, int], bytes] = {}
        self._dirty_bal: set[tuple[int, int]] = set()
        self._book_cache: list[bytes | None] = [None] * len(self.markets)
        self._tail_cache: bytes | None = None

    # -- balances --------------------------------------------------------
    def balance(self, account: int, token: int) -> tuple[int, int]:
        row = self.balances.get((account, token))
        return (row[0], row[1]) if row else (0, 0)

    def _row(self, account: int, token: int) -> list[int]:
        key = (account, token)
        row = self.balances.get(key)
        if row is None:
            row = self.balances[key] = [0, 0]
            insort(self._bal_keys, key)
        self._dirty_bal.add(key)
        return row

    def token_total(self, token: int) -> int:
        return self.supply.get(token, 0)

    def pending_withdrawals(self) -> list[Withdrawal]:
        return [self.withdrawals[k] for k in sorted(self.withdrawals)]

    # -- encoding --------------------------------------------------------
    def encode(self) -> bytes:
        rows = self._bal_rows
        if self._dirty_bal:
            for key in self._dirty_bal:
                a, l = self.balances[key]
                rows[key] = _BAL.pack(key[0], key[1], a, l) if (a or l) else b""
            self._dirty_bal.clear()
        bal = [rows[k] for k in self._bal_keys]
        bal = [r for r in bal if r]
        parts = [struct.pack(">I", len(self.markets))]
        parts.extend(_PAIR.pack(*m) for m in self.markets)
        parts.append(struct.pack(">QQI", self.next_order_id, self.next_withdrawal_id, len(bal)))
        parts.extend(bal)
        for m in range(len(self.markets)):
            cached = self._book_cache[m]
            if cached is None:
                cached = self._book_cache[m] = self._encode_book(m)
            parts.append(cached)
        if self._tail_cache is None:
            self._tail_cache = self._encode_tail()
        parts.append(self._tail_cache)
        return b"".join(parts)

    def _encode_book(self, m: int) -> bytes:
        return self.bids[m].encode() + self.asks[m].encode()

    def _encode_tail(self) -> bytes:
        parts = [struct.pack(">I", len(self.nonces))]
        parts.extend(struct.pack(">Q", n) for n in sorted(self.nonces))
        parts.append(struct.pack(">I", len(self.withdrawals)))
        for w in self.pending_withdrawals():
            parts.append(_WD.pack(w.withdrawal_id, w.account, w.token, w.amount, w.destination))
        return b"".join(parts)

    @classmethod
    def decode(cls, data: bytes) -> "SpotState":
        mv = memoryview(data)
        pos = 0

        def take(st):
            nonlocal pos
            if pos + st.size > len(mv):
                raise ValueError("truncated zkSpot state")
            vals = st.unpack_from(mv, pos)
            pos += st.size
            return vals

        u32 = struct.Struct(">I")
        u64 = struct.Struct(">Q")
        (n_markets,) = take(u32)
        state = cls([take(_PAIR) for _ in range(n_markets)])
        state.next_order_id, state.next_withdrawal_id = take(struct.Struct(">QQ"))
        (n_bal,) = take(u32)
        for _ in range(n_bal):
            acct, tok, avail, locked = take(_BAL)
            state._row(acct, tok)[:] = [avail, locked]
        for m in range(n_markets):
            for side, book in ((BUY, state.bids[m]), (SELL, state.asks[m])):
                (n,) = take(u32)
                for _ in range(n):
                    oid, acct, price, rem = take(_ORD)
                    order = Order(oid, acct, m, side, price, rem)
                    book.add(order)
                    state.orders[oid] = order
        (n_nonces,) = take(u32)
        state.nonces = {take(u64)[0] for _ in range(n_nonces)}
        (n_wd,) = take(u32)
        for _ in range(n_wd):
            w = Withdrawal(*take(_WD))
            state.withdrawals[w.withdrawal_id] = w
        if pos != len(mv):
            raise ValueError("trailing bytes in zkSpot state")
        for (acct, tok), (a, l) in state.balances.items():
            state.supply[tok] = state.supply.get(tok, 0) + a + l
        return state


# --------------------------------------------------------------------------
# Operations
# --------------------------------------------------------------------------


def place_limit(state: SpotState, order: PlaceLimit, tick: int = 0) -> list[TradeEvent]:
    """Lock funds, match against the opposite side, rest any remainder."""
    if not 0 <= order.market < len(state.markets):
        raise MalformedInput(f"unknown market {order.market}")
    if order.side not in (BUY, SELL):
        raise MalformedInput("side must be 0 (buy) or 1 (sell)")
    if order.price <= 0 or order.quantity <= 0:
        raise MalformedInput("price and quantity must be positive")
    base, quote = state.markets[order.market]
    if order.side == BUY:
        lock_token, lock_amount = quote, order.price * order.quantity
        if lock_amount > U64_MAX:
            raise MalformedInput("order notional overflows u64")
    else:
        lock_token, lock_amount = base, order.quantity
    avail, _ = state.balance(order.account, lock_token)
    if avail < lock_amount:
        raise InsufficientBalance(f"account {order.account} has {avail} of token {lock_token}, needs {lock_amount}")

    row = state._row(order.account, lock_token)
    row[0] -= lock_amount
    row[1] += lock_amount

    taker_id = state.next_order_id
    state.next_order_id += 1
    remaining = order.quantity
    trades: list[TradeEvent] = []
    m = order.market
    limit = order.price
    account = order.account

    if order.side == BUY:
        book = state.asks[m]
        while remaining and book.prices and book.prices[0] <= limit:
            px = book.prices[0]
            level = book.levels[px]
            maker = level[0]
            q = min(remaining, maker.remaining)
            tq = state._row(account, quote)
            tq[1] -= limit * q
            tq[0] += (limit - px) * q
            state._row(account, base)[0] += q
            mb = state._row(maker.account, base)
            mb[1] -= q
            state._row(maker.account, quote)[0] += px * q
            maker.remaining -= q
            remaining -= q
            trades.append(TradeEvent(maker.order_id, taker_id, px, q, tick))
            if maker.remaining:
                book.refresh_front(px)
            else:
                book.pop_front(px)
                del state.orders[maker.order_id]
        if trades:
            state._book_cache[m] = None
    else:
        book = state.bids[m]
        while remaining and book.prices and book.prices[-1] >= limit:
            px = book.prices[-1]
            level = book.levels[px]
            maker = level[0]
            q = min(remaining, maker.remaining)
            state._row(account, base)[1] -= q
            state._row(account, quote)[0] += px * q
            mq = state._row(maker.account, quote)
            mq[1] -= px * q
            state._row(maker.account, base)[0] += q
            maker.remaining -= q
            remaining -= q
            trades.append(TradeEvent(maker.order_id, taker_id, px, q, tick))
            if maker.remaining:
                book.refresh_front(px)
            else:
                book.pop_front(px)
                del state.orders[maker.order_id]
        if trades:
            state._book_cache[m] = None

    if remaining:
        resting = Order(taker_id, account, m, order.side, limit, remaining)
        (state.bids[m] if order.side == BUY else state.asks[m]).add(resting)
        state.orders[taker_id] = resting
        state._book_cache[m] = None
    return trades


def cancel(state: SpotState, account: int, order_id: int) -> SpotState:
    order = state.orders.get(order_id)
    if order is None:
        raise UnknownOrder(f"no resting order {order_id}")
    if order.account != account:
        raise NotOwner(f"order {order_id} belongs to account {order.account}")
    base, quote = state.markets[order.market]
    if order.side == BUY:
        token, amount = quote, order.price * order.remaining
        state.bids[order.market].remove(order)
    else:
        token, amount = base, order.remaining
        state.asks[order.market].remove(order)
    del state.orders[order_id]
    row = state._row(account, token)
    row[1] -= amount
    row[0] += amount
    state._book_cache[order.market] = None
    return state


def deposit_credit(state: SpotState, credit: DepositCredit) -> SpotState:
    if credit.bridge_nonce in state.nonces:
        raise DuplicateNonce(f"bridge nonce {credit.bridge_nonce} already consumed")
    if credit.amount <= 0:
        raise MalformedInput("deposit amount must be positive")
    if state.supply.get(credit.token, 0) + credit.amount > U64_MAX:
        raise MalformedInput("deposit would overflow u64 token supply")
    state._row(credit.account, credit.token)[0] += credit.amount
    state.supply[credit.token] = state.supply.get(credit.token, 0) + credit.amount
    state.nonces.add(credit.bridge_nonce)
    state._tail_cache = None
    return state


def withdraw_lock(state: SpotState, req: WithdrawLock) -> tuple[SpotState, Withdrawal]:
    """Move ``amount`` from available to locked and record a pending withdrawal.

    The lock turns into a bridge deposit toward ``destination`` once the epoch
    containing it is finalized (driven by the harness).
    """
    if req.amount <= 0:
        raise MalformedInput("withdrawal amount must be positive")
    avail, _ = state.balance(req.account, req.token)
    if avail < req.amount:
        raise InsufficientBalance(f"account {req.account} has {avail} of token {req.token}")
    row = state._row(req.account, req.token)
    row[0] -= req.amount
    row[1] += req.amount
    w = Withdrawal(state.next_withdrawal_id, req.account, req.token, req.amount, req.destination)
    state.withdrawals[w.withdrawal_id] = w
    state.next_withdrawal_id += 1
    state._tail_cache = None
    return state, w


def withdraw_finalize(state: SpotState, fin: WithdrawFinalize) -> SpotState:
    """Burn a pending withdrawal's lock after it was exported to the bridge."""
    w = state.withdrawals.get(fin.withdrawal_id)
    if w is None:
        raise UnknownWithdrawal(f"no pending withdrawal {fin.withdrawal_id}")
    row = state._row(w.account, w.token)
    row[1] -= w.amount
    state.supply[w.token] -= w.amount
    del state.withdrawals[fin.withdrawal_id]
    state._tail_cache = None
    return state


class ZkSpotApp:
    """zkSpot as a core state machine. Markets live in the state itself."""

    name = "zkspot"

    def __init__(self, markets=((2, 1),)):
        self.markets = tuple(tuple(m) for m in markets)

    def initial_state(self) -> SpotState:
        return SpotState(self.markets)

    def apply(self, state: SpotState, payload: bytes) -> SpotState:
        inp = decode_input(payload)
        if isinstance(inp, PlaceLimit):
            place_limit(state, inp)
        elif isinstance(inp, Cancel):
            cancel(state, inp.account, inp.order_id)
        elif isinstance(inp, DepositCredit):
            deposit_credit(state, inp)
        elif isinstance(inp, WithdrawLock):
            withdraw_lock(state, inp)
        else:
            withdraw_finalize(state, inp)
        return state

    def encode_state(self, state: SpotState) -> bytes:
        return state.encode()

    def decode_state(self, data: bytes) -> SpotState:
        return SpotState.decode(data)

    def tamper(self, state: SpotState) -> SpotState:
        # mint 1e6 of the first market's quote token into account 0
        token = state.markets[0][1] if state.markets else 0
        state._row(0, token)[0] += 1_000_000
        state.supply[token] = state.supply.get(token, 0) + 1_000_000
        return state
