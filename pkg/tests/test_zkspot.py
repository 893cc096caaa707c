import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

import helpers
from chainless import zkspot as z
from chainless.errors import RejectedInput

place = st.builds(lambda a, s, p, q: ("place", a, s, p, q), st.integers(0, 3), st.integers(0, 1),
                  st.integers(1, 12), st.integers(1, 9))
cancel = st.builds(lambda a, o: ("cancel", a, o), st.integers(0, 3), st.integers(0, 60))
streams = st.lists(st.one_of(place, place, place, cancel), max_size=60)


@given(streams)
def test_fills_match_naive_matcher(ops):
    assert helpers.run_engine(ops) == helpers.run_reference(ops)


@pytest.mark.parametrize("seed", range(20))
def test_longer_streams_match_naive_matcher(seed):
    ops = helpers.order_stream(random.Random(seed), 200)
    assert helpers.run_engine(ops) == helpers.run_reference(ops)


def funded(markets=((2, 1),)):
    s = z.SpotState(markets)
    for a in range(3):
        for t in (1, 2):
            z.deposit_credit(s, z.DepositCredit(a, t, 1000, a * 10 + t))
    return s


@given(streams)
def test_state_encoding_roundtrips(ops):
    app = z.ZkSpotApp()
    s = funded()
    for op in ops:
        try:
            if op[0] == "place":
                z.place_limit(s, z.PlaceLimit(op[1] % 3, 0, op[2], op[3], op[4]))
            else:
                z.cancel(s, op[1] % 3, op[2])
        except RejectedInput:
            pass
    enc = app.encode_state(s)
    again = app.decode_state(enc)
    assert app.encode_state(again) == enc
    # cached encoding matches a cold re-encode of the same state
    assert z.SpotState.decode(enc).encode() == enc


def test_supply_is_conserved_by_trading():
    s = funded()
    before = (s.token_total(1), s.token_total(2))
    z.place_limit(s, z.PlaceLimit(0, 0, z.SELL, 5, 10))
    z.place_limit(s, z.PlaceLimit(1, 0, z.BUY, 7, 4))
    z.place_limit(s, z.PlaceLimit(2, 0, z.BUY, 5, 20))
    z.cancel(s, 2, 2)
    totals = {t: sum(a + l for (acct, tok), (a, l) in s.balances.items() if tok == t) for t in (1, 2)}
    assert (totals[1], totals[2]) == before == (s.token_total(1), s.token_total(2))


def test_buyer_gets_price_improvement_back():
    s = funded()
    z.place_limit(s, z.PlaceLimit(0, 0, z.SELL, 5, 10))
    trades = z.place_limit(s, z.PlaceLimit(1, 0, z.BUY, 8, 10))
    assert [(t.price, t.quantity) for t in trades] == [(5, 10)]
    assert s.balance(1, 1) == (950, 0)
    assert s.balance(1, 2) == (1010, 0)
    assert s.balance(0, 1) == (1050, 0)


def test_price_time_priority():
    s = funded()
    z.place_limit(s, z.PlaceLimit(0, 0, z.SELL, 6, 1))   # id 0
    z.place_limit(s, z.PlaceLimit(1, 0, z.SELL, 5, 1))   # id 1
    z.place_limit(s, z.PlaceLimit(2, 0, z.SELL, 5, 1))   # id 2
    trades = z.place_limit(s, z.PlaceLimit(0, 0, z.BUY, 6, 3))
    assert [t.maker_order_id for t in trades] == [1, 2, 0]


def test_rejections_leave_state_untouched():
    app = z.ZkSpotApp()
    s = funded()
    z.place_limit(s, z.PlaceLimit(0, 0, z.SELL, 5, 1))
    enc = s.encode()
    bad = [z.PlaceLimit(0, 0, z.BUY, 10**6, 10**6).encode(),   # insufficient
           z.PlaceLimit(0, 3, z.BUY, 1, 1).encode(),            # unknown market
           z.PlaceLimit(0, 0, z.BUY, 0, 1).encode(),
           z.Cancel(1, 0).encode(),                             # not owner
           z.Cancel(0, 99).encode(),
           z.DepositCredit(0, 1, 5, 1).encode(),                # nonce already used
           z.WithdrawLock(0, 1, 10**9, 2).encode(),
           z.WithdrawFinalize(7).encode(),
           b"\x09", b"", b"\x01\x00"]
    for p in bad:
        with pytest.raises(RejectedInput):
            app.apply(s, p)
    assert s.encode() == enc


def test_input_codec_roundtrip():
    for inp in (z.PlaceLimit(1, 0, 1, 5, 6), z.Cancel(2, 9), z.DepositCredit(1, 2, 3, 4),
                z.WithdrawLock(1, 2, 3, 4), z.WithdrawFinalize(5)):
        assert z.decode_input(inp.encode()) == inp


def test_withdraw_lock_then_finalize_burns():
    s = funded()
    _, w = z.withdraw_lock(s, z.WithdrawLock(0, 1, 300, 9))
    assert s.balance(0, 1) == (700, 300) and s.pending_withdrawals() == [w]
    z.withdraw_finalize(s, z.WithdrawFinalize(w.withdrawal_id))
    assert s.balance(0, 1) == (700, 0) and s.token_total(1) == 2700
    assert s.pending_withdrawals() == []


def test_bridge_nonce_key_separates_origins():
    assert z.bridge_nonce_key(1, 0) != z.bridge_nonce_key(2, 0)
    assert z.bridge_nonce_key(1, 5) == (1 << 32) | 5


def test_multiple_markets_are_independent():
    s = funded(((2, 1), (1, 2)))
    z.place_limit(s, z.PlaceLimit(0, 0, z.SELL, 5, 1))
    assert z.place_limit(s, z.PlaceLimit(1, 1, z.BUY, 5, 1)) == []
    assert len(s.orders) == 2
