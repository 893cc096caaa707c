import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from chainless.core import AppStateView, KeyRegistry, state_root
from chainless.counter import CounterApp
from chainless.errors import LateArrival, QueueClosed
from chainless.sequencer import (HONEST, FaultMode, FaultPolicy, ScheduleEntry, Sequencer, SequencerConfig,
                                 format_schedule, parse_schedule, run_with_faults, verify_attestation)


def make_seq(mu=4, nu=3, fault=HONEST, start=0):
    app = CounterApp()
    cfg = SequencerConfig(1, AppStateView(1, app.encode_state(start)), mu=mu, nu=nu)
    return Sequencer(cfg, app, KeyRegistry(), fault)


def test_seals_at_mu():
    seq = make_seq(mu=3, nu=100)
    for i in range(7):
        seq.submit(b"+1", 1)
    out = seq.process(1)
    assert [len(r.block.transitions) for r in out] == [3, 3]
    assert seq.pending_count == 1


def test_seals_after_nu_ticks():
    seq = make_seq(mu=10, nu=3)
    seq.submit(b"+1", 1)
    assert seq.process(1) == [] and seq.process(3) == []
    out = seq.process(4)
    assert len(out) == 1 and out[0].block.sealed_at == 4


def test_acks_get_global_sequence_numbers_in_arrival_order():
    seq = make_seq()
    late = seq.submit(b"+2", 5)
    early = seq.submit(b"+1", 2)
    same = seq.submit(b"+3", 2)
    assert early.seq_no is None
    seq.process(5)
    assert (early.seq_no, same.seq_no, late.seq_no) == (0, 1, 2)
    assert [e.input for e in seq.inbox] == [b"+1", b"+3", b"+2"]


def test_late_arrival_and_shutdown():
    seq = make_seq()
    seq.process(4)
    with pytest.raises(LateArrival):
        seq.submit(b"+1", 4)
    seq.shutdown()
    with pytest.raises(QueueClosed):
        seq.submit(b"+1", 9)


def test_rejected_inputs_go_to_side_log():
    seq = make_seq(mu=2)
    for p in (b"+1", b"-5", b"bad", b"+2"):
        seq.submit(p, 1)
    out = seq.process(1)
    assert [r.seq_no for r in seq.rejected] == [1, 2]
    assert [t.input for t in out[0].block.transitions] == [b"+1", b"+2"]
    assert len(seq.inbox) == 4


def test_blocks_chain_and_checkpoint():
    seq = make_seq(mu=2, nu=1)
    for i in range(6):
        seq.submit(b"+1", i + 1)
    receipts = []
    for t in range(1, 9):
        receipts += seq.process(t)
    prev = None
    for r in receipts:
        b = r.block
        assert b.commitments_ok()
        assert r.checkpoint.state_root == b.post_root and r.checkpoint.trace_head == b.block_hash
        if prev:
            assert b.prev_block_hash == prev.block_hash and b.pre_root == prev.post_root
        assert state_root(seq.block_states[b.block_no]) == b.post_root
        assert verify_attestation(r.attestation, b.block_hash, seq.registry)
        prev = b


def test_concurrent_submit_is_safe():
    seq = make_seq(mu=1000, nu=1)

    def worker():
        for _ in range(200):
            seq.submit(b"+1", 1)

    threads = [threading.Thread(target=worker) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    seq.process(2)
    assert seq.live_state == 800 and len({e.seq_no for e in seq.inbox}) == 800


def _run(policy, n=12, mu=4):
    app = CounterApp()
    cfg = SequencerConfig(1, AppStateView(1, app.encode_state(0)), mu=mu, nu=2)
    return run_with_faults(cfg, app, KeyRegistry(), policy, [(1 + i // mu, b"+%d" % (i + 1)) for i in range(n)])


def test_fault_modes_alter_exactly_the_targeted_block():
    _, honest = _run(HONEST)
    for mode in FaultMode:
        if mode is FaultMode.HONEST:
            continue
        seq, out = _run(FaultPolicy(mode, block_no=1, seq_no=1))
        assert out[0] == honest[0], mode
        b, h = out[1], honest[1]
        if mode is FaultMode.FORGE_ATTESTATION:
            assert b.block == h.block
            assert not verify_attestation(b.attestation, b.block.block_hash, seq.registry)
        elif mode is FaultMode.DROP_TRANSITIONS:
            assert len(b.block.transitions) == len(h.block.transitions) - 1
            assert b.block.post_root == h.block.post_root
        else:
            assert b.block != h.block


def test_reorder_waits_for_distinct_neighbours():
    app = CounterApp()
    cfg = SequencerConfig(1, AppStateView(1, app.encode_state(0)), mu=2, nu=1)
    ins = [(1, b"+1"), (1, b"+1"), (2, b"+1"), (2, b"+2")]
    seq, out = run_with_faults(cfg, app, KeyRegistry(), FaultPolicy(FaultMode.REORDER_AGAINST_POLICY), ins)
    assert [t.input for t in out[0].block.transitions] == [b"+1", b"+1"]
    assert [t.input for t in out[1].block.transitions] == [b"+2", b"+1"]


def test_set_fault_arms_for_next_block():
    seq = make_seq(mu=1, nu=1, fault=FaultPolicy(FaultMode.CORRUPT_POST_ROOT, block_no=0))
    seq.submit(b"+1", 1)
    seq.process(1)
    seq.set_fault(FaultPolicy(FaultMode.CORRUPT_POST_ROOT, block_no=0))
    assert seq.fault.block_no == 1
    seq.submit(b"+1", 2)
    seq.process(2)
    assert seq.live_state == 2 + 2_000_000


def test_predicate_selects_corrupted_transition():
    policy = FaultPolicy(FaultMode.CORRUPT_POST_ROOT, predicate=lambda pos, inp: inp == b"+3")
    seq, out = _run(policy, n=4)
    assert seq.live_state == 10 + 1_000_000


def test_config_validation():
    with pytest.raises(ValueError):
        SequencerConfig(1, AppStateView(1, b""), mu=0)
    assert SequencerConfig(7, AppStateView(7, b"")).enclave_id == "enclave-7"


def test_runs_are_deterministic():
    a = _run(FaultPolicy(FaultMode.CORRUPT_POST_ROOT, block_no=1))[1]
    b = _run(FaultPolicy(FaultMode.CORRUPT_POST_ROOT, block_no=1))[1]
    assert [r.block.block_hash for r in a] == [r.block.block_hash for r in b]


@given(st.lists(st.tuples(st.integers(0, 10**6), st.integers(0, 2**32 - 1), st.binary(max_size=40)),
                max_size=30))
def test_schedule_roundtrip(entries):
    es = [ScheduleEntry(*e) for e in entries]
    assert parse_schedule(format_schedule(es)) == es


def test_schedule_errors_carry_line_numbers():
    with pytest.raises(ValueError, match="line 2"):
        parse_schedule("1,1,KzE=\n1,1\n")
    with pytest.raises(ValueError, match="line 1"):
        parse_schedule("x,1,KzE=\n")
