import random

import pytest

import oracles
from chainless.agglayer import Agglayer, AggregatedProof, aggregate
from chainless.core import KeyRegistry, sha256, u64
from chainless.errors import ContinuityViolation, DigestMismatch, FinalityViolation, NonAcceptedReceipt, UnknownApp
from chainless.settlement import RecordStatus, SettlementChain, fold_records
from chainless.trust import Verdict, VerificationReceipt

G = sha256(b"genesis")


def root(i):
    return sha256(u64(i))


def rcpt(app, block, pre, post, verdict=Verdict.ACCEPTED):
    return VerificationReceipt(app, block, pre, post, sha256(u64(block)), "FullReexecution", verdict)


def chain(**kw):
    s = SettlementChain(**kw)
    s.register_app(1, G)
    s.register_app(2, G)
    return s


def test_finalizes_and_answers_canonical_root():
    s = chain()
    recs = s.submit_aggregate(aggregate([rcpt(1, 0, G, root(1)), rcpt(1, 1, root(1), root(2)),
                                         rcpt(2, 0, G, root(9))], {}, 0), now=5)
    assert [(r.app_id, r.state_root) for r in recs] == [(1, root(2)), (2, root(9))]
    assert s.query_canonical_root(1) == (root(2), 0)
    with pytest.raises(UnknownApp):
        s.query_canonical_root(3)


def test_rejections_are_atomic_and_logged():
    s = chain()
    good = rcpt(1, 0, G, root(1))
    gap = rcpt(2, 0, root(5), root(6))
    with pytest.raises(ContinuityViolation):
        s.submit_aggregate(aggregate([good, gap], {}, 0), now=1)
    with pytest.raises(UnknownApp):
        s.query_canonical_root(1)            # app 1 was not finalized either
    assert {r.status for r in s.records} == {RecordStatus.REJECTED}
    assert all(r.reason == "ContinuityViolation" for r in s.records)


def test_epochs_must_increase():
    s = chain()
    s.submit_aggregate(aggregate([rcpt(1, 0, G, root(1))], {}, 3), now=1)
    with pytest.raises(FinalityViolation):
        s.submit_aggregate(aggregate([rcpt(1, 1, root(1), root(2))], {}, 3), now=2)
    with pytest.raises(FinalityViolation):
        s.submit_aggregate(aggregate([rcpt(1, 1, root(1), root(2))], {}, 2), now=2)
    s.submit_aggregate(aggregate([rcpt(1, 1, root(1), root(2))], {}, 4), now=2)


def test_digest_and_verdict_checks():
    s = chain()
    agg = aggregate([rcpt(1, 0, G, root(1))], {}, 0)
    with pytest.raises(DigestMismatch):
        s.submit_aggregate(AggregatedProof(0, agg.receipts, agg.bridge_roots, sha256(b"x")), now=1)
    pending = rcpt(1, 0, G, root(1), Verdict.PENDING)
    bad = AggregatedProof(0, (pending,), (), AggregatedProof.compute_digest(0, (pending,), {}))
    with pytest.raises(NonAcceptedReceipt):
        s.submit_aggregate(bad, now=1)


def test_trusted_signers_are_required():
    reg = KeyRegistry()
    reg.register("trust")
    reg.register("mallory")
    s = chain(registry=reg, trusted_signers=["trust"])
    r = rcpt(1, 0, G, root(1))
    with pytest.raises(NonAcceptedReceipt):
        s.submit_aggregate(aggregate([r], {}, 0), now=1)
    with pytest.raises(NonAcceptedReceipt):
        s.submit_aggregate(aggregate([r.signed(reg, "mallory")], {}, 1), now=1)
    s.submit_aggregate(aggregate([r.signed(reg, "trust")], {}, 2), now=1)


def test_bridge_roots_anchor_only_after_finalization():
    bridge = Agglayer((1, 2), {})
    s = chain(agglayer=bridge)
    ger = bridge.update_global_exit_root()
    agg = aggregate([rcpt(1, 0, G, root(1))], dict(ger.roots), 0)
    with pytest.raises(FinalityViolation):
        s.record_bridge_events(agg)
    s.submit_aggregate(agg, now=1)
    s.record_bridge_events(agg)
    assert bridge.anchored.ger == ger.ger and s.canonical_view().ger == ger.ger


def test_fold_matches_oracle():
    rng = random.Random(5)
    s = chain()
    for a in (3, 4, 5):
        s.register_app(a, G)
    heads = {a: G for a in (1, 2, 3, 4, 5)}
    blocks = dict.fromkeys(heads, 0)
    for epoch in range(40):
        apps = rng.sample(sorted(heads), rng.randint(1, 3))
        receipts = []
        for a in apps:
            new = sha256(heads[a], u64(epoch))
            pre = heads[a] if rng.random() > 0.1 else sha256(b"wrong")
            receipts.append(rcpt(a, blocks[a], pre, new))
        try:
            s.submit_aggregate(aggregate(receipts, {}, epoch), now=epoch)
        except ContinuityViolation:
            continue
        for a, r in zip(apps, receipts):
            heads[a] = r.post_root
            blocks[a] += 1
    assert fold_records(s.records) == oracles.fold(s.records)
    for a, (r, e) in fold_records(s.records).items():
        assert s.query_canonical_root(a) == (r, e) and heads[a] == r
