"""Trust layer: verifying sealed blocks under a configurable trust model.

Every verifier emits a :class:`VerificationReceipt`. Receipts carry a ``work``
counter (transitions re-executed) that is reported but never committed to.

A block whose replay diverges is rejected and the first divergent ``seq_no``
is written into the receipt evidence as ``b"<reason>@<seq_no>"``.
"""

from __future__ import annotations

import math
import random
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Callable, ClassVar, Sequence

from .core import (AppStateView, Application, Digest, KeyRegistry, MerkleProof, Reader, TraceBlock,
                   TransitionRecord, ZERO_DIGEST, framed, merkle_proof, sha256, state_root, text, u64,
                   verify_merkle_proof)
from .errors import InsufficientValidators, PreStateMismatch, RejectedInput
from .sequencer import AttestationStub, BatchReceipt, InboxEntry, verify_attestation


# --------------------------------------------------------------------------
# Trust models
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FullReexecution:
    tag: ClassVar[str] = "FullReexecution"


@dataclass(frozen=True)
class Committee:
    n: int
    q: int
    stake: int = 100
    tag: ClassVar[str] = "Committee"

    def __post_init__(self):
        if not 1 <= self.q <= self.n:
            raise ValueError("committee requires 1 <= q <= n")


@dataclass(frozen=True)
class Optimistic:
    window: int
    tag: ClassVar[str] = "Optimistic"

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("optimistic window must be >= 1 tick")


@dataclass(frozen=True)
class TeePlusSpotCheck:
    sample_rate: float
    tag: ClassVar[str] = "TeePlusSpotCheck"

    def __post_init__(self):
        if not 0 < self.sample_rate <= 1:
            raise ValueError("sample_rate must be in (0, 1]")


@dataclass(frozen=True)
class OperatorTrust:
    tag: ClassVar[str] = "OperatorTrust"


TrustModel = FullReexecution | Committee | Optimistic | TeePlusSpotCheck | OperatorTrust


def parse_trust_model(spec: str) -> TrustModel:
    """Parse ``full``, ``committee:N:Q``, ``optimistic:W``, ``tee:RATE`` or ``operator``."""
    name, *args = spec.strip().split(":")
    name = name.lower()
    try:
        if name in ("full", "fullreexecution"):
            return FullReexecution()
        if name == "committee":
            return Committee(int(args[0]), int(args[1]), *(int(a) for a in args[2:3]))
        if name == "optimistic":
            return Optimistic(int(args[0]))
        if name in ("tee", "teeplusspotcheck"):
            return TeePlusSpotCheck(float(args[0]))
        if name in ("operator", "operatortrust"):
            return OperatorTrust()
    except (IndexError, ValueError) as exc:
        raise ValueError(f"bad trust model {spec!r}: {exc}") from None
    raise ValueError(f"unknown trust model {spec!r}")


# --------------------------------------------------------------------------
# Receipts
# --------------------------------------------------------------------------


class Verdict(str, Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    PENDING = "pending"


_VERDICT_CODE = {Verdict.ACCEPTED: 0, Verdict.REJECTED: 1, Verdict.PENDING: 2}


@dataclass(frozen=True)
class VerificationReceipt:
    app_id: int
    block_no: int
    pre_root: Digest
    post_root: Digest
    trace_commitment: Digest
    model: str
    verdict: Verdict
    pending_until: int | None = None
    evidence: bytes = b""
    signer: str = ""
    signature: bytes = b""
    work: int = field(default=0, compare=False)

    def body(self) -> bytes:
        return b"".join([
            u64(self.app_id), u64(self.block_no), self.pre_root, self.post_root,
            self.trace_commitment, text(self.model), bytes([_VERDICT_CODE[self.verdict]]),
            u64(self.pending_until if self.pending_until is not None else 0), framed(self.evidence),
        ])

    @property
    def digest(self) -> Digest:
        return sha256(self.body())

    def encode(self) -> bytes:
        return self.body() + text(self.signer) + framed(self.signature)

    @classmethod
    def decode(cls, data: bytes) -> "VerificationReceipt":
        r = Reader(data)
        app_id, block_no = r.u64(), r.u64()
        pre, post, commit = r.digest(), r.digest(), r.digest()
        model = r.text()
        verdict = {v: k for k, v in _VERDICT_CODE.items()}[r.u8()]
        until = r.u64()
        evidence = r.framed()
        signer, sig = r.text(), r.framed()
        r.finish()
        return cls(app_id, block_no, pre, post, commit, model, verdict,
                   until if verdict is Verdict.PENDING else None, evidence, signer, sig)

    def signed(self, registry: KeyRegistry, signer: str) -> "VerificationReceipt":
        return replace(self, signer=signer, signature=registry.sign(signer, self.digest))

    def signature_ok(self, registry: KeyRegistry) -> bool:
        return bool(self.signer) and registry.verify(self.signer, self.digest, self.signature)

    def export_line(self) -> str:
        verdict = self.verdict.value
        if self.verdict is Verdict.PENDING:
            verdict += f"({self.pending_until})"
        return (f"{self.app_id}\t{self.block_no}\t{self.pre_root.hex()}\t{self.post_root.hex()}"
                f"\t{self.model}\t{verdict}")


def _receipt(block: TraceBlock, app_id: int, model: str, verdict: Verdict, evidence: bytes = b"",
             work: int = 0, pending_until: int | None = None) -> VerificationReceipt:
    return VerificationReceipt(app_id, block.block_no, block.pre_root, block.post_root, block.block_hash,
                               model, verdict, pending_until, evidence, work=work)


def divergence_of(receipt: VerificationReceipt) -> tuple[str, int | None]:
    """Decode ``(reason, seq_no)`` from a rejected receipt's evidence."""
    reason, _, seq = receipt.evidence.decode("utf-8", "replace").partition("@")
    return reason, int(seq) if seq.isdigit() else None


# --------------------------------------------------------------------------
# Deterministic replay
# --------------------------------------------------------------------------


@dataclass
class ReplayOutcome:
    ok: bool
    reason: str = ""
    divergence: int | None = None
    recomputed: Digest | None = None
    post_state: AppStateView | None = None
    consumed: int = 0
    replayed: int = 0

    @property
    def evidence(self) -> bytes:
        if self.ok:
            return b""
        return f"{self.reason}@{'' if self.divergence is None else self.divergence}".encode()


def _payload(entry) -> bytes:
    return entry.input if isinstance(entry, InboxEntry) else entry


def replay_block(block: TraceBlock, app: Application, pre_state: AppStateView,
                 inbox: Sequence[InboxEntry | bytes] | None = None) -> ReplayOutcome:
    """Re-execute a block from ``pre_state``.

    With ``inbox`` (the sequencer's published, policy-ordered inputs starting
    at the verifier's cursor) the inputs are taken from the inbox rather than
    the trace, so reordered or omitted inputs surface as an ``order``
    divergence. Inputs the app rejects are replayed and skipped, as the
    sequencer does.
    """
    if not block.commitments_ok():
        return ReplayOutcome(False, "commitment")
    if pre_state.root != block.pre_root:
        raise PreStateMismatch("pre-state root does not match block.pre_root")
    state = app.decode_state(pre_state.serialized_state)
    cur = pre_state.serialized_state
    root = block.pre_root
    replayed = consumed = 0

    def fail(i, reason, recomputed=None):
        return ReplayOutcome(False, reason, i, recomputed, None, consumed, replayed)

    for i, rec in enumerate(block.transitions):
        if rec.pre_state_root != root:
            return fail(i, "link", root)
        if inbox is not None:
            while True:
                if consumed >= len(inbox):
                    return fail(i, "order")
                payload = _payload(inbox[consumed])
                consumed += 1
                replayed += 1
                try:
                    state = app.apply(state, payload)
                except RejectedInput:
                    continue
                break
            if payload != rec.input:
                return fail(i, "order")
        else:
            replayed += 1
            try:
                state = app.apply(state, rec.input)
            except RejectedInput:
                return fail(i, "execution", root)
        cur = app.encode_state(state)
        root = state_root(cur)
        if root != rec.post_state_root:
            return fail(i, "execution", root)
    if root != block.post_root:
        return fail(len(block.transitions), "post_root", root)
    return ReplayOutcome(True, "", None, root, AppStateView(pre_state.app_id, cur, pre_state.version + 1),
                         consumed, replayed)


def verify_full(block: TraceBlock, app: Application, pre_state: AppStateView, *,
                inbox: Sequence[InboxEntry | bytes] | None = None,
                attestation: AttestationStub | None = None,
                registry: KeyRegistry | None = None) -> VerificationReceipt:
    """Full deterministic replay (the validity-proof stand-in)."""
    return verify_full_detailed(block, app, pre_state, inbox=inbox, attestation=attestation,
                                registry=registry)[0]


def verify_full_detailed(block, app, pre_state, *, inbox=None, attestation=None, registry=None):
    if attestation is not None and registry is not None:
        if not verify_attestation(attestation, block.block_hash, registry):
            out = ReplayOutcome(False, "attestation")
            return _receipt(block, pre_state.app_id, FullReexecution.tag, Verdict.REJECTED, out.evidence), out
    out = replay_block(block, app, pre_state, inbox)
    if out.ok:
        evidence = b"replay:" + out.recomputed
        return _receipt(block, pre_state.app_id, FullReexecution.tag, Verdict.ACCEPTED, evidence, out.replayed), out
    return _receipt(block, pre_state.app_id, FullReexecution.tag, Verdict.REJECTED, out.evidence, out.replayed), out


# --------------------------------------------------------------------------
# Committee
# --------------------------------------------------------------------------


@dataclass
class ValidatorRecord:
    validator_id: str
    stake: int
    slashed: bool = False
    key: bytes = b""
    byzantine: bool = False  # simulation role, not visible to the protocol


class ValidatorSet:
    """Owner of validator records; slashing is serialized through it."""

    def __init__(self, registry: KeyRegistry, records: Sequence[ValidatorRecord] = ()):
        self.registry = registry
        self._lock = threading.Lock()
        self.records: list[ValidatorRecord] = []
        for r in records:
            self.add(r)

    @classmethod
    def create(cls, registry: KeyRegistry, n: int, stake: int = 100, byzantine: Sequence[int] = (),
               prefix: str = "validator") -> "ValidatorSet":
        return cls(registry, [ValidatorRecord(f"{prefix}-{i}", stake, byzantine=i in set(byzantine))
                              for i in range(n)])

    def add(self, record: ValidatorRecord) -> None:
        record.key = self.registry.register(record.validator_id, record.key or None)
        self.records.append(record)

    def active(self) -> list[ValidatorRecord]:
        return [r for r in self.records if not r.slashed]

    def slash(self, validator_id: str) -> None:
        with self._lock:
            for r in self.records:
                if r.validator_id == validator_id:
                    r.slashed = True
                    r.stake = 0


def vote_message(block_hash: Digest, post_root: Digest) -> bytes:
    return sha256(b"committee-vote", block_hash, post_root)


def reject_marker(block_hash: Digest) -> Digest:
    """Root an honest validator signs when the block fails its replay."""
    return sha256(b"committee-reject", block_hash)


def verify_committee(block: TraceBlock, app: Application, pre_state: AppStateView,
                     validators: ValidatorSet | Sequence[ValidatorRecord], q: int, *,
                     registry: KeyRegistry | None = None,
                     inbox: Sequence[InboxEntry | bytes] | None = None,
                     attestation: AttestationStub | None = None) -> VerificationReceipt:
    return verify_committee_detailed(block, app, pre_state, validators, q, registry=registry, inbox=inbox,
                                     attestation=attestation)[0]


def verify_committee_detailed(block, app, pre_state, validators, q, *, registry=None, inbox=None,
                              attestation=None) -> tuple[VerificationReceipt, ReplayOutcome | None]:
    """Each active validator replays independently and signs ``(block_hash, root)``.

    Accepted iff at least ``q`` signatures endorse the block's own post_root.
    When some root gathers a quorum, every validator that signed a different
    root is slashed.
    """
    vset = validators if isinstance(validators, ValidatorSet) else None
    records = vset.active() if vset else [v for v in validators if not v.slashed]
    if registry is None:
        if vset is None:
            raise ValueError("registry is required with a bare validator list")
        registry = vset.registry
    if len(records) < q:
        raise InsufficientValidators(f"{len(records)} active validators, quorum {q}")

    att_ok = attestation is None or verify_attestation(attestation, block.block_hash, registry)
    votes: list[tuple[str, Digest, bytes]] = []
    work = 0
    honest_view: ReplayOutcome | None = None
    for v in records:
        out = replay_block(block, app, pre_state, inbox) if att_ok else ReplayOutcome(False, "attestation")
        work += out.replayed
        if honest_view is None and not v.byzantine:
            honest_view = out
        if v.byzantine:
            root = sha256(b"byzantine", block.block_hash) if out.ok else block.post_root
        else:
            root = block.post_root if out.ok else reject_marker(block.block_hash)
        votes.append((v.validator_id, root, registry.sign(v.validator_id, vote_message(block.block_hash, root))))

    tally: dict[Digest, int] = {}
    for _, root, sig in votes:
        tally[root] = tally.get(root, 0) + 1
    quorum = [r for r, c in tally.items() if c >= q]
    decisive = block.post_root if block.post_root in quorum else (
        max(quorum, key=lambda r: (tally[r], r)) if quorum else None)
    if decisive is not None:
        for vid, root, _ in votes:
            if root != decisive:
                if vset:
                    vset.slash(vid)
                else:
                    for v in records:
                        if v.validator_id == vid:
                            v.slashed, v.stake = True, 0
    chosen = [v for v in votes if decisive is None or v[1] == decisive]
    evidence = b"".join(text(vid) + root + sig for vid, root, sig in chosen)
    accepted = decisive == block.post_root
    return _receipt(block, pre_state.app_id, Committee.tag,
                    Verdict.ACCEPTED if accepted else Verdict.REJECTED, evidence, work), honest_view


def committee_signatures(receipt: VerificationReceipt) -> list[tuple[str, Digest, bytes]]:
    r = Reader(receipt.evidence)
    out = []
    while not r.done():
        out.append((r.text(), r.digest(), r.digest()))
    return out


# --------------------------------------------------------------------------
# Optimistic acceptance and fraud proofs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FraudProof:
    """Evidence that a block is wrong at ``seq_no``.

    ``kind`` is ``execution`` (re-running ``transition`` from ``pre_state``
    gives ``recomputed_post_root``), ``link`` (``transition`` does not start
    where ``prior``, or the block header when ``prior`` is None, ended) or
    ``tail`` (the header's post_root is not where the last transition ended).
    """

    block_no: int
    seq_no: int
    claimed_post_root: Digest
    recomputed_post_root: Digest
    witness: MerkleProof | None
    transition: TransitionRecord | None
    kind: str = "execution"
    pre_state: bytes = b""
    prior: TransitionRecord | None = None
    prior_witness: MerkleProof | None = None


def file_fraud_proof(block: TraceBlock, app: Application, pre_state: AppStateView) -> FraudProof | None:
    """Replay the recorded trace and build a proof for its first divergence."""
    if pre_state.root != block.pre_root:
        raise PreStateMismatch("pre-state root does not match block.pre_root")
    leaves = [t.digest for t in block.transitions]
    state = app.decode_state(pre_state.serialized_state)
    cur = pre_state.serialized_state
    root = block.pre_root
    for i, rec in enumerate(block.transitions):
        if rec.pre_state_root != root:
            prior = block.transitions[i - 1] if i else None
            return FraudProof(block.block_no, i, rec.pre_state_root, root, merkle_proof(leaves, i), rec,
                              "link", b"", prior, merkle_proof(leaves, i - 1) if i else None)
        try:
            state = app.apply(state, rec.input)
            nxt = app.encode_state(state)
        except RejectedInput:
            nxt = cur
        new_root = state_root(nxt)
        if new_root != rec.post_state_root:
            return FraudProof(block.block_no, i, rec.post_state_root, new_root, merkle_proof(leaves, i), rec,
                              "execution", cur)
        cur, root = nxt, new_root
    if root != block.post_root:
        m = len(block.transitions)
        last = block.transitions[-1] if m else None
        return FraudProof(block.block_no, m, block.post_root, root,
                          merkle_proof(leaves, m - 1) if m else None, last, "tail")
    return None


def validate_fraud_proof(proof: FraudProof, block: TraceBlock, app: Application) -> bool:
    """Adjudicate a challenge using only the block header, the witnesses and
    (for execution proofs) a single-transition re-execution."""
    if proof.block_no != block.block_no or block.header_hash() != block.block_hash:
        return False
    if proof.claimed_post_root == proof.recomputed_post_root:
        return False

    def included(rec, wit, idx):
        return (rec is not None and wit is not None and wit.index == idx
                and verify_merkle_proof(block.transitions_root, rec.digest, wit))

    t = proof.transition
    if proof.kind == "execution":
        if not included(t, proof.witness, proof.seq_no) or t.post_state_root != proof.claimed_post_root:
            return False
        if state_root(proof.pre_state) != t.pre_state_root:
            return False
        try:
            state = app.apply(app.decode_state(proof.pre_state), t.input)
            after = app.encode_state(state)
        except RejectedInput:
            after = proof.pre_state
        except ValueError:
            return False
        return state_root(after) == proof.recomputed_post_root
    if proof.kind == "link":
        if not included(t, proof.witness, proof.seq_no) or t.pre_state_root != proof.claimed_post_root:
            return False
        if proof.seq_no == 0:
            return proof.recomputed_post_root == block.pre_root
        return (included(proof.prior, proof.prior_witness, proof.seq_no - 1)
                and proof.prior.post_state_root == proof.recomputed_post_root)
    if proof.kind == "tail":
        if proof.claimed_post_root != block.post_root:
            return False
        if t is None:
            return block.transitions_root == ZERO_DIGEST and proof.recomputed_post_root == block.pre_root
        return (included(t, proof.witness, proof.seq_no - 1)
                and t.post_state_root == proof.recomputed_post_root)
    return False


def optimistic_accept(block: TraceBlock, now: int, window: int, app_id: int = 0) -> VerificationReceipt:
    return _receipt(block, app_id, Optimistic.tag, Verdict.PENDING, pending_until=now + window)


class ChallengeWindow:
    """Tracks optimistic receipts for one app.

    A valid fraud proof filed at any tick up to and including ``pending_until``
    rejects the block at once (ties go to the challenger); a block with no
    valid challenge is accepted on the first tick after its window. Blocks
    built on a rejected block are rejected with it.
    """

    def __init__(self, app: Application, window: int, app_id: int = 0):
        self.app = app
        self.window = window
        self.app_id = app_id
        self.blocks: dict[int, TraceBlock] = {}
        self.receipts: dict[int, VerificationReceipt] = {}
        self.ignored_challenges = 0

    def open(self, block: TraceBlock, now: int) -> VerificationReceipt:
        r = optimistic_accept(block, now, self.window, self.app_id)
        if any(v.verdict is Verdict.REJECTED for k, v in self.receipts.items() if k < block.block_no):
            r = replace(r, verdict=Verdict.REJECTED, pending_until=None, evidence=b"orphaned@")
        self.blocks[block.block_no] = block
        self.receipts[block.block_no] = r
        return r

    def challenge(self, block_no: int, proof: FraudProof, now: int) -> bool:
        r = self.receipts.get(block_no)
        if r is None or r.verdict is not Verdict.PENDING or now > r.pending_until:
            self.ignored_challenges += 1
            return False
        if not validate_fraud_proof(proof, self.blocks[block_no], self.app):
            self.ignored_challenges += 1
            return False
        evidence = f"fraud-{proof.kind}@{proof.seq_no}".encode()
        for k in sorted(self.receipts):
            if k >= block_no and self.receipts[k].verdict is Verdict.PENDING:
                self.receipts[k] = replace(self.receipts[k], verdict=Verdict.REJECTED, pending_until=None,
                                           evidence=evidence if k == block_no else b"orphaned@")
        return True

    def finalize(self, now: int) -> list[VerificationReceipt]:
        """Accept every pending receipt whose window has closed; returns those."""
        done = []
        for k in sorted(self.receipts):
            r = self.receipts[k]
            if r.verdict is Verdict.PENDING and now > r.pending_until:
                r = self.receipts[k] = replace(r, verdict=Verdict.ACCEPTED, pending_until=None)
                done.append(r)
        return done


def finalize_optimistic(receipt: VerificationReceipt, now: int,
                        valid_challenge_at: int | None = None) -> VerificationReceipt:
    """Pure form of the window rule for a single receipt."""
    if receipt.verdict is not Verdict.PENDING:
        return receipt
    if valid_challenge_at is not None and valid_challenge_at <= receipt.pending_until and valid_challenge_at <= now:
        return replace(receipt, verdict=Verdict.REJECTED, pending_until=None)
    if now > receipt.pending_until:
        return replace(receipt, verdict=Verdict.ACCEPTED, pending_until=None)
    return receipt


# --------------------------------------------------------------------------
# TEE attestation plus sampled re-verification; operator trust
# --------------------------------------------------------------------------


def sample_size(sample_rate: float, m: int) -> int:
    return min(m, math.ceil(Fraction(sample_rate).limit_denominator(10**9) * m))


def spotcheck_sample(block_hash: Digest, rng_seed: int, m: int, sample_rate: float) -> list[int]:
    rng = random.Random(int.from_bytes(sha256(block_hash, u64(rng_seed & (2**64 - 1)))[:8], "big"))
    return sorted(rng.sample(range(m), sample_size(sample_rate, m)))


def verify_tee_spotcheck(receipt_in: BatchReceipt, app: Application, pre_state: AppStateView,
                         sample_rate: float, rng_seed: int, *, registry: KeyRegistry,
                         witness: Callable[[Digest], bytes | None] | None = None) -> VerificationReceipt:
    """Reject on a bad attestation; otherwise re-run a seeded sample of
    transitions, each from its own recorded pre-state, and accept iff all match.

    ``witness(root)`` supplies serialized intermediate states (the enclave's
    state snapshots); the block's pre-state is always available.
    """
    block = receipt_in.block
    tag = TeePlusSpotCheck.tag
    if not verify_attestation(receipt_in.attestation, block.block_hash, registry):
        return _receipt(block, pre_state.app_id, tag, Verdict.REJECTED, b"attestation@")
    if not block.commitments_ok():
        return _receipt(block, pre_state.app_id, tag, Verdict.REJECTED, b"commitment@")
    if pre_state.root != block.pre_root:
        raise PreStateMismatch("pre-state root does not match block.pre_root")
    work = 0
    for i in spotcheck_sample(block.block_hash, rng_seed, len(block.transitions), sample_rate):
        rec = block.transitions[i]
        if rec.pre_state_root == pre_state.root:
            data = pre_state.serialized_state
        else:
            data = witness(rec.pre_state_root) if witness else None
        if data is None or state_root(data) != rec.pre_state_root:
            return _receipt(block, pre_state.app_id, tag, Verdict.REJECTED, f"witness@{i}".encode(), work)
        work += 1
        try:
            after = app.encode_state(app.apply(app.decode_state(data), rec.input))
        except RejectedInput:
            return _receipt(block, pre_state.app_id, tag, Verdict.REJECTED, f"execution@{i}".encode(), work)
        if state_root(after) != rec.post_state_root:
            return _receipt(block, pre_state.app_id, tag, Verdict.REJECTED, f"execution@{i}".encode(), work)
    return _receipt(block, pre_state.app_id, tag, Verdict.ACCEPTED, b"", work)


def operator_accept(block: TraceBlock, app_id: int = 0) -> VerificationReceipt:
    """Accept without checking anything. Corrupt blocks pass too; that is the model."""
    return _receipt(block, app_id, OperatorTrust.tag, Verdict.ACCEPTED)
