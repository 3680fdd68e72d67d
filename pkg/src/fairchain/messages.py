"""Protocol message taxonomy, evidence objects, and commit proofs.

Every message travels inside a SignedMessage envelope binding it to its
sender; forged or altered envelopes are dropped at delivery. Round bodies
carry the committee era so that retries after a reconfiguration can never
be confused with traffic from an earlier configuration.

Evidence objects are self-contained: anyone holding the registry and the
committee history can re-verify an accusation without trusting whoever
relayed it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from fairchain import crypto, wire
from fairchain.types import (
    MASTER_ID,
    CommitteeEra,
    Transaction,
    epoch_digest,
)

ROUND_DATA = 1
ROUND_HASH = 2
ROUND_COMMIT = 3


# ---------------------------------------------------------------------------
# Round and control bodies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Round1:
    KIND = "round1"
    era: int
    epoch: int
    batch: tuple[Transaction, ...]

    def canonical(self) -> bytes:
        return (
            wire.text(self.KIND)
            + wire.u64(self.era)
            + wire.u64(self.epoch)
            + wire.seq(tx.canonical() for tx in self.batch)
        )


@dataclass(frozen=True)
class Round2:
    KIND = "round2"
    era: int
    epoch: int
    digest: bytes

    def canonical(self) -> bytes:
        return (
            wire.text(self.KIND)
            + wire.u64(self.era)
            + wire.u64(self.epoch)
            + wire.blob(self.digest)
        )


@dataclass(frozen=True)
class Round3:
    KIND = "round3"
    era: int
    epoch: int
    digest: bytes

    def canonical(self) -> bytes:
        return (
            wire.text(self.KIND)
            + wire.u64(self.era)
            + wire.u64(self.epoch)
            + wire.blob(self.digest)
        )


@dataclass(frozen=True)
class RelayForward:
    """A relay's retransmission of the first copy it saw from an origin."""

    KIND = "relay_forward"
    era: int
    epoch: int
    round_no: int
    inner: "SignedMessage"

    def canonical(self) -> bytes:
        return (
            wire.text(self.KIND)
            + wire.u64(self.era)
            + wire.u64(self.epoch)
            + wire.u64(self.round_no)
            + wire.blob(self.inner.canonical())
        )


@dataclass(frozen=True)
class RelayQuery:
    KIND = "relay_query"
    era: int
    epoch: int
    round_no: int
    about: int

    def canonical(self) -> bytes:
        return (
            wire.text(self.KIND)
            + wire.u64(self.era)
            + wire.u64(self.epoch)
            + wire.u64(self.round_no)
            + wire.u64(self.about)
        )


@dataclass(frozen=True)
class RelayAnswer:
    """Signed statement of whether ``relay`` received ``about``'s message.

    Normally signed by the relay itself. When a relay stays silent past the
    answer deadline the master attests a negative answer in its place, in
    which case the envelope sender is the master and ``relay`` names the
    silent player.
    """

    KIND = "relay_answer"
    era: int
    epoch: int
    round_no: int
    about: int
    relay: int
    received: bool

    def canonical(self) -> bytes:
        return (
            wire.text(self.KIND)
            + wire.u64(self.era)
            + wire.u64(self.epoch)
            + wire.u64(self.round_no)
            + wire.u64(self.about)
            + wire.u64(self.relay)
            + wire.boolean(self.received)
        )


@dataclass(frozen=True)
class StallReport:
    """A node's signed notice that expected deliveries are missing.

    ``wait_start`` is when the reporter began waiting on the instance, so
    the master can honor the two-Delta observation window.
    """

    KIND = "stall_report"
    era: int
    epoch: int
    round_no: int
    missing: tuple[int, ...]
    wait_start: int

    def canonical(self) -> bytes:
        return (
            wire.text(self.KIND)
            + wire.u64(self.era)
            + wire.u64(self.epoch)
            + wire.u64(self.round_no)
            + wire.seq(wire.u64(p) for p in self.missing)
            + wire.u64(self.wait_start)
        )


@dataclass(frozen=True)
class Complaint:
    KIND = "complaint"
    evidence: "Evidence"

    def canonical(self) -> bytes:
        return wire.text(self.KIND) + wire.blob(canonical_evidence(self.evidence))


@dataclass(frozen=True)
class Reconfig:
    KIND = "reconfig"
    era: int
    justification: "Justification"

    def canonical(self) -> bytes:
        return (
            wire.text(self.KIND)
            + wire.u64(self.era)
            + wire.blob(canonical_evidence(self.justification))
        )


@dataclass(frozen=True)
class PendingEpochData:
    """One in-flight epoch's collected signed messages, as reported in a
    status reply. The master mines these for equivocations and for the
    closing state."""

    epoch: int
    round1: tuple["SignedMessage", ...]
    round2: tuple["SignedMessage", ...]
    round3: tuple["SignedMessage", ...]

    def canonical(self) -> bytes:
        return (
            wire.u64(self.epoch)
            + wire.seq(m.canonical() for m in self.round1)
            + wire.seq(m.canonical() for m in self.round2)
            + wire.seq(m.canonical() for m in self.round3)
        )


@dataclass(frozen=True)
class Status:
    """A member's ledger tail: the frontier, the last committed epoch with
    its content and proof (so the master can transfer it if others lag),
    and every in-flight epoch's collected signed messages."""

    KIND = "status"
    era: int
    committed_upto: int  # epochs strictly below this are committed locally
    last_digest: bytes
    last_batches: tuple[tuple[int, tuple[Transaction, ...]], ...]
    last_proof: Optional["CommitProof"]
    pending: tuple[PendingEpochData, ...]

    def canonical(self) -> bytes:
        proof_bytes = b"" if self.last_proof is None else self.last_proof.canonical()
        batch_parts = []
        for player, batch in self.last_batches:
            batch_parts.append(wire.u64(player) + wire.seq(tx.canonical() for tx in batch))
        return (
            wire.text(self.KIND)
            + wire.u64(self.era)
            + wire.u64(self.committed_upto)
            + wire.blob(self.last_digest)
            + wire.seq(batch_parts)
            + wire.blob(proof_bytes)
            + wire.seq(p.canonical() for p in self.pending)
        )


@dataclass(frozen=True)
class ClosingState:
    """Master-signed frontier epoch carried into the next configuration.

    Contains the actual transactions so a member that never completed the
    epoch can adopt it, plus the signed votes that justified closing it:
    either a full committee's matching hash votes, or f+1 matching commit
    votes (a commit observed anywhere implies the full hash round existed).
    """

    epoch: int
    batches: tuple[tuple[int, tuple[Transaction, ...]], ...]
    digest: bytes
    hash_votes: tuple["SignedMessage", ...]

    def canonical(self) -> bytes:
        batch_parts = []
        for player, batch in self.batches:
            batch_parts.append(wire.u64(player) + wire.seq(tx.canonical() for tx in batch))
        return (
            wire.u64(self.epoch)
            + wire.seq(batch_parts)
            + wire.blob(self.digest)
            + wire.seq(m.canonical() for m in self.hash_votes)
        )


@dataclass(frozen=True)
class Removal:
    player: int
    evidence: "Evidence"

    def canonical(self) -> bytes:
        return wire.u64(self.player) + wire.blob(canonical_evidence(self.evidence))


@dataclass(frozen=True)
class NewConfig:
    KIND = "new_config"
    config: CommitteeEra
    next_epoch: int
    closing: Optional[ClosingState]
    removals: tuple[Removal, ...]

    def canonical(self) -> bytes:
        closing_bytes = b"" if self.closing is None else self.closing.canonical()
        return (
            wire.text(self.KIND)
            + self.config.canonical()
            + wire.u64(self.next_epoch)
            + wire.blob(closing_bytes)
            + wire.seq(r.canonical() for r in self.removals)
        )


Body = Union[
    Round1,
    Round2,
    Round3,
    RelayForward,
    RelayQuery,
    RelayAnswer,
    StallReport,
    Complaint,
    Reconfig,
    Status,
    NewConfig,
]


# ---------------------------------------------------------------------------
# Signed envelope
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SignedMessage:
    sender: int
    body: Body
    signature: bytes = field(repr=False)

    def canonical(self) -> bytes:
        return wire.u64(self.sender) + wire.blob(self.body.canonical()) + wire.blob(self.signature)

    def summary(self) -> dict:
        out: dict = {"msg": self.body.KIND, "sender": self.sender}
        for attr in ("era", "epoch", "round_no", "about"):
            if hasattr(self.body, attr):
                out[attr] = getattr(self.body, attr)
        return out


def sign_body(key: crypto.KeyPair, sender: int, body: Body) -> SignedMessage:
    return SignedMessage(sender, body, crypto.sign(key, body.canonical()))


def verify_signed(registry: crypto.KeyRegistry, msg: SignedMessage) -> bool:
    return registry.verify(msg.sender, msg.body.canonical(), msg.signature)


# ---------------------------------------------------------------------------
# Evidence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Equivocation:
    """Two valid signatures by one sender over conflicting statements.

    Conflicting means: same epoch, and either the same message kind with
    different content, or a commit vote whose digest contradicts the same
    sender's hash vote. Proves active deviation by the signer on its own.
    """

    KIND = "equivocation"
    first: SignedMessage
    second: SignedMessage

    def accused(self) -> int:
        return self.first.sender


@dataclass(frozen=True)
class BadFormat:
    """A signed message that violates a protocol formation rule."""

    KIND = "bad_format"
    message: SignedMessage
    rule: str

    def accused(self) -> int:
        return self.message.sender


@dataclass(frozen=True)
class DigestConflict:
    """Two valid hash votes for one epoch that disagree, from different
    senders. Proves the epoch cannot commit (someone equivocated upstream)
    without naming the culprit; the master identifies them from statuses."""

    KIND = "digest_conflict"
    first: SignedMessage
    second: SignedMessage


@dataclass(frozen=True)
class PassiveProof:
    """Relay-quorum adjudication of one undelivered (recipient, origin) pair."""

    KIND = "passive_proof"
    accused: int
    recipient: int
    origin: int
    era: int
    epoch: int
    round_no: int
    answers: tuple[SignedMessage, ...]


@dataclass(frozen=True)
class NonResponse:
    """Master-attested failure to reply to a reconfig within the window."""

    KIND = "non_response"
    player: int
    era: int


@dataclass(frozen=True)
class StallEvidence:
    """Signed stall reports showing a progress problem; justifies switching
    the committee into alert mode or re-running an epoch."""

    KIND = "stall_evidence"
    reports: tuple[SignedMessage, ...]


@dataclass(frozen=True)
class AdminRequest:
    """Out-of-band membership or allocation change endorsed by the master."""

    KIND = "admin_request"
    note: str


Evidence = Union[
    Equivocation, BadFormat, DigestConflict, PassiveProof, NonResponse, StallEvidence, AdminRequest
]
Justification = Evidence


def canonical_evidence(ev: Evidence) -> bytes:
    if isinstance(ev, Equivocation):
        return wire.text(ev.KIND) + wire.blob(ev.first.canonical()) + wire.blob(ev.second.canonical())
    if isinstance(ev, BadFormat):
        return wire.text(ev.KIND) + wire.blob(ev.message.canonical()) + wire.text(ev.rule)
    if isinstance(ev, DigestConflict):
        return wire.text(ev.KIND) + wire.blob(ev.first.canonical()) + wire.blob(ev.second.canonical())
    if isinstance(ev, PassiveProof):
        return (
            wire.text(ev.KIND)
            + wire.u64(ev.accused)
            + wire.u64(ev.recipient)
            + wire.u64(ev.origin)
            + wire.u64(ev.era)
            + wire.u64(ev.epoch)
            + wire.u64(ev.round_no)
            + wire.seq(a.canonical() for a in ev.answers)
        )
    if isinstance(ev, NonResponse):
        return wire.text(ev.KIND) + wire.u64(ev.player) + wire.u64(ev.era)
    if isinstance(ev, StallEvidence):
        return wire.text(ev.KIND) + wire.seq(r.canonical() for r in ev.reports)
    if isinstance(ev, AdminRequest):
        return wire.text(ev.KIND) + wire.text(ev.note)
    raise TypeError("not an evidence object: %r" % (ev,))


def _conflicting_statements(a: SignedMessage, b: SignedMessage) -> bool:
    if a.sender != b.sender:
        return False
    body_a, body_b = a.body, b.body
    if getattr(body_a, "epoch", None) != getattr(body_b, "epoch", None):
        return False
    if getattr(body_a, "era", None) != getattr(body_b, "era", None):
        return False
    if body_a.KIND == body_b.KIND:
        return body_a.canonical() != body_b.canonical()
    # Cross-round conflict: a commit vote must repeat the sender's hash vote.
    kinds = {body_a.KIND, body_b.KIND}
    if kinds == {Round2.KIND, Round3.KIND}:
        return body_a.digest != body_b.digest
    return False


def verify_evidence(registry: crypto.KeyRegistry, ev: Evidence) -> bool:
    """Re-check an evidence object from scratch. Never trusts the carrier."""
    if isinstance(ev, Equivocation):
        return (
            verify_signed(registry, ev.first)
            and verify_signed(registry, ev.second)
            and _conflicting_statements(ev.first, ev.second)
        )
    if isinstance(ev, BadFormat):
        return verify_signed(registry, ev.message) and bool(ev.rule)
    if isinstance(ev, DigestConflict):
        fb, sb = ev.first.body, ev.second.body
        return (
            verify_signed(registry, ev.first)
            and verify_signed(registry, ev.second)
            and isinstance(fb, Round2)
            and isinstance(sb, Round2)
            and fb.epoch == sb.epoch
            and fb.era == sb.era
            and fb.digest != sb.digest
        )
    if isinstance(ev, PassiveProof):
        yes = 0
        seen: set[int] = set()
        for answer in ev.answers:
            body = answer.body
            if not isinstance(body, RelayAnswer):
                return False
            if (body.era, body.epoch, body.round_no, body.about) != (
                ev.era,
                ev.epoch,
                ev.round_no,
                ev.origin,
            ):
                return False
            if answer.sender not in (body.relay, MASTER_ID):
                return False
            if not verify_signed(registry, answer):
                return False
            if body.relay in seen:
                return False
            seen.add(body.relay)
            if body.received:
                yes += 1
        # The verdict embedded in the proof must follow from the answers.
        if ev.accused == ev.recipient:
            return yes >= 1 and ev.accused not in (ev.origin,)
        if ev.accused == ev.origin:
            return True  # threshold checked against era.f by the caller
        return False
    if isinstance(ev, NonResponse):
        return True  # carried only inside master-signed messages
    if isinstance(ev, StallEvidence):
        if not ev.reports:
            return False
        return all(
            isinstance(r.body, StallReport) and verify_signed(registry, r)
            for r in ev.reports
        )
    if isinstance(ev, AdminRequest):
        return bool(ev.note)
    return False


def evidence_accused(ev: Evidence) -> Optional[int]:
    if isinstance(ev, (Equivocation, BadFormat)):
        return ev.accused()
    if isinstance(ev, PassiveProof):
        return ev.accused
    if isinstance(ev, NonResponse):
        return ev.player
    return None


@dataclass(frozen=True)
class DetectionSet:
    """Accused deviators together with the proofs backing each accusation."""

    accusations: tuple[tuple[int, Evidence], ...]

    def accused_players(self) -> list[int]:
        return [player for player, _ in self.accusations]

    def is_empty(self) -> bool:
        return not self.accusations


# ---------------------------------------------------------------------------
# Commit proofs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuorumProof:
    """f+1 matching commit votes for one epoch."""

    KIND = "quorum"
    votes: tuple[SignedMessage, ...]

    def canonical(self) -> bytes:
        return wire.text(self.KIND) + wire.seq(v.canonical() for v in self.votes)


@dataclass(frozen=True)
class MasterProof:
    """A master-signed new configuration whose closing state carries the epoch."""

    KIND = "master"
    new_config: SignedMessage

    def canonical(self) -> bytes:
        return wire.text(self.KIND) + wire.blob(self.new_config.canonical())


CommitProof = Union[QuorumProof, MasterProof]


def verify_commit_proof(
    registry: crypto.KeyRegistry,
    era: CommitteeEra,
    epoch: int,
    digest: bytes,
    proof: CommitProof,
) -> bool:
    """True iff ``proof`` certifies ``digest`` as committed at ``epoch`` under
    the given committee configuration."""
    if isinstance(proof, QuorumProof):
        signers: set[int] = set()
        for vote in proof.votes:
            body = vote.body
            if not isinstance(body, Round3):
                return False
            if body.era != era.era or body.epoch != epoch or body.digest != digest:
                return False
            if vote.sender not in era.committee or vote.sender in signers:
                return False
            if not verify_signed(registry, vote):
                return False
            signers.add(vote.sender)
        return len(signers) >= era.f + 1
    if isinstance(proof, MasterProof):
        msg = proof.new_config
        if msg.sender != MASTER_ID or not verify_signed(registry, msg):
            return False
        body = msg.body
        if not isinstance(body, NewConfig) or body.closing is None:
            return False
        closing = body.closing
        if closing.epoch != epoch or closing.digest != digest:
            return False
        return closing.digest == epoch_digest(dict(closing.batches))
    return False
