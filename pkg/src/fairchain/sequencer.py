"""Committee member state machine.

Epochs run in three rounds over the broadcast layer: transactions out,
hash votes out, commit votes out. An epoch commits when f+1 matching
commit votes (own included) are in hand, which yields a quorum certificate
any third party can check. Data broadcasts for future epochs are pipelined
up to a window ahead, while hash and commit rounds stay strictly
sequential so epoch k+1 never overtakes epoch k.

A node never blocks: "wait until" conditions from the protocol become
completion predicates re-evaluated whenever a delivery or timer arrives.
When a wait outlives Delta the node sends the master a signed stall report
naming the origins it is missing; equivocations and hash mismatches go out
immediately as complaints. After complaining the node freezes sequencing
until the master installs a new configuration.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from fairchain import broadcast, crypto
from fairchain.messages import (
    BadFormat,
    ClosingState,
    Complaint,
    DigestConflict,
    Equivocation,
    MasterProof,
    NewConfig,
    NonResponse,
    PassiveProof,
    PendingEpochData,
    QuorumProof,
    Reconfig,
    RelayAnswer,
    RelayForward,
    RelayQuery,
    Removal,
    Round1,
    Round2,
    Round3,
    SignedMessage,
    StallEvidence,
    StallReport,
    Status,
    AdminRequest,
    sign_body,
    verify_evidence,
    verify_signed,
    evidence_accused,
)
from fairchain.simnet import Send, SetTimer, Trace
from fairchain.types import (
    MASTER_ID,
    CommitteeEra,
    EpochRecord,
    Ledger,
    Transaction,
    epoch_digest,
    ordered_epoch_txs,
)

_ROUND_OF = {Round1: 1, Round2: 2, Round3: 3}


class QueueFull(Exception):
    pass


@dataclass
class NodeParams:
    delta_us: int = 200_000
    pipeline_window: int = 8
    compute_delay_us: int = 0  # production cost per transaction in a data batch
    payload_bytes: int = 64
    max_payload_bytes: int = 4096
    max_queue: int = 0  # 0 = unbounded
    real_tx_budget: int | None = None  # None = endless stream, else dummies after


@dataclass
class _PendingEpoch:
    round1: dict[int, SignedMessage] = field(default_factory=dict)
    round2: dict[int, SignedMessage] = field(default_factory=dict)
    round3: dict[int, SignedMessage] = field(default_factory=dict)
    digest: bytes | None = None
    own_rounds: set[int] = field(default_factory=set)
    epoch_start: int | None = None
    complained_round3: set[int] = field(default_factory=set)


class SequencerNode:
    def __init__(
        self,
        node_id: int,
        key: crypto.KeyPair,
        registry: crypto.KeyRegistry,
        first_era: CommitteeEra,
        params: NodeParams,
        trace: Trace,
    ):
        self.node_id = node_id
        self._key = key
        self._registry = registry
        self._era = first_era
        self._params = params
        self._trace = trace

        self.ledger = Ledger(first_era)
        self._frontier = 0  # next epoch to commit
        self._pending: dict[int, _PendingEpoch] = {}
        self._instances: dict[tuple[int, int, int], broadcast.InstanceState] = {}
        self._drawn: dict[int, tuple[Transaction, ...]] = {}
        self._produced_upto = 0
        self._busy_until = 0
        self._queue: deque[bytes] = deque()
        self._redraw: deque[Transaction] = deque()
        self._next_seq = 0
        self._real_left = params.real_tx_budget
        self._waiting: str | None = None
        self._future_era: list[SignedMessage] = []
        self.bad_signatures = 0
        self.ignored_reconfigs = 0

    # -- external ledger API ------------------------------------------------

    def append(self, payload: bytes) -> None:
        """Buffer a transaction for inclusion in an ensuing epoch."""
        if len(payload) > self._params.max_payload_bytes:
            raise ValueError("payload exceeds configured bound")
        if self._params.max_queue and len(self._queue) >= self._params.max_queue:
            raise QueueFull("queue limit %d reached" % self._params.max_queue)
        self._queue.append(payload)

    def queued(self) -> int:
        return len(self._queue)

    def read(self, count: int) -> tuple[list[Transaction], list[tuple[int, list[Transaction], object]]]:
        """Last ``count`` committed transactions plus per-epoch commit proofs
        covering them. Proofs always span whole epochs so they stay
        independently verifiable."""
        if count <= 0:
            return [], []
        flat = self.ledger.all_txs()
        suffix = flat[-count:]
        need = len(suffix)
        proofs: list[tuple[int, list[Transaction], object]] = []
        for entry in reversed(self.ledger.entries):
            if need <= 0:
                break
            txs = entry.txs()
            proofs.append((entry.epoch, txs, entry.proof))
            need -= len(txs)
        proofs.reverse()
        return suffix, proofs

    # -- handler entry points ------------------------------------------------

    def on_start(self, now: int) -> list:
        actions: list = []
        self._schedule_production(now, actions)
        return actions

    def on_timer(self, tag: tuple, now: int) -> list:
        actions: list = []
        kind = tag[0]
        if kind == "produce":
            _, era_no, epoch = tag
            if era_no == self._era.era and self._waiting is None:
                self._send_round1(epoch, now, actions)
        elif kind == "stall":
            _, era_no, epoch, round_no, wait_start = tag
            if era_no == self._era.era and self._waiting is None:
                self._check_stall(epoch, round_no, wait_start, now, actions)
        return actions

    def on_deliver(self, msg: SignedMessage, now: int) -> list:
        actions: list = []
        if not verify_signed(self._registry, msg):
            self.bad_signatures += 1
            self._trace.emit(now, "bad_signature", node=self.node_id, claimed=msg.sender)
            return actions
        body = msg.body
        if isinstance(body, (Round1, Round2, Round3, RelayForward)):
            self._on_round_traffic(msg, now, actions)
        elif isinstance(body, RelayQuery):
            if msg.sender == MASTER_ID:
                self._answer_query(body, now, actions)
        elif isinstance(body, Reconfig):
            self._on_reconfig(msg, now, actions)
        elif isinstance(body, NewConfig):
            self._on_new_config(msg, now, actions)
        # Anything else (status, reports, answers) is master-bound; ignore.
        return actions

    # -- production and round 1 ----------------------------------------------

    def _schedule_production(self, now: int, actions: list) -> None:
        if self._waiting is not None:
            return
        horizon = self._frontier + self._params.pipeline_window
        while self._produced_upto < horizon:
            epoch = self._produced_upto
            batch = self._draw_batch()
            self._drawn[epoch] = batch
            prep = len(batch) * self._params.compute_delay_us
            fire_at = max(now, self._busy_until) + prep
            self._busy_until = fire_at
            actions.append(SetTimer(fire_at - now, ("produce", self._era.era, epoch)))
            self._produced_upto += 1

    def _draw_batch(self) -> tuple[Transaction, ...]:
        size = self._era.schedule.size(self.node_id)
        batch: list[Transaction] = []
        for _ in range(size):
            if self._redraw:
                batch.append(self._redraw.popleft())
                continue
            if self._queue:
                payload = self._queue.popleft()
            elif self._real_left is None or self._real_left > 0:
                payload = b"p%d-%08d" % (self.node_id, self._next_seq)
                payload = payload.ljust(self._params.payload_bytes, b".")
                if self._real_left is not None:
                    self._real_left -= 1
            else:
                batch.append(Transaction(self.node_id, self._next_seq, b"", dummy=True))
                self._next_seq += 1
                continue
            batch.append(Transaction(self.node_id, self._next_seq, payload))
            self._next_seq += 1
        return tuple(batch)

    def _instance_cfg(self, epoch: int, round_no: int) -> broadcast.InstanceConfig:
        era = self._era
        return broadcast.InstanceConfig(
            era=era.era,
            epoch=epoch,
            round_no=round_no,
            participants=era.committee,
            relays=era.relays,
            f=era.f,
        )

    def _send_round1(self, epoch: int, now: int, actions: list) -> None:
        body = Round1(self._era.era, epoch, self._drawn[epoch])
        self._broadcast(body, epoch, 1, now, actions)
        pend = self._pending.setdefault(epoch, _PendingEpoch())
        pend.own_rounds.add(1)
        self._maybe_begin_epoch(epoch, now, actions)

    def _broadcast(self, body, epoch: int, round_no: int, now: int, actions: list) -> None:
        cfg = self._instance_cfg(epoch, round_no)
        msg = sign_body(self._key, self.node_id, body)
        for dst in broadcast.broadcast_destinations(cfg, self.node_id):
            actions.append(Send(dst, msg))
        self._trace.emit(
            now,
            "broadcast",
            node=self.node_id,
            era=cfg.era,
            epoch=epoch,
            round=round_no,
            copies=len(cfg.participants),
        )
        self._accept_copy(cfg, self.node_id, msg, now, actions)

    def _maybe_begin_epoch(self, epoch: int, now: int, actions: list) -> None:
        # The epoch's clock starts when both its data broadcast is out and
        # the previous epoch has committed; stall timers for round 1 arm at
        # the same moment so pipelined data sent far ahead is never reported.
        pend = self._pending.get(epoch)
        if (
            pend is not None
            and epoch == self._frontier
            and 1 in pend.own_rounds
            and pend.epoch_start is None
        ):
            pend.epoch_start = now
            self._arm_stall(epoch, 1, now, actions)

    def _arm_stall(self, epoch: int, round_no: int, now: int, actions: list) -> None:
        actions.append(
            SetTimer(self._params.delta_us, ("stall", self._era.era, epoch, round_no, now))
        )

    # -- inbound round traffic -------------------------------------------------

    def _on_round_traffic(self, msg: SignedMessage, now: int, actions: list) -> None:
        body = msg.body
        if body.era > self._era.era:
            self._future_era.append(msg)
            return
        if body.era < self._era.era or self._waiting in ("removed", "halted"):
            return
        if isinstance(body, RelayForward):
            inner = body.inner
            if not isinstance(inner.body, (Round1, Round2, Round3)):
                return
            if not verify_signed(self._registry, inner):
                self.bad_signatures += 1
                self._trace.emit(now, "bad_signature", node=self.node_id, claimed=inner.sender)
                return
            if (
                inner.body.era != body.era
                or inner.body.epoch != body.epoch
                or _ROUND_OF[type(inner.body)] != body.round_no
            ):
                return
            if msg.sender not in self._era.relays:
                return
            origin, original, round_no, epoch = inner.sender, inner, body.round_no, body.epoch
        else:
            origin, original = msg.sender, msg
            round_no, epoch = _ROUND_OF[type(body)], body.epoch
        if origin not in self._era.committee:
            return
        cfg = self._instance_cfg(epoch, round_no)
        self._accept_copy(cfg, origin, original, now, actions)

    def _accept_copy(
        self,
        cfg: broadcast.InstanceConfig,
        origin: int,
        original: SignedMessage,
        now: int,
        actions: list,
    ) -> None:
        state = self._instances.setdefault(cfg.key(), broadcast.InstanceState())
        prior = state.delivered.get(origin)
        first, forwards = broadcast.on_copy(cfg, state, self.node_id, origin, original)
        if forwards:
            fwd = sign_body(
                self._key,
                self.node_id,
                RelayForward(cfg.era, cfg.epoch, cfg.round_no, original),
            )
            for dst in forwards:
                actions.append(Send(dst, fwd))
            self._trace.emit(
                now,
                "forward",
                relay=self.node_id,
                origin=origin,
                era=cfg.era,
                epoch=cfg.epoch,
                round=cfg.round_no,
                copies=len(cfg.participants),
            )
        if not first:
            if prior is not None and prior.body.canonical() != original.body.canonical():
                # Two valid signatures by one origin over different content
                # within one instance: provable active deviation. For data
                # or hash rounds of an uncommitted epoch the content is now
                # ambiguous, so stop sequencing until the master steps in.
                self._complain(Equivocation(prior, original), now, actions)
                if cfg.round_no in (1, 2) and cfg.epoch >= self._frontier and self._waiting is None:
                    self._waiting = "reconfig"
            return
        if isinstance(original.body, Round1):
            self._handle_round1(origin, original, now, actions)
        elif isinstance(original.body, Round2):
            self._handle_round2(origin, original, now, actions)
        elif isinstance(original.body, Round3):
            self._handle_round3(origin, original, now, actions)

    def _complain(self, evidence, now: int, actions: list) -> None:
        msg = sign_body(self._key, self.node_id, Complaint(evidence))
        actions.append(Send(MASTER_ID, msg))
        self._trace.emit(
            now,
            "complaint",
            node=self.node_id,
            evidence=evidence.KIND,
            accused=evidence_accused(evidence),
        )

    # -- protocol round handlers ----------------------------------------------

    def _handle_round1(self, origin: int, msg: SignedMessage, now: int, actions: list) -> None:
        body = msg.body
        rule = self._batch_rule_violation(origin, body.batch)
        if rule is not None:
            self._complain(BadFormat(msg, rule), now, actions)
            return
        pend = self._pending.setdefault(body.epoch, _PendingEpoch())
        pend.round1[origin] = msg
        if body.epoch == self._frontier:
            self._try_start_round2(body.epoch, now, actions)

    def _batch_rule_violation(self, origin: int, batch: tuple[Transaction, ...]) -> str | None:
        expected = self._era.schedule.size(origin)
        if len(batch) != expected:
            return "batch_size:%d!=%d" % (len(batch), expected)
        if any(tx.issuer != origin for tx in batch):
            return "foreign_issuer"
        return None

    def _handle_round2(self, origin: int, msg: SignedMessage, now: int, actions: list) -> None:
        pend = self._pending.setdefault(msg.body.epoch, _PendingEpoch())
        pend.round2[origin] = msg
        if msg.body.epoch == self._frontier:
            self._try_send_round3(msg.body.epoch, now, actions)

    def _handle_round3(self, origin: int, msg: SignedMessage, now: int, actions: list) -> None:
        pend = self._pending.setdefault(msg.body.epoch, _PendingEpoch())
        pend.round3[origin] = msg
        own_round2 = pend.round2.get(origin)
        if (
            own_round2 is not None
            and own_round2.body.digest != msg.body.digest
            and origin not in pend.complained_round3
        ):
            # A commit vote that contradicts the same sender's hash vote is
            # evidence by itself; it also never counts toward the quorum.
            pend.complained_round3.add(origin)
            self._complain(Equivocation(own_round2, msg), now, actions)
        if msg.body.epoch == self._frontier:
            self._try_commit(msg.body.epoch, now, actions)

    def _try_start_round2(self, epoch: int, now: int, actions: list) -> None:
        if self._waiting is not None or epoch != self._frontier:
            return
        pend = self._pending.get(epoch)
        if pend is None or 2 in pend.own_rounds:
            return
        if set(pend.round1) != set(self._era.committee):
            return
        batches = {p: m.body.batch for p, m in pend.round1.items()}
        pend.digest = epoch_digest(batches)
        pend.own_rounds.add(2)
        self._broadcast(Round2(self._era.era, epoch, pend.digest), epoch, 2, now, actions)
        self._arm_stall(epoch, 2, now, actions)
        self._try_send_round3(epoch, now, actions)

    def _try_send_round3(self, epoch: int, now: int, actions: list) -> None:
        if self._waiting is not None or epoch != self._frontier:
            return
        pend = self._pending.get(epoch)
        if pend is None or 2 not in pend.own_rounds or 3 in pend.own_rounds:
            return
        if set(pend.round2) != set(self._era.committee):
            return
        mismatched = [
            m for _, m in sorted(pend.round2.items()) if m.body.digest != pend.digest
        ]
        if mismatched:
            own = pend.round2[self.node_id]
            self._complain(DigestConflict(own, mismatched[0]), now, actions)
            self._waiting = "reconfig"
            return
        pend.own_rounds.add(3)
        self._broadcast(Round3(self._era.era, epoch, pend.digest), epoch, 3, now, actions)
        self._arm_stall(epoch, 3, now, actions)
        self._try_commit(epoch, now, actions)

    def _try_commit(self, epoch: int, now: int, actions: list) -> None:
        if self._waiting is not None or epoch != self._frontier:
            return
        pend = self._pending.get(epoch)
        if pend is None or 3 not in pend.own_rounds or pend.digest is None:
            return
        matching = [
            m for _, m in sorted(pend.round3.items()) if m.body.digest == pend.digest
        ]
        if len(matching) < self._era.f + 1:
            return
        batches = {p: m.body.batch for p, m in pend.round1.items()}
        record = EpochRecord(
            era=self._era.era,
            epoch=epoch,
            batches=tuple(sorted(batches.items())),
            digest=pend.digest,
            proof=QuorumProof(tuple(matching[: self._era.f + 1])),
            commit_time=now,
        )
        self._commit(record, pend.epoch_start, now, actions)

    def _commit(self, record: EpochRecord, epoch_start: int | None, now: int, actions: list) -> None:
        self.ledger.append_entry(record)
        self._pending.pop(record.epoch, None)
        self._drawn.pop(record.epoch, None)
        latency = None if epoch_start is None else now - epoch_start
        self._trace.emit(
            now,
            "commit",
            node=self.node_id,
            era=record.era,
            epoch=record.epoch,
            digest=record.digest.hex(),
            proof=record.proof.KIND,
            latency=latency,
            txs=[[tx.issuer, tx.seq, int(tx.dummy)] for tx in record.txs()],
        )
        self._frontier = record.epoch + 1
        self._schedule_production(now, actions)
        self._maybe_begin_epoch(self._frontier, now, actions)
        self._try_start_round2(self._frontier, now, actions)
        self._try_send_round3(self._frontier, now, actions)
        self._try_commit(self._frontier, now, actions)

    # -- stall detection --------------------------------------------------------

    def _check_stall(self, epoch: int, round_no: int, wait_start: int, now: int, actions: list) -> None:
        if epoch < self._frontier:
            return
        pend = self._pending.get(epoch)
        if pend is None:
            return
        committee = set(self._era.committee)
        if round_no == 1:
            missing = committee - set(pend.round1)
        elif round_no == 2:
            missing = committee - set(pend.round2)
        else:
            if pend.digest is not None:
                matching = {
                    p for p, m in pend.round3.items() if m.body.digest == pend.digest
                }
                if len(matching) >= self._era.f + 1:
                    return
                missing = committee - matching
            else:
                missing = committee - set(pend.round3)
        if not missing:
            return
        report = StallReport(
            self._era.era, epoch, round_no, tuple(sorted(missing)), wait_start
        )
        actions.append(Send(MASTER_ID, sign_body(self._key, self.node_id, report)))
        self._trace.emit(
            now,
            "stall",
            node=self.node_id,
            era=self._era.era,
            epoch=epoch,
            round=round_no,
            missing=sorted(missing),
        )

    # -- master interactions -----------------------------------------------------

    def _answer_query(self, query: RelayQuery, now: int, actions: list) -> None:
        state = self._instances.get((query.era, query.epoch, query.round_no))
        received = state is not None and query.about in state.delivered
        answer = RelayAnswer(
            query.era, query.epoch, query.round_no, query.about, self.node_id, received
        )
        actions.append(Send(MASTER_ID, sign_body(self._key, self.node_id, answer)))

    def _on_reconfig(self, msg: SignedMessage, now: int, actions: list) -> None:
        body = msg.body
        if (
            msg.sender != MASTER_ID
            or body.era != self._era.era
            or self._waiting in ("removed", "halted", "new_config")
            or not self._justification_valid(body.justification)
        ):
            self.ignored_reconfigs += 1
            self._trace.emit(now, "reconfig_ignored", node=self.node_id, sender=msg.sender)
            return
        self._waiting = "new_config"
        status = self._build_status()
        actions.append(Send(MASTER_ID, sign_body(self._key, self.node_id, status)))
        self._trace.emit(now, "status_sent", node=self.node_id, era=self._era.era,
                         committed_upto=status.committed_upto)

    def _justification_valid(self, justification) -> bool:
        if isinstance(justification, StallEvidence):
            if not verify_evidence(self._registry, justification):
                return False
            return all(r.sender in self._era.committee for r in justification.reports)
        if isinstance(justification, AdminRequest):
            return bool(justification.note)
        return verify_evidence(self._registry, justification)

    def _build_status(self) -> Status:
        last_digest = b""
        last_batches: tuple = ()
        last_proof = None
        if self.ledger.entries:
            last = self.ledger.entries[-1]
            last_digest = last.digest
            last_batches = last.batches
            last_proof = last.proof
        pending: list[PendingEpochData] = []
        for epoch in sorted(self._pending):
            if epoch < self._frontier:
                continue
            pend = self._pending[epoch]
            pending.append(
                PendingEpochData(
                    epoch=epoch,
                    round1=tuple(m for _, m in sorted(pend.round1.items())),
                    round2=tuple(m for _, m in sorted(pend.round2.items())),
                    round3=tuple(m for _, m in sorted(pend.round3.items())),
                )
            )
        return Status(
            era=self._era.era,
            committed_upto=self._frontier,
            last_digest=last_digest,
            last_batches=last_batches,
            last_proof=last_proof,
            pending=tuple(pending),
        )

    def _on_new_config(self, msg: SignedMessage, now: int, actions: list) -> None:
        body = msg.body
        if msg.sender != MASTER_ID or body.config.era != self._era.era + 1:
            self.ignored_reconfigs += 1
            self._trace.emit(now, "new_config_ignored", node=self.node_id, sender=msg.sender)
            return
        if not self._new_config_valid(body):
            self.ignored_reconfigs += 1
            self._trace.emit(now, "new_config_ignored", node=self.node_id, sender=msg.sender)
            return
        old_era = self._era
        if body.closing is not None:
            self._adopt_closing(msg, body.closing, old_era, now, actions)
            if self._waiting == "halted":
                return
        self.ledger.add_era(body.config)
        self._era = body.config
        self._trace.emit(
            now,
            "adopt_config",
            node=self.node_id,
            era=body.config.era,
            committee=list(body.config.committee),
            next_epoch=body.next_epoch,
            mode=body.config.mode,
        )
        if self.node_id not in body.config.committee:
            self._waiting = "removed"
            self._trace.emit(now, "removed", node=self.node_id, era=body.config.era)
            return
        # Re-propose every drawn-but-uncommitted real transaction in FIFO
        # order; batch sizes may have changed with the new allocation.
        for epoch in sorted(e for e in self._drawn if e >= self._frontier):
            for tx in self._drawn[epoch]:
                if not tx.dummy:
                    self._redraw.append(tx)
        self._drawn = {k: v for k, v in self._drawn.items() if k < self._frontier}
        self._pending = {}
        self._produced_upto = self._frontier
        self._busy_until = now
        self._waiting = None
        self._schedule_production(now, actions)
        buffered, self._future_era = self._future_era, []
        for queued in buffered:
            if queued.body.era == self._era.era:
                self._on_round_traffic(queued, now, actions)
            elif queued.body.era > self._era.era:
                self._future_era.append(queued)

    def _new_config_valid(self, body: NewConfig) -> bool:
        old = self._era
        removed = set(old.committee) - set(body.config.committee)
        justified = {r.player for r in body.removals if self._removal_valid(r, old)}
        if not removed <= justified:
            return False
        if not set(body.config.committee) <= set(old.committee):
            return False
        if body.closing is not None and not self._closing_valid(body.closing, old):
            return False
        return True

    def _removal_valid(self, removal: Removal, old: CommitteeEra) -> bool:
        ev = removal.evidence
        if not verify_evidence(self._registry, ev):
            return False
        if isinstance(ev, NonResponse):
            return ev.player == removal.player and ev.era == old.era
        if isinstance(ev, PassiveProof):
            if ev.accused != removal.player:
                return False
            admissible = [
                a for a in ev.answers if a.body.relay not in (ev.recipient, ev.origin)
            ]
            yes = sum(1 for a in admissible if a.body.received)
            if ev.accused == ev.recipient:
                return yes >= old.f + 1
            return len(admissible) >= 2 * old.f + 1 and yes < old.f + 1
        return evidence_accused(ev) == removal.player

    def _closing_valid(self, closing: ClosingState, old: CommitteeEra) -> bool:
        if closing.digest != epoch_digest(dict(closing.batches)):
            return False
        if not closing.hash_votes:
            return False
        kinds = {type(vote.body) for vote in closing.hash_votes}
        if len(kinds) != 1 or kinds & {Round2, Round3} != kinds:
            return False
        signers = set()
        for vote in closing.hash_votes:
            if vote.body.epoch != closing.epoch or vote.body.digest != closing.digest:
                return False
            if vote.sender not in old.committee or not verify_signed(self._registry, vote):
                return False
            signers.add(vote.sender)
        if kinds == {Round2}:
            # The full committee signed this hash: the epoch was committable.
            return len(signers) == len(old.committee)
        # f+1 commit votes: someone may have committed, so it must stick.
        return len(signers) >= old.f + 1

    def _adopt_closing(
        self, msg: SignedMessage, closing: ClosingState, old: CommitteeEra, now: int, actions: list
    ) -> None:
        if closing.epoch == self._frontier:
            pend = self._pending.get(closing.epoch)
            record = EpochRecord(
                era=old.era,
                epoch=closing.epoch,
                batches=closing.batches,
                digest=closing.digest,
                proof=MasterProof(msg),
                commit_time=now,
            )
            epoch_start = pend.epoch_start if pend else None
            self._commit_via_master(record, epoch_start, now)
        elif closing.epoch == self._frontier - 1:
            mine = self.ledger.entries[-1]
            if mine.digest != closing.digest:
                self._trace.emit(now, "halt", node=self.node_id, reason="closing_digest_mismatch")
                self._waiting = "halted"
        else:
            self._trace.emit(now, "halt", node=self.node_id, reason="closing_gap")
            self._waiting = "halted"

    def _commit_via_master(self, record: EpochRecord, epoch_start: int | None, now: int) -> None:
        self.ledger.append_entry(record)
        self._pending.pop(record.epoch, None)
        # The closing state supersedes whatever batch this node had drawn
        # for the epoch; drawn real txs for it are NOT re-proposed if they
        # are already inside the closing content.
        committed_keys = {tx.key() for tx in record.txs()}
        drawn = self._drawn.pop(record.epoch, ())
        for tx in drawn:
            if not tx.dummy and tx.key() not in committed_keys:
                self._redraw.append(tx)
        latency = None if epoch_start is None else now - epoch_start
        self._trace.emit(
            now,
            "commit",
            node=self.node_id,
            era=record.era,
            epoch=record.epoch,
            digest=record.digest.hex(),
            proof=record.proof.KIND,
            latency=latency,
            txs=[[tx.issuer, tx.seq, int(tx.dummy)] for tx in record.txs()],
        )
        self._frontier = record.epoch + 1


def verify_read_proof(
    registry: crypto.KeyRegistry,
    eras: list[CommitteeEra],
    epoch: int,
    txs: list[Transaction],
    proof,
) -> bool:
    """Third-party check that ``txs`` is exactly what committed at ``epoch``.

    Reconstructs the epoch digest from the transactions under the canonical
    order rule and validates the proof against the committee configuration
    active at that epoch.
    """
    from fairchain.messages import verify_commit_proof

    era = None
    for candidate in eras:
        if candidate.start_epoch <= epoch:
            era = candidate
    if era is None:
        return False
    batches: dict[int, list[Transaction]] = {}
    for tx in txs:
        batches.setdefault(tx.issuer, []).append(tx)
    if ordered_epoch_txs(batches) != list(txs):
        return False
    digest = epoch_digest(batches)
    return verify_commit_proof(registry, era, epoch, digest, proof)
