"""Trusted monitor: stall adjudication, recovery, and QoS control.

The master never sits on the commit fast path. It learns of trouble from
signed stall reports and complaints, waits out the two-Delta observation
window for the oldest troubled broadcast instance, then either:

* adjudicates the missing deliveries through relay queries (alert mode),
  accusing the responsible player with a relay-quorum proof;
* switches a direct-mode committee into alert mode so the next occurrence
  becomes attributable;
* re-selects relays when the current set overlaps the suspects.

Every path ends in a reconfiguration: stop the configuration with a
justified reconfig message, collect signed statuses for two Delta, compute
the closing state (the highest epoch any member may have committed, which
must survive into the new configuration), punish or remove the accused,
renormalize the QoS vector, and install the next committee era. Members
that stay silent through the collection window are dropped from the new
committee with a master-attested non-response record.

Active deviations short-circuit the detection path: a verified complaint
(equivocation, malformed message, conflicting hash votes) triggers
reconfiguration immediately.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from fairchain import broadcast, crypto
from fairchain.messages import (
    AdminRequest,
    BadFormat,
    ClosingState,
    Complaint,
    DigestConflict,
    Equivocation,
    MasterProof,
    NewConfig,
    NonResponse,
    PassiveProof,
    QuorumProof,
    Reconfig,
    RelayAnswer,
    RelayQuery,
    Removal,
    Round1,
    Round2,
    Round3,
    SignedMessage,
    StallEvidence,
    StallReport,
    Status,
    sign_body,
    verify_commit_proof,
    verify_evidence,
    verify_signed,
    evidence_accused,
)
from fairchain.simnet import Send, SetTimer, Trace
from fairchain.types import (
    MASTER_ID,
    CommitteeEra,
    CommitteeTooSmall,
    QosVector,
    batch_schedule_from_qos,
    epoch_digest,
)


def verify_active_evidence(registry: crypto.KeyRegistry, evidence) -> int | None:
    """Accused player for standalone active-deviation evidence, else None.

    None covers both invalid evidence and evidence kinds that justify a
    reconfiguration without naming a culprit (conflicting hash votes).
    """
    if isinstance(evidence, (Equivocation, BadFormat)) and verify_evidence(registry, evidence):
        return evidence_accused(evidence)
    return None


def adjust_qos(qos: QosVector, player: int, new_ratio: Fraction) -> QosVector:
    """Reassign one player's ledger share, rescaling the rest exactly."""
    return qos.with_ratio(player, Fraction(new_ratio))


@dataclass
class MasterPolicy:
    # Escalation ladder for passive accusations: first offense halves the
    # player's ratio, a repeat removes it. Active evidence always removes.
    passive_escalation: tuple[str, ...] = ("halve", "remove")
    stay_in_alert: bool = True
    decrement_f_on_removal: bool = True


@dataclass
class _Dispute:
    pairs: set[tuple[int, int]] = field(default_factory=set)
    wait_start: int | None = None
    reports: list[SignedMessage] = field(default_factory=list)
    scheduled: bool = False


class MasterNode:
    node_id = MASTER_ID

    def __init__(
        self,
        key: crypto.KeyPair,
        registry: crypto.KeyRegistry,
        first_era: CommitteeEra,
        delta_us: int,
        trace: Trace,
        policy: MasterPolicy | None = None,
        initial_mode: str | None = None,
        initial_relay_count: int = 0,
    ):
        self._key = key
        self._registry = registry
        self._era = first_era
        self._eras: list[CommitteeEra] = [first_era]
        self._delta = delta_us
        self._trace = trace
        self._policy = policy or MasterPolicy()
        self._initial_mode = initial_mode or first_era.mode
        self._initial_relay_count = initial_relay_count

        self._phase = "monitor"
        self._disputes: dict[tuple[int, int, int], _Dispute] = {}
        self._passive_counts: dict[int, int] = {}
        self._query: dict | None = None
        self._recon: dict | None = None
        self.halted: str | None = None
        self.reconfigurations = 0

    @property
    def era(self) -> CommitteeEra:
        return self._era

    # -- handler entry points --------------------------------------------------

    def on_start(self, now: int) -> list:
        return []

    def on_deliver(self, msg: SignedMessage, now: int) -> list:
        actions: list = []
        if self.halted is not None:
            return actions
        if not verify_signed(self._registry, msg):
            self._trace.emit(now, "bad_signature", node=MASTER_ID, claimed=msg.sender)
            return actions
        body = msg.body
        if isinstance(body, StallReport):
            self._on_stall_report(msg, now, actions)
        elif isinstance(body, Complaint):
            self._on_complaint(msg, now, actions)
        elif isinstance(body, Status):
            self._on_status(msg, now)
        elif isinstance(body, RelayAnswer):
            self._on_relay_answer(msg)
        return actions

    def on_timer(self, tag: tuple, now: int) -> list:
        actions: list = []
        if self.halted is not None:
            return actions
        kind = tag[0]
        if kind == "adjudicate" and tag[1] == self._era.era:
            self.monitor_tick(now, actions)
        elif kind == "answers" and self._phase == "queries" and tag[1] == self._era.era:
            self._evaluate_answers(now, actions)
        elif kind == "statuses" and self._phase == "statuses" and tag[1] == self._era.era:
            self._finish_reconfig(now, actions)
        return actions

    # -- stall intake and scheduled detection -----------------------------------

    def _on_stall_report(self, msg: SignedMessage, now: int, actions: list) -> None:
        body = msg.body
        if body.era != self._era.era or msg.sender not in self._era.committee:
            return
        if self._phase != "monitor":
            return  # a recovery is already underway; persistent stalls re-report
        key = (body.era, body.epoch, body.round_no)
        dispute = self._disputes.setdefault(key, _Dispute())
        for origin in body.missing:
            if origin != msg.sender and origin in self._era.committee:
                dispute.pairs.add((msg.sender, origin))
        dispute.reports.append(msg)
        if dispute.wait_start is None or body.wait_start < dispute.wait_start:
            dispute.wait_start = body.wait_start
        if not dispute.scheduled:
            dispute.scheduled = True
            due = max(dispute.wait_start + 2 * self._delta - now, 0)
            actions.append(SetTimer(due, ("adjudicate", body.era, body.epoch, body.round_no)))

    def monitor_tick(self, now: int, actions: list) -> None:
        """Process the oldest disputed instance whose observation window has
        passed. Instances resolve strictly in (epoch, round) order so a node
        stuck in an early round is never blamed for silence in later ones."""
        if self._phase != "monitor":
            return
        for key in sorted(self._disputes):
            dispute = self._disputes[key]
            if not dispute.pairs:
                continue
            if now < (dispute.wait_start or 0) + 2 * self._delta:
                return  # strictly in order: wait for the oldest to mature
            self._adjudicate(key, dispute, now, actions)
            return

    def _instance_cfg(self, key: tuple[int, int, int]) -> broadcast.InstanceConfig:
        era_no, epoch, round_no = key
        return broadcast.InstanceConfig(
            era=era_no,
            epoch=epoch,
            round_no=round_no,
            participants=self._era.committee,
            relays=self._era.relays,
            f=self._era.f,
        )

    def _adjudicate(self, key: tuple[int, int, int], dispute: _Dispute, now: int, actions: list) -> None:
        cfg = self._instance_cfg(key)
        justification = StallEvidence(tuple(dispute.reports))
        if len(cfg.relays) < 2 * cfg.f + 1:
            # Direct or lightly relayed operation cannot attribute blame;
            # degrade to alert mode and retry under 2f+1 relays.
            self._start_reconfig(
                justification, [], now, actions, mode_override="alert", reason="mode_switch"
            )
            return
        admissible = sorted(
            p for p in dispute.pairs if len([r for r in cfg.relays if r not in p]) >= 2 * cfg.f + 1
        )
        if not admissible:
            # Every disputed pair overlaps the relay set; re-run the instance
            # with relays drawn away from the first pair of suspects.
            suspects = sorted(dispute.pairs)[0]
            relays = broadcast.pick_relays(cfg.participants, 2 * cfg.f + 1, exclude=suspects)
            self._trace.emit(
                now, "reinvestigate", era=cfg.era, epoch=cfg.epoch, round=cfg.round_no,
                suspects=list(suspects), relays=list(relays),
            )
            self._start_reconfig(
                justification, [], now, actions, relay_override=relays, reason="reinvestigate"
            )
            return
        origins = sorted({origin for _, origin in admissible})
        for origin in origins:
            query = RelayQuery(cfg.era, cfg.epoch, cfg.round_no, origin)
            signed = sign_body(self._key, MASTER_ID, query)
            for relay in cfg.relays:
                actions.append(Send(relay, signed))
        self._phase = "queries"
        self._query = {
            "key": key,
            "pairs": admissible,
            "origins": origins,
            "answers": {},
            "justification": justification,
        }
        actions.append(SetTimer(self._delta, ("answers", cfg.era)))

    def _on_relay_answer(self, msg: SignedMessage) -> None:
        if self._phase != "queries" or self._query is None:
            return
        body = msg.body
        key = self._query["key"]
        if (body.era, body.epoch, body.round_no) != key:
            return
        if msg.sender != body.relay or body.relay not in self._era.relays:
            return
        if body.about in self._query["origins"]:
            self._query["answers"][(body.relay, body.about)] = msg

    def _evaluate_answers(self, now: int, actions: list) -> None:
        assert self._query is not None
        key = self._query["key"]
        cfg = self._instance_cfg(key)
        answers_by_origin: dict[int, list[SignedMessage]] = {o: [] for o in self._query["origins"]}
        for origin in self._query["origins"]:
            for relay in cfg.relays:
                got = self._query["answers"].get((relay, origin))
                if got is None:
                    # Silence counts as a negative answer, attested by the
                    # master so the proof object stays verifiable.
                    body = RelayAnswer(cfg.era, cfg.epoch, cfg.round_no, origin, relay, False)
                    got = sign_body(self._key, MASTER_ID, body)
                answers_by_origin[origin].append(got)
        outcome = broadcast.detect(cfg, self._query["pairs"], answers_by_origin)
        self._trace.emit(
            now,
            "detect",
            era=cfg.era,
            epoch=cfg.epoch,
            round=cfg.round_no,
            accused=outcome.accused_players(),
        )
        accusations = list(outcome.accusations)
        justification = accusations[0][1] if accusations else self._query["justification"]
        self._query = None
        self._start_reconfig(justification, accusations, now, actions, reason="detection")

    # -- complaints (active deviations) ------------------------------------------

    def _on_complaint(self, msg: SignedMessage, now: int, actions: list) -> None:
        if self._phase != "monitor" or msg.sender not in self._era.committee:
            return
        evidence = msg.body.evidence
        accused = verify_active_evidence(self._registry, evidence)
        if accused is not None:
            if accused not in self._era.committee:
                return
            self._start_reconfig(evidence, [(accused, evidence)], now, actions, reason="active")
            return
        if isinstance(evidence, DigestConflict) and verify_evidence(self._registry, evidence):
            # Valid proof the epoch cannot commit; the culprit is identified
            # from the collected statuses during recovery.
            self._start_reconfig(evidence, [], now, actions, reason="digest_conflict")
            return
        self._trace.emit(now, "complaint_rejected", complainant=msg.sender)

    # -- reconfiguration ----------------------------------------------------------

    def _start_reconfig(
        self,
        justification,
        accusations: list[tuple[int, object]],
        now: int,
        actions: list,
        relay_override: tuple[int, ...] | None = None,
        mode_override: str | None = None,
        reason: str = "",
    ) -> None:
        self._phase = "statuses"
        self._recon = {
            "justification": justification,
            "accusations": accusations,
            "relay_override": relay_override,
            "mode_override": mode_override,
            "statuses": {},
            "status_msgs": {},
            "reason": reason,
        }
        msg = sign_body(self._key, MASTER_ID, Reconfig(self._era.era, justification))
        for player in self._era.committee:
            actions.append(Send(player, msg))
        self._trace.emit(
            now,
            "reconfig",
            era=self._era.era,
            reason=reason,
            accused=[p for p, _ in accusations],
        )
        actions.append(SetTimer(2 * self._delta, ("statuses", self._era.era)))

    def _on_status(self, msg: SignedMessage, now: int) -> None:
        if self._phase != "statuses" or self._recon is None:
            return
        body = msg.body
        if body.era != self._era.era or msg.sender not in self._era.committee:
            return
        if not self._status_consistent(body):
            self._trace.emit(now, "status_rejected", sender=msg.sender)
            return
        self._recon["statuses"][msg.sender] = body
        self._recon["status_msgs"][msg.sender] = msg

    def _era_for_epoch(self, epoch: int) -> CommitteeEra:
        chosen = self._eras[0]
        for era in self._eras:
            if era.start_epoch <= epoch:
                chosen = era
        return chosen

    def _status_consistent(self, status: Status) -> bool:
        """A commit claim must carry a proof that actually verifies; an
        unprovable claim marks the whole status unusable (its sender is
        treated as a non-responder)."""
        if status.committed_upto == 0:
            return True
        if status.last_proof is None:
            return False
        digest = epoch_digest(dict(status.last_batches))
        if digest != status.last_digest:
            return False
        era = self._era_for_epoch(status.committed_upto - 1)
        return verify_commit_proof(
            self._registry, era, status.committed_upto - 1, status.last_digest, status.last_proof
        )

    def _finish_reconfig(self, now: int, actions: list) -> None:
        assert self._recon is not None
        recon = self._recon
        statuses: dict[int, Status] = recon["statuses"]
        old = self._era

        removals: list[Removal] = []
        punished: list[int] = []
        removed_players: set[int] = set()

        for player in old.committee:
            if player not in statuses:
                removals.append(Removal(player, NonResponse(player, old.era)))
                removed_players.add(player)

        for player, evidence in recon["accusations"]:
            if player in removed_players:
                continue
            if isinstance(evidence, PassiveProof):
                count = self._passive_counts.get(player, 0) + 1
                self._passive_counts[player] = count
                ladder = self._policy.passive_escalation
                step = ladder[min(count, len(ladder)) - 1]
                if step == "halve":
                    punished.append(player)
                else:
                    removals.append(Removal(player, evidence))
                    removed_players.add(player)
            else:
                removals.append(Removal(player, evidence))
                removed_players.add(player)

        for player, evidence in self._hunt_active_deviations(statuses, recon["justification"]):
            if player not in removed_players and player in old.committee:
                removals.append(Removal(player, evidence))
                removed_players.add(player)

        committee = tuple(sorted(set(statuses) - removed_players))
        new_f = old.f
        if self._policy.decrement_f_on_removal:
            new_f = max(0, old.f - len(removed_players))
        if len(committee) < 2 * new_f + 3:
            self.halted = "committee_too_small"
            self._trace.emit(
                now, "halt", node=MASTER_ID, reason="committee_too_small",
                committee=list(committee), f=new_f,
            )
            return

        qos = old.qos.without(removed_players) if removed_players else old.qos
        for player in punished:
            if player in committee:
                qos = adjust_qos(qos, player, qos.ratio(player) / 2)
                self._trace.emit(now, "punish", player=player, ratio=str(qos.ratio(player)))
        schedule = batch_schedule_from_qos(qos, qos.minimal_base())

        mode = recon["mode_override"] or old.mode
        if not self._policy.stay_in_alert and recon["mode_override"] is None:
            mode = self._initial_mode
        if recon["relay_override"] is not None:
            relays = tuple(r for r in recon["relay_override"] if r in committee)
            if len(relays) < 2 * new_f + 1:
                relays = broadcast.relays_for_mode(committee, "alert", new_f)
        else:
            relays = broadcast.relays_for_mode(
                committee, mode, new_f, self._initial_relay_count
            )

        closing = self._compute_closing(statuses, old)
        next_epoch = closing.epoch + 1 if closing is not None else self._retry_epoch(statuses)

        config = CommitteeEra(
            era=old.era + 1,
            start_epoch=next_epoch,
            committee=committee,
            f=new_f,
            qos=qos,
            schedule=schedule,
            mode=mode,
            relays=relays,
        )
        body = NewConfig(
            config=config,
            next_epoch=next_epoch,
            closing=closing,
            removals=tuple(removals),
        )
        msg = sign_body(self._key, MASTER_ID, body)
        for player in committee:
            actions.append(Send(player, msg))
        self._trace.emit(
            now,
            "new_config",
            era=config.era,
            committee=list(committee),
            f=new_f,
            removed=[[r.player, r.evidence.KIND] for r in removals],
            next_epoch=next_epoch,
            closing_epoch=None if closing is None else closing.epoch,
            mode=mode,
            relays=list(relays),
            qos={str(p): str(r) for p, r in qos.ratios.items()},
            schedule={str(p): s for p, s in schedule.sizes.items()},
        )
        self._era = config
        self._eras.append(config)
        self._disputes = {}
        self._recon = None
        self._query = None
        self._phase = "monitor"
        self.reconfigurations += 1

    def _retry_epoch(self, statuses: dict[int, Status]) -> int:
        if not statuses:
            return 0
        return max(s.committed_upto for s in statuses.values())

    def _compute_closing(self, statuses: dict[int, Status], old: CommitteeEra) -> ClosingState | None:
        """Highest epoch that any member may have committed, with content.

        Two observations close an epoch: a status holding the full
        committee's matching hash votes for it, or a verified commit proof.
        Commits in flight below the closing epoch are implied committed;
        everything above it is aborted and re-run.
        """
        best: tuple[int, ClosingState] | None = None
        committee = set(old.committee)
        for status in statuses.values():
            if status.committed_upto > 0:
                epoch = status.committed_upto - 1
                if best is None or epoch > best[0]:
                    votes: tuple[SignedMessage, ...] = ()
                    proof = status.last_proof
                    if isinstance(proof, QuorumProof):
                        votes = proof.votes
                    elif isinstance(proof, MasterProof):
                        prior = proof.new_config.body.closing
                        votes = prior.hash_votes if prior is not None else ()
                    if votes:
                        best = (
                            epoch,
                            ClosingState(epoch, status.last_batches, status.last_digest, votes),
                        )
            for pend in status.pending:
                digests: dict[bytes, set[int]] = {}
                for vote in pend.round2:
                    if isinstance(vote.body, Round2) and vote.sender in committee:
                        digests.setdefault(vote.body.digest, set()).add(vote.sender)
                for digest, signers in sorted(digests.items()):
                    if signers != committee:
                        continue
                    if len(pend.round1) != len(committee):
                        continue
                    batches = {m.sender: m.body.batch for m in pend.round1}
                    if epoch_digest(batches) != digest:
                        continue
                    if best is None or pend.epoch > best[0]:
                        votes = tuple(
                            v for v in sorted(pend.round2, key=lambda m: m.sender)
                            if v.body.digest == digest
                        )
                        best = (
                            pend.epoch,
                            ClosingState(
                                pend.epoch, tuple(sorted(batches.items())), digest, votes
                            ),
                        )
        if best is None:
            return None
        epoch, closing = best
        if statuses and min(s.committed_upto for s in statuses.values()) > epoch:
            return None  # every responder already holds it; nothing to transfer
        return closing

    def _hunt_active_deviations(self, statuses: dict[int, Status], justification) -> list[tuple[int, object]]:
        """Cross-compare every signed round message reported by anyone and
        surface same-sender conflicts, plus hash votes that contradict what
        their own signer attested to have received.

        The second rule is deliberately narrow: a sender is only accused of
        a vote/content mismatch against content it attested itself (its own
        signed status), never against another node's view. An honest vote
        always matches its sender's own full receipt, so this cannot blame
        a follower even when round-one content differs across nodes.
        """
        pool: dict[tuple[int, int, int], dict[int, SignedMessage]] = {}
        conflicts: list[tuple[int, object]] = []
        seen: set[int] = set()

        def add(msg: SignedMessage) -> None:
            body = msg.body
            if isinstance(body, Round1):
                slot = (body.epoch, 1, msg.sender)
            elif isinstance(body, Round2):
                slot = (body.epoch, 2, msg.sender)
            elif isinstance(body, Round3):
                slot = (body.epoch, 3, msg.sender)
            else:
                return
            bucket = pool.setdefault(slot[:2], {})
            prior = bucket.get(slot[2])
            if prior is None:
                bucket[slot[2]] = msg
            elif prior.body.canonical() != body.canonical() and msg.sender not in seen:
                seen.add(msg.sender)
                conflicts.append((msg.sender, Equivocation(prior, msg)))

        attested: dict[tuple[int, int], bytes] = {}
        committee = set(self._era.committee)
        for sender, status in statuses.items():
            if status.committed_upto > 0 and status.last_batches:
                attested[(sender, status.committed_upto - 1)] = status.last_digest
            for pend in status.pending:
                for msg in (*pend.round1, *pend.round2, *pend.round3):
                    if verify_signed(self._registry, msg):
                        add(msg)
                if {m.sender for m in pend.round1} == committee:
                    batches = {m.sender: m.body.batch for m in pend.round1}
                    attested[(sender, pend.epoch)] = epoch_digest(batches)
        if isinstance(justification, DigestConflict):
            add(justification.first)
            add(justification.second)

        for (epoch, round_no), votes in sorted(pool.items()):
            if round_no != 2:
                continue
            for sender, vote in sorted(votes.items()):
                expected = attested.get((sender, epoch))
                if expected is not None and vote.body.digest != expected and sender not in seen:
                    seen.add(sender)
                    conflicts.append((sender, BadFormat(vote, "vote_contradicts_own_receipt")))
        return conflicts
