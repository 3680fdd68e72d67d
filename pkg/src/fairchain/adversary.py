"""Pluggable deviation strategies.

A strategy reshapes exactly one node's traffic: it filters or mutates the
node's outbound sends and may suppress its inbound deliveries, but it can
only sign with that node's own key, so no strategy can forge another
player's messages. Strategies are deterministic given the scenario seed.

The catalog mirrors the two deviation classes the protocol must handle:
active (equivocation, malformed traffic) which is provable from signatures
alone, and passive (withholding, lying about non-delivery, framing) which
is only attributable through relay quorums.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction

from fairchain import crypto
from fairchain.messages import (
    RelayAnswer,
    RelayForward,
    Round1,
    Round2,
    Round3,
    SignedMessage,
    StallReport,
    Status,
    sign_body,
)
from fairchain.simnet import Send
from fairchain.types import Transaction

_ROUND_BODIES = (Round1, Round2, Round3)
_ROUND_NO = {Round1: 1, Round2: 2, Round3: 3}


class Strategy:
    """Base: follow the protocol faithfully."""

    kind = "honest"

    def __init__(self) -> None:
        self.node_id: int = 0
        self._key: crypto.KeyPair | None = None
        self._rng = random.Random(0)

    def bind(self, node_id: int, key: crypto.KeyPair, seed: int) -> None:
        self.node_id = node_id
        self._key = key
        self._rng = random.Random((seed << 8) ^ node_id)

    def is_deviant(self) -> bool:
        return self.kind != "honest"

    def intercept(self, sends: list[Send], now: int) -> list[Send]:
        return sends

    def allow_inbound(self, msg: SignedMessage, now: int) -> bool:
        return True

    def _resign(self, body) -> SignedMessage:
        assert self._key is not None
        return sign_body(self._key, self.node_id, body)


class Honest(Strategy):
    pass


class Crash(Strategy):
    """Stop all output (including recovery replies) from a given epoch on."""

    kind = "crash"

    def __init__(self, at_epoch: int = 2):
        super().__init__()
        self.at_epoch = at_epoch
        self._dead = False

    def intercept(self, sends: list[Send], now: int) -> list[Send]:
        if not self._dead:
            for send in sends:
                body = send.msg.body
                if isinstance(body, _ROUND_BODIES) and body.epoch >= self.at_epoch:
                    self._dead = True
                    break
        if self._dead:
            return []
        return sends


class WithholdTo(Strategy):
    """Silently drop this node's round messages to chosen victims. Scope by
    round and either from an epoch onward or at listed epochs only."""

    kind = "withhold"

    def __init__(
        self,
        victims: tuple[int, ...],
        rounds: tuple[int, ...] = (1, 2, 3),
        from_epoch: int = 0,
        epochs: tuple[int, ...] | None = None,
    ):
        super().__init__()
        self.victims = set(victims)
        self.rounds = set(rounds)
        self.from_epoch = from_epoch
        self.epochs = None if epochs is None else set(epochs)

    def _withheld(self, send: Send) -> bool:
        body = send.msg.body
        if isinstance(body, _ROUND_BODIES):
            in_scope = (
                body.epoch in self.epochs if self.epochs is not None else body.epoch >= self.from_epoch
            )
            return send.dst in self.victims and _ROUND_NO[type(body)] in self.rounds and in_scope
        return False

    def intercept(self, sends: list[Send], now: int) -> list[Send]:
        return [s for s in sends if not self._withheld(s)]


class RelayWithhold(Strategy):
    """A relay that starves one victim: drops its own round messages and all
    forwards addressed to the victim. Optionally answers investigation
    queries arbitrarily instead of truthfully."""

    kind = "relay_withhold"

    def __init__(self, victim: int, lie_answers: bool = False):
        super().__init__()
        self.victim = victim
        self.lie_answers = lie_answers

    def intercept(self, sends: list[Send], now: int) -> list[Send]:
        out: list[Send] = []
        for send in sends:
            body = send.msg.body
            if send.dst == self.victim and isinstance(body, (*_ROUND_BODIES, RelayForward)):
                continue
            if self.lie_answers and isinstance(body, RelayAnswer):
                flipped = RelayAnswer(
                    body.era, body.epoch, body.round_no, body.about,
                    body.relay, self._rng.random() < 0.5,
                )
                out.append(Send(send.dst, self._resign(flipped)))
                continue
            out.append(send)
        return out


class EquivocateRound1(Strategy):
    """Send one batch to half the committee and a doctored batch to the rest."""

    kind = "equivocate_round1"

    def __init__(self, at_epoch: int = 2):
        super().__init__()
        self.at_epoch = at_epoch

    def intercept(self, sends: list[Send], now: int) -> list[Send]:
        targets = sorted(
            {s.dst for s in sends if isinstance(s.msg.body, Round1) and s.msg.body.epoch == self.at_epoch}
        )
        if not targets:
            return sends
        flipped = set(targets[: len(targets) // 2 + 1])
        out: list[Send] = []
        for send in sends:
            body = send.msg.body
            if isinstance(body, Round1) and body.epoch == self.at_epoch and send.dst in flipped:
                alt_batch = tuple(
                    Transaction(tx.issuer, tx.seq, tx.payload + b"/alt", tx.dummy)
                    for tx in body.batch
                )
                out.append(Send(send.dst, self._resign(Round1(body.era, body.epoch, alt_batch))))
            else:
                out.append(send)
        return out


class EquivocateRound2(Strategy):
    """Sign digest d for half the committee and d' for the other half."""

    kind = "equivocate_round2"

    def __init__(self, at_epoch: int = 2):
        super().__init__()
        self.at_epoch = at_epoch

    def intercept(self, sends: list[Send], now: int) -> list[Send]:
        targets = sorted(
            {s.dst for s in sends if isinstance(s.msg.body, Round2) and s.msg.body.epoch == self.at_epoch}
        )
        if not targets:
            return sends
        flipped = set(targets[: len(targets) // 2 + 1])
        out: list[Send] = []
        for send in sends:
            body = send.msg.body
            if isinstance(body, Round2) and body.epoch == self.at_epoch and send.dst in flipped:
                forged = crypto.hash_bytes(b"equivocated/" + body.digest)
                out.append(Send(send.dst, self._resign(Round2(body.era, body.epoch, forged))))
            else:
                out.append(send)
        return out


class LieNonDelivery(Strategy):
    """Report a delivered message as missing: a pure framing lie that leaves
    progress untouched and should bounce back on the liar."""

    kind = "lie_non_delivery"

    def __init__(self, about: int, at_epoch: int = 2, round_no: int = 2):
        super().__init__()
        self.about = about
        self.at_epoch = at_epoch
        self.round_no = round_no
        self._fired = False

    def intercept(self, sends: list[Send], now: int) -> list[Send]:
        if not self._fired:
            for send in sends:
                body = send.msg.body
                if isinstance(body, Round2) and body.epoch == self.at_epoch:
                    self._fired = True
                    report = StallReport(
                        body.era, self.at_epoch, self.round_no, (self.about,), now
                    )
                    from fairchain.types import MASTER_ID

                    sends = sends + [Send(MASTER_ID, self._resign(report))]
                    break
        return sends


class FrameAttempt(Strategy):
    """Locally suppress a target's deliveries so the node's own honest stall
    machinery reports the target. Detection must blame the framer."""

    kind = "frame"

    def __init__(self, target: int, from_epoch: int = 2):
        super().__init__()
        self.target = target
        self.from_epoch = from_epoch

    def allow_inbound(self, msg: SignedMessage, now: int) -> bool:
        body = msg.body
        if isinstance(body, _ROUND_BODIES) and msg.sender == self.target:
            return body.epoch < self.from_epoch
        if isinstance(body, RelayForward) and body.inner.sender == self.target:
            return body.epoch < self.from_epoch
        return True


class OmitCommittedStatus(Strategy):
    """During recovery, report a ledger tail that hides the newest committed
    epoch, attempting to get a committed epoch re-run with different content."""

    kind = "omit_committed_status"

    def intercept(self, sends: list[Send], now: int) -> list[Send]:
        out: list[Send] = []
        for send in sends:
            body = send.msg.body
            if isinstance(body, Status) and body.committed_upto > 0:
                hidden_epoch = body.committed_upto - 1
                doctored = Status(
                    era=body.era,
                    committed_upto=hidden_epoch,
                    last_digest=b"",
                    last_batches=(),
                    last_proof=None,
                    pending=tuple(p for p in body.pending if p.epoch != hidden_epoch),
                )
                out.append(Send(send.dst, self._resign(doctored)))
            else:
                out.append(send)
        return out


class Compose(Strategy):
    """Chain several deviations on one node (colluding behaviors are modeled
    as one coordinated strategy object)."""

    kind = "compose"

    def __init__(self, parts: tuple[Strategy, ...]):
        super().__init__()
        self.parts = parts

    def bind(self, node_id: int, key: crypto.KeyPair, seed: int) -> None:
        super().bind(node_id, key, seed)
        for part in self.parts:
            part.bind(node_id, key, seed)

    def intercept(self, sends: list[Send], now: int) -> list[Send]:
        for part in self.parts:
            sends = part.intercept(sends, now)
        return sends

    def allow_inbound(self, msg: SignedMessage, now: int) -> bool:
        return all(part.allow_inbound(msg, now) for part in self.parts)


_CATALOG = {
    "honest": Honest,
    "crash": Crash,
    "withhold": WithholdTo,
    "relay_withhold": RelayWithhold,
    "equivocate_round1": EquivocateRound1,
    "equivocate_round2": EquivocateRound2,
    "lie_non_delivery": LieNonDelivery,
    "frame": FrameAttempt,
    "omit_committed_status": OmitCommittedStatus,
    "compose": Compose,
}


def make_strategy(spec: dict) -> Strategy:
    """Build a strategy from its scenario-file form, e.g.
    ``{"kind": "withhold", "victims": [5], "rounds": [2]}``."""
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind not in _CATALOG:
        raise ValueError("unknown strategy kind %r" % kind)
    cls = _CATALOG[kind]
    if kind == "compose":
        return cls(parts=tuple(make_strategy(part) for part in spec.pop("parts")))
    if kind == "withhold":
        epochs = spec.pop("epochs", None)
        return cls(
            victims=tuple(spec.pop("victims")),
            rounds=tuple(spec.pop("rounds", (1, 2, 3))),
            from_epoch=spec.pop("from_epoch", 0),
            epochs=tuple(epochs) if epochs is not None else None,
            **spec,
        )
    if kind == "relay_withhold":
        return cls(victim=spec.pop("victim"), lie_answers=spec.pop("lie_answers", False), **spec)
    if kind == "crash":
        return cls(at_epoch=spec.pop("at_epoch", 2), **spec)
    if kind in ("equivocate_round1", "equivocate_round2"):
        return cls(at_epoch=spec.pop("at_epoch", 2), **spec)
    if kind == "lie_non_delivery":
        return cls(
            about=spec.pop("about"),
            at_epoch=spec.pop("at_epoch", 2),
            round_no=spec.pop("round_no", 2),
            **spec,
        )
    if kind == "frame":
        return cls(target=spec.pop("target"), from_epoch=spec.pop("from_epoch", 2), **spec)
    return cls(**spec)


@dataclass
class RatioComparison:
    deviator: int
    deviating_ratio: Fraction
    baseline_ratio: Fraction

    def gained(self) -> bool:
        return self.deviating_ratio > self.baseline_ratio


def rational_outcome(scenario, deviator: int, target_txs: int) -> RatioComparison:
    """Paired-run utility comparison for a single deviator.

    Runs the scenario as configured and again with the deviator forced
    honest, both until ``target_txs`` transactions have committed, and
    compares the deviator's share of the committed log. Following the
    protocol is only an equilibrium if deviating never raises the share.
    """
    from fairchain.harness import run_scenario  # lazy: harness imports this module

    def ratio_of(result) -> Fraction:
        counts = result.committed_tx_counts()
        total = sum(counts.values())
        if total == 0:
            return Fraction(0)
        return Fraction(counts.get(deviator, 0), total)

    deviating = run_scenario(scenario, stop_at_txs=target_txs)
    honest_scenario = scenario.with_strategy(deviator, {"kind": "honest"})
    baseline = run_scenario(honest_scenario, stop_at_txs=target_txs)
    return RatioComparison(deviator, ratio_of(deviating), ratio_of(baseline))
