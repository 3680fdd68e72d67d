"""Detectable all-to-all broadcast.

One instance covers one (era, epoch, round): every participant broadcasts a
message and should deliver every other participant's message. Three
patterns are supported:

* direct: each origin sends to all others. Optimal cost (n^2 counted
  copies) but a missing delivery cannot be attributed to either side.
* relayed(k): origins send to all, and each of k relays re-sends the first
  copy it sees from each origin to everyone. Costs (k+1) * n^2 copies.
* alert: relayed with exactly 2f+1 relays, which is the threshold at which
  a missing delivery can be blamed accurately.

Attribution works as follows. When a recipient claims it never delivered an
origin's message, the master asks every relay whether it received that
origin's message. If at least f+1 relays say yes, some honest relay
received it and re-sent it over a reliable link, so the recipient did get
it and is lying: accuse the recipient. Otherwise the origin cannot have
sent to all relays: accuse the origin. With the two suspects excluded from
the relay set at most f relays deviate, leaving an honest majority among
2f+1, which makes the verdict exact. When a suspect sits in the current
relay set the instance must first be re-run with relays drawn from the
remaining players (always possible since n >= 2f+3).

Counted message copies include the self-copy of each fan-out (an origin and
a relay deliver to themselves in place), which is what makes the per
instance totals exactly n^2 and (k+1) * n^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from fairchain.messages import DetectionSet, PassiveProof, RelayAnswer, SignedMessage


class NotParticipant(Exception):
    """Sender is not part of the instance."""


class InsufficientAnswers(Exception):
    """No disputed pair has 2f+1 admissible relays; relays must be reselected."""

    def __init__(self, blocked_pairs: list[tuple[int, int]]):
        super().__init__("relay set overlaps all disputed pairs")
        self.blocked_pairs = blocked_pairs


@dataclass(frozen=True)
class InstanceConfig:
    era: int
    epoch: int
    round_no: int
    participants: tuple[int, ...]
    relays: tuple[int, ...]
    f: int

    def key(self) -> tuple[int, int, int]:
        return (self.era, self.epoch, self.round_no)


@dataclass
class InstanceState:
    """Per-node delivery bookkeeping for one instance.

    ``delivered`` keeps the first accepted copy per origin, which is also
    what a relay answers from when the master investigates. A relay
    re-sends each origin at most once regardless of how many copies reach
    it, and its own broadcast counts as its first copy of itself.
    """

    delivered: dict[int, SignedMessage] = field(default_factory=dict)
    forwarded: set[int] = field(default_factory=set)
    wait_start: int | None = None


def pick_relays(
    participants: tuple[int, ...], count: int, exclude: tuple[int, ...] = ()
) -> tuple[int, ...]:
    """Deterministic relay choice: lowest ids, skipping excluded suspects."""
    chosen = [p for p in sorted(participants) if p not in exclude][:count]
    if len(chosen) < count:
        raise ValueError(
            "cannot pick %d relays from %d eligible participants"
            % (count, len(participants) - len(exclude))
        )
    return tuple(chosen)


def relays_for_mode(
    committee: tuple[int, ...], mode: str, f: int, relay_count: int = 0
) -> tuple[int, ...]:
    if mode == "direct":
        return ()
    if mode == "relayed":
        return pick_relays(committee, relay_count)
    if mode == "alert":
        return pick_relays(committee, 2 * f + 1)
    raise ValueError("unknown broadcast mode %r" % mode)


def broadcast_destinations(cfg: InstanceConfig, sender: int) -> list[int]:
    """Where an origin's broadcast physically goes: all other participants.
    The origin's own copy is delivered in place, not over the network."""
    if sender not in cfg.participants:
        raise NotParticipant("player %d is not in instance %s" % (sender, cfg.key()))
    return [p for p in cfg.participants if p != sender]


def forward_destinations(cfg: InstanceConfig, relay: int) -> list[int]:
    return [p for p in cfg.participants if p != relay]


def on_copy(
    cfg: InstanceConfig, state: InstanceState, me: int, origin: int, original: SignedMessage
) -> tuple[bool, list[int]]:
    """Process one received copy (direct, forwarded, or own).

    Returns (first_delivery, forward_destinations). Duplicates deliver
    nothing and trigger no forwarding.
    """
    first = origin not in state.delivered
    if first:
        state.delivered[origin] = original
    forwards: list[int] = []
    if me in cfg.relays and origin not in state.forwarded:
        state.forwarded.add(origin)
        forwards = forward_destinations(cfg, me)
    return first, forwards


def reinvestigate(cfg: InstanceConfig, suspects: tuple[int, int]) -> InstanceConfig:
    """Fresh alert instance with 2f+1 relays that exclude both suspects."""
    relays = pick_relays(cfg.participants, 2 * cfg.f + 1, exclude=suspects)
    return InstanceConfig(
        era=cfg.era,
        epoch=cfg.epoch,
        round_no=cfg.round_no,
        participants=cfg.participants,
        relays=relays,
        f=cfg.f,
    )


def detect(
    cfg: InstanceConfig,
    undelivered: list[tuple[int, int]],
    relay_answers: dict[int, list[SignedMessage]],
) -> DetectionSet:
    """Name the player responsible for each missing delivery.

    ``undelivered`` holds (recipient, origin) pairs; ``relay_answers`` maps
    each disputed origin to the signed answers gathered from the relays
    (silent relays appear as master-attested negative answers). A pair is
    adjudicated only if 2f+1 relays outside the pair answered; if no pair
    can be adjudicated, InsufficientAnswers asks for relay reselection.
    """
    accusations: list[tuple[int, PassiveProof]] = []
    accused_seen: set[int] = set()
    blocked: list[tuple[int, int]] = []
    for recipient, origin in sorted(set(undelivered)):
        admissible = [r for r in cfg.relays if r not in (recipient, origin)]
        if len(admissible) < 2 * cfg.f + 1:
            blocked.append((recipient, origin))
            continue
        answers = [
            a
            for a in relay_answers.get(origin, [])
            if isinstance(a.body, RelayAnswer)
            and a.body.relay in admissible
            and (a.body.era, a.body.epoch, a.body.round_no, a.body.about)
            == (cfg.era, cfg.epoch, cfg.round_no, origin)
        ]
        yes_answers = [a for a in answers if a.body.received]
        if len(yes_answers) >= cfg.f + 1:
            # Some honest relay re-sent the message over a reliable link,
            # so the recipient received it and deviated by not delivering.
            accused, proof_answers = recipient, tuple(yes_answers)
        else:
            accused, proof_answers = origin, tuple(answers)
        if accused in accused_seen:
            continue
        accused_seen.add(accused)
        accusations.append(
            (
                accused,
                PassiveProof(
                    accused=accused,
                    recipient=recipient,
                    origin=origin,
                    era=cfg.era,
                    epoch=cfg.epoch,
                    round_no=cfg.round_no,
                    answers=proof_answers,
                ),
            )
        )
    if not accusations and blocked:
        raise InsufficientAnswers(blocked)
    return DetectionSet(tuple(accusations))


def expected_copies(n: int, relay_count: int) -> int:
    """Counted message copies for one failure-free instance."""
    return (relay_count + 1) * n * n
