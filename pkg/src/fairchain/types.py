"""Ledger data model shared by all protocol components.

Players are identified by small integers 1..n; id 0 is the master. QoS
ratios are exact rationals so the fairness floor bound never suffers float
drift. An epoch commits atomically: exactly one batch per committee member,
ordered by ascending member id, hashed into a single digest that both
quorum certificates and master-signed closing states refer to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from fairchain import crypto, wire

MASTER_ID = 0

MODE_DIRECT = "direct"
MODE_RELAYED = "relayed"
MODE_ALERT = "alert"


class NonIntegralSchedule(ValueError):
    """No integral batch assignment exists for the requested epoch size."""


class CommitteeTooSmall(RuntimeError):
    """A removal would leave fewer than 2f+3 members and no replacements."""


@dataclass(frozen=True)
class Transaction:
    """Opaque payload tagged with its issuing player.

    ``dummy`` marks the reserved filler emitted when a player's queue is
    empty; dummies occupy a batch slot and count toward fairness accounting.
    """

    issuer: int
    seq: int
    payload: bytes
    dummy: bool = False

    def canonical(self) -> bytes:
        return (
            wire.u64(self.issuer)
            + wire.u64(self.seq)
            + wire.boolean(self.dummy)
            + wire.blob(self.payload)
        )

    def key(self) -> tuple[int, int]:
        return (self.issuer, self.seq)


class QosVector:
    """Per-player ledger share, exact rationals summing to one."""

    def __init__(self, ratios: Mapping[int, Fraction]):
        for player, ratio in ratios.items():
            if not (0 <= ratio <= 1):
                raise ValueError("ratio for player %d out of [0,1]: %s" % (player, ratio))
        total = sum(ratios.values(), Fraction(0))
        if total != 1:
            raise ValueError("ratios must sum to exactly 1, got %s" % total)
        self.ratios: dict[int, Fraction] = {p: Fraction(r) for p, r in sorted(ratios.items())}

    @classmethod
    def uniform(cls, players: Iterable[int]) -> "QosVector":
        members = sorted(players)
        share = Fraction(1, len(members))
        return cls({p: share for p in members})

    def players(self) -> list[int]:
        return list(self.ratios)

    def ratio(self, player: int) -> Fraction:
        return self.ratios[player]

    def without(self, removed: Iterable[int]) -> "QosVector":
        """Drop players and renormalize the survivors proportionally."""
        gone = set(removed)
        kept = {p: r for p, r in self.ratios.items() if p not in gone}
        remainder = sum(kept.values(), Fraction(0))
        if remainder == 0:
            raise ValueError("cannot renormalize: remaining ratios sum to zero")
        return QosVector({p: r / remainder for p, r in kept.items()})

    def with_ratio(self, player: int, new_ratio: Fraction) -> "QosVector":
        """Pin one player's ratio and rescale the others to keep the sum at 1."""
        if player not in self.ratios:
            raise KeyError(player)
        old = self.ratios[player]
        if old == new_ratio:
            return QosVector(dict(self.ratios))
        if old == 1:
            raise ValueError("cannot rescale: player holds the entire allocation")
        scale = (1 - Fraction(new_ratio)) / (1 - old)
        out = {p: (Fraction(new_ratio) if p == player else r * scale) for p, r in self.ratios.items()}
        return QosVector(out)

    def minimal_base(self) -> int:
        base = 1
        for ratio in self.ratios.values():
            base = math.lcm(base, ratio.denominator)
        return base

    def canonical(self) -> bytes:
        return wire.seq(
            wire.u64(p) + wire.rational(r) for p, r in self.ratios.items()
        )

    def as_strings(self) -> dict[int, str]:
        return {p: str(r) for p, r in self.ratios.items()}

    def __eq__(self, other: object) -> bool:
        return isinstance(other, QosVector) and self.ratios == other.ratios

    def __repr__(self) -> str:
        return "QosVector(%s)" % {p: str(r) for p, r in self.ratios.items()}


@dataclass(frozen=True)
class BatchSchedule:
    """Integral per-epoch batch sizes realizing a QoS vector exactly."""

    sizes: dict[int, int]

    def total(self) -> int:
        return sum(self.sizes.values())

    def size(self, player: int) -> int:
        return self.sizes[player]


def batch_schedule_from_qos(qos: QosVector, base: int) -> BatchSchedule:
    """Map ratios to integral batch sizes over a base epoch size.

    Raises NonIntegralSchedule unless every ratio times ``base`` is an
    integer >= 1, so that batch_size(i) / total == r_i holds exactly.
    """
    if base <= 0:
        raise NonIntegralSchedule("base epoch size must be positive, got %d" % base)
    sizes: dict[int, int] = {}
    for player, ratio in qos.ratios.items():
        exact = ratio * base
        if exact.denominator != 1:
            raise NonIntegralSchedule(
                "ratio %s of player %d gives non-integral batch %s over base %d"
                % (ratio, player, exact, base)
            )
        size = int(exact)
        if size < 1:
            raise NonIntegralSchedule(
                "player %d would get an empty batch over base %d" % (player, base)
            )
        sizes[player] = size
    return BatchSchedule(sizes)


def check_r_fair(
    segment: Sequence[Transaction], qos: QosVector, followers: Iterable[int]
) -> bool:
    """Fairness floor for one committee era's committed segment.

    True iff every follower p holds at least floor(len(segment) * r_p)
    transactions in the segment. Dummies count for their issuer.
    """
    counts: dict[int, int] = {}
    for tx in segment:
        counts[tx.issuer] = counts.get(tx.issuer, 0) + 1
    length = len(segment)
    for player in followers:
        floor_share = (qos.ratio(player) * length).__floor__()
        if counts.get(player, 0) < floor_share:
            return False
    return True


@dataclass(frozen=True)
class CommitteeEra:
    """One committee configuration: who sequences, at which shares, and how
    messages travel (direct, lightly relayed, or alert with 2f+1 relays)."""

    era: int
    start_epoch: int
    committee: tuple[int, ...]
    f: int
    qos: QosVector
    schedule: BatchSchedule
    mode: str
    relays: tuple[int, ...]

    def canonical(self) -> bytes:
        return (
            wire.u64(self.era)
            + wire.u64(self.start_epoch)
            + wire.seq(wire.u64(p) for p in self.committee)
            + wire.u64(self.f)
            + self.qos.canonical()
            + wire.text(self.mode)
            + wire.seq(wire.u64(p) for p in self.relays)
        )


def epoch_digest(batches: Mapping[int, Sequence[Transaction]]) -> bytes:
    """Digest of an epoch's transactions under the deterministic order rule:
    ascending sender id, FIFO within each batch."""
    parts = []
    for player in sorted(batches):
        parts.append(wire.u64(player) + wire.seq(tx.canonical() for tx in batches[player]))
    return crypto.hash_bytes(wire.seq(parts))


def ordered_epoch_txs(batches: Mapping[int, Sequence[Transaction]]) -> list[Transaction]:
    out: list[Transaction] = []
    for player in sorted(batches):
        out.extend(batches[player])
    return out


@dataclass(frozen=True)
class EpochRecord:
    """A committed epoch: batch per member, the agreed digest, and the proof
    that makes the commit independently checkable."""

    era: int
    epoch: int
    batches: tuple[tuple[int, tuple[Transaction, ...]], ...]
    digest: bytes
    proof: "object"  # QuorumProof | MasterProof, defined in messages.py
    commit_time: int = 0

    def batch_map(self) -> dict[int, tuple[Transaction, ...]]:
        return dict(self.batches)

    def txs(self) -> list[Transaction]:
        return ordered_epoch_txs(self.batch_map())


class Ledger:
    """A node's committed log plus the committee history that scopes it."""

    def __init__(self, first_era: CommitteeEra):
        self.entries: list[EpochRecord] = []
        self.eras: list[CommitteeEra] = [first_era]
        self.tx_count = 0

    def append_entry(self, record: EpochRecord) -> None:
        if self.entries and record.epoch != self.entries[-1].epoch + 1:
            raise ValueError(
                "epochs must increase by one: %d after %d"
                % (record.epoch, self.entries[-1].epoch)
            )
        if not self.entries and record.epoch != 0:
            raise ValueError("first committed epoch must be 0, got %d" % record.epoch)
        self.entries.append(record)
        self.tx_count += sum(len(batch) for _, batch in record.batches)

    def add_era(self, era: CommitteeEra) -> None:
        if era.era != self.eras[-1].era + 1:
            raise ValueError("era numbers must increase by one")
        self.eras.append(era)

    def era_for_epoch(self, epoch: int) -> CommitteeEra:
        chosen = self.eras[0]
        for era in self.eras:
            if era.start_epoch <= epoch:
                chosen = era
            else:
                break
        return chosen

    def committed_count(self) -> int:
        return len(self.entries)

    def all_txs(self) -> list[Transaction]:
        out: list[Transaction] = []
        for entry in self.entries:
            out.extend(entry.txs())
        return out

    def era_segment(self, era_no: int) -> list[Transaction]:
        out: list[Transaction] = []
        for entry in self.entries:
            if entry.era == era_no:
                out.extend(entry.txs())
        return out
