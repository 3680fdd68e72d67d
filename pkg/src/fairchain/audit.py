"""Trace auditing: every protocol guarantee re-checked offline.

Audits are pure functions of the exported trace, so re-auditing a trace
file yields identical verdicts. Each failed verdict carries the record ids
of a counterexample.

Checked here:

* safety: no two nodes commit different content at the same epoch;
* epoch fairness: each committed epoch holds exactly the scheduled batch
  size from every committee member;
* segment fairness: per committee era, every follower holds at least
  floor(segment_length * ratio) of the committed transactions;
* detection accuracy: nobody is accused or punished unless their node was
  configured to deviate;
* commit ordering: per node, committed epochs are strictly consecutive;
* message accounting (failure-free runs only): each completed broadcast
  instance costs exactly (relays + 1) * n^2 counted copies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction


@dataclass
class Verdict:
    name: str
    passed: bool
    detail: str = ""
    counterexamples: list[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "detail": self.detail,
            "counterexamples": self.counterexamples,
        }


def _header(records: list[dict]) -> dict:
    if not records or records[0].get("kind") != "scenario":
        raise ValueError("trace does not start with a scenario header")
    return records[0]


def _era_tables(records: list[dict]) -> dict[int, dict]:
    """Per-era committee, schedule, follower set, qos, relay count."""
    header = _header(records)
    deviants = {int(p) for p, k in header["strategies"].items() if k != "honest"}
    eras: dict[int, dict] = {
        0: {
            "committee": set(header["committee"]),
            "schedule": {int(p): s for p, s in header["schedule"].items()},
            "qos": {int(p): Fraction(r) for p, r in header["qos"].items()},
            "relays": len(header["relays"]),
        }
    }
    for record in records:
        if record["kind"] == "new_config":
            eras[record["era"]] = {
                "committee": set(record["committee"]),
                "schedule": {int(p): s for p, s in record["schedule"].items()},
                "qos": {int(p): Fraction(r) for p, r in record["qos"].items()},
                "relays": len(record["relays"]),
            }
    for info in eras.values():
        info["followers"] = info["committee"] - deviants
    return eras


def audit_safety(records: list[dict]) -> Verdict:
    by_epoch: dict[int, dict[str, int]] = {}
    for record in records:
        if record["kind"] != "commit":
            continue
        seen = by_epoch.setdefault(record["epoch"], {})
        if record["digest"] not in seen:
            seen[record["digest"]] = record["i"]
        if len(seen) > 1:
            return Verdict(
                "safety",
                False,
                "conflicting commits at epoch %d" % record["epoch"],
                sorted(seen.values()),
            )
    return Verdict("safety", True)


def audit_epoch_fairness(records: list[dict]) -> Verdict:
    eras = _era_tables(records)
    for record in records:
        if record["kind"] != "commit":
            continue
        expected = eras[record["era"]]["schedule"]
        counts: dict[int, int] = {}
        for issuer, _, _ in record["txs"]:
            counts[issuer] = counts.get(issuer, 0) + 1
        if counts != expected:
            return Verdict(
                "epoch_fairness",
                False,
                "epoch %d batch counts %s != schedule %s" % (record["epoch"], counts, expected),
                [record["i"]],
            )
    return Verdict("epoch_fairness", True)


def audit_segment_fairness(records: list[dict]) -> Verdict:
    """Fairness floor per committee era, over the deduplicated committed log."""
    eras = _era_tables(records)
    segments: dict[int, list[tuple[int, list]]] = {}
    seen_epochs: set[int] = set()
    for record in records:
        if record["kind"] != "commit" or record["epoch"] in seen_epochs:
            continue
        seen_epochs.add(record["epoch"])
        segments.setdefault(record["era"], []).append((record["epoch"], record["txs"]))
    for era_no, entries in sorted(segments.items()):
        info = eras[era_no]
        counts: dict[int, int] = {}
        length = 0
        for _, txs in sorted(entries):
            for issuer, _, _ in txs:
                counts[issuer] = counts.get(issuer, 0) + 1
                length += 1
        for player in sorted(info["followers"]):
            bound = math.floor(info["qos"][player] * length)
            if counts.get(player, 0) < bound:
                return Verdict(
                    "segment_fairness",
                    False,
                    "era %d: player %d holds %d < floor bound %d"
                    % (era_no, player, counts.get(player, 0), bound),
                )
    return Verdict("segment_fairness", True)


def audit_detection_accuracy(records: list[dict]) -> Verdict:
    header = _header(records)
    deviants = {int(p) for p, k in header["strategies"].items() if k != "honest"}
    for record in records:
        accused: list[tuple[int, int]] = []
        if record["kind"] == "detect":
            accused = [(p, record["i"]) for p in record["accused"]]
        elif record["kind"] == "new_config":
            accused = [(p, record["i"]) for p, _ in record["removed"]]
        elif record["kind"] == "punish":
            accused = [(record["player"], record["i"])]
        for player, rid in accused:
            if player not in deviants:
                return Verdict(
                    "detection_accuracy",
                    False,
                    "follower %d accused or punished" % player,
                    [rid],
                )
    return Verdict("detection_accuracy", True)


def audit_commit_order(records: list[dict]) -> Verdict:
    last: dict[int, int] = {}
    for record in records:
        if record["kind"] != "commit":
            continue
        node = record["node"]
        expected = last.get(node, -1) + 1
        if record["epoch"] != expected:
            return Verdict(
                "commit_order",
                False,
                "node %d committed epoch %d after %d" % (node, record["epoch"], last.get(node, -1)),
                [record["i"]],
            )
        last[node] = record["epoch"]
    return Verdict("commit_order", True)


def audit_message_counts(records: list[dict]) -> Verdict:
    """Failure-free instance accounting: (relays + 1) * n^2 counted copies.
    Skipped when any strategy deviates, since withheld traffic legitimately
    changes the totals."""
    header = _header(records)
    if any(k != "honest" for k in header["strategies"].values()):
        return Verdict("message_counts", True, "skipped: deviant strategies present")
    eras = _era_tables(records)
    copies: dict[tuple[int, int, int], int] = {}
    broadcasts: dict[tuple[int, int, int], int] = {}
    for record in records:
        if record["kind"] in ("broadcast", "forward"):
            key = (record["era"], record["epoch"], record["round"])
            copies[key] = copies.get(key, 0) + record["copies"]
            if record["kind"] == "broadcast":
                broadcasts[key] = broadcasts.get(key, 0) + 1
    committed = {r["epoch"] for r in records if r["kind"] == "commit"}
    if not committed:
        return Verdict("message_counts", True, "skipped: nothing committed")
    frontier = max(committed)
    for key in sorted(copies):
        era_no, epoch, _ = key
        info = eras[era_no]
        n = len(info["committee"])
        if broadcasts.get(key, 0) < n or epoch >= frontier:
            continue  # traffic for the frontier may be cut off by the stop
        expected = (info["relays"] + 1) * n * n
        if copies[key] != expected:
            return Verdict(
                "message_counts",
                False,
                "instance %s counted %d copies, expected %d" % (key, copies[key], expected),
            )
    return Verdict("message_counts", True)


AUDITS = (
    audit_safety,
    audit_epoch_fairness,
    audit_segment_fairness,
    audit_detection_accuracy,
    audit_commit_order,
    audit_message_counts,
)


def audit_trace(records: list[dict]) -> list[Verdict]:
    return [check(records) for check in AUDITS]


def all_passed(verdicts: list[Verdict]) -> bool:
    return all(v.passed for v in verdicts)
