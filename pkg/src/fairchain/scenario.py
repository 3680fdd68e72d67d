"""Scenario files: what to simulate, who deviates, and what to expect.

Scenarios are human-editable YAML (JSON works too, it is a YAML subset)
with a canonical JSON form used for diffing. Parsing errors point at the
offending field path; YAML syntax errors keep the loader's line/column.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import yaml

from fairchain.types import QosVector

_DEVIANT_KINDS = {
    "crash",
    "withhold",
    "relay_withhold",
    "equivocate_round1",
    "equivocate_round2",
    "lie_non_delivery",
    "frame",
    "omit_committed_status",
    "compose",
}


class ScenarioError(ValueError):
    """Configuration problem, with the field path in the message."""


@dataclass(frozen=True)
class Scenario:
    name: str
    n: int
    f: int
    seed: int = 1
    latency_us: int = 20_000
    latency_overrides: dict = field(default_factory=dict)  # (src, dst) -> us
    delta_us: int = 200_000
    max_sim_time_us: int = 120_000_000
    mode: str = "direct"  # "direct" | "relayed:K" | "alert"
    qos: dict = field(default_factory=dict)  # player -> ratio string; {} = uniform
    base: int = 0  # 0 = minimal integral base
    target_epochs: int = 20
    pipeline_window: int = 8
    signature_scheme: str = "hmac"
    strategies: dict = field(default_factory=dict)  # player -> spec dict
    compute_delay_us: dict = field(default_factory=dict)  # player -> us per tx
    payload_bytes: int = 64
    real_tx_budget: dict = field(default_factory=dict)  # player -> budget
    passive_escalation: tuple = ("halve", "remove")
    stay_in_alert: bool = True
    decrement_f_on_removal: bool = True

    def players(self) -> list[int]:
        return list(range(1, self.n + 1))

    def mode_kind(self) -> tuple[str, int]:
        if self.mode == "direct":
            return "direct", 0
        if self.mode == "alert":
            return "alert", 2 * self.f + 1
        if self.mode.startswith("relayed:"):
            return "relayed", int(self.mode.split(":", 1)[1])
        raise ScenarioError("mode: expected direct, alert, or relayed:K, got %r" % self.mode)

    def qos_vector(self) -> QosVector:
        if not self.qos:
            return QosVector.uniform(self.players())
        return QosVector({p: Fraction(r) for p, r in self.qos.items()})

    def strategy_kinds(self) -> dict[int, str]:
        out = {p: "honest" for p in self.players()}
        for player, spec in self.strategies.items():
            out[player] = spec["kind"]
        return out

    def deviants(self) -> set[int]:
        return {p for p, k in self.strategy_kinds().items() if k != "honest"}

    def with_strategy(self, player: int, spec: dict) -> "Scenario":
        strategies = {p: s for p, s in self.strategies.items() if p != player}
        if spec.get("kind", "honest") != "honest":
            strategies[player] = spec
        return replace(self, strategies=strategies)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)

    def to_canonical_json(self) -> str:
        data = {
            "name": self.name,
            "n": self.n,
            "f": self.f,
            "seed": self.seed,
            "latency_us": self.latency_us,
            "latency_overrides": {
                "%d-%d" % key: value for key, value in sorted(self.latency_overrides.items())
            },
            "delta_us": self.delta_us,
            "max_sim_time_us": self.max_sim_time_us,
            "mode": self.mode,
            "qos": {str(p): r for p, r in sorted(self.qos.items())},
            "base": self.base,
            "target_epochs": self.target_epochs,
            "pipeline_window": self.pipeline_window,
            "signature_scheme": self.signature_scheme,
            "strategies": {str(p): s for p, s in sorted(self.strategies.items())},
            "compute_delay_us": {str(p): d for p, d in sorted(self.compute_delay_us.items())},
            "payload_bytes": self.payload_bytes,
            "real_tx_budget": {str(p): b for p, b in sorted(self.real_tx_budget.items())},
            "passive_escalation": list(self.passive_escalation),
            "stay_in_alert": self.stay_in_alert,
            "decrement_f_on_removal": self.decrement_f_on_removal,
        }
        return json.dumps(data, indent=2, sort_keys=True)


def _require(condition: bool, path: str, message: str) -> None:
    if not condition:
        raise ScenarioError("%s: %s" % (path, message))


def _int_keyed(raw: dict, path: str) -> dict[int, object]:
    out = {}
    for key, value in raw.items():
        try:
            out[int(key)] = value
        except (TypeError, ValueError):
            raise ScenarioError("%s.%s: player keys must be integers" % (path, key))
    return out


def parse_scenario(data: dict, source: str = "<dict>") -> Scenario:
    _require(isinstance(data, dict), source, "scenario must be a mapping")
    for required in ("name", "n", "f"):
        _require(required in data, required, "field is required")
    n, f = data["n"], data["f"]
    _require(isinstance(n, int) and isinstance(f, int), "n", "n and f must be integers")
    _require(n >= 2 * f + 3, "n", "need n >= 2f+3 (got n=%d, f=%d)" % (n, f))

    strategies = _int_keyed(data.get("strategies", {}), "strategies")
    for player, spec in strategies.items():
        _require(1 <= player <= n, "strategies.%d" % player, "player out of range")
        _require(isinstance(spec, dict) and "kind" in spec, "strategies.%d" % player, "need a kind")
        kind = spec["kind"]
        _require(
            kind == "honest" or kind in _DEVIANT_KINDS,
            "strategies.%d.kind" % player,
            "unknown strategy %r" % kind,
        )
    deviants = [p for p, s in strategies.items() if s["kind"] != "honest"]
    _require(
        len(deviants) <= f + 1,
        "strategies",
        "at most f+1 deviating players are supported (got %d, f=%d)" % (len(deviants), f),
    )

    qos_raw = data.get("qos", "uniform")
    qos: dict[int, str] = {}
    if qos_raw != "uniform" and qos_raw:
        qos_map = _int_keyed(qos_raw, "qos")
        _require(set(qos_map) == set(range(1, n + 1)), "qos", "must cover players 1..n")
        qos = {p: str(r) for p, r in qos_map.items()}
        try:
            QosVector({p: Fraction(r) for p, r in qos.items()})
        except ValueError as exc:
            raise ScenarioError("qos: %s" % exc)

    overrides_raw = data.get("latency_overrides", {})
    overrides: dict[tuple[int, int], int] = {}
    for key, value in overrides_raw.items():
        try:
            src, dst = (int(x) for x in str(key).split("-"))
        except ValueError:
            raise ScenarioError("latency_overrides.%s: key must look like SRC-DST" % key)
        overrides[(src, dst)] = int(value)

    mode = data.get("mode", "direct")
    _require(
        mode in ("direct", "alert") or mode.startswith("relayed:"),
        "mode",
        "expected direct, alert, or relayed:K",
    )

    escalation = tuple(data.get("passive_escalation", ("halve", "remove")))
    for step in escalation:
        _require(step in ("halve", "remove"), "passive_escalation", "steps are halve or remove")

    scenario = Scenario(
        name=str(data["name"]),
        n=n,
        f=f,
        seed=int(data.get("seed", 1)),
        latency_us=int(data.get("latency_us", 20_000)),
        latency_overrides=overrides,
        delta_us=int(data.get("delta_us", 200_000)),
        max_sim_time_us=int(data.get("max_sim_time_us", 120_000_000)),
        mode=mode,
        qos=qos,
        base=int(data.get("base", 0)),
        target_epochs=int(data.get("target_epochs", 20)),
        pipeline_window=int(data.get("pipeline_window", 8)),
        signature_scheme=str(data.get("signature_scheme", "hmac")),
        strategies=strategies,
        compute_delay_us=_int_keyed(data.get("compute_delay_us", {}), "compute_delay_us"),
        payload_bytes=int(data.get("payload_bytes", 64)),
        real_tx_budget=_int_keyed(data.get("real_tx_budget", {}), "real_tx_budget"),
        passive_escalation=escalation,
        stay_in_alert=bool(data.get("stay_in_alert", True)),
        decrement_f_on_removal=bool(data.get("decrement_f_on_removal", True)),
    )
    scenario.mode_kind()  # validates relayed:K syntax
    try:
        vector = scenario.qos_vector()
        if scenario.base:
            from fairchain.types import batch_schedule_from_qos

            batch_schedule_from_qos(vector, scenario.base)
    except ValueError as exc:
        raise ScenarioError("qos/base: %s" % exc)
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError("%s: %s" % (path, exc))
    if not isinstance(data, dict):
        raise ScenarioError("%s: top level must be a mapping" % path)
    return parse_scenario(data, source=str(path))
