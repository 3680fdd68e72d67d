"""Scenario runner: build a simulation, drive it, audit it, report it.

The exported trace is the single source of truth: the report and every
audit verdict are derived from trace records alone, so a saved trace can
be re-audited byte for byte later.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from fairchain import adversary, audit, broadcast, crypto
from fairchain.master import MasterNode, MasterPolicy
from fairchain.scenario import Scenario, load_scenario
from fairchain.sequencer import NodeParams, SequencerNode
from fairchain.simnet import Network, SimConfig, SimTimeout, Trace
from fairchain.types import MASTER_ID, CommitteeEra, batch_schedule_from_qos


@dataclass
class RunResult:
    scenario: Scenario
    status: str
    trace: Trace
    report: dict
    verdicts: list
    nodes: dict[int, SequencerNode]
    master: MasterNode

    def passed(self) -> bool:
        return self.report["all_audits_passed"] and self.status in ("target", "quiescent")

    def committed_tx_counts(self) -> dict[int, int]:
        return {int(p): info["committed_txs"] for p, info in self.report["per_player"].items()}


def build_initial_era(scenario: Scenario) -> CommitteeEra:
    qos = scenario.qos_vector()
    base = scenario.base or qos.minimal_base()
    schedule = batch_schedule_from_qos(qos, base)
    mode_kind, relay_count = scenario.mode_kind()
    committee = tuple(scenario.players())
    relays = broadcast.relays_for_mode(committee, mode_kind, scenario.f, relay_count)
    return CommitteeEra(
        era=0,
        start_epoch=0,
        committee=committee,
        f=scenario.f,
        qos=qos,
        schedule=schedule,
        mode=mode_kind,
        relays=relays,
    )


def _emit_header(trace: Trace, scenario: Scenario, era: CommitteeEra) -> None:
    trace.emit(
        0,
        "scenario",
        name=scenario.name,
        n=scenario.n,
        f=scenario.f,
        seed=scenario.seed,
        mode=era.mode,
        committee=list(era.committee),
        relays=list(era.relays),
        qos={str(p): str(r) for p, r in era.qos.ratios.items()},
        schedule={str(p): s for p, s in era.schedule.sizes.items()},
        strategies={str(p): k for p, k in sorted(scenario.strategy_kinds().items())},
        target_epochs=scenario.target_epochs,
        pipeline_window=scenario.pipeline_window,
        delta_us=scenario.delta_us,
        latency_us=scenario.latency_us,
        signature_scheme=scenario.signature_scheme,
    )


def run_scenario(scenario: Scenario, stop_at_txs: int | None = None) -> RunResult:
    era = build_initial_era(scenario)
    trace = Trace()
    _emit_header(trace, scenario, era)

    node_ids = [MASTER_ID] + scenario.players()
    keys, registry = crypto.keyring_for(scenario.seed, node_ids, scenario.signature_scheme)

    strategies: dict[int, adversary.Strategy] = {}
    for player in scenario.players():
        spec = scenario.strategies.get(player, {"kind": "honest"})
        strategy = adversary.make_strategy(spec)
        strategy.bind(player, keys[player], scenario.seed)
        strategies[player] = strategy

    def outbound(node_id: int, sends, now: int):
        strategy = strategies.get(node_id)
        return strategy.intercept(sends, now) if strategy else sends

    def inbound(node_id: int, msg, now: int) -> bool:
        strategy = strategies.get(node_id)
        return strategy.allow_inbound(msg, now) if strategy else True

    sim_config = SimConfig(
        n=scenario.n,
        f=scenario.f,
        latency_us=scenario.latency_us,
        latency_overrides=scenario.latency_overrides,
        delta_us=scenario.delta_us,
        seed=scenario.seed,
        max_sim_time_us=scenario.max_sim_time_us,
    )
    net = Network(sim_config, trace, outbound_hook=outbound, inbound_hook=inbound)

    nodes: dict[int, SequencerNode] = {}
    for player in scenario.players():
        params = NodeParams(
            delta_us=scenario.delta_us,
            pipeline_window=scenario.pipeline_window,
            compute_delay_us=scenario.compute_delay_us.get(player, 0),
            payload_bytes=scenario.payload_bytes,
            real_tx_budget=scenario.real_tx_budget.get(player),
        )
        node = SequencerNode(player, keys[player], registry, era, params, trace)
        nodes[player] = node
        net.add_node(node)

    mode_kind, relay_count = scenario.mode_kind()
    master = MasterNode(
        keys[MASTER_ID],
        registry,
        era,
        scenario.delta_us,
        trace,
        policy=MasterPolicy(
            passive_escalation=scenario.passive_escalation,
            stay_in_alert=scenario.stay_in_alert,
            decrement_f_on_removal=scenario.decrement_f_on_removal,
        ),
        initial_mode=mode_kind,
        initial_relay_count=relay_count,
    )
    net.add_node(master)

    kinds = scenario.strategy_kinds()

    def stop_fn() -> bool:
        if master.halted is not None:
            return True
        committee = master.era.committee
        followers = [nodes[p] for p in committee if kinds.get(p) == "honest"]
        if not followers:
            return False
        if stop_at_txs is not None:
            return min(f.ledger.tx_count for f in followers) >= stop_at_txs
        return min(f.ledger.committed_count() for f in followers) >= scenario.target_epochs

    try:
        status = net.run(stop_fn)
        if master.halted is not None:
            status = "halted:%s" % master.halted
    except SimTimeout:
        status = "timeout"
    trace.emit(net.now, "end", status=status)

    verdicts = audit.audit_trace(trace.records)
    report = build_report(scenario, trace, status, verdicts)
    return RunResult(scenario, status, trace, report, verdicts, nodes, master)


def build_report(scenario: Scenario, trace: Trace, status: str, verdicts) -> dict:
    """Everything the run produced, derived purely from the trace."""
    kinds = scenario.strategy_kinds()
    per_epoch: dict[int, list] = {}
    latencies: list[int] = []
    for record in trace.records:
        if record["kind"] != "commit":
            continue
        per_epoch.setdefault(record["epoch"], record["txs"])
        if kinds.get(record["node"]) == "honest" and record["latency"] is not None:
            latencies.append(record["latency"])

    counts: dict[int, int] = {p: 0 for p in scenario.players()}
    dummies: dict[int, int] = {p: 0 for p in scenario.players()}
    total = 0
    for epoch in sorted(per_epoch):
        for issuer, _, dummy in per_epoch[epoch]:
            counts[issuer] = counts.get(issuer, 0) + 1
            if dummy:
                dummies[issuer] = dummies.get(issuer, 0) + 1
            total += 1

    per_player = {}
    for player in scenario.players():
        ratio = Fraction(counts[player], total) if total else Fraction(0)
        per_player[str(player)] = {
            "strategy": kinds[player],
            "committed_txs": counts[player],
            "dummy_txs": dummies[player],
            "ratio": str(ratio),
        }

    latencies.sort()

    def pct(q: float) -> int | None:
        if not latencies:
            return None
        return latencies[int(q * (len(latencies) - 1))]

    latency_stats = {
        "mean": (sum(latencies) // len(latencies)) if latencies else None,
        "p50": pct(0.5),
        "p99": pct(0.99),
        "min": latencies[0] if latencies else None,
        "max": latencies[-1] if latencies else None,
    }

    reconfigurations = [
        {k: r[k] for k in ("t", "era", "reason", "accused")}
        for r in trace.records
        if r["kind"] == "reconfig"
    ]
    new_configs = [
        {k: r[k] for k in ("t", "era", "committee", "removed", "next_epoch", "closing_epoch", "mode")}
        for r in trace.records
        if r["kind"] == "new_config"
    ]
    detections = [
        {k: r[k] for k in ("t", "era", "epoch", "round", "accused")}
        for r in trace.records
        if r["kind"] == "detect"
    ]
    punishments = [
        {k: r[k] for k in ("t", "player", "ratio")} for r in trace.records if r["kind"] == "punish"
    ]

    return {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "status": status,
        "committed_epochs": len(per_epoch),
        "committed_txs": total,
        "per_player": per_player,
        "commit_latency_us": latency_stats,
        "reconfigurations": reconfigurations,
        "new_configs": new_configs,
        "detections": detections,
        "punishments": punishments,
        "audits": [v.as_dict() for v in verdicts],
        "all_audits_passed": audit.all_passed(verdicts),
    }


def bundled_scenarios() -> dict[str, Path]:
    root = importlib.resources.files("fairchain") / "scenarios"
    out: dict[str, Path] = {}
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".yaml"):
            out[entry.name[: -len(".yaml")]] = Path(str(entry))
    return out


def run_corpus(name_filter: str | None = None, seed: int | None = None) -> list[RunResult]:
    results = []
    for name, path in bundled_scenarios().items():
        if name_filter and name_filter not in name:
            continue
        scenario = load_scenario(path)
        if seed is not None:
            scenario = scenario.with_seed(seed)
        results.append(run_scenario(scenario))
    return results
