"""Report rendering: summary table, delimited stats, and figures.

The JSON report is the canonical artifact; this module turns it into the
human-facing forms: a plain-text table for terminals, a per-player CSV,
and matplotlib figures written next to the CSV when a figures directory
is requested.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path


def summary_table(report: dict) -> str:
    lines = []
    lines.append(
        "scenario %-28s status=%-10s epochs=%-5d txs=%-6d audits=%s"
        % (
            report["scenario"],
            report["status"],
            report["committed_epochs"],
            report["committed_txs"],
            "PASS" if report["all_audits_passed"] else "FAIL",
        )
    )
    lat = report["commit_latency_us"]
    if lat["mean"] is not None:
        lines.append(
            "  commit latency us: mean=%d p50=%d p99=%d min=%d max=%d"
            % (lat["mean"], lat["p50"], lat["p99"], lat["min"], lat["max"])
        )
    lines.append("  %-8s %-22s %10s %8s %10s" % ("player", "strategy", "txs", "dummy", "ratio"))
    for player, info in sorted(report["per_player"].items(), key=lambda kv: int(kv[0])):
        lines.append(
            "  %-8s %-22s %10d %8d %10s"
            % (player, info["strategy"], info["committed_txs"], info["dummy_txs"], info["ratio"])
        )
    for verdict in report["audits"]:
        mark = "ok" if verdict["passed"] else "FAIL"
        detail = (" (%s)" % verdict["detail"]) if verdict["detail"] else ""
        lines.append("  audit %-20s %s%s" % (verdict["name"], mark, detail))
    for event in report["reconfigurations"]:
        lines.append(
            "  reconfig t=%dus era=%d reason=%s accused=%s"
            % (event["t"], event["era"], event["reason"], event["accused"])
        )
    return "\n".join(lines)


def write_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def write_player_csv(report: dict, path: str | Path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["player", "strategy", "committed_txs", "dummy_txs", "ratio"])
        for player, info in sorted(report["per_player"].items(), key=lambda kv: int(kv[0])):
            writer.writerow(
                [player, info["strategy"], info["committed_txs"], info["dummy_txs"], info["ratio"]]
            )


def render_figures(report: dict, trace_records: list[dict], outdir: str | Path) -> list[Path]:
    """Render run figures to PNG files alongside the delimited stats."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    csv_path = outdir / "players.csv"
    write_player_csv(report, csv_path)
    written.append(csv_path)

    players = sorted(report["per_player"], key=int)
    counts = [report["per_player"][p]["committed_txs"] for p in players]

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(players, counts, color="#4878a8")
    ax.set_xlabel("player")
    ax.set_ylabel("committed transactions")
    ax.set_title("%s: committed transactions per player" % report["scenario"])
    fig.tight_layout()
    path = outdir / "committed_per_player.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    # Per-epoch commit latency, honest nodes, first record per (node, epoch).
    series: dict[int, list[tuple[int, int]]] = {}
    for record in trace_records:
        if record["kind"] == "commit" and record.get("latency") is not None:
            series.setdefault(record["node"], []).append((record["epoch"], record["latency"]))
    if series:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for node, points in sorted(series.items()):
            points.sort()
            ax.plot(
                [e for e, _ in points],
                [l / 1000.0 for _, l in points],
                marker=".",
                linewidth=0.8,
                label="p%d" % node,
            )
        ax.set_xlabel("epoch")
        ax.set_ylabel("commit latency (ms)")
        ax.set_title("%s: commit latency by epoch" % report["scenario"])
        ax.legend(fontsize=7, ncol=2)
        fig.tight_layout()
        path = outdir / "commit_latency.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    # Cumulative committed transactions over sim time per player.
    cumulative: dict[int, list[tuple[int, int]]] = {}
    totals: dict[int, int] = {}
    seen_epochs: set[int] = set()
    for record in trace_records:
        if record["kind"] != "commit" or record["epoch"] in seen_epochs:
            continue
        seen_epochs.add(record["epoch"])
        for issuer, _, _ in record["txs"]:
            totals[issuer] = totals.get(issuer, 0) + 1
            cumulative.setdefault(issuer, []).append((record["t"], totals[issuer]))
    if cumulative:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for player, points in sorted(cumulative.items()):
            ax.step(
                [t / 1000.0 for t, _ in points],
                [c for _, c in points],
                where="post",
                label="p%d" % player,
            )
        ax.set_xlabel("sim time (ms)")
        ax.set_ylabel("cumulative committed txs")
        ax.set_title("%s: throughput per player" % report["scenario"])
        ax.legend(fontsize=7, ncol=2)
        fig.tight_layout()
        path = outdir / "throughput.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    return written
