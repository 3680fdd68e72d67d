"""Command line entry points.

    fairchain run <scenario.yaml> [--seed N] [--trace-out PATH]
                  [--report-out PATH] [--figures-out DIR]
    fairchain audit <trace.ndjson>
    fairchain corpus [--filter NAME] [--seed N] [--out DIR]

Exit code is 0 iff every audit passed (and, for run/corpus, the simulation
reached its target).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from fairchain import audit as audit_mod
from fairchain import harness, report as report_mod
from fairchain.scenario import ScenarioError, load_scenario
from fairchain.simnet import Trace


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        print("scenario error: %s" % exc, file=sys.stderr)
        return 2
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    result = harness.run_scenario(scenario)
    if args.trace_out:
        Path(args.trace_out).write_text(result.trace.to_ndjson())
    if args.report_out:
        report_mod.write_report(result.report, args.report_out)
    if args.figures_out:
        written = report_mod.render_figures(result.report, result.trace.records, args.figures_out)
        for path in written:
            print("wrote %s" % path)
    print(report_mod.summary_table(result.report))
    return 0 if result.passed() else 1


def _cmd_audit(args: argparse.Namespace) -> int:
    trace = Trace.from_ndjson(Path(args.trace).read_text())
    verdicts = audit_mod.audit_trace(trace.records)
    for verdict in verdicts:
        mark = "ok" if verdict.passed else "FAIL"
        detail = (" (%s)" % verdict.detail) if verdict.detail else ""
        print("audit %-20s %s%s" % (verdict.name, mark, detail))
    return 0 if audit_mod.all_passed(verdicts) else 1


def _cmd_corpus(args: argparse.Namespace) -> int:
    results = harness.run_corpus(args.filter, seed=args.seed)
    if not results:
        print("no bundled scenario matches %r" % args.filter, file=sys.stderr)
        return 2
    failed = 0
    for result in results:
        print(report_mod.summary_table(result.report))
        if args.out:
            outdir = Path(args.out)
            outdir.mkdir(parents=True, exist_ok=True)
            report_mod.write_report(result.report, outdir / ("%s.report.json" % result.scenario.name))
            (outdir / ("%s.trace.ndjson" % result.scenario.name)).write_text(
                result.trace.to_ndjson()
            )
        if not result.passed():
            failed += 1
    print("corpus: %d scenarios, %d failed" % (len(results), failed))
    return 0 if failed == 0 else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="fairchain",
        description="Deterministic committee-ledger simulator and auditor",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one scenario file")
    run_p.add_argument("scenario")
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--trace-out", default=None)
    run_p.add_argument("--report-out", default=None)
    run_p.add_argument("--figures-out", default=None)
    run_p.set_defaults(func=_cmd_run)

    audit_p = sub.add_parser("audit", help="re-audit an exported trace")
    audit_p.add_argument("trace")
    audit_p.set_defaults(func=_cmd_audit)

    corpus_p = sub.add_parser("corpus", help="run the bundled scenario suite")
    corpus_p.add_argument("--filter", default=None)
    corpus_p.add_argument("--seed", type=int, default=None)
    corpus_p.add_argument("--out", default=None)
    corpus_p.set_defaults(func=_cmd_corpus)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
