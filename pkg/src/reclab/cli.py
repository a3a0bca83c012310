"""Command-line entry point: serve, ingest, simulate, report, export."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .analytics import ctr_timeseries, emit_report
from .errors import RecLabError
from .gateway import build_living_lab
from .http_api import GatewayServer
from .index import build_index, load_corpus_jsonl, save_index
from .model import ImpressionRecord
from .plotting import render_report_figure
from .simulate import _parse_month as _month_arg
from .simulate import load_sim_config, run_simulation
from .store import EventStore, read_events


def _add_month(dt):
    year = dt.year + (dt.month // 12)
    month = dt.month % 12 + 1
    return dt.replace(year=year, month=month)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reclab",
        description="Living-lab gateway for online evaluation of recommendation engines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the gateway HTTP service")
    serve.add_argument("--config", required=True, help="startup config JSON file")

    ingest = sub.add_parser("ingest", help="validate a corpus and write its index")
    ingest.add_argument("--corpus", required=True, help="corpus JSONL file")
    ingest.add_argument("--out", required=True, help="index output path (JSON)")

    simulate = sub.add_parser("simulate", help="run a simulated experiment end to end")
    simulate.add_argument("--config", required=True, help="simulation config JSON file")
    simulate.add_argument("--out", required=True, help="output directory")
    simulate.add_argument("--workers", type=int, default=None,
                          help="request workers (determinism is guaranteed at 1)")

    report = sub.add_parser("report", help="compute the per-engine CTR report from a log")
    report.add_argument("--store", required=True, help="event log (JSONL)")
    report.add_argument("--from", dest="start", default=None, metavar="YYYY-MM")
    report.add_argument("--to", dest="end", default=None, metavar="YYYY-MM (inclusive)")
    report.add_argument("--bucket", default="month", choices=["month"])
    report.add_argument("--format", dest="fmt", default="csv", choices=["csv", "jsonl"])
    report.add_argument("--attribution", default="serving", choices=["serving", "assigned"])
    report.add_argument("--out", default=None,
                        help="directory for report.<fmt> and report.png; stdout when omitted")

    export = sub.add_parser("export", help="export an event log slice")
    export.add_argument("--store", required=True, help="event log (JSONL)")
    export.add_argument("--out", required=True, help="output JSONL path")
    export.add_argument("--from", dest="start", default=None, metavar="YYYY-MM")
    export.add_argument("--to", dest="end", default=None, metavar="YYYY-MM (inclusive)")
    return parser


def _cmd_serve(args) -> int:
    config_path = Path(args.config)
    config = json.loads(config_path.read_text(encoding="utf-8"))
    lab = build_living_lab(config, base_dir=config_path.parent)
    listen = config.get("listen", "127.0.0.1:8080")
    host, _, port = listen.partition(":")
    server = GatewayServer(lab, host=host, port=int(port or 8080))
    print(f"listening on {server.base_url} "
          f"({lab.index.doc_count} corpus docs, engines: {', '.join(lab.engine_ids())})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def _cmd_ingest(args) -> int:
    corpus = load_corpus_jsonl(args.corpus)
    index = build_index(corpus)
    save_index(index, args.out)
    print(f"indexed {index.doc_count} documents, {len(index.postings)} terms -> {args.out}")
    return 0


def _cmd_simulate(args) -> int:
    sim = load_sim_config(args.config)
    if args.workers is not None:
        sim = dataclasses.replace(sim, workers=args.workers)
    result = run_simulation(sim, args.out)
    delivered, clicked = result.report.overall()
    print(f"requests: {result.requests_issued}, answered: {result.responses_with_items}, "
          f"items: {result.items_delivered}, clicks: {result.clicks_issued}")
    print(f"overall CTR: {clicked}/{delivered}"
          + (f" = {clicked / delivered:.6f}" if delivered else ""))
    print(f"wrote {result.events_path}, {result.report_path}, {result.figure_path}")
    return 0


def _time_range(args):
    start = _month_arg(args.start) if args.start else None
    end = _add_month(_month_arg(args.end)) if args.end else None
    return start, end


def _cmd_report(args) -> int:
    records = read_events(args.store)
    start, end = _time_range(args)
    if start is not None or end is not None:
        keep = {
            r.set_id
            for r in records
            if isinstance(r, ImpressionRecord)
            and (start is None or r.requested_at >= start)
            and (end is None or r.requested_at < end)
        }
        records = [r for r in records if r.set_id in keep]
    report = ctr_timeseries(records, attribution=args.attribution)
    payload = emit_report(report, args.fmt)
    if args.out is None:
        sys.stdout.write(payload.decode("utf-8"))
        return 0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_file = out / f"report.{args.fmt}"
    report_file.write_bytes(payload)
    figure_file = render_report_figure(report, out / "report.png")
    print(f"wrote {report_file} and {figure_file}")
    return 0


def _cmd_export(args) -> int:
    if not Path(args.store).exists():
        raise FileNotFoundError(f"event log not found: {args.store}")
    store = EventStore(args.store, sync=False)
    try:
        start, end = _time_range(args)
        count = store.export_to(args.out, start, end)
    finally:
        store.close()
    print(f"exported {count} records -> {args.out}")
    return 0


_COMMANDS = {
    "serve": _cmd_serve,
    "ingest": _cmd_ingest,
    "simulate": _cmd_simulate,
    "report": _cmd_report,
    "export": _cmd_export,
}


def run_cli(argv: list[str] | None = None) -> int:
    """Parse and dispatch; returns the process exit code (0/1/2)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except RecLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"error: bad JSON input: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())
