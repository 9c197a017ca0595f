"""Command-line entry points: ``run``, ``bench``, ``needle`` and ``inspect``.

Exit status: 0 success, 1 runtime abort, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .chunker import Document
from .config import load_config
from .engine import read_report, run_chain, write_report
from .errors import ChainAborted, ConfigError, GatedChainError, MalformedRecord, MalformedTrace, NeedleTooLong
from .evaluation import NeedleSpec, generate_needle, load_samples, qa_f1, run_benchmark

EXIT_OK, EXIT_ABORT, EXIT_USAGE = 0, 1, 2


def _fail(code: int, exc: BaseException | str) -> int:
    if isinstance(exc, BaseException):
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    else:
        print(f"error: {exc}", file=sys.stderr)
    return code


def _short(text: str | None, width: int = 72) -> str:
    text = " ".join((text or "").split())
    return text if len(text) <= width else text[: width - 3] + "..."


def cmd_run(args) -> int:
    try:
        config = load_config(args.config, k=args.k, temperature=args.temperature)
        text = Path(args.document).read_text(encoding="utf-8")
    except ConfigError as exc:
        return _fail(EXIT_USAGE, exc)
    except OSError as exc:
        return _fail(EXIT_USAGE, exc)
    doc = Document(text, id=Path(args.document).stem, mode=config.unit_mode)
    try:
        result = run_chain(doc, args.query, config)
    except ChainAborted as exc:
        if args.trace_out:
            write_report(args.trace_out, exc.trace)
        return _fail(EXIT_ABORT, exc.cause)
    except GatedChainError as exc:
        return _fail(EXIT_USAGE, exc)
    if args.trace_out:
        write_report(args.trace_out, result.trace, result.final_bank)
    print(result.answer)
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        config = load_config(args.config, k=args.k, temperature=args.temperature)
        samples = load_samples(args.samples)
    except (ConfigError, MalformedRecord, OSError) as exc:
        return _fail(EXIT_USAGE, exc)
    if not samples:
        return _fail(EXIT_USAGE, f"no samples in {args.samples}")
    report = run_benchmark(samples, config, args.metric, args.workers)
    for row in report.rows:
        if row.error:
            print(f"warning: sample {row.id} failed: {row.error}", file=sys.stderr)
    if args.report_out:
        report.write(args.report_out)
    print(f"n={len(report.rows)} mean={report.mean_score:.4f} seconds/item={report.mean_seconds:.3f}")
    return EXIT_OK


def cmd_needle(args) -> int:
    try:
        config = load_config(args.config, k=args.k, temperature=args.temperature)
    except ConfigError as exc:
        return _fail(EXIT_USAGE, exc)
    overrides = {name: getattr(args, name) for name in ("needle", "query", "gold") if getattr(args, name)}
    print("length\tdepth\tf1\tresult")
    for length in args.length:
        for depth in args.depth:
            try:
                sample = generate_needle(NeedleSpec(length, depth, **overrides))
            except (NeedleTooLong, ValueError) as exc:
                return _fail(EXIT_USAGE, exc)
            doc = Document(sample.context, id=sample.id, mode=config.unit_mode)
            try:
                answer = run_chain(doc, sample.input, config).answer
            except ChainAborted as exc:
                return _fail(EXIT_ABORT, exc.cause)
            f1 = qa_f1(answer, sample.answers)
            verdict = "PASS" if f1 >= args.threshold else "FAIL"
            print(f"{length}\t{depth:g}\t{f1:.3f}\t{verdict}")
    return EXIT_OK


def format_report(data: dict) -> str:
    trace = data["trace"]
    out = [f"document {trace['document_id']}  query: {_short(trace['query']) or '(none)'}"]
    sequence = []
    for node in trace["nodes"]:
        out.append(f"node {node['index']}  span {node['span'][0]}-{node['span'][1]}  {node['chunk_units']} units")
        if node.get("worker"):
            sequence.append("W")
            flag = "  [truncated]" if node.get("hidden_truncated") else ""
            out.append(f"  W {node['worker']['latency_ms']:8.1f}ms  {_short(node['hidden'])!r}{flag}")
        if node.get("filter"):
            sequence.append("F")
            flags = node["filter"].get("flags") or []
            note = "  [default]" if "unparseable-default" in flags else ""
            out.append(f"  F {node['filter']['latency_ms']:8.1f}ms  {node['decision']}{note}  {_short(node['filtered'], 50)!r}")
        for call in node.get("detector_calls", []):
            sequence.append("F")
            out.append(f"  F (detector)  {_short(call['output'], 60)!r}")
        for pair in node.get("conflicts", []):
            out.append(f"  conflict ({pair['earlier']}, {pair['later']}): {_short(pair['reason'], 60)}")
        for j in node.get("judgements", []):
            sequence.append("J")
            winner = j["winner"] or "error"
            out.append(f"  J ({j['earlier']}, {j['later']})  winner={winner}  {_short(j['corrected_text'], 50)!r}")
        for s in node.get("skipped", []):
            out.append(f"  skipped ({s['earlier']}, {s['later']}): {s['why']}")
    if trace.get("manager"):
        sequence.append("M")
        out.append(f"manager {trace['manager']['latency_ms']:.1f}ms  answer: {_short(trace.get('answer'))!r}")
    bank = data.get("final_bank") or []
    if bank:
        states = []
        for e in bank:
            by = f" by node {e['resolved_by']}" if e.get("resolved_by") is not None else ""
            states.append(f"{e['index']}:{e['status']}{by}")
        out.append("final bank: " + ", ".join(states))
    out.append("call sequence: " + ",".join(sequence))
    out.append(f"wall time: {trace.get('wall_seconds', 0.0):.3f}s  peak held units: {trace.get('peak_held_units', 0)}")
    if data.get("error"):
        err = data["error"]
        out.append(f"ABORTED: {err['type']} in {err.get('role')} at node {err.get('node')}: {err['message']}")
    return "\n".join(out)


def cmd_inspect(args) -> int:
    if not args.trace:
        return _fail(EXIT_USAGE, "a trace path is required")
    try:
        data = read_report(args.trace)
    except OSError as exc:
        return _fail(EXIT_USAGE, exc)
    except MalformedTrace as exc:
        return _fail(EXIT_ABORT, exc)
    try:
        print(format_report(data))
    except (KeyError, TypeError, IndexError) as exc:
        return _fail(EXIT_ABORT, MalformedTrace(f"missing or invalid field {exc}", 0))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gatedchain", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML or JSON chain configuration")
        p.add_argument("--k", type=int, help="override chunk size (units)")
        p.add_argument("--temperature", type=float, help="override sampling temperature for all roles")

    p = sub.add_parser("run", help="answer a query over one document")
    p.add_argument("document")
    p.add_argument("--query", default="")
    p.add_argument("--trace-out")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="score a JSONL benchmark file")
    p.add_argument("samples")
    p.add_argument("--metric", choices=["auto", "f1", "rougeL"], default="auto")
    p.add_argument("--report-out")
    p.add_argument("--workers", type=int)
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("needle", help="needle-in-a-haystack grid")
    p.add_argument("--length", type=int, nargs="+", required=True)
    p.add_argument("--depth", type=float, nargs="+", default=[0.0, 0.5, 1.0])
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--needle")
    p.add_argument("--query")
    p.add_argument("--gold")
    common(p)
    p.set_defaults(func=cmd_needle)

    p = sub.add_parser("inspect", help="render a trace report")
    p.add_argument("trace")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
