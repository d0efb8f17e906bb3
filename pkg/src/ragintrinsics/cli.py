"""Command-line entry point.

Exit codes: 0 success, 2 validation error (bad input, bad model output,
missing fields), 3 backend error (server unreachable, timeout, no script
match).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, TextIO

from . import errors, evalkit, pipeline
from .backend import Backend, BackendConfig, CompletionsClient, RecordingBackend, ScriptedBackend
from .core import IntrinsicName
from .intrinsics import InvocationRecord, Intrinsics, result_to_wire

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_BACKEND = 3

logger = logging.getLogger("ragintrinsics")


class UsageError(errors.ValidationError):
    pass


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("backend")
    g.add_argument("--scripted", metavar="FILE", help="scripted-backend rule file (JSON)")
    g.add_argument("--backend-url", metavar="URL", help="OpenAI-compatible server base URL")
    g.add_argument("--config", metavar="FILE", help="backend config file (JSON)")
    g.add_argument("--model", help="default model name")
    for name in IntrinsicName:
        g.add_argument(f"--model.{name.value}", dest=f"model_{name.value}", metavar="MODEL",
                       help=argparse.SUPPRESS)
    g.add_argument("--seed", type=int, help="sampling seed passed to the server")
    g.add_argument("--trace", action="store_true", help="dump prompt/completion pairs to stderr as JSON lines")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ragintrinsics", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("invoke", help="run one intrinsic on an invocation record")
    p.add_argument("intrinsic", help="QR, QE, CR, AD, PRR, UQ, HD or CG")
    p.add_argument("input", help="invocation record (JSON); '-' for stdin")
    p.add_argument("--out", help="write the result here instead of stdout")
    _add_backend_flags(p)

    p = sub.add_parser("flow", help="run a RAG flow over a conversations file")
    p.add_argument("conversations", help="conversations JSONL")
    p.add_argument("corpus", help="corpus JSONL")
    p.add_argument("--flow", choices=[k.value for k in pipeline.FlowKind], default="none")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--post", default="", help="comma list of post-generation steps: hd,uq,cg")
    p.add_argument("--out", help="run-report JSONL (default stdout)")
    _add_backend_flags(p)

    p = sub.add_parser("eval", help="compute metrics from a run report and gold file")
    p.add_argument("report", help="run-report JSONL")
    p.add_argument("gold", help="gold JSONL")
    p.add_argument("--metrics", default="answerability,jafs", help=f"comma list from {','.join(evalkit.METRICS)}")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", help="metrics report JSON (summary table then goes to stdout)")

    p = sub.add_parser("script-check", help="validate a scripted-backend file")
    p.add_argument("script")
    return parser


def make_backend(args: argparse.Namespace) -> Backend:
    scripted = args.scripted or os.environ.get("RAGI_SCRIPTED")
    url = args.backend_url
    if scripted and (url or args.config):
        raise UsageError("choose either --scripted or a server backend, not both")
    if scripted:
        return ScriptedBackend.from_file(scripted)
    cfg = BackendConfig.load(args.config)
    if url:
        cfg = replace(cfg, base_url=url)
    elif not args.config and "RAGI_BACKEND_URL" not in os.environ:
        raise UsageError("no backend: pass --scripted FILE or --backend-url URL")
    models = dict(cfg.models)
    for name in IntrinsicName:
        value = getattr(args, f"model_{name.value}", None)
        if value:
            models[name.value] = value
    return CompletionsClient(replace(cfg, model=args.model or cfg.model, models=models))


def _dump_trace(backend: Backend, stream: TextIO) -> None:
    if isinstance(backend, RecordingBackend):
        for rec in backend.records:
            stream.write(json.dumps(rec, ensure_ascii=False) + "\n")


def _read_json(path: str) -> Any:
    try:
        text = sys.stdin.read() if path == "-" else Path(path).read_text(encoding="utf-8")
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON: {exc}") from None


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _with_trace(args: argparse.Namespace, backend: Backend) -> Backend:
    return RecordingBackend(backend) if args.trace else backend


def cmd_invoke(args: argparse.Namespace) -> int:
    data = _read_json(args.input)
    if isinstance(data, dict):
        data.setdefault("intrinsic", args.intrinsic)
        if str(data["intrinsic"]).upper() != args.intrinsic.upper():
            raise UsageError(f"record is for {data['intrinsic']}, command asked for {args.intrinsic}")
    record = InvocationRecord.from_dict(data)
    backend = _with_trace(args, make_backend(args))
    runner = Intrinsics(backend, seed=args.seed)
    try:
        result = runner.invoke(record)
    finally:
        _dump_trace(backend, sys.stderr)
    wire = result_to_wire(record.intrinsic, result, record.documents)
    _write(json.dumps(wire, ensure_ascii=False, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_flow(args: argparse.Namespace) -> int:
    for path in (args.conversations, args.corpus):
        if not Path(path).is_file():
            raise UsageError(f"{path}: no such file")
    conversations = pipeline.load_conversations(args.conversations)
    handle = pipeline.index(pipeline.load_corpus(args.corpus))
    post = [s for s in args.post.split(",") if s.strip()]
    for step in post:
        try:
            pipeline.PostStep(step.strip())
        except ValueError:
            raise UsageError(f"unknown post step {step!r}") from None
    backend = _with_trace(args, make_backend(args)) if conversations else None

    def run(item: tuple[str, Any]) -> dict[str, Any]:
        conv_id, conv = item
        runner = Intrinsics(backend, seed=args.seed)
        try:
            result = pipeline.run_flow(args.flow, conv, handle, runner, args.k, post=[s.strip() for s in post])
        except errors.FlowError as exc:
            if isinstance(exc.cause, errors.BackendError):
                raise exc.cause from exc
            return {"id": conv_id, "flow": args.flow, "error": str(exc), "steps": [t.step for t in exc.trace]}
        return pipeline.report_record(conv_id, result)

    try:
        if args.jobs > 1 and len(conversations) > 1:
            with ThreadPoolExecutor(max_workers=args.jobs) as pool:
                records = list(pool.map(run, conversations))
        else:
            records = [run(item) for item in conversations]
    finally:
        if backend is not None:
            _dump_trace(backend, sys.stderr)
    lines = "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records)
    _write(lines, args.out)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    records = pipeline.read_jsonl(args.report)
    gold = pipeline.load_gold(args.gold)
    report = evalkit.evaluate_run(records, gold, metrics, k=args.k)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        sys.stdout.write(evalkit.summary_table(report))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_script_check(args: argparse.Namespace) -> int:
    backend = ScriptedBackend.from_file(args.script)
    print(f"{args.script}: {len(backend.rules)} rule(s), strict={backend.strict}")
    return EXIT_OK


COMMANDS = {
    "invoke": cmd_invoke,
    "flow": cmd_flow,
    "eval": cmd_eval,
    "script-check": cmd_script_check,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except errors.BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except errors.FlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND if isinstance(exc.cause, errors.BackendError) else EXIT_VALIDATION
    except (errors.ValidationError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
