"""Command-line surface: single runs, batches, ablation sweeps, pool and
transcript inspection, and standalone story scoring.

Exit codes: 0 success, 1 batch with per-task failures, 2 schema/input
errors, 3 backend errors, 4 parse/protocol errors. Results go to stdout,
diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from . import metrics as metrics_mod
from .backend import (
    Backend,
    DEFAULT_MODEL,
    HttpBackend,
    ScriptedBackend,
)
from .domain import (
    ABLATION_FLAGS,
    AnswerSet,
    RunConfig,
    RunTranscript,
    TaskQuery,
    normalize_alias,
    validate_task,
)
from .errors import (
    BackendConfigError,
    CardinalityError,
    CorruptPoolError,
    DecodeError,
    EmptyInputError,
    InvalidPairError,
    MissingPlaceholderError,
    MixedKindError,
    ParseError,
    ReaError,
    SchemaError,
    ScoreRangeError,
    TransportError,
    UnknownTemplateError,
    UnknownVariantError,
    UnresolvedPlaceholderError,
)
from .experience import load_or_empty
from .orchestrator import RunOutcome, pool_path, run_task

EXIT_OK = 0
EXIT_BATCH_FAILURES = 1
EXIT_SCHEMA = 2
EXIT_BACKEND = 3
EXIT_PROTOCOL = 4

ABLATE_VARIANTS = ("full",) + ABLATION_FLAGS


def _exit_code_for(exc: Exception) -> int:
    if isinstance(
        exc,
        (SchemaError, EmptyInputError, MixedKindError, ScoreRangeError, CorruptPoolError, UnknownVariantError),
    ):
        return EXIT_SCHEMA
    if isinstance(exc, (BackendConfigError, TransportError)):
        return EXIT_BACKEND
    if isinstance(
        exc,
        (
            ParseError,
            DecodeError,
            CardinalityError,
            InvalidPairError,
            MissingPlaceholderError,
            UnresolvedPlaceholderError,
            UnknownTemplateError,
        ),
    ):
        return EXIT_PROTOCOL
    return EXIT_PROTOCOL if isinstance(exc, ReaError) else EXIT_SCHEMA


def _fail(exc: Exception, stage: str | None = None) -> int:
    where = stage or getattr(exc, "run_stage", None)
    prefix = f"error at stage '{where}': " if where else "error: "
    print(prefix + str(exc), file=sys.stderr)
    return _exit_code_for(exc)


def _add_shared_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--workspace", type=Path, default=Path("workspace"))
    parser.add_argument("--backend", choices=("http", "scripted"), default="http")
    parser.add_argument("--rules", type=Path, help="scripted rule table (JSON)")
    parser.add_argument("--base-url", help="chat-completions base URL (or REA_BASE_URL)")
    parser.add_argument("--model", default=DEFAULT_MODEL)
    parser.add_argument("--turns", type=int, default=2)
    parser.add_argument("--crew-min", type=int, default=3)
    parser.add_argument("--crew-max", type=int, default=5)
    parser.add_argument("--global-k", type=int, default=10)
    parser.add_argument("--temperature", type=float, default=1.0)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--fresh-pool", action="store_true")
    for flag in ABLATION_FLAGS:
        parser.add_argument(f"--{flag.replace('_', '-')}", action="store_true")


def _config_from_args(args: argparse.Namespace, extra_flags: set[str] | None = None) -> RunConfig:
    flags = {flag for flag in ABLATION_FLAGS if getattr(args, flag)}
    if extra_flags:
        flags |= extra_flags
    return RunConfig(
        turns=args.turns,
        crew_min=args.crew_min,
        crew_max=args.crew_max,
        global_select_k=args.global_k,
        temperature=args.temperature,
        ablations=frozenset(flags),
        seed=args.seed,
    )


def _backend_from_args(args: argparse.Namespace) -> Backend:
    if args.backend == "scripted":
        if not args.rules:
            raise BackendConfigError("scripted backend needs --rules PATH")
        return ScriptedBackend.from_file(args.rules)
    return HttpBackend(base_url=args.base_url)


def _load_json(path: Path, what: str) -> Any:
    if not path.exists():
        raise SchemaError(what, f"file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(what, f"not valid JSON: {exc}") from exc


def _reset_pool(workspace: Path) -> None:
    path = pool_path(workspace)
    if path.exists():
        path.unlink()


def _run_one(
    task: TaskQuery, args: argparse.Namespace, backend: Backend, workspace: Path,
    config: RunConfig,
) -> RunOutcome:
    return run_task(task, config, workspace, backend, model_id=args.model)


def _attach_stage(exc: Exception, stage: str) -> Exception:
    if not hasattr(exc, "run_stage"):
        exc.run_stage = stage  # type: ignore[attr-defined]
    return exc


def cmd_run(args: argparse.Namespace) -> int:
    stage = "load task"
    try:
        task = validate_task(_load_json(args.task_file, "task"))
        config = _config_from_args(args)
        backend = _backend_from_args(args)
        if args.fresh_pool:
            _reset_pool(args.workspace)
        stage = "run"
        outcome = _run_one(task, args, backend, args.workspace, config)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        return _fail(_attach_stage(exc, stage))
    print(outcome.final_answer)
    print()
    for name, value in outcome.metrics.items():
        print(f"{name}: {value:.1f}")
    print(f"global pool: +{len(outcome.global_delta)} entries")
    return EXIT_OK


def _load_batch(path: Path) -> list[dict[str, Any]]:
    docs = _load_json(path, "tasks")
    if not isinstance(docs, list) or not docs:
        raise SchemaError("tasks", "expected a nonempty array of task documents")
    ids = [d.get("task_id") for d in docs if isinstance(d, dict)]
    dupes = {i for i in ids if i and ids.count(i) > 1}
    if dupes:
        raise SchemaError("task_id", f"duplicate ids in batch: {sorted(dupes)}")
    return docs


def _run_batch(
    docs: list[dict[str, Any]],
    args: argparse.Namespace,
    backend: Backend,
    workspace: Path,
    config: RunConfig,
) -> tuple[list[RunOutcome], list[dict[str, str]]]:
    outcomes: list[RunOutcome] = []
    failures: list[dict[str, str]] = []
    for i, doc in enumerate(docs):
        label = doc.get("task_id") if isinstance(doc, dict) else None
        label = label or f"task[{i}]"
        try:
            task = validate_task(doc)
            outcomes.append(_run_one(task, args, backend, workspace, config))
        except Exception as exc:  # noqa: BLE001 - recorded per task
            stage = getattr(exc, "run_stage", "validate")
            failures.append({"task": str(label), "stage": str(stage), "error": str(exc)})
            print(f"task {label} failed at '{stage}': {exc}", file=sys.stderr)
    return outcomes, failures


def _print_metric_table(table: dict[str, dict[str, Any]]) -> None:
    for name, cell in table.items():
        print(f"{name:8s} mean={cell['mean']:.1f} n={cell['n']}")


def cmd_batch(args: argparse.Namespace) -> int:
    try:
        docs = _load_batch(args.tasks_file)
        config = _config_from_args(args)
        backend = _backend_from_args(args)
        if args.fresh_pool:
            _reset_pool(args.workspace)
    except Exception as exc:  # noqa: BLE001
        return _fail(exc, "load batch")
    outcomes, failures = _run_batch(docs, args, backend, args.workspace, config)
    if outcomes:
        try:
            table = metrics_mod.batch_report(outcomes)
        except Exception as exc:  # noqa: BLE001
            return _fail(exc, "aggregate")
        batch_id = args.tasks_file.stem
        report_path = args.workspace / "reports" / f"{batch_id}.json"
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report_path.write_text(
            json.dumps(table, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
        _print_metric_table(table)
        print(f"report: {report_path}")
    else:
        print("no task completed", file=sys.stderr)
    return EXIT_BATCH_FAILURES if failures else EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    try:
        for name in args.variants:
            if name not in ABLATE_VARIANTS:
                raise UnknownVariantError(
                    f"unknown variant {name!r}; pick from {', '.join(ABLATE_VARIANTS)}"
                )
        docs = _load_batch(args.tasks_file)
        backend = _backend_from_args(args)
    except Exception as exc:  # noqa: BLE001
        return _fail(exc, "load ablation")
    rows: dict[str, dict[str, Any]] = {}
    any_failures = False
    for name in args.variants:
        extra = set() if name == "full" else {name}
        try:
            config = _config_from_args(args, extra_flags=extra)
        except Exception as exc:  # noqa: BLE001
            return _fail(exc, "configure variant")
        workspace = args.workspace / name
        if args.fresh_pool:
            _reset_pool(workspace)
        outcomes, failures = _run_batch(docs, args, backend, workspace, config)
        any_failures = any_failures or bool(failures)
        row: dict[str, Any] = {
            "effective_ablations": list(config.effective_ablations()),
            "n_tasks": len(outcomes),
            "failures": len(failures),
            "call_count_total": sum(o.call_count for o in outcomes),
        }
        if outcomes:
            row["metrics"] = metrics_mod.batch_report(outcomes)
        rows[name] = row
    report_path = args.workspace / "reports" / f"ablate_{args.tasks_file.stem}.json"
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps(rows, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    for name, row in rows.items():
        flags = ",".join(row["effective_ablations"]) or "-"
        metric_text = " ".join(
            f"{m}={cell['mean']:.1f}" for m, cell in row.get("metrics", {}).items()
        )
        print(
            f"{name:15s} flags=[{flags}] calls={row['call_count_total']} "
            f"n={row['n_tasks']} {metric_text}"
        )
    print(f"report: {report_path}")
    return EXIT_BATCH_FAILURES if any_failures else EXIT_OK


def _event_subject(payload: dict[str, Any]) -> int | None:
    for key in ("crew", "crew_index", "agent_index"):
        if payload.get(key) is not None:
            return payload[key]
    return None


def cmd_inspect(args: argparse.Namespace) -> int:
    try:
        if args.what == "pool":
            path = args.path
            if path.is_dir():
                path = pool_path(path)
            if not path.exists():
                print("empty pool")
                return EXIT_OK
            pool = load_or_empty(path)
            if not pool.entries:
                print("empty pool")
                return EXIT_OK
            newest = pool.entries[-1].created_seq
            for e in pool.entries:
                origin = e.origin_run_id
                if e.origin_agent is not None:
                    origin += f"/agent{e.origin_agent}/t{e.origin_turn}"
                print(f"[{e.created_seq:4d}] age={newest - e.created_seq:<4d} {origin}: {e.text}")
            print(f"{len(pool.entries)} entr{'y' if len(pool.entries) == 1 else 'ies'}")
            return EXIT_OK
        transcript = RunTranscript.read_jsonl(args.path)
        shown = 0
        for event in transcript.events:
            payload = event["payload"]
            if args.kind and not (
                event["event_kind"] == "backend_call" and payload.get("call_kind") == args.kind
            ):
                continue
            if args.crew is not None and _event_subject(payload) != args.crew:
                continue
            if args.turn is not None and payload.get("turn") != args.turn:
                continue
            kind = payload.get("call_kind", event["event_kind"])
            subject = _event_subject(payload)
            text = ""
            if event["event_kind"] == "backend_call":
                text = payload["response"]["text"]
            elif "text" in payload:
                text = payload["text"]
            preview = text.replace("\n", " ")[:80]
            print(
                f"[{event['seq']:4d}] {kind:18s} crew={'-' if subject is None else subject} "
                f"turn={'-' if payload.get('turn') is None else payload.get('turn')} {preview}"
            )
            shown += 1
        print(f"{shown} event(s)")
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001
        return _fail(exc, "inspect")


def cmd_score(args: argparse.Namespace) -> int:
    try:
        if not args.story_file.exists():
            raise SchemaError("story", f"file not found: {args.story_file}")
        story = args.story_file.read_text(encoding="utf-8")
        doc = _load_json(args.answers_file, "answers")
        raw_sets = doc.get("answers") if isinstance(doc, dict) else doc
        if not isinstance(raw_sets, list) or not raw_sets:
            raise SchemaError("answers", "expected a nonempty array of alias lists")
        answer_sets = []
        for i, entry in enumerate(raw_sets):
            if not isinstance(entry, list):
                raise SchemaError(f"answers[{i}]", "expected a list of aliases")
            aliases = tuple(
                normalize_alias(a) for a in entry if isinstance(a, str) and normalize_alias(a)
            )
            if not aliases:
                raise SchemaError(f"answers[{i}]", "empty answer set")
            answer_sets.append(AnswerSet(aliases))
    except Exception as exc:  # noqa: BLE001
        return _fail(exc, "load inputs")
    flags = metrics_mod.match_breakdown(story, answer_sets)
    for i, (matched, answer_set) in enumerate(zip(flags, answer_sets), start=1):
        state = "matched" if matched else "unmatched"
        print(f"question {i}: {state} ({' | '.join(answer_set.aliases)})")
    rate = metrics_mod.match_rate(story, answer_sets)
    print(f"M%: {rate:.1f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rea",
        description="Hierarchical multi-agent runs with three-level assessment "
        "and a dual-level experience pool.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one task")
    p_run.add_argument("task_file", type=Path)
    _add_shared_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_batch = sub.add_parser("batch", help="run a batch sharing one global pool")
    p_batch.add_argument("tasks_file", type=Path)
    _add_shared_flags(p_batch)
    p_batch.set_defaults(func=cmd_batch)

    p_ablate = sub.add_parser("ablate", help="run a batch once per ablation variant")
    p_ablate.add_argument("tasks_file", type=Path)
    p_ablate.add_argument(
        "--variants", nargs="+", default=["full"], metavar="VARIANT",
        help=f"one or more of: {', '.join(ABLATE_VARIANTS)}",
    )
    _add_shared_flags(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)

    p_inspect = sub.add_parser("inspect", help="inspect a pool or transcript file")
    p_inspect.add_argument("what", choices=("pool", "transcript"))
    p_inspect.add_argument("path", type=Path)
    p_inspect.add_argument("--kind", help="filter backend calls by call kind")
    p_inspect.add_argument("--crew", type=int)
    p_inspect.add_argument("--turn", type=int)
    p_inspect.set_defaults(func=cmd_inspect)

    p_score = sub.add_parser("score", help="score a story against answer sets")
    p_score.add_argument("story_file", type=Path)
    p_score.add_argument("answers_file", type=Path)
    p_score.set_defaults(func=cmd_score)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
