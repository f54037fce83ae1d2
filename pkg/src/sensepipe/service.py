"""Top-level pipeline orchestration plus the HTTP facade for annotators.

The task store behind the API is event-sourced: every mutation is committed
to the append-only log before it is applied, so the store can always be
rebuilt by replay. Request handlers may run concurrently; all mutations
funnel through the store lock around the log append.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence

from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .crowd import (
    DEFAULT_QUESTIONS,
    DuplicateWorkerError,
    QuestionSchema,
    Task,
    TaskStore,
    UnknownTaskError,
    ValidationFailure,
    create_tasks,
)
from .dedup import DedupReport, dedup_records
from .eventlog import EventLog, iter_entries
from .filter_chain import ChainResult, FilterPlugin, load_chain, load_labels, run_chain
from .geocode import GeoResolution, load_gazetteer, resolve_all
from .indicators import compute_indicators
from .ingest import CrawlSpec, PostRecord, SkipReport, filter_crawl, parse_crawl_path


# ---------------------------------------------------------------------------
# Pipeline runner


class PipelineStageError(Exception):
    def __init__(self, stage: str, cause: Exception, funnel: "FunnelReport"):
        super().__init__(f"pipeline stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.funnel = funnel


@dataclass
class FunnelReport:
    """Per-stage record counts. The crowd-dependent stages stay None until
    aggregation has run."""

    crawled: Optional[int] = None
    eligible: Optional[int] = None
    after_url_dedup: Optional[int] = None
    after_phash_dedup: Optional[int] = None
    after_filters: Optional[int] = None
    geolocated: Optional[int] = None
    tasks: Optional[int] = None
    annotated: Optional[int] = None
    location_validated: Optional[int] = None

    def to_json_dict(self) -> dict:
        return dict(self.__dict__)

    def format_table(self) -> str:
        return format_funnel_table(
            self.crawled, self.after_filters, self.geolocated,
            self.annotated, self.location_validated,
        )


_FUNNEL_LABELS = (
    "crawled posts with images",
    "after deduplication and image filters",
    "after automated geolocating",
    "annotated via crowdsourcing",
    "with location validated by crowd",
)


def format_funnel_table(*stage_counts: Optional[int]) -> str:
    """Fixed five-row funnel table; unfilled stages render as a dash."""
    if len(stage_counts) != len(_FUNNEL_LABELS):
        raise ValueError(f"expected {len(_FUNNEL_LABELS)} stage counts")
    rendered = [f"{c:,}" if c is not None else "-" for c in stage_counts]
    width = max(len(v) for v in rendered)
    label_width = max(len(label) for label in _FUNNEL_LABELS)
    lines = [f"{'stage of pipeline':<{label_width}}  {'posts':>{width}}"]
    for label, value in zip(_FUNNEL_LABELS, rendered):
        lines.append(f"{label:<{label_width}}  {value:>{width}}")
    return "\n".join(lines)


def default_chain_config() -> list[dict]:
    """Oracle filter chain in the cost-optimal order for the published
    profiles: photo first, then person count, scene, NSFW last."""
    return [
        {"name": "photo", "kind": "oracle", "params": {"role": "photo"}},
        {"name": "person", "kind": "oracle", "params": {"role": "person"}},
        {"name": "scene", "kind": "oracle", "params": {"role": "scene"}},
        {"name": "nsfw", "kind": "oracle", "params": {"role": "nsfw"}},
    ]


@dataclass
class PipelineConfig:
    input_path: Path
    images_dir: Path
    gazetteer_path: Path
    keywords: tuple[str, ...]
    labels_path: Optional[Path] = None
    chain_config: Optional[object] = None  # path or parsed list; None = default oracle chain
    window: Optional[tuple[datetime, datetime]] = None
    phash_threshold: int = 0
    seed: int = 0
    redundancy: int = 3
    out_dir: Optional[Path] = None


@dataclass
class PipelineResult:
    funnel: FunnelReport
    records_by_id: dict[str, PostRecord]
    kept_records: list[PostRecord]
    resolutions: list[GeoResolution]
    tasks: list[Task]
    skip_report: Optional[SkipReport] = None
    dedup_report: Optional[DedupReport] = None
    chain_result: Optional[ChainResult] = None
    unresolved: list[tuple[str, str]] = field(default_factory=list)


def pipeline_run(config: PipelineConfig) -> PipelineResult:
    """Ingest -> dedup -> filter chain -> geocode -> task creation, counting
    records after every stage. A fatal stage error aborts with the stage name
    and the partial funnel."""
    funnel = FunnelReport()

    def fail(stage: str, exc: Exception) -> PipelineStageError:
        return PipelineStageError(stage, exc, funnel)

    try:
        records, skip_report = parse_crawl_path(config.input_path)
        funnel.crawled = len(records) + skip_report.total
        spec = CrawlSpec(keywords=frozenset(config.keywords), time_window=config.window)
        eligible = filter_crawl(records, spec)
        funnel.eligible = len(eligible)
    except Exception as exc:
        raise fail("ingest", exc) from exc

    try:
        deduped, dedup_report = dedup_records(
            eligible, config.images_dir, threshold=config.phash_threshold
        )
        funnel.after_url_dedup = funnel.eligible - dedup_report.url_duplicates_removed
        funnel.after_phash_dedup = len(deduped)
    except Exception as exc:
        raise fail("dedup", exc) from exc

    chain: Sequence[FilterPlugin] = []
    try:
        labels = load_labels(config.labels_path) if config.labels_path else None
        chain = load_chain(
            config.chain_config if config.chain_config is not None else default_chain_config(),
            labels=labels,
        )
        chain_result = run_chain(deduped, chain, config.images_dir)
        funnel.after_filters = len(chain_result.kept)
    except Exception as exc:
        raise fail("filter", exc) from exc
    finally:
        for plugin in chain:
            plugin.close()

    try:
        gazetteer = load_gazetteer(config.gazetteer_path)
        resolutions, unresolved = resolve_all(chain_result.kept, gazetteer, config.seed)
        funnel.geolocated = len(resolutions)
    except Exception as exc:
        raise fail("geocode", exc) from exc

    try:
        records_by_id = {r.post_id: r for r in records}
        tasks = create_tasks(resolutions, records_by_id, redundancy=config.redundancy)
        funnel.tasks = len(tasks)
    except Exception as exc:
        raise fail("tasks", exc) from exc

    result = PipelineResult(
        funnel=funnel,
        records_by_id=records_by_id,
        kept_records=chain_result.kept,
        resolutions=resolutions,
        tasks=tasks,
        skip_report=skip_report,
        dedup_report=dedup_report,
        chain_result=chain_result,
        unresolved=unresolved,
    )
    if config.out_dir is not None:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "funnel.json").write_text(
            json.dumps(funnel.to_json_dict(), indent=2), encoding="utf-8"
        )
        with open(out / "tasks.jsonl", "w", encoding="utf-8") as fh:
            for task in tasks:
                fh.write(json.dumps(task.to_json_dict(), ensure_ascii=False) + "\n")
        with open(out / "resolutions.jsonl", "w", encoding="utf-8") as fh:
            for resolution in resolutions:
                fh.write(json.dumps(resolution.to_json_dict(), ensure_ascii=False) + "\n")
    return result


def finish_funnel(funnel: FunnelReport, store: TaskStore, **veto_options) -> FunnelReport:
    """Fill the crowd-dependent stages once annotation has happened."""
    aggregated = store.aggregate_all(**veto_options)
    funnel.annotated = len(aggregated)
    funnel.location_validated = sum(1 for a in aggregated if a.location_valid)
    return funnel


# ---------------------------------------------------------------------------
# Store persistence helpers


def open_store(log_path: str | Path, schema: QuestionSchema = DEFAULT_QUESTIONS,
               snapshot_path: Optional[str | Path] = None) -> TaskStore:
    """Load the store and attach a writer so new events append after the
    recovered tail. With a snapshot, only log entries past the snapshot's
    sequence anchor are replayed; the log stays the source of truth."""
    log_path = Path(log_path)
    snapshot = Path(snapshot_path) if snapshot_path else None
    if snapshot is not None and snapshot.exists():
        state = json.loads(snapshot.read_text(encoding="utf-8"))
        store = TaskStore.from_snapshot(state, schema=schema)
        if log_path.exists():
            for entry in iter_entries(log_path):
                if entry.seq > store.last_seq:
                    store.apply(entry)
    elif log_path.exists():
        store = TaskStore.replay(log_path, schema=schema)
    else:
        store = TaskStore(schema=schema)
    store.log = EventLog(log_path)
    return store


def write_snapshot(store: TaskStore, path: str | Path) -> None:
    """Persist the store state anchored at its last committed event."""
    if store.log is None:
        raise ValueError("snapshots need a log-backed store")
    Path(path).write_text(
        json.dumps(store.snapshot_state(), ensure_ascii=False), encoding="utf-8"
    )


def replay(log_path: str | Path, schema: QuestionSchema = DEFAULT_QUESTIONS,
           allow_torn_tail: bool = True) -> TaskStore:
    return TaskStore.replay(log_path, schema=schema, allow_torn_tail=allow_torn_tail)


def verify_log(log_path: str | Path) -> int:
    """Entry count if the log is well-formed; raises LogCorruptionError."""
    count = 0
    for _ in iter_entries(log_path, allow_torn_tail=False):
        count += 1
    return count


# ---------------------------------------------------------------------------
# HTTP facade


class AnswerSubmission(BaseModel):
    worker_id: str
    values: dict[str, Optional[str]]


class FlagSubmission(BaseModel):
    worker_id: str
    reason: Optional[str] = None


def _task_view(task: Task) -> dict:
    view = task.to_json_dict()
    view["image_url"] = f"/images/{task.image_path}" if task.image_path else None
    return view


def create_app(
    store: Optional[TaskStore],
    images_dir: Optional[str | Path] = None,
    static_dir: Optional[str | Path] = None,
    flags_path: Optional[str | Path] = None,
) -> FastAPI:
    app = FastAPI(title="sensepipe annotation service")
    app.state.store = store
    app.state.flags = []
    app.state.flags_path = Path(flags_path) if flags_path else None

    class StoreUnavailable(Exception):
        pass

    def current_store() -> TaskStore:
        s = app.state.store
        if s is None:
            raise StoreUnavailable()
        return s

    @app.exception_handler(StoreUnavailable)
    async def _unavailable(request: Request, exc: StoreUnavailable):
        return JSONResponse(status_code=503, content={"detail": "task store unavailable"})

    @app.exception_handler(UnknownTaskError)
    async def _unknown(request: Request, exc: UnknownTaskError):
        return JSONResponse(status_code=404, content={"detail": f"unknown task {exc}"})

    @app.exception_handler(DuplicateWorkerError)
    async def _duplicate(request: Request, exc: DuplicateWorkerError):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(ValidationFailure)
    async def _invalid(request: Request, exc: ValidationFailure):
        return JSONResponse(
            status_code=422,
            content={"errors": [{"field": e.field, "message": e.message} for e in exc.errors]},
        )

    @app.get("/api/tasks/next")
    def next_task(worker: str = Query(..., min_length=1), exclude: str = ""):
        excluded = [t for t in exclude.split(",") if t]
        task = current_store().next_task(worker, exclude=excluded)
        if task is None:
            return Response(status_code=204)
        return _task_view(task)

    @app.get("/api/schema")
    def schema():
        s = current_store().schema
        return {
            "questions": [
                {
                    "qid": q.qid,
                    "text": q.text,
                    "options": list(q.options),
                    "guard": (
                        {"qid": q.guard[0], "values": sorted(q.guard[1])} if q.guard else None
                    ),
                }
                for q in s.questions
            ]
        }

    @app.post("/api/tasks/{task_id}/answers", status_code=201)
    def submit_answers(task_id: str, submission: AnswerSubmission):
        from .crowd import submit as store_submit

        task = store_submit(current_store(), task_id, submission.worker_id, submission.values)
        return {"accepted": True, "task": _task_view(task)}

    @app.post("/api/tasks/{task_id}/flag", status_code=204)
    def flag_task(task_id: str, submission: FlagSubmission):
        current_store().get_task(task_id)  # 404 on unknown task
        flag = {"task_id": task_id, "worker_id": submission.worker_id,
                "reason": submission.reason}
        app.state.flags.append(flag)
        if app.state.flags_path is not None:
            with open(app.state.flags_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(flag, ensure_ascii=False) + "\n")
        return Response(status_code=204)

    @app.get("/api/progress")
    def progress():
        return current_store().progress()

    @app.get("/api/indicators")
    def indicators(question: str = "q4", threshold: int = 50):
        s = current_store()
        aggregated = s.aggregate_all()
        countries = {t.post_id: t.country for t in s.tasks()}
        table = compute_indicators(
            aggregated, countries, question_id=question, threshold=threshold,
            schema=s.schema,
        )
        return table.to_json_dict()

    if images_dir is not None:
        app.mount("/images", StaticFiles(directory=str(images_dir)), name="images")
    if static_dir is not None:
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    return app


def serve(store: TaskStore, host: str = "127.0.0.1", port: int = 8000,
          images_dir: Optional[str | Path] = None,
          static_dir: Optional[str | Path] = None,
          flags_path: Optional[str | Path] = None,
          snapshot_path: Optional[str | Path] = None) -> None:
    import uvicorn

    app = create_app(store, images_dir=images_dir, static_dir=static_dir,
                     flags_path=flags_path)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        if snapshot_path is not None:
            write_snapshot(store, snapshot_path)
