"""Command-line umbrella for the pipeline stages and the annotation service.

A single TOML or JSON config file may provide per-command defaults; any flag
given on the command line wins. Paths that are not absolute are resolved
against --data-dir (or the SENSEPIPE_DATA environment variable).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

from . import crowd, indicators as indicators_mod, service, simcrowd
from .dedup import dedup_records
from .filter_chain import load_chain, load_labels, optimize_order, profile_filters, run_chain
from .geocode import load_gazetteer, resolve_all
from .ingest import CrawlSpec, filter_crawl, parse_crawl_path, parse_timestamp, write_jsonl

DATA_DIR_ENV = "SENSEPIPE_DATA"


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith(".json"):
        return json.loads(text)
    try:
        import tomllib  # type: ignore[import-not-found]
    except ModuleNotFoundError:
        import tomli as tomllib  # type: ignore[no-redef]
    return tomllib.loads(text)


def _apply_config(args: argparse.Namespace, config: dict) -> None:
    section = config.get(args.command, {})
    for key, value in section.items():
        attr = key.replace("-", "_")
        if getattr(args, attr, None) is None:
            setattr(args, attr, value)


def _data_path(args: argparse.Namespace, value: Optional[str]) -> Optional[Path]:
    if value is None:
        return None
    path = Path(value)
    if path.is_absolute():
        return path
    base = args.data_dir or os.environ.get(DATA_DIR_ENV)
    return Path(base) / path if base else path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sensepipe")
    parser.add_argument("--config", help="TOML/JSON config file with per-command defaults")
    parser.add_argument("--data-dir", help=f"base for relative paths (default: ${DATA_DIR_ENV})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a crawl file and apply eligibility rules")
    p.add_argument("--input", required=True)
    p.add_argument("--keywords", help="comma-separated keyword list")
    p.add_argument("--from", dest="window_from", help="ISO-8601 window start")
    p.add_argument("--to", dest="window_to", help="ISO-8601 window end")
    p.add_argument("--output", help="output JSONL (default: stdout)")

    p = sub.add_parser("dedup", help="remove URL and near-duplicate images")
    p.add_argument("--input", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--threshold", type=int, default=0)
    p.add_argument("--output", help="kept records JSONL (default: stdout)")
    p.add_argument("--report", help="write the dedup report JSON here")

    p = sub.add_parser("filter", help="run the image filter chain")
    p.add_argument("--input", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--chain", help="chain config JSON (default: built-in oracle chain)")
    p.add_argument("--labels", help="ground-truth labels JSONL for oracle filters")
    p.add_argument("--optimize-order", action="store_true",
                   help="profile then reorder the chain before running it")
    p.add_argument("--profile-sample", type=int, default=1000)
    p.add_argument("--output", help="kept records JSONL (default: stdout)")

    p = sub.add_parser("geocode", help="assign countries via the gazetteer")
    p.add_argument("--input", required=True)
    p.add_argument("--gazetteer", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", help="resolutions JSONL (default: stdout)")

    p = sub.add_parser("tasks", help="task store operations")
    p.add_argument("action", choices=["create", "status", "aggregate"])
    p.add_argument("--log", required=True, help="task event log (JSONL)")
    p.add_argument("--resolutions", help="resolutions JSONL (for create)")
    p.add_argument("--records", help="records JSONL (for create)")
    p.add_argument("--redundancy", type=int, default=3)
    p.add_argument("--output", help="aggregate output JSONL (default: stdout)")

    p = sub.add_parser("aggregate", help="majority-aggregate completed tasks")
    p.add_argument("--log", required=True)
    p.add_argument("--output", help="aggregate output JSONL (default: stdout)")

    p = sub.add_parser("serve", help="run the annotation HTTP service")
    p.add_argument("--log", required=True)
    p.add_argument("--images")
    p.add_argument("--static", help="annotator UI bundle directory")
    p.add_argument("--flags", help="sidecar file for task flags")
    p.add_argument("--snapshot", help="load from / write back a state snapshot")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    p = sub.add_parser("indicators", help="compute, compare, or export indicators")
    p.add_argument("action", choices=["compute", "compare", "export"])
    p.add_argument("--log", required=True)
    p.add_argument("--question", default="q4")
    p.add_argument("--threshold", type=int, default=50)
    p.add_argument("--survey", help="survey CSV (for compare)")
    p.add_argument("--boundaries", help="country boundary GeoJSON (for export)")
    p.add_argument("--out-dir", help="export output directory")

    p = sub.add_parser("simulate", help="run simulated annotators")
    p.add_argument("--log", help="task event log (direct-store mode)")
    p.add_argument("--truth", required=True, help="ground-truth JSONL")
    p.add_argument("--workers", type=int, default=5)
    p.add_argument("--accuracy", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target", help="service URL (HTTP mode)")

    p = sub.add_parser("pipeline", help="run ingest through task creation")
    p.add_argument("--input", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--gazetteer", required=True)
    p.add_argument("--keywords", required=True)
    p.add_argument("--labels")
    p.add_argument("--chain")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=int, default=0, help="near-duplicate Hamming threshold")
    p.add_argument("--redundancy", type=int, default=3)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--log", help="also create tasks in this event log")
    return parser


def _emit_records(records, output: Optional[Path]) -> None:
    if output:
        write_jsonl(records, output)
    else:
        from .ingest import serialize_records

        for line in serialize_records(records):
            print(line)


def cmd_ingest(args) -> int:
    records, skipped = parse_crawl_path(_data_path(args, args.input))
    keywords = frozenset(k.strip() for k in (args.keywords or "").split(",") if k.strip())
    if not keywords:
        print("ingest: --keywords is required", file=sys.stderr)
        return 2
    window = None
    if args.window_from or args.window_to:
        if not (args.window_from and args.window_to):
            print("ingest: --from and --to must be given together", file=sys.stderr)
            return 2
        window = (parse_timestamp(args.window_from), parse_timestamp(args.window_to))
    kept = filter_crawl(records, CrawlSpec(keywords=keywords, time_window=window))
    _emit_records(kept, _data_path(args, args.output))
    print(json.dumps(skipped.to_json_dict()), file=sys.stderr)
    return 0


def cmd_dedup(args) -> int:
    records, _ = parse_crawl_path(_data_path(args, args.input))
    kept, report = dedup_records(records, _data_path(args, args.images), args.threshold)
    _emit_records(kept, _data_path(args, args.output))
    report_json = json.dumps(report.to_json_dict(), indent=2)
    if args.report:
        _data_path(args, args.report).write_text(report_json, encoding="utf-8")
    else:
        print(report_json, file=sys.stderr)
    return 0


def cmd_filter(args) -> int:
    records, _ = parse_crawl_path(_data_path(args, args.input))
    labels = load_labels(_data_path(args, args.labels)) if args.labels else None
    chain_config = args.chain or service.default_chain_config()
    chain = load_chain(chain_config, labels=labels)
    try:
        if args.optimize_order:
            sample = records[: args.profile_sample]
            profiles = profile_filters(sample, chain, _data_path(args, args.images))
            order = optimize_order(profiles)
            print(f"optimized order: {' -> '.join(order)}", file=sys.stderr)
            by_name = {p.name: p for p in chain}
            chain = [by_name[name] for name in order]
        result = run_chain(records, chain, _data_path(args, args.images))
    finally:
        for plugin in chain:
            plugin.close()
    _emit_records(result.kept, _data_path(args, args.output))
    for stats in result.stage_stats:
        print(
            f"{stats.filter_name}: removed {stats.removal_rate:.1%} of "
            f"{stats.sample_size} at {stats.mean_cost * 1000:.2f} ms/image",
            file=sys.stderr,
        )
    return 0


def cmd_geocode(args) -> int:
    records, _ = parse_crawl_path(_data_path(args, args.input))
    gazetteer = load_gazetteer(_data_path(args, args.gazetteer))
    resolutions, unresolved = resolve_all(records, gazetteer, args.seed)
    lines = (json.dumps(r.to_json_dict(), ensure_ascii=False) for r in resolutions)
    output = _data_path(args, args.output)
    if output:
        output.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        for line in lines:
            print(line)
    print(json.dumps({"resolved": len(resolutions), "unresolved": len(unresolved)}),
          file=sys.stderr)
    return 0


def _load_resolutions(path: Path) -> list:
    from .geocode import GazetteerEntry, GeoResolution

    resolutions = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            entry = GazetteerEntry(
                name=obj["display_name"].rsplit(" (", 1)[0],
                lat=obj["chosen"]["lat"], lon=obj["chosen"]["lon"],
                country=obj["country"],
            )
            resolutions.append(GeoResolution(
                post_id=obj["post_id"], candidates=(entry,), chosen=entry,
                country=obj["country"], source=obj["source"],
                display_name=obj["display_name"],
            ))
    return resolutions


def cmd_tasks(args) -> int:
    log_path = _data_path(args, args.log)
    if args.action == "create":
        if not (args.resolutions and args.records):
            print("tasks create: --resolutions and --records required", file=sys.stderr)
            return 2
        records, _ = parse_crawl_path(_data_path(args, args.records))
        resolutions = _load_resolutions(_data_path(args, args.resolutions))
        tasks = crowd.create_tasks(resolutions, {r.post_id: r for r in records},
                                   redundancy=args.redundancy)
        store = service.open_store(log_path)
        store.add_tasks(tasks)
        print(json.dumps(store.progress()))
        return 0
    store = service.replay(log_path)
    if args.action == "status":
        print(json.dumps(store.progress()))
        return 0
    return _write_aggregates(store, _data_path(args, args.output))


def _write_aggregates(store, output: Optional[Path]) -> int:
    lines = [json.dumps(a.to_json_dict(), ensure_ascii=False) for a in store.aggregate_all()]
    if output:
        output.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    else:
        for line in lines:
            print(line)
    return 0


def cmd_aggregate(args) -> int:
    store = service.replay(_data_path(args, args.log))
    return _write_aggregates(store, _data_path(args, args.output))


def cmd_serve(args) -> int:
    snapshot = _data_path(args, args.snapshot)
    store = service.open_store(_data_path(args, args.log), snapshot_path=snapshot)
    service.serve(
        store,
        host=args.host,
        port=args.port,
        images_dir=_data_path(args, args.images),
        static_dir=_data_path(args, args.static),
        flags_path=_data_path(args, args.flags),
        snapshot_path=snapshot,
    )
    return 0


def cmd_indicators(args) -> int:
    store = service.replay(_data_path(args, args.log))
    aggregated = store.aggregate_all()
    countries = {t.post_id: t.country for t in store.tasks()}
    table = indicators_mod.compute_indicators(
        aggregated, countries, question_id=args.question, threshold=args.threshold,
        schema=store.schema,
    )
    if args.action == "compute":
        print(json.dumps(table.to_json_dict(), indent=2))
        return 0
    if args.action == "compare":
        if not args.survey:
            print("indicators compare: --survey required", file=sys.stderr)
            return 2
        survey = indicators_mod.load_survey_csv(_data_path(args, args.survey))
        reports = indicators_mod.compare(table, survey)
        print(json.dumps([r.to_json_dict() for r in reports], indent=2))
        return 0
    out_dir = _data_path(args, args.out_dir) or Path("indicator-export")
    export = indicators_mod.export_choropleth(
        table, _data_path(args, args.boundaries), out_dir
    )
    for warning in export.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(json.dumps({
        "csv": str(export.csv_path),
        "geojson": str(export.geojson_path),
        "html": str(export.html_path),
    }))
    return 0


def _load_truth(path: Path) -> dict[str, dict]:
    truth = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                truth[obj["post_id"]] = obj.get("answers", {})
    return truth


def cmd_simulate(args) -> int:
    truth = _load_truth(_data_path(args, args.truth))
    config = simcrowd.SimWorkerConfig(
        worker_count=args.workers, accuracy=args.accuracy, seed=args.seed
    )
    if args.target:
        submitted = _simulate_http(args.target, truth, config)
    else:
        if not args.log:
            print("simulate: --log or --target required", file=sys.stderr)
            return 2
        store = service.open_store(_data_path(args, args.log))
        submitted = simcrowd.simulate(store, truth, config)
        print(json.dumps(store.progress()), file=sys.stderr)
    print(json.dumps({"submitted": submitted}))
    return 0


def _simulate_http(base_url: str, truth: dict, config: simcrowd.SimWorkerConfig) -> int:
    """Drive a running service over HTTP with the same scheduling loop the
    direct mode uses."""
    import urllib.error
    import urllib.request

    def get_json(url: str):
        with urllib.request.urlopen(url) as resp:
            if resp.status == 204:
                return None
            return json.loads(resp.read().decode("utf-8"))

    def post_json(url: str, payload: dict) -> int:
        data = json.dumps(payload).encode("utf-8")
        request = urllib.request.Request(
            url, data=data, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(request) as resp:
                return resp.status
        except urllib.error.HTTPError as exc:
            return exc.code

    schema = crowd.DEFAULT_QUESTIONS
    submitted = 0
    workers = simcrowd.worker_ids(config)
    progressed = True
    while progressed:
        progressed = False
        for worker_id in workers:
            view = get_json(f"{base_url}/api/tasks/next?worker={worker_id}")
            if view is None:
                continue
            task = crowd.Task.from_json_dict({k: view[k] for k in (
                "task_id", "post_id", "image_path", "tweet_text", "country",
                "display_name", "redundancy", "completions", "status",
            )})
            answers = simcrowd.simulate_answer_set(
                task, truth.get(task.post_id, {}), worker_id, config, schema
            )
            status = post_json(
                f"{base_url}/api/tasks/{task.task_id}/answers",
                {"worker_id": worker_id, "values": answers.values},
            )
            if status == 201:
                submitted += 1
                progressed = True
    return submitted


def cmd_pipeline(args) -> int:
    config = service.PipelineConfig(
        input_path=_data_path(args, args.input),
        images_dir=_data_path(args, args.images),
        gazetteer_path=_data_path(args, args.gazetteer),
        keywords=tuple(k.strip() for k in args.keywords.split(",") if k.strip()),
        labels_path=_data_path(args, args.labels),
        chain_config=args.chain,
        phash_threshold=args.threshold,
        seed=args.seed,
        redundancy=args.redundancy,
        out_dir=_data_path(args, args.out_dir),
    )
    result = service.pipeline_run(config)
    if args.log:
        store = service.open_store(_data_path(args, args.log))
        store.add_tasks(result.tasks)
    print(result.funnel.format_table())
    return 0


_COMMANDS = {
    "ingest": cmd_ingest,
    "dedup": cmd_dedup,
    "filter": cmd_filter,
    "geocode": cmd_geocode,
    "tasks": cmd_tasks,
    "aggregate": cmd_aggregate,
    "serve": cmd_serve,
    "indicators": cmd_indicators,
    "simulate": cmd_simulate,
    "pipeline": cmd_pipeline,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_config(args, _load_config(args.config))
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
