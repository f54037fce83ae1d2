#!/usr/bin/env python3
"""Seed a small synthetic corpus and serve the annotation API for UI tests.

Usage: devserver.py --port 8741 --dir .devserver [--fresh]
Prints READY on stdout once the store is loaded, then serves until killed.
"""

import argparse
import shutil
from pathlib import Path

from sensepipe.crowd import TaskStore
from sensepipe.eventlog import EventLog
from sensepipe.service import PipelineConfig, create_app, pipeline_run
from sensepipe.synth import CRAWL_KEYWORDS, CorpusSpec, generate_corpus


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--port", type=int, default=8741)
    parser.add_argument("--dir", default=".devserver")
    parser.add_argument("--fresh", action="store_true")
    args = parser.parse_args()

    base = Path(args.dir)
    if args.fresh and base.exists():
        shutil.rmtree(base)
    base.mkdir(parents=True, exist_ok=True)

    manifest = generate_corpus(CorpusSpec(n_records=300, seed=77), base)
    result = pipeline_run(PipelineConfig(
        input_path=manifest.posts_path,
        images_dir=manifest.images_dir,
        gazetteer_path=manifest.gazetteer_path,
        keywords=CRAWL_KEYWORDS,
        labels_path=manifest.truth_path,
    ))
    log_path = base / "events.jsonl"
    if log_path.exists():
        log_path.unlink()
    store = TaskStore(log=EventLog(log_path))
    store.add_tasks(result.tasks)

    dist = Path(__file__).resolve().parent.parent / "dist"
    app = create_app(
        store,
        images_dir=manifest.images_dir,
        static_dir=dist if dist.exists() else None,
        flags_path=base / "flags.jsonl",
    )
    print(f"READY tasks={len(result.tasks)} port={args.port}", flush=True)

    import uvicorn

    uvicorn.run(app, host="127.0.0.1", port=args.port, log_level="warning")


if __name__ == "__main__":
    main()
