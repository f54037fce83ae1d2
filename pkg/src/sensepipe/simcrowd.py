"""Simulated annotators: configurable-accuracy workers against ground truth.

Each worker answers every visible question with the true value with
probability `accuracy`, otherwise uniformly with one of the remaining
options. Errors on a guard question cascade: questions the (wrong) answer
hides are nulled, so every simulated submission satisfies the conditional
schema. Streams are deterministic per (seed, worker, task), independent of
scheduling order.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Mapping, Optional

from .crowd import (
    AnnotationAnswers,
    ContractError,
    DEFAULT_QUESTIONS,
    QuestionSchema,
    Task,
    TaskStore,
)


@dataclass(frozen=True)
class SimWorkerConfig:
    worker_count: int
    accuracy: float
    seed: int

    def __post_init__(self) -> None:
        if self.worker_count < 1:
            raise ContractError("worker_count must be >= 1")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ContractError("accuracy must be in [0, 1]")


def worker_ids(config: SimWorkerConfig) -> list[str]:
    return [f"sim-{i:04d}" for i in range(config.worker_count)]


def answer_question(truth: Optional[str], options: tuple[str, ...],
                    accuracy: float, rng: random.Random) -> str:
    """True value with probability `accuracy`, else a uniform draw from the
    other options. Unknown truth degrades to a uniform draw over all."""
    if truth is None or truth not in options:
        return options[rng.randrange(len(options))]
    if len(options) == 1 or rng.random() < accuracy:
        return truth
    others = [o for o in options if o != truth]
    return others[rng.randrange(len(others))]


def simulate_answer_set(
    task: Task,
    truth_values: Mapping[str, Optional[str]],
    worker_id: str,
    config: SimWorkerConfig,
    schema: QuestionSchema = DEFAULT_QUESTIONS,
) -> AnnotationAnswers:
    """One worker's full answer sheet for one task, schema-consistent by
    construction: visibility is re-derived from the answers actually given."""
    rng = random.Random(f"{config.seed}:{worker_id}:{task.task_id}")
    values: dict[str, Optional[str]] = {}
    for question in schema.questions:
        visible = True
        if question.guard is not None:
            guard_qid, allowed = question.guard
            visible = values.get(guard_qid) in allowed
        if not visible:
            values[question.qid] = None
            continue
        values[question.qid] = answer_question(
            truth_values.get(question.qid), question.options, config.accuracy, rng
        )
    return AnnotationAnswers(
        worker_id=worker_id,
        values=values,
        submitted_at=f"sim:{config.seed}:{worker_id}:{task.task_id}",
    )


def simulate(
    store: TaskStore,
    truth_by_post: Mapping[str, Mapping[str, Optional[str]]],
    config: SimWorkerConfig,
) -> int:
    """Drive the real checkout/submit path until no worker has an eligible
    task left. Returns the number of submitted answer sets. Needs
    worker_count >= redundancy to complete every task."""
    for task in store.tasks():
        if task.post_id not in truth_by_post:
            raise ContractError(f"no ground truth for task {task.task_id}")
    workers = worker_ids(config)
    submitted = 0
    progressed = True
    while progressed:
        progressed = False
        for worker_id in workers:
            task = store.next_task(worker_id)
            if task is None:
                continue
            answers = simulate_answer_set(
                task, truth_by_post[task.post_id], worker_id, config, store.schema
            )
            store.submit_answers(task.task_id, answers)
            submitted += 1
            progressed = True
    return submitted
