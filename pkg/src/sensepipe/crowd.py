"""Annotation tasks, conditional answer validation, and majority aggregation.

The questionnaire is a guarded tree: a question is only visible when the
answer to its guard question enables it, and hidden questions must be null
in a submission. Aggregation takes the strictly most frequent non-null value
per question from the first `redundancy` answer sets; exact ties never
fabricate a majority and come back as UNRESOLVED. A single "Surely not" on
the location-check question vetoes the post's location by default.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import threading
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Iterable, Mapping, Optional, Sequence

from .eventlog import (
    EventLog,
    EventLogEntry,
    KIND_ANSWER_SUBMITTED,
    KIND_TASK_COMPLETED,
    KIND_TASK_CREATED,
    iter_entries,
)
from .geocode import GeoResolution
from .ingest import PostRecord

UNRESOLVED = "UNRESOLVED"

# Version tag carried by task and answer JSON so consumers can detect
# incompatible schema changes.
SCHEMA_VERSION = 1

STATUS_OPEN = "open"
STATUS_COMPLETE = "complete"

VETO_ANY = "any"
VETO_MAJORITY = "majority"

DEFAULT_REDUNDANCY = 3


class ContractError(Exception):
    pass


class UnknownTaskError(Exception):
    pass


class DuplicateWorkerError(Exception):
    pass


@dataclass(frozen=True)
class FieldError:
    field: str
    message: str


class ValidationFailure(Exception):
    def __init__(self, errors: list[FieldError]):
        super().__init__("; ".join(f"{e.field}: {e.message}" for e in errors))
        self.errors = errors


@dataclass(frozen=True)
class Question:
    qid: str
    text: str
    options: tuple[str, ...]
    # Visible only when the guard question's answer is in the allowed set.
    guard: Optional[tuple[str, frozenset[str]]] = None


@dataclass(frozen=True)
class QuestionSchema:
    questions: tuple[Question, ...]

    def __post_init__(self) -> None:
        seen = set()
        for q in self.questions:
            if q.qid in seen:
                raise ContractError(f"duplicate question id {q.qid}")
            seen.add(q.qid)
            if q.guard is not None and q.guard[0] not in seen:
                raise ContractError(f"question {q.qid} guarded by a later question")

    def by_id(self, qid: str) -> Question:
        for q in self.questions:
            if q.qid == qid:
                return q
        raise KeyError(qid)

    @property
    def question_ids(self) -> tuple[str, ...]:
        return tuple(q.qid for q in self.questions)

    def visible_questions(self, values: Mapping[str, Optional[str]]) -> set[str]:
        """Guard closure: a question is visible iff its guard question is
        itself visible and answered with an enabling value."""
        visible: set[str] = set()
        for q in self.questions:
            if q.guard is None:
                visible.add(q.qid)
                continue
            guard_qid, allowed = q.guard
            if guard_qid in visible and values.get(guard_qid) in allowed:
                visible.add(q.qid)
        return visible

    def validate_values(self, values: Mapping[str, Optional[str]]) -> list[FieldError]:
        """Field errors for a submission: visible questions must carry a
        listed option, hidden ones must be null. Questions whose guard answer
        is itself invalid are skipped so only root causes are reported."""
        errors = []
        known = set(self.question_ids)
        for key in values:
            if key not in known:
                errors.append(FieldError(key, "unknown question"))
        visible: set[str] = set()
        broken: set[str] = set()
        for q in self.questions:
            if q.guard is not None and q.guard[0] in broken:
                broken.add(q.qid)
                continue
            is_visible = q.guard is None or (
                q.guard[0] in visible and values.get(q.guard[0]) in q.guard[1]
            )
            value = values.get(q.qid)
            if is_visible:
                visible.add(q.qid)
                if value is None:
                    errors.append(FieldError(q.qid, "answer required"))
                    broken.add(q.qid)
                elif value not in q.options:
                    errors.append(FieldError(q.qid, f"invalid option {value!r}"))
                    broken.add(q.qid)
            elif value is not None:
                guard_qid, _ = q.guard  # type: ignore[misc]
                errors.append(FieldError(
                    q.qid, f"must be null when {guard_qid} does not enable it"
                ))
        return errors


def _q(qid: str, text: str, options: Sequence[str],
       guard: Optional[tuple[str, Iterable[str]]] = None) -> Question:
    g = (guard[0], frozenset(guard[1])) if guard else None
    return Question(qid, text, tuple(options), g)


# The default annotation questionnaire, in presentation order. Later
# questions hang off earlier answers: everything needs q1=Yes, the
# people-related block needs q3=Yes, mask details need a mask to be present,
# and the place-type question needs q9=Yes.
DEFAULT_QUESTIONS = QuestionSchema((
    _q("q1", "Is this a photo (rather than a cartoon, graph, meme, etc.)?",
       ("Yes", "No", "Not Sure")),
    _q("q2", "Does it look like it has been taken recently (in the last three months)?",
       ("Yes", "No", "Cannot tell"), guard=("q1", ["Yes"])),
    _q("q3", "Are there people in this image?",
       ("Yes", "No", "Not Sure"), guard=("q1", ["Yes"])),
    _q("q4", "Are the people wearing masks?",
       ("Yes", "Some of them", "No", "Cannot tell"), guard=("q3", ["Yes"])),
    _q("q5", "If so, which type?",
       ("Scarf", "Cloth", "Surgical", "FP2", "FP3", "Gas mask", "Other", "Cannot tell"),
       guard=("q4", ["Yes", "Some of them"])),
    _q("q6", "Are the people wearing the mask correctly?",
       ("Yes", "No", "Only some of them", "Cannot tell", "Not sure"),
       guard=("q4", ["Yes", "Some of them"])),
    _q("q7", "How many people are there in the image?",
       ("1", "2", "3", "4", "5 or more"), guard=("q3", ["Yes"])),
    _q("q8", "Are they respecting social distance?",
       ("Yes", "No", "Cannot tell"), guard=("q3", ["Yes"])),
    _q("q9", "Are they in a public place (shops, outdoors, ...)?",
       ("Yes", "No", "Not sure"), guard=("q1", ["Yes"])),
    _q("q10", "If they are in a public place, what type?",
       ("street/square", "park", "shop", "hospital", "outdoors", "other", "cannot tell"),
       guard=("q9", ["Yes"])),
    _q("q11", "What are the people doing?",
       ("socializing", "exercizing", "shopping", "queuing", "volunteering",
        "protesting", "working", "other", "cannot tell"), guard=("q1", ["Yes"])),
    _q("q12", "We have associated a country or territory with this image. "
              "Do you think the picture was likely taken in this location?",
       ("Yes", "Maybe", "Surely not", "Cannot tell"), guard=("q1", ["Yes"])),
))

LOCATION_QUESTION = "q12"
LOCATION_VETO_OPTION = "Surely not"
MASK_QUESTION = "q4"


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass(frozen=True)
class AnnotationAnswers:
    """One worker's response to one task: a value (or null) per question."""

    worker_id: str
    values: dict[str, Optional[str]]
    submitted_at: str

    def __post_init__(self) -> None:
        if not self.worker_id:
            raise ContractError("worker_id must be non-empty")

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "worker_id": self.worker_id,
            "values": dict(self.values),
            "submitted_at": self.submitted_at,
        }


@dataclass(frozen=True)
class Task:
    task_id: str
    post_id: str
    image_path: Optional[str]
    tweet_text: str
    country: str
    display_name: str
    redundancy: int = DEFAULT_REDUNDANCY
    completions: int = 0
    status: str = STATUS_OPEN

    def __post_init__(self) -> None:
        if self.redundancy < 1:
            raise ContractError("redundancy must be >= 1")

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "task_id": self.task_id,
            "post_id": self.post_id,
            "image_path": self.image_path,
            "tweet_text": self.tweet_text,
            "country": self.country,
            "display_name": self.display_name,
            "redundancy": self.redundancy,
            "completions": self.completions,
            "status": self.status,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Task":
        return cls(
            task_id=obj["task_id"],
            post_id=obj["post_id"],
            image_path=obj.get("image_path"),
            tweet_text=obj["tweet_text"],
            country=obj["country"],
            display_name=obj["display_name"],
            redundancy=int(obj.get("redundancy", DEFAULT_REDUNDANCY)),
            completions=int(obj.get("completions", 0)),
            status=obj.get("status", STATUS_OPEN),
        )


@dataclass(frozen=True)
class AggregatedAnnotation:
    post_id: str
    values: dict[str, Optional[str]]  # majority value, UNRESOLVED, or None
    location_valid: bool
    contributing_workers: tuple[str, ...]

    def to_json_dict(self) -> dict:
        return {
            "post_id": self.post_id,
            "values": dict(self.values),
            "location_valid": self.location_valid,
            "contributing_workers": list(self.contributing_workers),
        }


def create_tasks(
    resolutions: Sequence[GeoResolution],
    records_by_id: Mapping[str, PostRecord],
    redundancy: int = DEFAULT_REDUNDANCY,
) -> list[Task]:
    """One open task per located post. Posts without a resolution never get a
    task; that filtering happens upstream by construction."""
    if redundancy < 1:
        raise ContractError("redundancy must be >= 1")
    tasks = []
    for resolution in resolutions:
        record = records_by_id.get(resolution.post_id)
        if record is None:
            raise ContractError(f"no record for resolved post {resolution.post_id}")
        tasks.append(Task(
            task_id=f"task-{resolution.post_id}",
            post_id=resolution.post_id,
            image_path=record.image_path,
            tweet_text=record.text,
            country=resolution.country,
            display_name=resolution.display_name,
            redundancy=redundancy,
        ))
    return tasks


def majority_value(values: Sequence[Optional[str]]) -> Optional[str]:
    """Strictly most frequent non-null value; UNRESOLVED on exact ties; None
    when every answer was null."""
    counts = Counter(v for v in values if v is not None)
    if not counts:
        return None
    ranked = counts.most_common()
    if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
        return UNRESOLVED
    return ranked[0][0]


def aggregate_answers(
    task: Task,
    answer_sets: Sequence[AnnotationAnswers],
    schema: QuestionSchema = DEFAULT_QUESTIONS,
    veto_question: str = LOCATION_QUESTION,
    veto_option: str = LOCATION_VETO_OPTION,
    veto_mode: str = VETO_ANY,
) -> AggregatedAnnotation:
    """Majority-merge the first `redundancy` answer sets for a task.

    With veto_mode "any" a single veto answer invalidates the location; with
    "majority" the veto option has to win the per-question majority.
    """
    if len(answer_sets) < task.redundancy:
        raise ContractError(
            f"task {task.task_id} has {len(answer_sets)} answers, needs {task.redundancy}"
        )
    used = list(answer_sets[: task.redundancy])
    values: dict[str, Optional[str]] = {}
    for q in schema.questions:
        values[q.qid] = majority_value([a.values.get(q.qid) for a in used])
    location_valid = True
    if any(q.qid == veto_question for q in schema.questions):
        if veto_mode == VETO_ANY:
            location_valid = all(a.values.get(veto_question) != veto_option for a in used)
        elif veto_mode == VETO_MAJORITY:
            location_valid = values.get(veto_question) != veto_option
        else:
            raise ContractError(f"unknown veto mode {veto_mode!r}")
    return AggregatedAnnotation(
        post_id=task.post_id,
        values=values,
        location_valid=location_valid,
        contributing_workers=tuple(a.worker_id for a in used),
    )


class TaskStore:
    """Task state with linearizable checkout and submission.

    All mutations funnel through a lock and, when a log is attached, are
    committed to the log before being applied, so replay always reconstructs
    the exact state. Surplus answers past a task's redundancy are stored for
    audit but excluded from aggregation in arrival order.
    """

    def __init__(self, schema: QuestionSchema = DEFAULT_QUESTIONS,
                 log: Optional[EventLog] = None):
        self.schema = schema
        self.log = log
        self.last_seq = 0  # highest committed/applied event, snapshot anchor
        self._lock = threading.RLock()
        self._tasks: dict[str, Task] = {}
        self._answers: dict[str, list[AnnotationAnswers]] = {}
        self._workers: dict[str, set[str]] = {}
        # Checkout priority queue of (completions, task_id); entries go stale
        # when a task's completion count moves on and are skipped on pop.
        self._queue: list[tuple[int, str]] = []

    # -- event plumbing ----------------------------------------------------

    def _commit(self, kind: str, payload: dict) -> None:
        if self.log is not None:
            self.last_seq = self.log.append(kind, payload).seq

    def _apply_task_created(self, payload: dict) -> None:
        task = Task.from_json_dict(payload)
        task = replace(task, completions=0, status=STATUS_OPEN)
        self._tasks[task.task_id] = task
        self._answers[task.task_id] = []
        self._workers[task.task_id] = set()
        heapq.heappush(self._queue, (0, task.task_id))

    def _apply_answer_submitted(self, payload: dict) -> None:
        task_id = payload["task_id"]
        task = self._tasks[task_id]
        answers = AnnotationAnswers(
            worker_id=payload["worker_id"],
            values=dict(payload["values"]),
            submitted_at=payload["submitted_at"],
        )
        self._answers[task_id].append(answers)
        self._workers[task_id].add(answers.worker_id)
        completions = task.completions + 1
        status = STATUS_COMPLETE if completions >= task.redundancy else task.status
        self._tasks[task_id] = replace(task, completions=completions, status=status)
        if status == STATUS_OPEN:
            heapq.heappush(self._queue, (completions, task_id))

    def apply(self, entry: EventLogEntry) -> None:
        if entry.kind == KIND_TASK_CREATED:
            self._apply_task_created(entry.payload)
        elif entry.kind == KIND_ANSWER_SUBMITTED:
            self._apply_answer_submitted(entry.payload)
        elif entry.kind == KIND_TASK_COMPLETED:
            # Derived marker; completion is already implied by the answer
            # count, so applying it is a consistency check only.
            task = self._tasks.get(entry.payload["task_id"])
            if task is not None and task.completions >= task.redundancy:
                self._tasks[task.task_id] = replace(task, status=STATUS_COMPLETE)
        self.last_seq = entry.seq

    @classmethod
    def replay(cls, log_path, schema: QuestionSchema = DEFAULT_QUESTIONS,
               allow_torn_tail: bool = True) -> "TaskStore":
        store = cls(schema=schema, log=None)
        for entry in iter_entries(log_path, allow_torn_tail=allow_torn_tail):
            store.apply(entry)
        return store

    # -- public operations ---------------------------------------------------

    def add_tasks(self, tasks: Sequence[Task]) -> None:
        with self._lock:
            for task in tasks:
                if task.task_id in self._tasks:
                    raise ContractError(f"task {task.task_id} already exists")
                payload = task.to_json_dict()
                self._commit(KIND_TASK_CREATED, payload)
                self._apply_task_created(payload)

    def get_task(self, task_id: str) -> Task:
        with self._lock:
            task = self._tasks.get(task_id)
            if task is None:
                raise UnknownTaskError(task_id)
            return task

    def tasks(self) -> list[Task]:
        with self._lock:
            return sorted(self._tasks.values(), key=lambda t: t.task_id)

    def next_task(self, worker_id: str, exclude: Iterable[str] = ()) -> Optional[Task]:
        """An open task the worker has not answered, fewest completions
        first, ties by task id. Assignment holds no slot: over-assignment is
        allowed and resolved at aggregation time."""
        if not worker_id:
            raise ContractError("worker_id must be non-empty")
        excluded = set(exclude)
        with self._lock:
            found = None
            stashed = []
            while self._queue:
                completions, task_id = heapq.heappop(self._queue)
                task = self._tasks.get(task_id)
                if task is None or task.status != STATUS_OPEN or task.completions != completions:
                    continue  # stale queue entry
                stashed.append((completions, task_id))
                if task_id in excluded or worker_id in self._workers[task_id]:
                    continue
                found = task
                break
            for item in stashed:
                heapq.heappush(self._queue, item)
            return found

    def submit_answers(self, task_id: str, answers: AnnotationAnswers) -> Task:
        with self._lock:
            task = self._tasks.get(task_id)
            if task is None:
                raise UnknownTaskError(task_id)
            if answers.worker_id in self._workers[task_id]:
                raise DuplicateWorkerError(
                    f"worker {answers.worker_id} already answered {task_id}"
                )
            errors = self.schema.validate_values(answers.values)
            if errors:
                raise ValidationFailure(errors)
            payload = {
                "task_id": task_id,
                "worker_id": answers.worker_id,
                "values": dict(answers.values),
                "submitted_at": answers.submitted_at,
            }
            self._commit(KIND_ANSWER_SUBMITTED, payload)
            self._apply_answer_submitted(payload)
            task = self._tasks[task_id]
            if task.completions == task.redundancy:
                self._commit(KIND_TASK_COMPLETED, {
                    "task_id": task_id, "completions": task.completions,
                })
            return task

    def answers_for(self, task_id: str) -> list[AnnotationAnswers]:
        with self._lock:
            if task_id not in self._answers:
                raise UnknownTaskError(task_id)
            return list(self._answers[task_id])

    def aggregate_task(self, task_id: str, **veto_options) -> AggregatedAnnotation:
        with self._lock:
            task = self.get_task(task_id)
            return aggregate_answers(
                task, self._answers[task_id], schema=self.schema, **veto_options
            )

    def aggregate_all(self, **veto_options) -> list[AggregatedAnnotation]:
        with self._lock:
            return [
                self.aggregate_task(t.task_id, **veto_options)
                for t in self.tasks()
                if t.status == STATUS_COMPLETE
            ]

    def progress(self) -> dict:
        with self._lock:
            open_count = sum(1 for t in self._tasks.values() if t.status == STATUS_OPEN)
            complete = len(self._tasks) - open_count
            answers = sum(len(a) for a in self._answers.values())
            return {"open": open_count, "complete": complete, "answers": answers}

    def state_hash(self) -> str:
        """Deterministic digest of the full store state, for replay checks."""
        with self._lock:
            state = {
                "tasks": [t.to_json_dict() for t in self.tasks()],
                "answers": {
                    tid: [a.to_json_dict() for a in answer_list]
                    for tid, answer_list in sorted(self._answers.items())
                },
            }
        blob = json.dumps(state, sort_keys=True, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    # -- snapshots -----------------------------------------------------------

    def snapshot_state(self) -> dict:
        """Full store state anchored at last_seq, so a restore only needs to
        replay log entries past that point."""
        with self._lock:
            return {
                "schema_version": SCHEMA_VERSION,
                "last_seq": self.last_seq,
                "tasks": [t.to_json_dict() for t in self.tasks()],
                "answers": {
                    tid: [a.to_json_dict() for a in answer_list]
                    for tid, answer_list in sorted(self._answers.items())
                },
            }

    @classmethod
    def from_snapshot(cls, state: dict,
                      schema: QuestionSchema = DEFAULT_QUESTIONS) -> "TaskStore":
        store = cls(schema=schema)
        store.last_seq = int(state["last_seq"])
        for task_dict in state["tasks"]:
            task = Task.from_json_dict(task_dict)
            store._tasks[task.task_id] = task
            store._answers[task.task_id] = []
            store._workers[task.task_id] = set()
            if task.status == STATUS_OPEN:
                heapq.heappush(store._queue, (task.completions, task.task_id))
        for task_id, answer_list in state["answers"].items():
            for obj in answer_list:
                answers = AnnotationAnswers(
                    worker_id=obj["worker_id"],
                    values=dict(obj["values"]),
                    submitted_at=obj["submitted_at"],
                )
                store._answers[task_id].append(answers)
                store._workers[task_id].add(answers.worker_id)
        return store


def submit(store: TaskStore, task_id: str, worker_id: str,
           values: Mapping[str, Optional[str]],
           submitted_at: Optional[str] = None) -> Task:
    """Convenience wrapper building the answer object with a timestamp."""
    answers = AnnotationAnswers(
        worker_id=worker_id,
        values={qid: values.get(qid) for qid in store.schema.question_ids},
        submitted_at=submitted_at or _utcnow(),
    )
    return store.submit_answers(task_id, answers)
