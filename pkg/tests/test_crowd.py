from __future__ import annotations

import itertools
from collections import Counter
from datetime import datetime, timezone

import pytest

from sensepipe.crowd import (
    AnnotationAnswers,
    ContractError,
    DEFAULT_QUESTIONS,
    DuplicateWorkerError,
    Question,
    QuestionSchema,
    Task,
    TaskStore,
    UNRESOLVED,
    UnknownTaskError,
    ValidationFailure,
    aggregate_answers,
    create_tasks,
    majority_value,
    submit,
)
from sensepipe.geocode import GazetteerEntry, GeoResolution
from sensepipe.ingest import PostRecord

T0 = datetime(2020, 5, 12, tzinfo=timezone.utc)

MILAN = GazetteerEntry("Milan", 45.464, 9.190, "IT", 1_352_000)


def record(i):
    return PostRecord(post_id=f"p{i:04d}", text=f"covid {i}", created_at=T0,
                      image_url=f"u{i}", image_path=f"p{i:04d}.png")


def resolution(i):
    return GeoResolution(post_id=f"p{i:04d}", candidates=(MILAN,), chosen=MILAN,
                         country="IT", source="inferred", display_name="Milan (IT)")


def full_answers(**overrides):
    """A complete answer sheet; questions an override hides are nulled."""
    values = {
        "q1": "Yes", "q2": "Yes", "q3": "Yes", "q4": "Yes", "q5": "Surgical",
        "q6": "Yes", "q7": "2", "q8": "Yes", "q9": "Yes", "q10": "park",
        "q11": "shopping", "q12": "Yes",
    }
    values.update(overrides)
    visible = DEFAULT_QUESTIONS.visible_questions(values)
    return {q: (v if q in visible else None) for q, v in values.items()}


def photo_no_answers():
    return {"q1": "No", **{f"q{i}": None for i in range(2, 13)}}


class TestSchemaValidation:
    def test_q1_no_with_all_nulls_accepted(self):
        assert DEFAULT_QUESTIONS.validate_values(photo_no_answers()) == []

    def test_q1_no_with_q4_set_rejected(self):
        values = photo_no_answers()
        values["q4"] = "Yes"
        errors = DEFAULT_QUESTIONS.validate_values(values)
        assert any(e.field == "q4" for e in errors)

    def test_invalid_option_rejected(self):
        errors = DEFAULT_QUESTIONS.validate_values(full_answers(q4="Maybe"))
        assert [e.field for e in errors] == ["q4"]

    def test_mask_details_null_when_no_mask(self):
        values = full_answers(q4="No", q5=None, q6=None)
        assert DEFAULT_QUESTIONS.validate_values(values) == []

    def test_mask_details_required_when_some_masked(self):
        values = full_answers(q4="Some of them", q5=None)
        errors = DEFAULT_QUESTIONS.validate_values(values)
        assert any(e.field == "q5" and "required" in e.message for e in errors)

    def test_q10_null_unless_public_place(self):
        ok = full_answers(q9="No", q10=None)
        assert DEFAULT_QUESTIONS.validate_values(ok) == []
        bad = full_answers(q9="No")
        bad["q10"] = "park"
        assert any(e.field == "q10" for e in DEFAULT_QUESTIONS.validate_values(bad))

    def test_people_block_null_when_no_people(self):
        values = full_answers(q3="No", q4=None, q5=None, q6=None, q7=None, q8=None)
        assert DEFAULT_QUESTIONS.validate_values(values) == []

    def test_unknown_question_rejected(self):
        values = full_answers(q99="Yes")
        assert any(e.field == "q99" for e in DEFAULT_QUESTIONS.validate_values(values))

    def test_missing_visible_answer_rejected(self):
        values = full_answers()
        values["q2"] = None
        errors = DEFAULT_QUESTIONS.validate_values(values)
        assert any(e.field == "q2" for e in errors)

    def test_guard_must_reference_earlier_question(self):
        with pytest.raises(ContractError):
            QuestionSchema((
                Question("a", "A?", ("x",), guard=("b", frozenset({"x"}))),
                Question("b", "B?", ("x",)),
            ))


class TestCreateTasks:
    def test_ten_posts_three_redundancy(self):
        records = {f"p{i:04d}": record(i) for i in range(10)}
        tasks = create_tasks([resolution(i) for i in range(10)], records, redundancy=3)
        assert len(tasks) == 10
        assert all(t.completions == 0 and t.status == "open" for t in tasks)
        assert sum(t.redundancy for t in tasks) == 30

    def test_redundancy_below_one_rejected(self):
        with pytest.raises(ContractError):
            create_tasks([resolution(0)], {"p0000": record(0)}, redundancy=0)

    def test_redundancy_one_completes_after_single_answer(self):
        store = TaskStore()
        store.add_tasks(create_tasks([resolution(0)], {"p0000": record(0)}, redundancy=1))
        task = store.next_task("w1")
        submit(store, task.task_id, "w1", full_answers())
        assert store.get_task(task.task_id).status == "complete"

    def test_missing_record_is_contract_error(self):
        with pytest.raises(ContractError):
            create_tasks([resolution(0)], {}, redundancy=3)


def make_store(n_tasks=3, redundancy=3):
    store = TaskStore()
    records = {f"p{i:04d}": record(i) for i in range(n_tasks)}
    store.add_tasks(create_tasks(
        [resolution(i) for i in range(n_tasks)], records, redundancy=redundancy
    ))
    return store


class TestNextTask:
    def test_never_reoffers_answered_task(self):
        store = make_store(2)
        first = store.next_task("w1")
        submit(store, first.task_id, "w1", full_answers())
        second = store.next_task("w1")
        assert second is not None and second.task_id != first.task_id
        submit(store, second.task_id, "w1", full_answers())
        assert store.next_task("w1") is None

    def test_fewest_completions_first(self):
        store = make_store(2)
        t0, t1 = [t.task_id for t in store.tasks()]
        submit(store, t0, "w1", full_answers())
        submit(store, t0, "w2", full_answers())
        assert store.next_task("w3").task_id == t1

    def test_ties_break_by_task_id(self):
        store = make_store(3)
        assert store.next_task("w1").task_id == "task-p0000"

    def test_all_complete_returns_none(self):
        store = make_store(1, redundancy=2)
        submit(store, "task-p0000", "w1", full_answers())
        submit(store, "task-p0000", "w2", full_answers())
        assert store.next_task("w3") is None

    def test_exclude_list_skips_tasks(self):
        store = make_store(2)
        offered = store.next_task("w1", exclude=["task-p0000"])
        assert offered.task_id == "task-p0001"

    def test_empty_worker_id_rejected(self):
        store = make_store(1)
        with pytest.raises(ContractError):
            store.next_task("")


class TestSubmitAnswers:
    def test_duplicate_worker_rejected(self):
        store = make_store(1)
        submit(store, "task-p0000", "w1", full_answers())
        with pytest.raises(DuplicateWorkerError):
            submit(store, "task-p0000", "w1", full_answers())

    def test_unknown_task_rejected(self):
        store = make_store(1)
        with pytest.raises(UnknownTaskError):
            submit(store, "task-nope", "w1", full_answers())

    def test_invalid_enum_rejected_with_field(self):
        store = make_store(1)
        with pytest.raises(ValidationFailure) as exc_info:
            submit(store, "task-p0000", "w1", full_answers(q4="Maybe"))
        assert exc_info.value.errors[0].field == "q4"

    def test_guard_violation_rejected(self):
        store = make_store(1)
        values = photo_no_answers()
        values["q4"] = "Yes"
        with pytest.raises(ValidationFailure):
            submit(store, "task-p0000", "w1", values)

    def test_completion_at_redundancy(self):
        store = make_store(1)
        for w in ("w1", "w2"):
            submit(store, "task-p0000", w, full_answers())
        assert store.get_task("task-p0000").status == "open"
        submit(store, "task-p0000", "w3", full_answers())
        assert store.get_task("task-p0000").status == "complete"

    def test_surplus_answers_stored_but_not_aggregated(self):
        store = make_store(1)
        for w, q4 in (("w1", "Yes"), ("w2", "Yes"), ("w3", "No")):
            submit(store, "task-p0000", w, full_answers(q4=q4))
        # Fourth answer arrives after completion: stored, ignored by majority.
        submit(store, "task-p0000", "w4", full_answers(q4="No"))
        assert len(store.answers_for("task-p0000")) == 4
        aggregated = store.aggregate_task("task-p0000")
        assert aggregated.values["q4"] == "Yes"
        assert aggregated.contributing_workers == ("w1", "w2", "w3")


def answers(worker, **overrides):
    return AnnotationAnswers(worker_id=worker, values=full_answers(**overrides),
                             submitted_at="t")


def task_for_aggregation(redundancy=3):
    return Task(task_id="t", post_id="p", image_path=None, tweet_text="x",
                country="IT", display_name="Milan (IT)", redundancy=redundancy)


class TestAggregate:
    def test_majority_wins(self):
        result = aggregate_answers(task_for_aggregation(), [
            answers("w1", q4="Yes"), answers("w2", q4="Yes"), answers("w3", q4="No"),
        ])
        assert result.values["q4"] == "Yes"
        assert result.location_valid

    def test_three_way_tie_unresolved(self):
        result = aggregate_answers(task_for_aggregation(), [
            answers("w1", q4="Yes"), answers("w2", q4="No"),
            answers("w3", q4="Cannot tell"),
        ])
        assert result.values["q4"] == UNRESOLVED

    def test_single_surely_not_vetoes(self):
        result = aggregate_answers(task_for_aggregation(), [
            answers("w1", q12="Yes"), answers("w2", q12="Maybe"),
            answers("w3", q12="Surely not"),
        ])
        assert result.location_valid is False

    def test_majority_veto_mode(self):
        sets = [answers("w1", q12="Yes"), answers("w2", q12="Yes"),
                answers("w3", q12="Surely not")]
        any_mode = aggregate_answers(task_for_aggregation(), sets, veto_mode="any")
        majority_mode = aggregate_answers(task_for_aggregation(), sets,
                                          veto_mode="majority")
        assert any_mode.location_valid is False
        assert majority_mode.location_valid is True

    def test_all_null_question_stays_null(self):
        sets = [AnnotationAnswers(w, photo_no_answers(), "t") for w in ("a", "b", "c")]
        result = aggregate_answers(task_for_aggregation(), sets)
        assert result.values["q4"] is None
        assert result.values["q1"] == "No"

    def test_incomplete_task_is_contract_error(self):
        with pytest.raises(ContractError):
            aggregate_answers(task_for_aggregation(), [answers("w1")])

    def test_exhaustive_multisets_match_counting_oracle(self):
        # Every 3-answer multiset over every question's option set, checked
        # against a direct frequency count.
        for question in DEFAULT_QUESTIONS.questions:
            for combo in itertools.combinations_with_replacement(question.options, 3):
                got = majority_value(list(combo))
                counts = Counter(combo)
                top = counts.most_common()
                expected = (
                    UNRESOLVED
                    if len(top) > 1 and top[0][1] == top[1][1]
                    else top[0][0]
                )
                assert got == expected, (question.qid, combo)

    def test_mixed_null_majority(self):
        # One worker saw no mask question; the remaining two agree.
        sets = [
            answers("w1", q4="Yes"),
            answers("w2", q4="Yes"),
            AnnotationAnswers("w3", photo_no_answers(), "t"),
        ]
        result = aggregate_answers(task_for_aggregation(), sets)
        assert result.values["q4"] == "Yes"

    def test_retention_identity(self):
        # location-validated + vetoed == aggregated, on a synthetic batch.
        store = make_store(20)
        for t_index, task in enumerate(store.tasks()):
            for w in ("w1", "w2", "w3"):
                q12 = "Surely not" if (t_index % 5 == 0 and w == "w2") else "Yes"
                submit(store, task.task_id, w, full_answers(q12=q12))
        aggregated = store.aggregate_all()
        valid = sum(1 for a in aggregated if a.location_valid)
        vetoed = sum(1 for a in aggregated if not a.location_valid)
        assert valid + vetoed == len(aggregated) == 20
        assert vetoed == 4


class TestConcurrency:
    def test_concurrent_checkout_and_submit(self):
        import threading

        store = make_store(30)
        errors = []

        def run_worker(worker_id):
            try:
                while True:
                    task = store.next_task(worker_id)
                    if task is None:
                        return
                    submit(store, task.task_id, worker_id, full_answers())
            except Exception as exc:  # pragma: no cover - failure reporting
                errors.append(exc)

        threads = [threading.Thread(target=run_worker, args=(f"w{i}",))
                   for i in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert errors == []
        progress = store.progress()
        assert progress["complete"] == 30
        assert progress["answers"] >= 90  # over-assignment may add surplus
        for task in store.tasks():
            aggregated = store.aggregate_task(task.task_id)
            # Exactly redundancy contributions, all from distinct workers.
            assert len(set(aggregated.contributing_workers)) == 3


class TestProgressAndHash:
    def test_progress_counts(self):
        store = make_store(2)
        submit(store, "task-p0000", "w1", full_answers())
        assert store.progress() == {"open": 2, "complete": 0, "answers": 1}

    def test_state_hash_changes_with_state(self):
        store = make_store(1)
        before = store.state_hash()
        submit(store, "task-p0000", "w1", full_answers())
        assert store.state_hash() != before

    def test_state_hash_deterministic(self):
        a, b = make_store(3), make_store(3)
        assert a.state_hash() == b.state_hash()
