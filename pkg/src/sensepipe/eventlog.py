"""Append-only JSONL event log: the source of truth for the task store.

Each line is one committed event with a strictly increasing sequence number.
Replay rebuilds store state exactly; a torn trailing line (partial write
from a crash) is discarded because its event was never acknowledged, while a
sequence gap or duplicate means real corruption and aborts with the first
bad sequence number.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, Optional

KIND_TASK_CREATED = "task_created"
KIND_ANSWER_SUBMITTED = "answer_submitted"
KIND_TASK_COMPLETED = "task_completed"
EVENT_KINDS = frozenset({KIND_TASK_CREATED, KIND_ANSWER_SUBMITTED, KIND_TASK_COMPLETED})


class LogCorruptionError(Exception):
    def __init__(self, message: str, first_bad_seq: Optional[int] = None):
        super().__init__(message)
        self.first_bad_seq = first_bad_seq


@dataclass(frozen=True)
class EventLogEntry:
    seq: int
    kind: str
    payload: dict
    at: str  # UTC ISO timestamp

    def to_json_line(self) -> str:
        return json.dumps(
            {"seq": self.seq, "kind": self.kind, "payload": self.payload, "at": self.at},
            ensure_ascii=False,
        )


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


def iter_entries(path: str | Path, allow_torn_tail: bool = True) -> Iterator[EventLogEntry]:
    """Yield entries in order, verifying the sequence is 1, 2, 3, ...

    With allow_torn_tail, an undecodable final line without trailing newline
    is treated as a crash artifact and skipped; anywhere else it is
    corruption.
    """
    expected = 1
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read()
    lines = raw.split("\n")
    trailing_newline = raw.endswith("\n")
    if trailing_newline:
        lines = lines[:-1]
    for idx, line in enumerate(lines):
        if not line.strip():
            continue
        is_last = idx == len(lines) - 1
        try:
            obj = json.loads(line)
            entry = EventLogEntry(
                seq=int(obj["seq"]), kind=obj["kind"], payload=obj["payload"], at=obj["at"]
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            if allow_torn_tail and is_last and not trailing_newline:
                return
            raise LogCorruptionError(f"undecodable log line {idx + 1}", first_bad_seq=expected)
        if entry.kind not in EVENT_KINDS:
            raise LogCorruptionError(f"unknown event kind {entry.kind!r}", first_bad_seq=entry.seq)
        if entry.seq != expected:
            raise LogCorruptionError(
                f"sequence broken: expected {expected}, found {entry.seq}",
                first_bad_seq=min(expected, entry.seq) if entry.seq < expected else expected,
            )
        expected += 1
        yield entry


class EventLog:
    """Writer handle. Appends are the serialized commit point for the store:
    an event is accepted once its line is flushed to the file."""

    def __init__(self, path: str | Path, fsync: bool = False):
        self.path = Path(path)
        self.fsync = fsync
        self._next_seq = self._recover()
        self._fh = open(self.path, "a", encoding="utf-8")

    def _recover(self) -> int:
        """Validate the existing log and repair the tail a crash may have
        left. A final unterminated line that parses as the expected next
        event is a fully-written record: keep it and terminate it. Anything
        else after the last newline is a torn fragment of an unacknowledged
        append and is truncated. An invalid complete line is corruption."""
        if not self.path.exists():
            return 1
        raw = self.path.read_bytes()
        offset = 0
        next_seq = 1

        def parse(line: bytes) -> Optional[dict]:
            try:
                obj = json.loads(line)
                if obj["kind"] in EVENT_KINDS and int(obj["seq"]) == next_seq:
                    return obj
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                pass
            return None

        while True:
            nl = raw.find(b"\n", offset)
            if nl == -1:
                break
            line = raw[offset:nl].strip()
            if line:
                if parse(line) is None:
                    raise LogCorruptionError(
                        f"invalid log line before append in {self.path}",
                        first_bad_seq=next_seq,
                    )
                next_seq += 1
            offset = nl + 1
        tail = raw[offset:]
        if tail:
            if tail.strip() and parse(tail.strip()) is not None:
                with open(self.path, "ab") as fh:
                    fh.write(b"\n")
                next_seq += 1
            else:
                with open(self.path, "r+b") as fh:
                    fh.truncate(offset)
        return next_seq

    @property
    def next_seq(self) -> int:
        return self._next_seq

    def append(self, kind: str, payload: dict, at: Optional[str] = None) -> EventLogEntry:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        entry = EventLogEntry(self._next_seq, kind, payload, at or _utcnow())
        self._fh.write(entry.to_json_line() + "\n")
        self._fh.flush()
        if self.fsync:
            os.fsync(self._fh.fileno())
        self._next_seq += 1
        return entry

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self) -> "EventLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
