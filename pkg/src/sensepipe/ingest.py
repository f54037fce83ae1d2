"""Crawl-file ingestion: parse JSONL post dumps and apply crawl eligibility rules.

A crawl file is UTF-8 JSON-lines, one post object per line. Malformed lines
never abort a parse; they are counted per reason so a funnel report can
account for every input line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Optional


class IngestError(Exception):
    """Fatal ingestion problem: unreadable source or invalid crawl spec."""


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True)
class PostRecord:
    """One crawled social-media post. The corpus is image-only by construction."""

    post_id: str
    text: str
    created_at: datetime  # timezone-aware UTC
    image_url: str
    user_location: Optional[str] = None
    image_path: Optional[str] = None
    native_geo: Optional[GeoPoint] = None
    is_retweet: bool = False
    lang: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.post_id:
            raise ValueError("post_id must be non-empty")
        if not self.image_url:
            raise ValueError("image_url must be non-empty")
        if self.created_at.tzinfo is None:
            raise ValueError("created_at must be timezone-aware")

    def to_json_dict(self) -> dict:
        return {
            "post_id": self.post_id,
            "text": self.text,
            "created_at": self.created_at.isoformat(),
            "user_location": self.user_location,
            "image_url": self.image_url,
            "image_path": self.image_path,
            "native_geo": (
                {"lat": self.native_geo.lat, "lon": self.native_geo.lon}
                if self.native_geo
                else None
            ),
            "is_retweet": self.is_retweet,
            "lang": self.lang,
        }


@dataclass(frozen=True)
class CrawlSpec:
    """Keyword list plus optional [start, end] UTC window for crawl eligibility."""

    keywords: frozenset[str]
    time_window: Optional[tuple[datetime, datetime]] = None

    def __post_init__(self) -> None:
        if not self.keywords:
            raise IngestError("crawl spec needs at least one keyword")
        lowered = frozenset(k.lower() for k in self.keywords)
        object.__setattr__(self, "keywords", lowered)
        if self.time_window is not None:
            start, end = self.time_window
            if start > end:
                raise IngestError("time window start is after end")


@dataclass
class SkipReport:
    """Per-reason counts of lines a parse could not turn into records."""

    reasons: dict[str, int] = field(default_factory=dict)
    lines: list[tuple[int, str]] = field(default_factory=list)  # (line_no, reason)

    def add(self, line_no: int, reason: str) -> None:
        self.reasons[reason] = self.reasons.get(reason, 0) + 1
        self.lines.append((line_no, reason))

    @property
    def total(self) -> int:
        return len(self.lines)

    def to_json_dict(self) -> dict:
        return {"total": self.total, "reasons": dict(sorted(self.reasons.items()))}


def parse_timestamp(value: str) -> datetime:
    """Parse an ISO-8601 timestamp; naive values are taken as UTC."""
    if value.endswith(("Z", "z")):
        value = value[:-1] + "+00:00"
    ts = datetime.fromisoformat(value)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def record_from_json_dict(obj: dict) -> PostRecord:
    """Build a PostRecord from a parsed JSON object. Raises ValueError with a
    reason code usable in skip reports."""
    if not isinstance(obj, dict):
        raise ValueError("not_an_object")
    for name in ("post_id", "image_url"):
        if obj.get(name) in (None, ""):
            raise ValueError(f"missing_{name}")
    for name in ("text", "created_at"):  # text may be empty, but must exist
        if obj.get(name) is None:
            raise ValueError(f"missing_{name}")
    try:
        created_at = parse_timestamp(str(obj["created_at"]))
    except (ValueError, TypeError):
        raise ValueError("invalid_created_at") from None
    native_geo = None
    raw_geo = obj.get("native_geo")
    if raw_geo is not None:
        try:
            native_geo = GeoPoint(float(raw_geo["lat"]), float(raw_geo["lon"]))
        except (KeyError, TypeError, ValueError):
            raise ValueError("invalid_native_geo") from None
    return PostRecord(
        post_id=str(obj["post_id"]),
        text=str(obj["text"]),
        created_at=created_at,
        image_url=str(obj["image_url"]),
        user_location=obj.get("user_location"),
        image_path=obj.get("image_path"),
        native_geo=native_geo,
        is_retweet=bool(obj.get("is_retweet", False)),
        lang=obj.get("lang"),
    )


def parse_crawl(lines: Iterable[str]) -> tuple[list[PostRecord], SkipReport]:
    """Parse a line-oriented JSON stream into validated records.

    Every well-formed line yields exactly one record, in input order. Bad
    lines (malformed JSON, missing fields, duplicate post ids) are skipped
    and counted, never fatal.
    """
    records: list[PostRecord] = []
    skipped = SkipReport()
    seen_ids: set[str] = set()
    for line_no, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        try:
            obj = json.loads(stripped)
        except json.JSONDecodeError:
            skipped.add(line_no, "malformed_json")
            continue
        try:
            record = record_from_json_dict(obj)
        except ValueError as exc:
            skipped.add(line_no, str(exc))
            continue
        if record.post_id in seen_ids:
            skipped.add(line_no, "duplicate_post_id")
            continue
        seen_ids.add(record.post_id)
        records.append(record)
    return records, skipped


def parse_crawl_path(path: str | Path) -> tuple[list[PostRecord], SkipReport]:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_crawl(fh)
    except OSError as exc:
        raise IngestError(f"cannot read crawl file {path}: {exc}") from exc


def serialize_records(records: Iterable[PostRecord]) -> Iterator[str]:
    for record in records:
        yield json.dumps(record.to_json_dict(), ensure_ascii=False)


def write_jsonl(records: Iterable[PostRecord], path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for line in serialize_records(records):
            fh.write(line + "\n")
            count += 1
    return count


def matches_keywords(record: PostRecord, keywords: frozenset[str]) -> bool:
    text = record.text.lower()
    return any(keyword in text for keyword in keywords)


def filter_crawl(records: list[PostRecord], spec: CrawlSpec) -> list[PostRecord]:
    """Apply crawl-eligibility rules: no retweets, image present, at least one
    keyword as case-insensitive substring of the text, timestamp inside the
    window when one is given. Order-stable and idempotent."""
    kept = []
    for record in records:
        if record.is_retweet:
            continue
        if not record.image_url:
            continue
        if not matches_keywords(record, spec.keywords):
            continue
        if spec.time_window is not None:
            start, end = spec.time_window
            if not start <= record.created_at <= end:
                continue
        kept.append(record)
    return kept


def resolve_image_path(record: PostRecord, images_dir: Optional[str | Path]) -> Optional[Path]:
    """Locate the image bytes for a record. Relative image_path values are
    resolved against the corpus image directory; live URL fetching is out of
    scope."""
    if record.image_path is None:
        return None
    path = Path(record.image_path)
    if not path.is_absolute() and images_dir is not None:
        path = Path(images_dir) / path
    return path
