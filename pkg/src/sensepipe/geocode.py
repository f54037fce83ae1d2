"""Gazetteer geocoding: assign a country code to each post.

Native geotags always win; otherwise place names are matched in the post
text and user location by case-insensitive longest-match at token
boundaries, and one candidate is picked by a seeded per-post draw so runs
are reproducible.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional

from .ingest import GeoPoint, PostRecord

_WORD_RE = re.compile(r"\w+", re.UNICODE)
_COUNTRY_RE = re.compile(r"^[A-Z]{2}$")

NEAREST_ENTRY_MAX_KM = 100.0

SOURCE_NATIVE = "native"
SOURCE_INFERRED = "inferred"

# Callable fallback for native points with no gazetteer entry nearby,
# e.g. a point-in-polygon lookup over a country boundary file.
BoundaryLookup = Callable[[float, float], Optional[str]]


class GazetteerError(Exception):
    """Bad gazetteer file or use of an unloaded gazetteer."""


@dataclass(frozen=True)
class GazetteerEntry:
    name: str
    lat: float
    lon: float
    country: str
    population: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.name:
            raise GazetteerError("entry name must be non-empty")
        if not -90.0 <= self.lat <= 90.0 or not -180.0 <= self.lon <= 180.0:
            raise GazetteerError(f"entry {self.name!r} has out-of-range coordinates")
        if not _COUNTRY_RE.match(self.country):
            raise GazetteerError(f"entry {self.name!r} has invalid country {self.country!r}")


@dataclass(frozen=True)
class GeoResolution:
    post_id: str
    candidates: tuple[GazetteerEntry, ...]
    chosen: GazetteerEntry | GeoPoint
    country: str
    source: str  # SOURCE_NATIVE or SOURCE_INFERRED
    display_name: str

    def to_json_dict(self) -> dict:
        chosen: dict
        if isinstance(self.chosen, GazetteerEntry):
            chosen = {"name": self.chosen.name, "lat": self.chosen.lat, "lon": self.chosen.lon}
        else:
            chosen = {"lat": self.chosen.lat, "lon": self.chosen.lon}
        return {
            "post_id": self.post_id,
            "country": self.country,
            "source": self.source,
            "display_name": self.display_name,
            "chosen": chosen,
            "candidates": [c.name for c in self.candidates],
        }


def _norm_key(name: str) -> str:
    return " ".join(name.casefold().split())


class Gazetteer:
    """Name-indexed place table. Entries sharing the exact same name collapse
    to the highest-population one at lookup time; distinct names stay apart."""

    def __init__(self, entries: Iterable[GazetteerEntry]):
        self.entries: list[GazetteerEntry] = list(entries)
        if not self.entries:
            raise GazetteerError("gazetteer has no entries")
        self._by_key: dict[str, GazetteerEntry] = {}
        self._max_words = 1
        buckets: dict[str, list[GazetteerEntry]] = {}
        for entry in self.entries:
            key = _norm_key(entry.name)
            buckets.setdefault(key, []).append(entry)
            self._max_words = max(self._max_words, len(key.split()))
        for key, group in buckets.items():
            group.sort(key=lambda e: (-(e.population or 0), e.country, e.lat, e.lon))
            self._by_key[key] = group[0]

    def lookup(self, name: str) -> Optional[GazetteerEntry]:
        return self._by_key.get(_norm_key(name))

    def nearest(self, lat: float, lon: float, max_km: float = NEAREST_ENTRY_MAX_KM
                ) -> Optional[GazetteerEntry]:
        best = None
        best_key = None
        for entry in self.entries:
            d = haversine_km(lat, lon, entry.lat, entry.lon)
            if d > max_km:
                continue
            key = (d, entry.name, entry.country)
            if best_key is None or key < best_key:
                best, best_key = entry, key
        return best


def load_gazetteer(path: str | Path) -> Gazetteer:
    """Read a tab-separated gazetteer: name, lat, lon, country, population.
    Population may be blank. Lines starting with '#' are ignored."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 4:
                raise GazetteerError(f"{path}:{line_no}: expected at least 4 tab-separated fields")
            name, lat, lon, country = parts[0], parts[1], parts[2], parts[3]
            population = None
            if len(parts) > 4 and parts[4].strip():
                population = int(parts[4])
            try:
                entries.append(GazetteerEntry(name.strip(), float(lat), float(lon),
                                              country.strip(), population))
            except (ValueError, GazetteerError) as exc:
                raise GazetteerError(f"{path}:{line_no}: {exc}") from exc
    return Gazetteer(entries)


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    radius = 6371.0
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = math.radians(lat2 - lat1)
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * radius * math.asin(math.sqrt(a))


def _match_spans(text: str, gazetteer: Gazetteer) -> list[tuple[int, GazetteerEntry]]:
    """Longest-match scan over word tokens. At each position the longest
    gazetteer name wins and the scan jumps past it, suppressing overlapping
    shorter matches."""
    tokens = [(m.start(), m.group()) for m in _WORD_RE.finditer(text)]
    matches: list[tuple[int, GazetteerEntry]] = []
    i = 0
    while i < len(tokens):
        found = None
        for length in range(min(gazetteer._max_words, len(tokens) - i), 0, -1):
            phrase = _norm_key(" ".join(tok for _, tok in tokens[i:i + length]))
            entry = gazetteer.lookup(phrase)
            if entry is not None:
                found = (tokens[i][0], entry, length)
                break
        if found is None:
            i += 1
        else:
            pos, entry, length = found
            matches.append((pos, entry))
            i += length
    return matches


def extract_candidates(
    text: str,
    user_location: Optional[str],
    gazetteer: Gazetteer,
) -> list[GazetteerEntry]:
    """Gazetteer candidates mentioned in the post text or the free-form user
    location, ordered by match position then name, duplicates merged."""
    matches = _match_spans(text, gazetteer)
    if user_location:
        offset = len(text) + 1
        matches.extend((offset + pos, entry) for pos, entry in _match_spans(user_location, gazetteer))
    matches.sort(key=lambda m: (m[0], m[1].name))
    out: list[GazetteerEntry] = []
    seen: set[GazetteerEntry] = set()
    for _, entry in matches:
        if entry not in seen:
            seen.add(entry)
            out.append(entry)
    return out


def _pick_index(seed: int, post_id: str, n: int) -> int:
    # Stable across runs and platforms: draw from a keyed digest, not a
    # process-level RNG.
    digest = hashlib.sha256(f"{seed}:{post_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % n


def resolve(
    record: PostRecord,
    gazetteer: Gazetteer,
    seed: int,
    boundary_lookup: Optional[BoundaryLookup] = None,
) -> Optional[GeoResolution]:
    resolution, _ = resolve_explain(record, gazetteer, seed, boundary_lookup)
    return resolution


def resolve_explain(
    record: PostRecord,
    gazetteer: Gazetteer,
    seed: int,
    boundary_lookup: Optional[BoundaryLookup] = None,
) -> tuple[Optional[GeoResolution], Optional[str]]:
    """Resolve one record, returning the resolution or a reason it failed.

    Native geotags take precedence and the text is never consulted for them;
    the country comes from the nearest gazetteer entry within 100 km, falling
    back to the boundary lookup when configured.
    """
    if gazetteer is None:
        raise GazetteerError("gazetteer not loaded")
    if record.native_geo is not None:
        point = record.native_geo
        entry = gazetteer.nearest(point.lat, point.lon)
        if entry is not None:
            return (
                GeoResolution(
                    post_id=record.post_id,
                    candidates=(),
                    chosen=point,
                    country=entry.country,
                    source=SOURCE_NATIVE,
                    display_name=f"{entry.name} ({entry.country})",
                ),
                None,
            )
        if boundary_lookup is not None:
            country = boundary_lookup(point.lat, point.lon)
            if country:
                return (
                    GeoResolution(
                        post_id=record.post_id,
                        candidates=(),
                        chosen=point,
                        country=country,
                        source=SOURCE_NATIVE,
                        display_name=f"{point.lat:.3f}, {point.lon:.3f} ({country})",
                    ),
                    None,
                )
        return None, "native_point_unmappable"
    candidates = extract_candidates(record.text, record.user_location, gazetteer)
    if not candidates:
        return None, "no_candidates"
    chosen = candidates[_pick_index(seed, record.post_id, len(candidates))]
    return (
        GeoResolution(
            post_id=record.post_id,
            candidates=tuple(candidates),
            chosen=chosen,
            country=chosen.country,
            source=SOURCE_INFERRED,
            display_name=f"{chosen.name} ({chosen.country})",
        ),
        None,
    )


def country_of(resolution: GeoResolution) -> str:
    return resolution.country


def resolve_all(
    records: list[PostRecord],
    gazetteer: Gazetteer,
    seed: int,
    boundary_lookup: Optional[BoundaryLookup] = None,
) -> tuple[list[GeoResolution], list[tuple[str, str]]]:
    """Resolve a batch; returns (resolutions, [(post_id, reason)] for the
    rest). len(resolutions) + len(unresolved) == len(records)."""
    resolutions = []
    unresolved = []
    for record in records:
        resolution, reason = resolve_explain(record, gazetteer, seed, boundary_lookup)
        if resolution is not None:
            resolutions.append(resolution)
        else:
            unresolved.append((record.post_id, reason or "unknown"))
    return resolutions, unresolved
