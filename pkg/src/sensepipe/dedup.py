"""Duplicate-observation removal: exact URL dedup plus perceptual-hash dedup.

The perceptual hash is the usual DCT construction, pinned so hashes are
reproducible across implementations:

    luma = 0.299 R + 0.587 G + 0.114 B
    -> bilinear resize to 32x32
    -> orthonormal 2D DCT-II
    -> top-left 8x8 coefficient block (DC term included)
    -> bit per coefficient, set when strictly above the median of the 64

Bits are packed row-major, first coefficient in the most significant bit.
Visually similar images (rescales, mild blur or saturation changes) land on
equal or near-equal hashes; Hamming distance is the similarity metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.fft import dct

from .ingest import PostRecord, resolve_image_path

HASH_BITS = 64
_RESIZE_GRID = 32
_BLOCK = 8


class DecodeError(Exception):
    """Image bytes could not be decoded into a usable raster."""


@dataclass(frozen=True)
class PerceptualHash:
    """64-bit DCT fingerprint of image pixel content."""

    bits: int

    def __post_init__(self) -> None:
        if not 0 <= self.bits < 1 << HASH_BITS:
            raise ValueError("hash must fit in 64 bits")

    def to_hex(self) -> str:
        return f"{self.bits:016x}"

    @classmethod
    def from_hex(cls, text: str) -> "PerceptualHash":
        return cls(int(text, 16))


def hamming(a: PerceptualHash, b: PerceptualHash) -> int:
    """Number of differing bits; 0 for equal hashes, at most 64."""
    return (a.bits ^ b.bits).bit_count()


def phash_image(img: Image.Image) -> PerceptualHash:
    if img.width < 8 or img.height < 8:
        raise DecodeError(f"image too small for hashing: {img.width}x{img.height}")
    rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
    luma = rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114
    small = Image.fromarray(luma.astype(np.float32), mode="F").resize(
        (_RESIZE_GRID, _RESIZE_GRID), Image.BILINEAR
    )
    grid = np.asarray(small, dtype=np.float64)
    coeffs = dct(dct(grid, axis=0, norm="ortho"), axis=1, norm="ortho")
    block = coeffs[:_BLOCK, :_BLOCK].reshape(-1)
    median = float(np.median(block))
    packed = np.packbits(block > median).tobytes()
    return PerceptualHash(int.from_bytes(packed, "big"))


def phash_file(path: str | Path) -> PerceptualHash:
    try:
        with Image.open(path) as img:
            img.load()
            return phash_image(img)
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc


# Type of the per-record hashing hook; tests swap in precomputed tables.
Hasher = Callable[[PostRecord], PerceptualHash]


def file_hasher(images_dir: Optional[str | Path]) -> Hasher:
    def _hash(record: PostRecord) -> PerceptualHash:
        path = resolve_image_path(record, images_dir)
        if path is None:
            raise DecodeError(f"record {record.post_id} has no image path")
        return phash_file(path)

    return _hash


@dataclass
class DedupReport:
    """Accounting for a dedup pass. Every input record is either kept,
    removed as a URL duplicate, removed as a hash near-duplicate, or dropped
    because its image failed to decode."""

    input_count: int
    url_duplicates_removed: int = 0
    phash_duplicates_removed: int = 0
    decode_failures: int = 0
    output_count: int = 0
    failed_posts: list[tuple[str, str]] = field(default_factory=list)

    def check(self) -> None:
        expected = (
            self.input_count
            - self.url_duplicates_removed
            - self.phash_duplicates_removed
            - self.decode_failures
        )
        if self.output_count != expected:
            raise AssertionError(f"dedup accounting broken: {self}")

    def to_json_dict(self) -> dict:
        return {
            "input_count": self.input_count,
            "url_duplicates_removed": self.url_duplicates_removed,
            "phash_duplicates_removed": self.phash_duplicates_removed,
            "decode_failures": self.decode_failures,
            "output_count": self.output_count,
        }


def dedup_urls(records: list[PostRecord]) -> list[PostRecord]:
    """Keep the first occurrence of each distinct image URL, where "first"
    means earliest created_at with post_id as the lexicographic tie-break.
    Output preserves input order."""
    winners: dict[str, PostRecord] = {}
    for record in records:
        best = winners.get(record.image_url)
        if best is None or (record.created_at, record.post_id) < (best.created_at, best.post_id):
            winners[record.image_url] = record
    winner_ids = {r.post_id for r in winners.values()}
    return [r for r in records if r.post_id in winner_ids]


def dedup_images(
    records: list[PostRecord],
    images_dir: Optional[str | Path] = None,
    threshold: int = 0,
    hasher: Optional[Hasher] = None,
) -> tuple[list[PostRecord], DedupReport]:
    """Greedy first-wins near-duplicate removal.

    Records are scanned in (created_at, post_id) order; a record is dropped
    when its hash is within `threshold` Hamming distance of any previously
    kept record's hash. Records whose image cannot be decoded are dropped and
    counted separately. Kept records come back in scan order.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    hash_record = hasher or file_hasher(images_dir)
    report = DedupReport(input_count=len(records))
    kept: list[PostRecord] = []
    seen_exact: set[int] = set()
    seen_hashes: list[PerceptualHash] = []
    for record in sorted(records, key=lambda r: (r.created_at, r.post_id)):
        try:
            h = hash_record(record)
        except DecodeError as exc:
            report.decode_failures += 1
            report.failed_posts.append((record.post_id, str(exc)))
            continue
        if h.bits in seen_exact:
            report.phash_duplicates_removed += 1
            continue
        if threshold > 0 and any(hamming(h, other) <= threshold for other in seen_hashes):
            report.phash_duplicates_removed += 1
            continue
        seen_exact.add(h.bits)
        seen_hashes.append(h)
        kept.append(record)
    report.output_count = len(kept)
    report.check()
    return kept, report


def dedup_records(
    records: list[PostRecord],
    images_dir: Optional[str | Path] = None,
    threshold: int = 0,
    hasher: Optional[Hasher] = None,
) -> tuple[list[PostRecord], DedupReport]:
    """Full dedup stage: URL identity first, then perceptual-hash scan."""
    after_urls = dedup_urls(records)
    kept, report = dedup_images(after_urls, images_dir, threshold, hasher)
    report.input_count = len(records)
    report.url_duplicates_removed = len(records) - len(after_urls)
    report.check()
    return kept, report
