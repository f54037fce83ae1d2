from __future__ import annotations

from datetime import datetime, timedelta, timezone
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sensepipe.dedup import (
    DecodeError,
    PerceptualHash,
    dedup_images,
    dedup_records,
    dedup_urls,
    hamming,
    phash_file,
    phash_image,
)
from sensepipe.ingest import PostRecord
from sensepipe.synth import noise_image, rescale, smooth_image

T0 = datetime(2020, 5, 12, tzinfo=timezone.utc)


def rec(i, url=None, t=0, image_path=None):
    return PostRecord(
        post_id=f"p{i:04d}",
        text="covid",
        created_at=T0 + timedelta(seconds=t),
        image_url=url or f"u{i}",
        image_path=image_path,
    )


class TestHamming:
    def test_identity(self):
        h = PerceptualHash(0x0123456789ABCDEF)
        assert hamming(h, h) == 0

    def test_complement(self):
        h = PerceptualHash(0x0123456789ABCDEF)
        assert hamming(h, PerceptualHash(h.bits ^ 0xFFFFFFFFFFFFFFFF)) == 64

    def test_three_bit_difference(self):
        a = PerceptualHash(0b1011)
        b = PerceptualHash(0b0001 | 1 << 63)
        # differ at bits 1, 3, 63
        assert hamming(a, b) == 3

    @settings(max_examples=100)
    @given(st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1))
    def test_metric_properties(self, x, y, z):
        a, b, c = PerceptualHash(x), PerceptualHash(y), PerceptualHash(z)
        assert 0 <= hamming(a, b) <= 64
        assert hamming(a, b) == hamming(b, a)
        assert hamming(a, c) <= hamming(a, b) + hamming(b, c)

    def test_hex_roundtrip(self):
        h = PerceptualHash(0x00FF00FF00FF00FF)
        assert h.to_hex() == "00ff00ff00ff00ff"
        assert PerceptualHash.from_hex(h.to_hex()) == h


class TestPhash:
    def test_identical_bytes_identical_hash(self, tmp_path):
        rng = np.random.default_rng(1)
        path = tmp_path / "a.png"
        smooth_image(rng, 64).save(path)
        assert hamming(phash_file(path), phash_file(path)) == 0

    def test_rescale_invariance(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            img = smooth_image(rng, 64)
            h = phash_image(img)
            assert hamming(h, phash_image(rescale(img, 2.0))) == 0
            assert hamming(h, phash_image(rescale(img, 0.5))) == 0

    def test_unrelated_noise_images_far_apart(self):
        rng = np.random.default_rng(3)
        hashes = [phash_image(noise_image(rng, 64)) for _ in range(200)]
        distances = [hamming(hashes[2 * i], hashes[2 * i + 1]) for i in range(100)]
        assert sum(distances) / len(distances) >= 24

    def test_degenerate_image_rejected(self):
        rng = np.random.default_rng(4)
        tiny = smooth_image(rng, 64).resize((4, 4))
        with pytest.raises(DecodeError):
            phash_image(tiny)

    def test_undecodable_file_rejected(self, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"this is not an image")
        with pytest.raises(DecodeError):
            phash_file(bad)

    def test_jpeg_rasters_accepted(self, tmp_path):
        rng = np.random.default_rng(6)
        img = smooth_image(rng, 64)
        png_path, jpg_path = tmp_path / "a.png", tmp_path / "a.jpg"
        img.save(png_path)
        img.save(jpg_path, quality=95)
        # Lossy encode, same content: hashes land within a few bits.
        assert hamming(phash_file(png_path), phash_file(jpg_path)) <= 4


class TestDedupUrls:
    def test_earlier_timestamp_wins(self):
        early = rec(1, url="same", t=0)
        late = rec(2, url="same", t=10)
        assert dedup_urls([late, early]) == [early]

    def test_tie_breaks_on_post_id(self):
        a = rec(1, url="same", t=0)
        b = rec(2, url="same", t=0)
        assert dedup_urls([b, a]) == [a]

    def test_distinct_urls_identity(self):
        records = [rec(i, t=i) for i in range(5)]
        assert dedup_urls(records) == records

    def test_planted_ten_percent_duplicates(self):
        # Large corpus shape: every tenth record reuses an earlier URL.
        n = 5000
        records = []
        for i in range(n):
            if i % 10 == 9:
                records.append(rec(i, url=f"u{i - 9}", t=i))
            else:
                records.append(rec(i, url=f"u{i}", t=i))
        kept = dedup_urls(records)
        assert len(kept) == n - n // 10
        assert len({r.image_url for r in kept}) == len(kept)


class FakeHasher:
    """Maps post ids to fixed hash values, no images involved."""

    def __init__(self, table):
        self.table = table

    def __call__(self, record):
        value = self.table[record.post_id]
        if value is None:
            raise DecodeError(f"planted failure for {record.post_id}")
        return PerceptualHash(value)


class TestDedupImages:
    def test_near_pair_below_threshold_dropped(self):
        records = [rec(1, t=0), rec(2, t=1)]
        hasher = FakeHasher({"p0001": 0b0, "p0002": 0b1})
        kept, report = dedup_images(records, hasher=hasher, threshold=1)
        assert [r.post_id for r in kept] == ["p0001"]
        assert report.phash_duplicates_removed == 1

    def test_distance_five_with_threshold_four_both_kept(self):
        records = [rec(1, t=0), rec(2, t=1)]
        hasher = FakeHasher({"p0001": 0, "p0002": 0b11111})
        kept, _ = dedup_images(records, hasher=hasher, threshold=4)
        assert len(kept) == 2

    def test_scan_is_in_created_at_order(self):
        # Later-submitted file order, but the earlier timestamp wins the scan.
        early, late = rec(1, t=0), rec(2, t=5)
        hasher = FakeHasher({"p0001": 7, "p0002": 7})
        kept, _ = dedup_images([late, early], hasher=hasher, threshold=0)
        assert [r.post_id for r in kept] == ["p0001"]

    def test_decode_failure_counted_separately(self):
        records = [rec(1, t=0), rec(2, t=1), rec(3, t=2)]
        hasher = FakeHasher({"p0001": 1, "p0002": None, "p0003": 2})
        kept, report = dedup_images(records, hasher=hasher)
        assert [r.post_id for r in kept] == ["p0001", "p0003"]
        assert report.decode_failures == 1
        assert report.failed_posts[0][0] == "p0002"
        report.check()

    def test_planted_variants_on_disk(self, tmp_path):
        # 100 images of which 20 are rescaled variants of the first 20.
        rng = np.random.default_rng(5)
        records = []
        for i in range(80):
            img = smooth_image(rng, 64)
            img.save(tmp_path / f"img{i}.png")
            records.append(rec(i, t=i, image_path=f"img{i}.png"))
        for j in range(20):
            variant = rescale(smooth_image_reload(tmp_path / f"img{j}.png"), 2.0)
            variant.save(tmp_path / f"var{j}.png")
            records.append(rec(100 + j, t=100 + j, image_path=f"var{j}.png"))
        kept, report = dedup_images(records, images_dir=tmp_path, threshold=0)
        assert len(kept) == 80
        assert report.phash_duplicates_removed == 20
        # Exhaustive pairwise check: no kept pair within the threshold.
        hashes = [phash_file(tmp_path / r.image_path) for r in kept]
        assert all(hamming(a, b) > 0 for a, b in combinations(hashes, 2))

    def test_determinism(self):
        records = [rec(i, t=i % 3) for i in range(30)]
        table = {f"p{i:04d}": (i * 2654435761) % 2**64 for i in range(30)}
        run1 = dedup_images(records, hasher=FakeHasher(table), threshold=8)
        run2 = dedup_images(records, hasher=FakeHasher(table), threshold=8)
        assert run1[0] == run2[0]
        assert run1[1].to_json_dict() == run2[1].to_json_dict()


def smooth_image_reload(path):
    from PIL import Image

    with Image.open(path) as img:
        img.load()
        return img.copy()


def test_dedup_records_combines_stages():
    records = [
        rec(1, url="a", t=0),
        rec(2, url="a", t=1),  # url duplicate
        rec(3, url="b", t=2),
        rec(4, url="c", t=3),  # hash duplicate of p0003
    ]
    hasher = FakeHasher({"p0001": 10, "p0003": 99, "p0004": 99})
    kept, report = dedup_records(records, hasher=hasher)
    assert [r.post_id for r in kept] == ["p0001", "p0003"]
    assert report.input_count == 4
    assert report.url_duplicates_removed == 1
    assert report.phash_duplicates_removed == 1
    assert report.output_count == 2
    report.check()
