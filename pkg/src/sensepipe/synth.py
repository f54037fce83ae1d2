"""Synthetic corpora with exactly known per-stage ground truth.

Planted categories are disjoint by construction (a record is a retweet, a
URL duplicate, a hash near-duplicate, dropped by exactly one filter, or a
survivor), so every funnel count is fixed arithmetic over the plan rather
than a property of the pipeline under test. The generated manifest is the
independent oracle the acceptance suite compares against.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, ImageEnhance, ImageFilter
from scipy.fft import idct

from .dedup import phash_image

CRAWL_KEYWORDS = ("covid", "corona", "virus")

_EPOCH = datetime(2020, 5, 12, 2, 0, 0, tzinfo=timezone.utc)

# Templates deliberately avoid every gazetteer name below.
_TEMPLATES = (
    "covid update: masks and distancing at the market today",
    "corona report: long queue outside the pharmacy",
    "another virus day, everyone keeping apart at the shops",
    "covid street scene, most people wearing masks",
    "corona times: neighbours chatting from their balconies",
    "virus precautions visible everywhere this morning",
)

_FILLER_LOCATION_FREE = (
    "crowded but careful",
    "quiet afternoon",
    "busy crossing",
    "market morning",
)

# name, lat, lon, country, population. Single-token names are what the
# corpus texts use; the multi-word and duplicate-name entries exist to
# exercise the matcher.
GAZETTEER_ROWS = (
    ("Milan", 45.464, 9.190, "IT", 1_352_000),
    ("Rome", 41.903, 12.496, "IT", 2_873_000),
    ("Turin", 45.070, 7.686, "IT", 870_000),
    ("Paris", 48.857, 2.352, "FR", 2_161_000),
    ("Lyon", 45.764, 4.835, "FR", 513_000),
    ("Marseille", 43.296, 5.370, "FR", 861_000),
    ("Berlin", 52.520, 13.405, "DE", 3_645_000),
    ("Munich", 48.135, 11.582, "DE", 1_472_000),
    ("Hamburg", 53.551, 9.994, "DE", 1_841_000),
    ("Chicago", 41.878, -87.630, "US", 2_706_000),
    ("Boston", 42.360, -71.059, "US", 692_000),
    ("Seattle", 47.606, -122.332, "US", 745_000),
    ("New York", 40.713, -74.006, "US", 8_399_000),
    ("Madrid", 40.417, -3.704, "ES", 3_223_000),
    ("Seville", 37.389, -5.984, "ES", 689_000),
    ("Valencia", 39.470, -0.377, "ES", 791_000),
    ("Valencia", 10.162, -68.008, "VE", 1_484_000),
    ("Recife", -8.047, -34.877, "BR", 1_653_000),
    ("Salvador", -12.977, -38.501, "BR", 2_873_000),
)

# Cities safe for planted texts: unique single-token names.
CORPUS_CITIES = {
    "IT": ("Milan", "Rome", "Turin"),
    "FR": ("Paris", "Lyon", "Marseille"),
    "DE": ("Berlin", "Munich", "Hamburg"),
    "US": ("Chicago", "Boston", "Seattle"),
    "ES": ("Madrid", "Seville"),
    "BR": ("Recife", "Salvador"),
}

_CITY_COORDS = {(name, country): (lat, lon) for name, lat, lon, country, _ in GAZETTEER_ROWS}

_SURVIVOR_SCENES = ("street", "park", "shop", "supermarket")
_SCENE_TO_PLACE = {
    "street": "street/square", "park": "park", "shop": "shop",
    "supermarket": "shop", "hospital": "hospital",
}
_ACTIVITIES = ("shopping", "socializing", "queuing", "working")
_MASK_OPTIONS = ("Yes", "Some of them", "No")
_MASK_TYPES = ("Surgical", "Cloth")


@dataclass(frozen=True)
class CountryPlan:
    code: str
    countable: int  # location-validated, mask-countable posts
    vetoed: int  # posts whose location-check truth is the veto answer
    mask_rates: tuple[float, float, float]  # yes / some / no fractions

    @property
    def resolved(self) -> int:
        return self.countable + self.vetoed

    def mask_counts(self) -> tuple[int, int, int]:
        yes = round(self.countable * self.mask_rates[0])
        some = round(self.countable * self.mask_rates[1])
        no = self.countable - yes - some
        if no < 0:
            raise ValueError(f"mask rates for {self.code} overflow the countable total")
        return yes, some, no


_DEFAULT_RATES = {
    "IT": (0.60, 0.25, 0.15),
    "FR": (0.50, 0.30, 0.20),
    "DE": (0.40, 0.35, 0.25),
    "US": (0.70, 0.20, 0.10),
    "ES": (0.30, 0.40, 0.30),
    "BR": (0.55, 0.25, 0.20),
}
_DEFAULT_WEIGHTS = (("IT", 0.30), ("FR", 0.25), ("DE", 0.20), ("US", 0.15), ("ES", 0.10))


def _apportion(total: int, weights: list[float]) -> list[int]:
    """Largest-remainder apportionment: integer shares summing to total."""
    raw = [total * w for w in weights]
    shares = [int(r) for r in raw]
    remainder = total - sum(shares)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - shares[i]), i))
    for i in order[:remainder]:
        shares[i] += 1
    return shares


def default_country_plan(
    resolved_n: int,
    veto_frac: float = 0.10,
    small_country: Optional[tuple[str, int]] = ("BR", 49),
) -> tuple[CountryPlan, ...]:
    """Country allocation for `resolved_n` posts, optionally pinning one
    country to an exact countable total (to sit just under a threshold)."""
    plans = []
    remaining = resolved_n
    if small_country is not None:
        code, countable = small_country
        if countable >= resolved_n:
            raise ValueError("small country swallows the whole corpus")
        plans.append(CountryPlan(code, countable, 0, _DEFAULT_RATES[code]))
        remaining -= countable
    codes = [c for c, _ in _DEFAULT_WEIGHTS]
    shares = _apportion(remaining, [w for _, w in _DEFAULT_WEIGHTS])
    for code, share in zip(codes, shares):
        vetoed = round(share * veto_frac)
        plans.append(CountryPlan(code, share - vetoed, vetoed, _DEFAULT_RATES[code]))
    return tuple(p for p in plans if p.resolved > 0)


@dataclass(frozen=True)
class CorpusSpec:
    n_records: int = 10_000
    retweet_frac: float = 0.10
    url_dup_frac: float = 0.10
    phash_dup_frac: float = 0.05
    non_photo_frac: float = 0.08  # fractions of dedup survivors, one filter each
    nsfw_frac: float = 0.02
    solo_person_frac: float = 0.06
    private_scene_frac: float = 0.04
    resolvable_frac: float = 0.60  # of filter survivors
    native_frac: float = 0.03  # of resolved posts carry a native geotag
    country_plan: Optional[tuple[CountryPlan, ...]] = None
    image_size: int = 64
    seed: int = 20200513


@dataclass
class StageCounts:
    crawled: int
    eligible: int
    after_url_dedup: int
    after_phash_dedup: int
    after_filters: int
    geolocated: int
    tasks: int
    annotated: int
    location_validated: int
    filter_drops: dict[str, int] = field(default_factory=dict)
    native_geolocated: int = 0

    def to_json_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class CorpusManifest:
    spec: CorpusSpec
    counts: StageCounts
    per_country: dict[str, dict[str, int]]
    posts_path: Path
    truth_path: Path
    gazetteer_path: Path
    images_dir: Path

    def save(self, path: Path) -> None:
        payload = {
            "counts": self.counts.to_json_dict(),
            "per_country": self.per_country,
            "seed": self.spec.seed,
            "n_records": self.spec.n_records,
        }
        path.write_text(json.dumps(payload, indent=2), encoding="utf-8")


def expected_counts(spec: CorpusSpec) -> tuple[StageCounts, tuple[CountryPlan, ...]]:
    n = spec.n_records
    n_retweet = round(n * spec.retweet_frac)
    n_urldup = round(n * spec.url_dup_frac)
    n_phashdup = round(n * spec.phash_dup_frac)
    n_base = n - n_retweet - n_urldup - n_phashdup
    if n_base <= 0:
        raise ValueError("corpus spec leaves no unique records")
    drops = {
        "photo": round(n_base * spec.non_photo_frac),
        "nsfw": round(n_base * spec.nsfw_frac),
        "person": round(n_base * spec.solo_person_frac),
        "scene": round(n_base * spec.private_scene_frac),
    }
    survivors = n_base - sum(drops.values())
    if survivors <= 0:
        raise ValueError("filters drop the whole corpus")
    plan = spec.country_plan or default_country_plan(round(survivors * spec.resolvable_frac))
    resolved = sum(p.resolved for p in plan)
    if resolved > survivors:
        raise ValueError("country plan resolves more posts than survive the filters")
    counts = StageCounts(
        crawled=n,
        eligible=n - n_retweet,
        after_url_dedup=n - n_retweet - n_urldup,
        after_phash_dedup=n_base,
        after_filters=survivors,
        geolocated=resolved,
        tasks=resolved,
        annotated=resolved,
        location_validated=sum(p.countable for p in plan),
        filter_drops=drops,
        native_geolocated=round(resolved * spec.native_frac),
    )
    return counts, plan


def _chroma_field(rng: np.random.Generator) -> np.ndarray:
    coeffs = np.zeros((32, 32))
    coeffs[:4, :4] = rng.uniform(-1.0, 1.0, (4, 4))
    f = idct(idct(coeffs, axis=0, norm="ortho"), axis=1, norm="ortho")
    peak = float(np.max(np.abs(f)))
    return f * (35.0 / peak) if peak > 0 else f


def smooth_image(rng: np.random.Generator, size: int) -> Image.Image:
    """Photo-like low-frequency raster built from designed spectra.

    The luma is synthesized from an 8x8 coefficient grid with exactly half
    the coefficients positive and half negative, so its hash bits sit far
    from the median decision boundary: mild resampling, blur, or saturation
    changes cannot flip them. Chroma rides on two luma-neutral fields so the
    image is genuinely colorful without touching the luma."""
    amps = rng.uniform(60.0, 140.0, size=64)
    rest = np.array([1.0] * 31 + [-1.0] * 32)
    rng.shuffle(rest)
    signs = np.concatenate([[1.0], rest])  # brightness term stays positive
    block = signs * amps
    block[0] += 2800.0
    coeffs = np.zeros((32, 32))
    coeffs[:8, :8] = block.reshape(8, 8)
    luma = idct(idct(coeffs, axis=0, norm="ortho"), axis=1, norm="ortho")
    lo, hi = float(luma.min()), float(luma.max())
    luma = 45.0 + (luma - lo) * (165.0 / (hi - lo))
    d = _chroma_field(rng)
    e = _chroma_field(rng)
    rgb = np.stack(
        [luma + d, luma - (0.299 * d + 0.114 * e) / 0.587, luma + e], axis=-1
    )
    base = Image.fromarray(np.clip(rgb, 0, 255).astype(np.uint8), "RGB")
    return base.resize((size, size), Image.BILINEAR)


def noise_image(rng: np.random.Generator, size: int) -> Image.Image:
    """Full-resolution white noise; unrelated pairs should hash far apart."""
    return Image.fromarray(rng.uniform(0, 255, size=(size, size, 3)).astype(np.uint8), "RGB")


def rescale(img: Image.Image, factor: float) -> Image.Image:
    w = max(8, int(round(img.width * factor)))
    h = max(8, int(round(img.height * factor)))
    return img.resize((w, h), Image.BILINEAR)


def blur(img: Image.Image, sigma: float) -> Image.Image:
    return img.filter(ImageFilter.GaussianBlur(radius=sigma))


def saturate(img: Image.Image, factor: float) -> Image.Image:
    return ImageEnhance.Color(img).enhance(factor)


def _save(img: Image.Image, path: Path) -> None:
    img.save(path, format="PNG", compress_level=1)


def _timestamp(slot: int) -> str:
    return (_EPOCH + timedelta(seconds=2 * slot)).isoformat()


def _dup_timestamp(slot: int) -> str:
    return (_EPOCH + timedelta(seconds=2 * slot + 1)).isoformat()


def generate_corpus(spec: CorpusSpec, out_dir: str | Path) -> CorpusManifest:
    """Write posts.jsonl, truth.jsonl, gazetteer.tsv, manifest.json, and the
    image directory for a corpus whose funnel counts are known exactly."""
    out = Path(out_dir)
    images_dir = out / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    counts, plan = expected_counts(spec)
    rng = random.Random(spec.seed)
    img_rng = np.random.default_rng(spec.seed)

    n_retweet = counts.crawled - counts.eligible
    n_urldup = counts.eligible - counts.after_url_dedup
    n_phashdup = counts.after_url_dedup - counts.after_phash_dedup
    n_base = counts.after_phash_dedup

    roles = (
        ["photo"] * counts.filter_drops["photo"]
        + ["nsfw"] * counts.filter_drops["nsfw"]
        + ["person"] * counts.filter_drops["person"]
        + ["scene"] * counts.filter_drops["scene"]
        + ["survivor"] * counts.after_filters
    )
    rng.shuffle(roles)

    # Resolution assignment over survivor slots, in deterministic order:
    # (country, vetoed?, mask value or None) per resolved slot, None for the
    # rest. Mask values only matter for countable (non-vetoed) posts.
    survivor_fates: list[Optional[tuple[str, bool, Optional[str]]]] = []
    for p in plan:
        yes, some, no = p.mask_counts()
        survivor_fates.extend([(p.code, False, "Yes")] * yes)
        survivor_fates.extend([(p.code, False, "Some of them")] * some)
        survivor_fates.extend([(p.code, False, "No")] * no)
        survivor_fates.extend([(p.code, True, None)] * p.vetoed)
    survivor_fates.extend([None] * (counts.after_filters - len(survivor_fates)))
    rng.shuffle(survivor_fates)
    resolved_slots = [i for i, fate in enumerate(survivor_fates) if fate is not None]
    native_slots = set(resolved_slots[: counts.native_geolocated])

    posts: list[dict] = []
    truths: list[dict] = []
    base_urls: list[str] = []
    base_hashes: list[int] = []
    base_images: list[Path] = []
    seen_hashes: set[int] = set()
    survivor_idx = 0
    city_cursor: dict[str, int] = {}

    def next_city(country: str) -> str:
        cities = CORPUS_CITIES[country]
        k = city_cursor.get(country, 0)
        city_cursor[country] = k + 1
        return cities[k % len(cities)]

    for i in range(n_base):
        post_id = f"p{i:06d}"
        role = roles[i]
        # Image unique at hash level; regenerate on the (rare) collision so
        # the planted duplicate count is exact at threshold 0.
        for _ in range(50):
            img = smooth_image(img_rng, spec.image_size)
            h = phash_image(img).bits
            if h not in seen_hashes:
                break
        else:
            raise RuntimeError("could not generate a hash-unique image")
        seen_hashes.add(h)
        image_name = f"{post_id}.png"
        _save(img, images_dir / image_name)
        base_hashes.append(h)
        base_images.append(images_dir / image_name)
        url = f"https://img.example/{post_id}.png"
        base_urls.append(url)

        if role == "photo":
            label = {"is_photo": False, "nsfw": False, "scene": "street", "people": 3}
        elif role == "nsfw":
            label = {"is_photo": True, "nsfw": True, "scene": "street", "people": 2}
        elif role == "person":
            label = {"is_photo": True, "nsfw": False, "scene": "street", "people": 1}
        elif role == "scene":
            label = {"is_photo": True, "nsfw": False, "scene": "home", "people": 2}
        else:
            label = {
                "is_photo": True,
                "nsfw": False,
                "scene": _SURVIVOR_SCENES[i % len(_SURVIVOR_SCENES)],
                "people": 2 + i % 4,
            }

        text = _TEMPLATES[i % len(_TEMPLATES)]
        user_location = None
        native_geo = None
        country = None
        mask_value = _MASK_OPTIONS[i % len(_MASK_OPTIONS)]
        veto = False
        if role == "survivor":
            fate = survivor_fates[survivor_idx]
            slot = survivor_idx
            survivor_idx += 1
            if fate is not None:
                country, veto, planted_mask = fate
                if planted_mask is not None:
                    mask_value = planted_mask
                city = next_city(country)
                if slot in native_slots:
                    lat, lon = _CITY_COORDS[(city, country)]
                    native_geo = {"lat": lat + 0.05, "lon": lon + 0.05}
                elif slot % 2 == 0:
                    text = f"{text} in {city}"
                else:
                    user_location = city

        people = label["people"]
        answers = {
            "q1": "Yes" if label["is_photo"] else "No",
            "q2": "Yes",
            "q3": "Yes" if people >= 1 else "No",
            "q4": mask_value,
            "q5": _MASK_TYPES[i % len(_MASK_TYPES)],
            "q6": "Yes",
            "q7": str(people) if people < 5 else "5 or more",
            "q8": ("Yes", "No")[i % 2],
            "q9": "Yes" if label["scene"] in _SCENE_TO_PLACE else "No",
            "q10": _SCENE_TO_PLACE.get(label["scene"], "other"),
            "q11": _ACTIVITIES[i % len(_ACTIVITIES)],
            "q12": "Surely not" if veto else "Yes",
        }
        posts.append({
            "post_id": post_id,
            "text": text,
            "created_at": _timestamp(i),
            "user_location": user_location,
            "image_url": url,
            "image_path": image_name,
            "native_geo": native_geo,
            "is_retweet": False,
            "lang": "en",
        })
        truths.append({"post_id": post_id, **label, "country": country, "answers": answers})

    # URL duplicates: same URL as a base record, later timestamp.
    for j in range(n_urldup):
        src = j % n_base
        post_id = f"u{j:06d}"
        posts.append({
            "post_id": post_id,
            "text": _TEMPLATES[j % len(_TEMPLATES)],
            "created_at": _dup_timestamp(src),
            "user_location": None,
            "image_url": base_urls[src],
            "image_path": f"p{src:06d}.png",
            "native_geo": None,
            "is_retweet": False,
            "lang": "en",
        })
        truths.append({"post_id": post_id, "is_photo": True, "nsfw": False,
                       "scene": "street", "people": 2, "country": None,
                       "answers": {}})

    # Hash near-duplicates: fresh URL, image is a rescale of a base image
    # (exact byte copy when the rescale ever shifts a bit).
    variant_kinds = ("up", "down", "copy")
    for j in range(n_phashdup):
        src = (n_base - 1 - j) % n_base
        post_id = f"d{j:06d}"
        image_name = f"{post_id}.png"
        kind = variant_kinds[j % len(variant_kinds)]
        with Image.open(base_images[src]) as src_img:
            src_img.load()
            if kind == "up":
                variant = rescale(src_img, 2.0)
            elif kind == "down":
                variant = rescale(src_img, 0.5)
            else:
                variant = src_img.copy()
            if phash_image(variant).bits != base_hashes[src]:
                variant = src_img.copy()
        _save(variant, images_dir / image_name)
        posts.append({
            "post_id": post_id,
            "text": _TEMPLATES[j % len(_TEMPLATES)],
            "created_at": _dup_timestamp(src),
            "user_location": None,
            "image_url": f"https://img.example/{post_id}.png",
            "image_path": image_name,
            "native_geo": None,
            "is_retweet": False,
            "lang": "en",
        })
        truths.append({"post_id": post_id, "is_photo": True, "nsfw": False,
                       "scene": "street", "people": 2, "country": None,
                       "answers": {}})

    # Retweets: filtered out before anything touches their image.
    for j in range(n_retweet):
        src = j % n_base
        post_id = f"r{j:06d}"
        posts.append({
            "post_id": post_id,
            "text": f"RT {_TEMPLATES[j % len(_TEMPLATES)]}",
            "created_at": _timestamp(n_base + j),
            "user_location": None,
            "image_url": f"https://img.example/{post_id}.png",
            "image_path": f"p{src:06d}.png",
            "native_geo": None,
            "is_retweet": True,
            "lang": "en",
        })
        truths.append({"post_id": post_id, "is_photo": True, "nsfw": False,
                       "scene": "street", "people": 2, "country": None,
                       "answers": {}})

    rng.shuffle(posts)
    posts_path = out / "posts.jsonl"
    with open(posts_path, "w", encoding="utf-8") as fh:
        for post in posts:
            fh.write(json.dumps(post, ensure_ascii=False) + "\n")
    truth_path = out / "truth.jsonl"
    with open(truth_path, "w", encoding="utf-8") as fh:
        for truth in truths:
            fh.write(json.dumps(truth, ensure_ascii=False) + "\n")
    gazetteer_path = out / "gazetteer.tsv"
    write_gazetteer(gazetteer_path)

    per_country = {}
    for p in plan:
        yes, some, no = p.mask_counts()
        per_country[p.code] = {
            "countable": p.countable, "vetoed": p.vetoed,
            "yes": yes, "some": some, "no": no,
        }
    manifest = CorpusManifest(
        spec=spec, counts=counts, per_country=per_country,
        posts_path=posts_path, truth_path=truth_path,
        gazetteer_path=gazetteer_path, images_dir=images_dir,
    )
    manifest.save(out / "manifest.json")
    return manifest


def write_gazetteer(path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name, lat, lon, country, population in GAZETTEER_ROWS:
            fh.write(f"{name}\t{lat}\t{lon}\t{country}\t{population}\n")


def write_boundaries(path: str | Path, countries: Optional[list[str]] = None) -> None:
    """Toy country boundary file: one square per country around a city."""
    anchors: dict[str, tuple[float, float]] = {}
    for name, lat, lon, country, _ in GAZETTEER_ROWS:
        anchors.setdefault(country, (lat, lon))
    features = []
    for country, (lat, lon) in sorted(anchors.items()):
        if countries is not None and country not in countries:
            continue
        ring = [
            [lon - 2, lat - 2], [lon + 2, lat - 2],
            [lon + 2, lat + 2], [lon - 2, lat + 2], [lon - 2, lat - 2],
        ]
        features.append({
            "type": "Feature",
            "properties": {"iso_a2": country, "name": country},
            "geometry": {"type": "Polygon", "coordinates": [ring]},
        })
    Path(path).write_text(
        json.dumps({"type": "FeatureCollection", "features": features}),
        encoding="utf-8",
    )
