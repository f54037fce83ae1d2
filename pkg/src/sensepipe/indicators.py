"""Per-country answer-percentage indicators, survey comparison, and export.

Indicators only count location-validated posts whose aggregated answer is a
real option ("Cannot tell" answers and unresolved ties are excluded from
both numerator and denominator), and a country only appears once it has
enough observations. Survey distributions are folded to three categories so
the two sources are comparable, and agreement is measured with Pearson's r,
reported as undefined rather than coerced when it does not exist.
"""

from __future__ import annotations

import csv
import html
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .crowd import AggregatedAnnotation, MASK_QUESTION, QuestionSchema, DEFAULT_QUESTIONS, UNRESOLVED

DEFAULT_THRESHOLD = 50

SURVEY_LEVELS = ("not_at_all", "rarely", "sometimes", "frequently", "always")

# Options never counted toward an indicator (case-insensitive match).
EXCLUDED_OPTIONS = frozenset({"cannot tell"})


class ContractError(Exception):
    pass


class UndefinedCorrelationError(Exception):
    pass


@dataclass(frozen=True)
class CountryRow:
    country: str
    counts: dict[str, int]
    n_valid: int
    percentages: dict[str, float]


@dataclass(frozen=True)
class IndicatorTable:
    question_id: str
    threshold: int
    options: tuple[str, ...]
    rows: tuple[CountryRow, ...]

    def row_for(self, country: str) -> Optional[CountryRow]:
        for row in self.rows:
            if row.country == country:
                return row
        return None

    def to_json_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "threshold": self.threshold,
            "options": list(self.options),
            "rows": [
                {
                    "country": r.country,
                    "counts": r.counts,
                    "n_valid": r.n_valid,
                    "percentages": r.percentages,
                }
                for r in self.rows
            ],
        }


@dataclass(frozen=True)
class SurveyRecord:
    """One country's survey response distribution over the five frequency
    levels, as fractions that sum to one."""

    country: str
    period: str
    fractions: tuple[float, float, float, float, float]

    def __post_init__(self) -> None:
        if any(not 0.0 <= f <= 1.0 for f in self.fractions):
            raise ContractError(f"survey fractions out of range for {self.country}")
        if not math.isclose(sum(self.fractions), 1.0, abs_tol=1e-6):
            raise ContractError(
                f"survey fractions for {self.country} sum to {sum(self.fractions)}"
            )


@dataclass(frozen=True)
class CorrelationReport:
    question_id: str
    category: str
    r: Optional[float]
    n_common: int
    country_pairs: tuple[tuple[str, float, float], ...]
    reason: Optional[str] = None  # set when r is undefined

    def to_json_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "category": self.category,
            "r": self.r,
            "n_common": self.n_common,
            "country_pairs": [list(p) for p in self.country_pairs],
            "reason": self.reason,
        }


def _included_options(schema: QuestionSchema, question_id: str) -> tuple[str, ...]:
    question = schema.by_id(question_id)
    return tuple(o for o in question.options if o.lower() not in EXCLUDED_OPTIONS)


def compute_indicators(
    annotations: Sequence[AggregatedAnnotation],
    countries: Mapping[str, str],
    question_id: str = MASK_QUESTION,
    threshold: int = DEFAULT_THRESHOLD,
    schema: QuestionSchema = DEFAULT_QUESTIONS,
) -> IndicatorTable:
    """Per-country counts and percentages for one question.

    `countries` maps post_id to ISO code (from the geocode stage). Posts with
    a vetoed location, a null or unresolved answer, or an excluded option do
    not count at all; countries below the threshold are omitted.
    """
    options = _included_options(schema, question_id)
    counts: dict[str, dict[str, int]] = {}
    for annotation in annotations:
        if not annotation.location_valid:
            continue
        country = countries.get(annotation.post_id)
        if country is None:
            continue
        value = annotation.values.get(question_id)
        if value is None or value == UNRESOLVED or value not in options:
            continue
        counts.setdefault(country, {o: 0 for o in options})[value] += 1
    rows = []
    for country in sorted(counts):
        by_option = counts[country]
        n_valid = sum(by_option.values())
        if n_valid < threshold:
            continue
        rows.append(CountryRow(
            country=country,
            counts=dict(by_option),
            n_valid=n_valid,
            percentages={o: by_option[o] / n_valid for o in options},
        ))
    return IndicatorTable(question_id, threshold, options, tuple(rows))


def map_survey(record: SurveyRecord) -> dict[str, float]:
    """Fold the five survey levels to three categories:
    {not at all, rarely} -> No, {sometimes} -> Sometimes,
    {frequently, always} -> Yes. Total mass is preserved exactly."""
    n, r, s, f, a = record.fractions
    return {"No": n + r, "Sometimes": s, "Yes": f + a}


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Product-moment correlation. Undefined (raises) for series shorter than
    two points or with zero variance."""
    if len(x) != len(y):
        raise ContractError("series must have equal length")
    n = len(x)
    if n < 2:
        raise UndefinedCorrelationError(f"need at least 2 points, got {n}")
    mean_x = sum(x) / n
    mean_y = sum(y) / n
    dx = [v - mean_x for v in x]
    dy = [v - mean_y for v in y]
    var_x = sum(d * d for d in dx)
    var_y = sum(d * d for d in dy)
    if var_x == 0.0 or var_y == 0.0:
        raise UndefinedCorrelationError("constant series has no defined correlation")
    cov = sum(a * b for a, b in zip(dx, dy))
    return cov / math.sqrt(var_x * var_y)


# How table options pair with mapped survey categories in the comparison.
CATEGORY_PAIRS = {"Yes": "Yes", "No": "No", "Some of them": "Sometimes"}


def compare(
    table: IndicatorTable,
    survey: Sequence[SurveyRecord],
    categories: Sequence[str] = ("Yes", "No"),
) -> list[CorrelationReport]:
    """Correlate the pipeline's per-country option fractions against mapped
    survey fractions over the countries both sources cover. An empty
    intersection or a degenerate series yields an explicit undefined report,
    never a fabricated zero."""
    survey_by_country: dict[str, SurveyRecord] = {}
    for record in survey:
        survey_by_country.setdefault(record.country, record)
    common = sorted({row.country for row in table.rows} & set(survey_by_country))
    reports = []
    for category in categories:
        if category not in CATEGORY_PAIRS:
            raise ContractError(f"no survey mapping for category {category!r}")
        survey_key = CATEGORY_PAIRS[category]
        pairs = tuple(
            (
                country,
                table.row_for(country).percentages[category],  # type: ignore[union-attr]
                map_survey(survey_by_country[country])[survey_key],
            )
            for country in common
        )
        if not pairs:
            reports.append(CorrelationReport(
                table.question_id, category, r=None, n_common=0,
                country_pairs=(), reason="none in common",
            ))
            continue
        xs = [p[1] for p in pairs]
        ys = [p[2] for p in pairs]
        try:
            r = pearson(xs, ys)
            reason = None
        except UndefinedCorrelationError as exc:
            r = None
            reason = str(exc)
        reports.append(CorrelationReport(
            table.question_id, category, r=r, n_common=len(pairs),
            country_pairs=pairs, reason=reason,
        ))
    return reports


def load_survey_csv(path: str | Path) -> list[SurveyRecord]:
    """CSV columns: country, period, not_at_all, rarely, sometimes,
    frequently, always."""
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(SurveyRecord(
                country=row["country"].strip(),
                period=row.get("period", "").strip(),
                fractions=tuple(float(row[level]) for level in SURVEY_LEVELS),  # type: ignore[arg-type]
            ))
    return records


@dataclass
class ChoroplethExport:
    csv_path: Path
    geojson_path: Path
    html_path: Path
    warnings: list[str] = field(default_factory=list)


def _detect_iso_code(feature: dict) -> Optional[str]:
    properties = feature.get("properties") or {}
    for key in ("iso_a2", "ISO_A2", "iso2", "ISO2", "id"):
        value = properties.get(key)
        if isinstance(value, str) and len(value) == 2:
            return value.upper()
    fid = feature.get("id")
    if isinstance(fid, str) and len(fid) == 2:
        return fid.upper()
    return None


_HTML_TEMPLATE = """<!DOCTYPE html>
<html>
<head>
<meta charset="utf-8">
<title>{title}</title>
<style>
  body {{ font-family: sans-serif; margin: 1rem; }}
  svg {{ border: 1px solid #ccc; background: #eef6fb; }}
  path {{ stroke: #555; stroke-width: 0.5; }}
  #tip {{ position: absolute; background: #fff; border: 1px solid #888;
         padding: 4px 8px; pointer-events: none; display: none; font-size: 13px; }}
</style>
</head>
<body>
<h1>{title}</h1>
<p>Hover a country for its counts. Countries below the observation threshold are not drawn.</p>
<div id="tip"></div>
<svg id="map" width="960" height="480" viewBox="0 0 960 480"></svg>
<script>
const GEOJSON = {geojson};
const ROWS = {rows};
const PRIMARY = {primary};
function project(lon, lat) {{
  return [(lon + 180) / 360 * 960, (90 - lat) / 180 * 480];
}}
function ringPath(ring) {{
  return ring.map((pt, i) => (i ? "L" : "M") + project(pt[0], pt[1]).join(",")).join("") + "Z";
}}
function geomPath(geom) {{
  if (geom.type === "Polygon") return geom.coordinates.map(ringPath).join("");
  if (geom.type === "MultiPolygon")
    return geom.coordinates.map(poly => poly.map(ringPath).join("")).join("");
  return "";
}}
function color(v) {{
  if (v === null || v === undefined) return "#ddd";
  const t = Math.max(0, Math.min(1, v));
  const r = Math.round(255 * (1 - t)), g = Math.round(80 + 140 * t);
  return `rgb(${{r}},${{g}},90)`;
}}
const byCountry = Object.fromEntries(ROWS.map(r => [r.country, r]));
const svg = document.getElementById("map");
const tip = document.getElementById("tip");
for (const feature of GEOJSON.features) {{
  const iso = feature.properties && (feature.properties.iso_a2 || feature.properties.ISO_A2 || feature.properties.id);
  const row = byCountry[iso];
  const el = document.createElementNS("http://www.w3.org/2000/svg", "path");
  el.setAttribute("d", geomPath(feature.geometry));
  el.setAttribute("fill", color(row ? row.percentages[PRIMARY] : null));
  el.addEventListener("mousemove", ev => {{
    if (!row) return;
    const counts = Object.entries(row.counts).map(([k, v]) => `${{k}}: ${{v}}`).join(", ");
    tip.textContent = `${{iso}} — n=${{row.n_valid}} (${{counts}})`;
    tip.style.left = (ev.pageX + 12) + "px";
    tip.style.top = (ev.pageY + 12) + "px";
    tip.style.display = "block";
  }});
  el.addEventListener("mouseleave", () => {{ tip.style.display = "none"; }});
  svg.appendChild(el);
}}
</script>
</body>
</html>
"""


def export_choropleth(
    table: IndicatorTable,
    boundaries_path: Optional[str | Path],
    out_dir: str | Path,
    primary_option: Optional[str] = None,
) -> ChoroplethExport:
    """Write the indicator table as a CSV, a GeoJSON join against a country
    boundary file, and a self-contained interactive HTML map. Countries
    missing from the boundary file stay in the CSV and are reported as
    warnings."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    primary = primary_option or (table.options[0] if table.options else "")
    csv_path = out / f"indicators_{table.question_id}.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["country", "option", "percentage", "count"])
        for row in table.rows:
            for option in table.options:
                writer.writerow([row.country, option,
                                 f"{row.percentages[option]:.6f}", row.counts[option]])

    features_by_iso: dict[str, dict] = {}
    if boundaries_path is not None:
        with open(boundaries_path, encoding="utf-8") as fh:
            boundaries = json.load(fh)
        for feature in boundaries.get("features", []):
            iso = _detect_iso_code(feature)
            if iso is not None:
                features_by_iso[iso] = feature

    warnings = []
    features = []
    for row in table.rows:
        feature = features_by_iso.get(row.country)
        if feature is None:
            warnings.append(f"no boundary geometry for {row.country}")
            continue
        properties = dict(feature.get("properties") or {})
        properties.update({
            "iso_a2": row.country,
            "n_valid": row.n_valid,
            "question_id": table.question_id,
        })
        for option in table.options:
            slug = option.lower().replace(" ", "_").replace("/", "_")
            properties[f"{slug}_pct"] = row.percentages[option]
            properties[f"{slug}_count"] = row.counts[option]
        features.append({
            "type": "Feature",
            "geometry": feature.get("geometry"),
            "properties": properties,
        })
    collection = {"type": "FeatureCollection", "features": features}
    geojson_path = out / f"indicators_{table.question_id}.geojson"
    with open(geojson_path, "w", encoding="utf-8") as fh:
        json.dump(collection, fh, ensure_ascii=False)

    html_path = out / f"choropleth_{table.question_id}.html"
    rows_json = json.dumps([
        {"country": r.country, "n_valid": r.n_valid,
         "counts": r.counts, "percentages": r.percentages}
        for r in table.rows
    ])
    with open(html_path, "w", encoding="utf-8") as fh:
        fh.write(_HTML_TEMPLATE.format(
            title=html.escape(f"Indicator {table.question_id} ({primary})"),
            geojson=json.dumps(collection),
            rows=rows_json,
            primary=json.dumps(primary),
        ))
    return ChoroplethExport(csv_path, geojson_path, html_path, warnings)
