from __future__ import annotations

import json
import math
import random

import pytest

from sensepipe.crowd import AggregatedAnnotation, UNRESOLVED
from sensepipe.indicators import (
    ContractError,
    IndicatorTable,
    SurveyRecord,
    UndefinedCorrelationError,
    compare,
    compute_indicators,
    export_choropleth,
    load_survey_csv,
    map_survey,
    pearson,
)
from sensepipe.synth import write_boundaries


def annotation(post_id, mask, location_valid=True):
    values = {"q4": mask}
    return AggregatedAnnotation(post_id=post_id, values=values,
                                location_valid=location_valid,
                                contributing_workers=("a", "b", "c"))


def planted_annotations(country_counts):
    """country_counts: {country: (yes, some, no)} -> (annotations, countries)."""
    annotations, countries = [], {}
    serial = 0
    for country, (yes, some, no) in country_counts.items():
        for mask, k in (("Yes", yes), ("Some of them", some), ("No", no)):
            for _ in range(k):
                pid = f"p{serial:05d}"
                serial += 1
                annotations.append(annotation(pid, mask))
                countries[pid] = country
    return annotations, countries


class TestComputeIndicators:
    def test_sixty_post_country_percentages(self):
        annotations, countries = planted_annotations({"IT": (30, 18, 12)})
        table = compute_indicators(annotations, countries, threshold=50)
        row = table.row_for("IT")
        assert row.n_valid == 60
        assert row.percentages == {"Yes": 0.50, "Some of them": 0.30, "No": 0.20}
        assert abs(sum(row.percentages.values()) - 1.0) < 1e-9

    def test_country_below_threshold_omitted(self):
        annotations, countries = planted_annotations({"IT": (25, 14, 10), "FR": (30, 15, 10)})
        table = compute_indicators(annotations, countries, threshold=50)
        assert table.row_for("IT") is None  # 49 valid posts
        assert table.row_for("FR") is not None

    def test_cannot_tell_excluded_from_both_sides(self):
        annotations, countries = planted_annotations({"IT": (30, 15, 10)})
        extra = [annotation(f"x{i}", "Cannot tell") for i in range(20)]
        for e in extra:
            countries[e.post_id] = "IT"
        table = compute_indicators(annotations + extra, countries, threshold=50)
        assert table.row_for("IT").n_valid == 55

    def test_unresolved_and_null_excluded(self):
        annotations, countries = planted_annotations({"IT": (40, 10, 5)})
        extra = [annotation("x1", UNRESOLVED), annotation("x2", None)]
        for e in extra:
            countries[e.post_id] = "IT"
        table = compute_indicators(annotations + extra, countries, threshold=50)
        assert table.row_for("IT").n_valid == 55

    def test_vetoed_posts_excluded_entirely(self):
        annotations, countries = planted_annotations({"IT": (40, 10, 5)})
        vetoed = annotation("x1", "Yes", location_valid=False)
        countries["x1"] = "IT"
        table = compute_indicators(annotations + [vetoed], countries, threshold=50)
        assert table.row_for("IT").counts["Yes"] == 40

    def test_empty_table_valid(self):
        table = compute_indicators([], {}, threshold=50)
        assert table.rows == ()

    def test_threshold_monotonicity(self):
        annotations, countries = planted_annotations(
            {"IT": (30, 18, 12), "FR": (20, 20, 15), "DE": (9, 9, 9)}
        )
        previous = None
        for threshold in (0, 10, 28, 50, 56, 60, 100):
            table = compute_indicators(annotations, countries, threshold=threshold)
            current = {r.country for r in table.rows}
            if previous is not None:
                assert current <= previous
            previous = current


class TestMapSurvey:
    def test_published_mapping_example(self):
        record = SurveyRecord("IT", "w1", (0.1, 0.1, 0.2, 0.3, 0.3))
        assert map_survey(record) == pytest.approx(
            {"No": 0.2, "Sometimes": 0.2, "Yes": 0.6}
        )

    def test_boundary_all_never(self):
        assert map_survey(SurveyRecord("IT", "w", (1, 0, 0, 0, 0))) == {
            "No": 1, "Sometimes": 0, "Yes": 0,
        }

    def test_boundary_all_sometimes(self):
        assert map_survey(SurveyRecord("IT", "w", (0, 0, 1, 0, 0))) == {
            "No": 0, "Sometimes": 1, "Yes": 0,
        }

    def test_mass_preserved_exactly(self):
        rng = random.Random(3)
        for _ in range(100):
            raw = [rng.random() for _ in range(5)]
            total = sum(raw)
            fractions = tuple(v / total for v in raw)
            record = SurveyRecord("IT", "w", fractions)
            assert sum(map_survey(record).values()) == pytest.approx(
                sum(fractions), abs=1e-12
            )

    def test_bad_sum_rejected(self):
        with pytest.raises(ContractError):
            SurveyRecord("IT", "w", (0.5, 0.5, 0.5, 0.0, 0.0))


def pearson_oracle(x, y):
    """Direct product-moment formula, a different evaluation route from the
    implementation's mean-centered form."""
    n = len(x)
    sx, sy = sum(x), sum(y)
    sxx = sum(v * v for v in x)
    syy = sum(v * v for v in y)
    sxy = sum(a * b for a, b in zip(x, y))
    return (n * sxy - sx * sy) / math.sqrt((n * sxx - sx * sx) * (n * syy - sy * sy))


class TestPearson:
    def test_perfect_linear(self):
        assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-12)

    def test_perfect_inverse(self):
        assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-12)

    def test_matches_direct_formula_oracle(self):
        x, y = [1.0, 2.0, 3.0, 4.0], [1.0, 3.0, 2.0, 4.0]
        assert pearson(x, y) == pytest.approx(pearson_oracle(x, y), abs=1e-12)

    def test_hundred_random_series_match_oracle(self):
        rng = random.Random(17)
        for _ in range(100):
            n = rng.randint(2, 40)
            x = [rng.uniform(-50, 50) for _ in range(n)]
            y = [rng.uniform(-50, 50) for _ in range(n)]
            if len(set(x)) < 2 or len(set(y)) < 2:
                continue
            assert pearson(x, y) == pytest.approx(pearson_oracle(x, y), abs=1e-12)

    def test_affine_invariance(self):
        rng = random.Random(23)
        for _ in range(100):
            x = [rng.uniform(0, 1) for _ in range(10)]
            a = rng.uniform(0.1, 5.0)
            b = rng.uniform(-3, 3)
            assert pearson(x, [a * v + b for v in x]) == pytest.approx(1.0, abs=1e-12)
            assert pearson(x, [-a * v + b for v in x]) == pytest.approx(-1.0, abs=1e-12)

    def test_constant_series_undefined(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson([1.0, 1.0, 1.0], [1, 2, 3])

    def test_short_series_undefined(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson([1.0], [2.0])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ContractError):
            pearson([1, 2], [1, 2, 3])


def survey_from_three(country, no, sometimes, yes):
    # invert the three-category mapping: put mass on (rarely, sometimes, always)
    return SurveyRecord(country, "w1", (0.0, no, sometimes, 0.0, yes))


class TestCompare:
    def make_table(self, rates):
        annotations, countries = planted_annotations(rates)
        return compute_indicators(annotations, countries, threshold=0)

    def test_disjoint_countries_reports_none_in_common(self):
        table = self.make_table({"IT": (10, 5, 5)})
        survey = [survey_from_three("JP", 0.3, 0.3, 0.4)]
        reports = compare(table, survey)
        assert all(r.r is None and r.reason == "none in common" for r in reports)
        assert all(r.n_common == 0 for r in reports)

    def test_identical_distributions_give_r_one(self):
        rates = {
            "IT": (50, 30, 20), "FR": (40, 30, 30), "DE": (30, 30, 40),
            "US": (60, 20, 20), "ES": (20, 30, 50),
        }
        table = self.make_table(rates)
        survey = []
        for country, (yes, some, no) in rates.items():
            total = yes + some + no
            survey.append(survey_from_three(
                country, no / total, some / total, yes / total
            ))
        reports = {r.category: r for r in compare(table, survey)}
        assert reports["Yes"].r == pytest.approx(1.0, abs=1e-12)
        assert reports["No"].r == pytest.approx(1.0, abs=1e-12)
        assert reports["Yes"].n_common == 5

    def test_noisy_planted_matches_direct_oracle(self):
        rng = random.Random(31)
        rates = {
            f"A{chr(65 + i)}": (rng.randint(10, 60), rng.randint(5, 30), rng.randint(5, 30))
            for i in range(8)
        }
        survey = []
        for country, (yes, some, no) in rates.items():
            total = yes + some + no
            jitter = rng.uniform(-0.05, 0.05)
            no_frac = min(max(no / total + jitter, 0.0), 1.0)
            yes_frac = min(max(yes / total - jitter, 0.0), 1.0 - no_frac)
            sometimes = 1.0 - no_frac - yes_frac
            survey.append(survey_from_three(country, no_frac, sometimes, yes_frac))
        table = self.make_table(rates)
        reports = {r.category: r for r in compare(table, survey)}
        for category in ("Yes", "No"):
            pairs = reports[category].country_pairs
            x = [p[1] for p in pairs]
            y = [p[2] for p in pairs]
            assert reports[category].r == pytest.approx(pearson_oracle(x, y), abs=1e-12)

    def test_row_order_does_not_change_r(self):
        rates = {"IT": (50, 30, 20), "FR": (40, 30, 30), "DE": (30, 30, 40)}
        table = self.make_table(rates)
        survey = [
            survey_from_three("DE", 0.3, 0.3, 0.4),
            survey_from_three("IT", 0.2, 0.2, 0.6),
            survey_from_three("FR", 0.25, 0.35, 0.4),
        ]
        r1 = {r.category: r.r for r in compare(table, survey)}
        r2 = {r.category: r.r for r in compare(table, list(reversed(survey)))}
        for category in r1:
            assert r1[category] == pytest.approx(r2[category], abs=1e-12)

    def test_undefined_correlation_reported_not_coerced(self):
        # Two shared countries with identical pipeline values: constant series.
        table = self.make_table({"IT": (10, 5, 5), "FR": (10, 5, 5)})
        survey = [survey_from_three("IT", 0.3, 0.3, 0.4),
                  survey_from_three("FR", 0.2, 0.3, 0.5)]
        reports = {r.category: r for r in compare(table, survey)}
        assert reports["Yes"].r is None
        assert "constant" in reports["Yes"].reason


class TestSurveyCsv:
    def test_load(self, tmp_path):
        path = tmp_path / "survey.csv"
        path.write_text(
            "country,period,not_at_all,rarely,sometimes,frequently,always\n"
            "IT,2020-05,0.1,0.1,0.2,0.3,0.3\n",
            encoding="utf-8",
        )
        records = load_survey_csv(path)
        assert records[0].country == "IT"
        assert map_survey(records[0])["Yes"] == pytest.approx(0.6)


class TestExportChoropleth:
    def test_empty_table_gives_empty_feature_collection(self, tmp_path):
        table = IndicatorTable("q4", 50, ("Yes", "Some of them", "No"), ())
        export = export_choropleth(table, None, tmp_path)
        collection = json.loads(export.geojson_path.read_text())
        assert collection == {"type": "FeatureCollection", "features": []}
        assert export.html_path.exists()

    def test_single_country_feature_properties(self, tmp_path):
        boundaries = tmp_path / "borders.geojson"
        write_boundaries(boundaries)
        annotations, countries = planted_annotations({"IT": (30, 18, 12)})
        table = compute_indicators(annotations, countries, threshold=50)
        export = export_choropleth(table, boundaries, tmp_path)
        collection = json.loads(export.geojson_path.read_text())
        assert len(collection["features"]) == 1
        properties = collection["features"][0]["properties"]
        assert properties["iso_a2"] == "IT"
        assert properties["yes_pct"] == pytest.approx(0.5)
        assert properties["n_valid"] == 60

    def test_missing_boundary_warned_but_kept_in_csv(self, tmp_path):
        boundaries = tmp_path / "borders.geojson"
        write_boundaries(boundaries, countries=["FR"])
        annotations, countries = planted_annotations({"IT": (30, 18, 12)})
        table = compute_indicators(annotations, countries, threshold=50)
        export = export_choropleth(table, boundaries, tmp_path)
        assert any("IT" in w for w in export.warnings)
        csv_text = export.csv_path.read_text()
        assert "IT,Yes," in csv_text

    def test_csv_shape(self, tmp_path):
        annotations, countries = planted_annotations({"IT": (30, 18, 12)})
        table = compute_indicators(annotations, countries, threshold=50)
        export = export_choropleth(table, None, tmp_path)
        lines = export.csv_path.read_text().strip().splitlines()
        assert lines[0] == "country,option,percentage,count"
        assert len(lines) == 1 + 3  # one row per option

    def test_twenty_three_countries_give_twenty_three_features(self, tmp_path):
        codes = [f"{a}{b}" for a in "ABC" for b in "ABCDEFGH"][:23]
        annotations, countries = planted_annotations(
            {code: (30 + i, 15, 10) for i, code in enumerate(codes)}
        )
        features = [{
            "type": "Feature",
            "properties": {"iso_a2": code},
            "geometry": {"type": "Polygon",
                         "coordinates": [[[i, 0], [i + 1, 0], [i + 1, 1], [i, 0]]]},
        } for i, code in enumerate(codes)]
        boundaries = tmp_path / "borders.geojson"
        boundaries.write_text(json.dumps({"type": "FeatureCollection",
                                          "features": features}))
        table = compute_indicators(annotations, countries, threshold=50)
        assert len(table.rows) == 23
        export = export_choropleth(table, boundaries, tmp_path)
        collection = json.loads(export.geojson_path.read_text())
        assert len(collection["features"]) == 23
        assert export.warnings == []

    def test_html_is_self_contained(self, tmp_path):
        boundaries = tmp_path / "borders.geojson"
        write_boundaries(boundaries)
        annotations, countries = planted_annotations({"IT": (30, 18, 12)})
        table = compute_indicators(annotations, countries, threshold=50)
        export = export_choropleth(table, boundaries, tmp_path)
        html_text = export.html_path.read_text()
        assert "<script src" not in html_text  # no external resources
        assert "FeatureCollection" in html_text
