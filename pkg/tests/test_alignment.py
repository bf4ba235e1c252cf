import json
import math
from functools import lru_cache

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairify.alignment import (
    EARTH_RADIUS,
    InsufficientData,
    OntologyMap,
    PartialExtent,
    PlaceUnknown,
    TemporalUnparseable,
    align_field_names,
    build_profile,
    dedupe_keywords,
    default_gazetteer,
    default_ontology,
    embed_profile,
    extract_profile,
    find_jsonld,
    interpolate_missing,
    levenshtein,
    lonlat_to_mercator,
    mercator_to_lonlat,
    parse_dms,
    register_geography,
    similarity,
    standardize_time,
    transform_coords,
)
from fairify.extractor import ExtractedValue
from fairify.profile import CoordinateRangeError, FairProfile, SpatialExtent, TemporalInterval, jsonld_dumps


# --- field names ----------------------------------------------------------------

def reference_distance(a, b):
    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0 or j == 0:
            return i + j
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))
    return d(len(a), len(b))


@given(st.text(alphabet="abcde ", max_size=10), st.text(alphabet="abcde ", max_size=10))
def test_levenshtein_matches_recursive_definition(a, b):
    assert levenshtein(a, b) == reference_distance(a, b)
    assert 0.0 <= similarity(a, b) <= 1.0


def test_exact_title():
    assert align_field_names({"Title": "x"}) == {"title": "x"}


def test_dataset_creator_synonym():
    onto = default_ontology()
    entry = next(e for e in onto.entries if e.term == "creator")
    assert "dataset creator" in entry.synonyms
    assert onto.match("Dataset Creator(s)") == "creator"


def test_unknown_name_goes_to_extra():
    assert align_field_names({"frobnicator": "v"}) == {"extra:frobnicator": "v"}


def test_near_miss_matches_above_threshold():
    assert default_ontology().match("Publsher") == "publisher"


def test_synonym_sets_must_be_disjoint():
    with pytest.raises(ValueError, match="both"):
        OntologyMap.parse("title\tname\ncreator\tname\n")


def test_ontology_covers_canonical_terms():
    assert set(default_ontology().terms) == {
        "identifier", "title", "description", "keyword", "creator", "publisher", "issued",
        "license", "access_url", "spatial", "temporal", "references",
    }


# --- time -----------------------------------------------------------------------

def test_single_day():
    assert standardize_time("2020-01-05") == TemporalInterval("2020-01-05", "2020-01-05")


def test_year_range_expansion():
    assert standardize_time("2010 to 2018") == TemporalInterval("2010-01-01", "2018-12-31")
    assert standardize_time("between March 2001 and May 2003") == TemporalInterval("2001-03-01", "2003-05-31")


def test_unparseable_keeps_raw():
    with pytest.raises(TemporalUnparseable) as err:
        standardize_time("soonish")
    assert err.value.raw == "soonish"


def test_reversed_range_is_unparseable():
    with pytest.raises(TemporalUnparseable):
        standardize_time("2018 to 2010")


# --- coordinates ----------------------------------------------------------------

def test_mercator_origin_and_edge():
    assert mercator_to_lonlat(0, 0) == (0.0, 0.0)
    lon, lat = mercator_to_lonlat(EARTH_RADIUS * math.pi, 0)
    assert lon == pytest.approx(180.0, abs=1e-12) and lat == 0.0


def test_mercator_published_reference_point():
    # EPSG:3857 coordinates of 10°E 50°N as given by standard GIS tools
    x, y = lonlat_to_mercator(10.0, 50.0)
    assert x == pytest.approx(1113194.9079327357, rel=1e-9)
    assert y == pytest.approx(6446275.841017158, rel=1e-9)


@settings(max_examples=300)
@given(st.floats(-180, 180), st.floats(-85, 85))
def test_mercator_round_trip(lon, lat):
    back = mercator_to_lonlat(*lonlat_to_mercator(lon, lat))
    assert back[0] == pytest.approx(lon, rel=1e-6, abs=1e-9)
    assert back[1] == pytest.approx(lat, rel=1e-6, abs=1e-9)


def test_dms_forms():
    assert parse_dms("30°15'00\"N") == 30.25
    assert parse_dms((30, 15, 0, "S")) == -30.25


def test_mercator_bbox_transform():
    ext = transform_coords((0, 0, EARTH_RADIUS * math.pi / 2, 0), "web_mercator")
    assert ext.bbox == pytest.approx((0, 0, 90, 0))
    assert ext.source_crs == "web_mercator"


def test_out_of_range_latitude_named():
    with pytest.raises(CoordinateRangeError, match="95"):
        transform_coords([(10, 95)], "wgs84_decimal")


# --- gazetteer ------------------------------------------------------------------

def gazetteer_line(name):
    from importlib import resources

    text = resources.files("fairify.data").joinpath("gazetteer.tsv").read_text("utf-8")
    row = next(line for line in text.splitlines() if line.split("\t")[0] == name)
    return tuple(float(v) for v in row.split("\t")[1].split(","))


def test_china_from_bundled_file():
    assert register_geography("China").bbox == gazetteer_line("China")
    assert register_geography("CHINA ").bbox == gazetteer_line("China")


def test_unknown_place():
    with pytest.raises(PlaceUnknown) as err:
        register_geography("Atlantis")
    assert err.value.name == "Atlantis"


def test_gazetteer_size():
    assert len(default_gazetteer()) >= 150


# --- interpolation --------------------------------------------------------------

def test_point_becomes_degenerate_bbox():
    spatial, temporal = interpolate_missing((100, 30))
    assert spatial.bbox == (100, 30, 100, 30) and temporal is None


def test_open_interval_takes_year():
    _, temporal = interpolate_missing(interval=("2015", None))
    assert temporal == TemporalInterval("2015-01-01", "2015-12-31")


def test_missing_edge_mirrored_about_centroid():
    spatial, _ = interpolate_missing(PartialExtent(80, 20, None, 30, centroid=(90, 25)))
    assert spatial.bbox == (80, 20, 100, 30)


def test_nothing_to_interpolate():
    with pytest.raises(InsufficientData):
        interpolate_missing()


# --- profile assembly -----------------------------------------------------------

def complete_canonical():
    return {
        "identifier": "https://doi.org/10.1234/abc",
        "title": "Landslide inventory",
        "description": "Landslides mapped from imagery.",
        "keyword": "landslide, mapping",
        "creator": "Li Na",
        "publisher": "Data Center",
        "issued": "3 May 2020",
        "license": "CC BY 4.0",
        "access_url": "https://example.org/get",
        "references": ["https://example.org/paper"],
    }


def test_complete_profile():
    extracted = [ExtractedValue("temporal_start", "2010", (0, 4)), ExtractedValue("temporal_end", "2012", (8, 12)),
                 ExtractedValue("bbox", "85,28,95,32", (0, 1))]
    p = build_profile(complete_canonical(), extracted, "s1")
    assert p.identifier == "10.1234/abc"
    assert p.license == "CC-BY-4.0"
    assert p.issued == "2020-05-03"
    assert p.keywords == ["landslide", "mapping"]
    assert p.temporal == TemporalInterval("2010-01-01", "2012-12-31")
    assert p.spatial.bbox == (85, 28, 95, 32)
    assert all(p.has(f) for f in ("title", "description", "creator", "publisher", "access_url", "references"))


def test_keyword_dedupe_keeps_first_casing():
    assert dedupe_keywords(["Flood", "flood"]) == ["Flood"]


def test_bad_identifier_kept_in_extra():
    p = build_profile({"identifier": "not-a-doi"}, [], "s1")
    assert p.identifier is None and p.extra["identifier"] == "not-a-doi"


def test_named_place_resolved():
    p = build_profile({"spatial": "China"}, [], "s1")
    assert p.spatial.bbox == gazetteer_line("China")


# --- embedding ------------------------------------------------------------------

def minimal():
    return FairProfile(source_id="s1", title="T")


def test_single_block_inserted():
    out = embed_profile("<html><head><title>x</title></head><body></body></html>", minimal())
    assert out.count("application/ld+json") == 1
    assert out.index("application/ld+json") < out.index("</head>")


def test_embed_round_trip_and_idempotent():
    p = build_profile(complete_canonical(), [ExtractedValue("bbox", "85,28,95,32", (0, 1))], "s1")
    html = "<html><head></head><body><p>page</p></body></html>"
    once = embed_profile(html, p)
    assert extract_profile(once) == p
    twice = embed_profile(once, p)
    assert twice == once
    assert len(find_jsonld(twice)) == 1


def test_embed_without_head():
    out = embed_profile("<p>bare</p>", minimal())
    assert extract_profile(out) == minimal()


def test_foreign_block_left_alone():
    html = '<html><head><script type="application/ld+json">{"@type": "Organization"}</script></head></html>'
    out = embed_profile(html, minimal())
    assert [d["@type"] for d in find_jsonld(out)] == ["Organization", "dcat:Dataset"]


def test_block_is_byte_stable():
    text = embed_profile("<head></head>", minimal())
    body = text[text.index("{"):text.rindex("}") + 1]
    doc = json.loads(body)
    assert list(doc) == sorted(doc)
    assert body == jsonld_dumps(doc)
    assert embed_profile("<head></head>", minimal()) == text


def test_profile_rejects_inverted_bbox():
    with pytest.raises(CoordinateRangeError):
        SpatialExtent((10, 0, 5, 1))
