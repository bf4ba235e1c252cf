"""Field alignment and spatiotemporal standardization into a FairProfile."""

from __future__ import annotations

import json
import math
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .dom_graph import TokenKind, tokenize_html
from .extractor import (
    ExtractedValue,
    _ANGLE_HEMI_RE,
    dms_to_decimal,
    extract_with_patterns,
    normalize_license,
)
from .patterns import DATE_EXPR, bounds_of, find_doi, is_doi, is_url, parse_date_expr
from .profile import (
    DATASET_TYPE,
    CoordinateRangeError,
    FairProfile,
    SpatialExtent,
    TemporalInterval,
    from_jsonld,
    jsonld_dumps,
    to_jsonld,
)

FIELD_THRESHOLD = 0.85
PLACE_THRESHOLD = 0.9
EARTH_RADIUS = 6378137.0
EXTRA_PREFIX = "extra:"


class TemporalUnparseable(ValueError):
    def __init__(self, raw: str):
        super().__init__(f"temporal unparseable: {raw!r}")
        self.raw = raw


class PlaceUnknown(LookupError):
    def __init__(self, name: str):
        super().__init__(f"place unknown: {name!r}")
        self.name = name


class InsufficientData(ValueError):
    pass


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        current = [i]
        for j, cb in enumerate(b, 1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb)))
        previous = current
    return previous[-1]


def similarity(a: str, b: str) -> float:
    if not a and not b:
        return 1.0
    return 1.0 - levenshtein(a, b) / max(len(a), len(b))


_SPACE_PUNCT = re.compile(r"[_\-/]+")
_OTHER_PUNCT = re.compile(r"[^\w\s]+")


def normalize_name(name: str) -> str:
    name = _SPACE_PUNCT.sub(" ", name.lower())
    name = _OTHER_PUNCT.sub("", name)
    return " ".join(name.split())


# ---------------------------------------------------------------------------
# ontology

@dataclass(frozen=True)
class OntologyEntry:
    term: str
    synonyms: frozenset[str]
    threshold: float = FIELD_THRESHOLD


@dataclass(frozen=True)
class OntologyMap:
    entries: tuple[OntologyEntry, ...]

    def __post_init__(self):
        seen: dict[str, str] = {}
        for entry in self.entries:
            for name in {normalize_name(entry.term), *entry.synonyms}:
                if name in seen and seen[name] != entry.term:
                    raise ValueError(f"synonym {name!r} listed under both {seen[name]!r} and {entry.term!r}")
                seen[name] = entry.term

    @property
    def terms(self) -> list[str]:
        return [e.term for e in self.entries]

    @classmethod
    def parse(cls, text: str) -> OntologyMap:
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise ValueError(f"ontology line {lineno}: expected term<TAB>synonyms[<TAB>threshold]")
            synonyms = frozenset(normalize_name(s) for s in parts[1].split(",") if s.strip())
            threshold = float(parts[2]) if len(parts) == 3 and parts[2].strip() else FIELD_THRESHOLD
            entries.append(OntologyEntry(parts[0].strip(), synonyms, threshold))
        return cls(tuple(entries))

    @classmethod
    def load(cls, path: str | Path) -> OntologyMap:
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def match(self, raw_name: str) -> str | None:
        name = normalize_name(raw_name)
        if not name:
            return None
        for entry in self.entries:
            if name == normalize_name(entry.term):
                return entry.term
        for entry in self.entries:
            if name in entry.synonyms:
                return entry.term
        best, best_score = None, -1.0
        for entry in self.entries:
            for candidate in (normalize_name(entry.term), *sorted(entry.synonyms)):
                score = similarity(name, candidate)
                if score >= entry.threshold and score > best_score:
                    best, best_score = entry.term, score
        return best


@lru_cache(maxsize=1)
def default_ontology() -> OntologyMap:
    return OntologyMap.parse(resources.files("fairify.data").joinpath("ontology.tsv").read_text("utf-8"))


def align_field_names(raw: Mapping[str, object], ontology: OntologyMap | None = None) -> dict[str, object]:
    """Map raw field names onto canonical terms; unknown names go under ``extra:``.

    When several raw names land on one term the longest value is kept.
    """
    ontology = ontology or default_ontology()
    out: dict[str, object] = {}
    for name, value in raw.items():
        if name.startswith(EXTRA_PREFIX):
            key = name
        else:
            key = ontology.match(name) or f"{EXTRA_PREFIX}{name.strip()}"
        if key not in out or len(str(value)) > len(str(out[key])):
            out[key] = value
    return out


# ---------------------------------------------------------------------------
# time

_TIME_RANGE_RE = re.compile(
    rf"(?:from\s+)?(?:between\s+(?P<a1>{DATE_EXPR})\s+and\s+(?P<b1>{DATE_EXPR})"
    rf"|(?P<a2>{DATE_EXPR})\s*(?:to|until|till|through|–|—|-|/)\s*(?P<b2>{DATE_EXPR}))",
    re.IGNORECASE,
)


def standardize_time(raw: str) -> TemporalInterval:
    text = " ".join(raw.split()).strip(" .,;:()[]")
    if not text:
        raise TemporalUnparseable(raw)
    single = parse_date_expr(text)
    if single is not None:
        return TemporalInterval(*bounds_of(single))
    m = _TIME_RANGE_RE.fullmatch(text)
    if m:
        a = m.group("a1") or m.group("a2")
        b = m.group("b1") or m.group("b2")
        start, end = parse_date_expr(a), parse_date_expr(b)
        if start is not None and end is not None:
            try:
                return TemporalInterval(bounds_of(start)[0], bounds_of(end)[1])
            except ValueError:
                pass
    raise TemporalUnparseable(raw)


# ---------------------------------------------------------------------------
# space

def mercator_to_lonlat(x: float, y: float) -> tuple[float, float]:
    lon = math.degrees(x / EARTH_RADIUS)
    lat = math.degrees(2.0 * math.atan(math.exp(y / EARTH_RADIUS)) - math.pi / 2.0)
    return lon, lat


def lonlat_to_mercator(lon: float, lat: float) -> tuple[float, float]:
    x = EARTH_RADIUS * math.radians(lon)
    y = EARTH_RADIUS * math.log(math.tan(math.pi / 4.0 + math.radians(lat) / 2.0))
    return x, y


def parse_dms(value) -> float:
    """Decimal degrees from ``"30°15'00\\"N"`` or a ``(deg, min, sec, hemisphere)`` tuple."""
    if isinstance(value, (tuple, list)):
        deg, minutes, seconds, hemi = value
        return dms_to_decimal(float(deg), float(minutes), float(seconds), str(hemi))
    m = _ANGLE_HEMI_RE.fullmatch(str(value).strip())
    if not m:
        raise ValueError(f"not a degree-minute-second coordinate: {value!r}")
    deg, minutes, seconds, hemi = m.groups()
    return dms_to_decimal(float(deg), float(minutes or 0), float(seconds or 0), hemi)


def _snap(v: float, limit: float) -> float:
    # float round-off at the domain edge (e.g. x = R*pi) must not read as out of range
    if limit < abs(v) <= limit + 1e-9:
        return math.copysign(limit, v)
    return v


def _checked(lon: float, lat: float) -> tuple[float, float]:
    lon, lat = _snap(lon, 180.0), _snap(lat, 90.0)
    if not -90.0 <= lat <= 90.0 or lat != lat:
        raise CoordinateRangeError(f"latitude {lat} is outside [-90, 90]")
    if not -180.0 <= lon <= 180.0 or lon != lon:
        raise CoordinateRangeError(f"longitude {lon} is outside [-180, 180]")
    return lon, lat


def transform_coords(points_or_bbox, source_crs: str) -> SpatialExtent:
    """Convert points ``[(x, y), ...]`` or a flat bbox ``(x0, y0, x1, y1)`` to a WGS84 extent."""
    if source_crs == "wgs84_decimal":
        convert = lambda x, y: (float(x), float(y))  # noqa: E731
    elif source_crs == "wgs84_dms":
        convert = lambda x, y: (parse_dms(x), parse_dms(y))  # noqa: E731
    elif source_crs == "web_mercator":
        convert = lambda x, y: mercator_to_lonlat(float(x), float(y))  # noqa: E731
    else:
        raise ValueError(f"unsupported source_crs {source_crs!r}")
    data = list(points_or_bbox)
    if len(data) == 4 and not isinstance(data[0], (tuple, list)):
        pairs = [(data[0], data[1]), (data[2], data[3])]
    else:
        pairs = [tuple(p) for p in data]
    if not pairs:
        raise InsufficientData("no coordinates given")
    lonlat = [_checked(*convert(x, y)) for x, y in pairs]
    lons = [p[0] for p in lonlat]
    lats = [p[1] for p in lonlat]
    return SpatialExtent((min(lons), min(lats), max(lons), max(lats)), source_crs)


@dataclass(frozen=True)
class Gazetteer:
    entries: dict[str, tuple[str, tuple[float, float, float, float]]]

    @staticmethod
    def key(name: str) -> str:
        return " ".join(name.casefold().split())

    @classmethod
    def parse(cls, text: str) -> Gazetteer:
        entries = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            name, _, nums = line.partition("\t")
            bbox = tuple(float(v) for v in nums.split(","))
            if len(bbox) != 4:
                raise ValueError(f"gazetteer line {lineno}: expected 4 bbox numbers")
            SpatialExtent(bbox, "named_place")
            entries[cls.key(name)] = (name.strip(), bbox)
        return cls(entries)

    @classmethod
    def load(cls, path: str | Path) -> Gazetteer:
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def __len__(self) -> int:
        return len(self.entries)


@lru_cache(maxsize=1)
def default_gazetteer() -> Gazetteer:
    return Gazetteer.parse(resources.files("fairify.data").joinpath("gazetteer.tsv").read_text("utf-8"))


def register_geography(place_name: str, gazetteer: Gazetteer | None = None) -> SpatialExtent:
    gazetteer = gazetteer or default_gazetteer()
    key = Gazetteer.key(place_name)
    hit = gazetteer.entries.get(key)
    if hit is None and key:
        best_score = 0.0
        for candidate in sorted(gazetteer.entries):
            score = similarity(key, candidate)
            if score >= PLACE_THRESHOLD and score > best_score:
                hit, best_score = gazetteer.entries[candidate], score
    if hit is None:
        raise PlaceUnknown(place_name)
    return SpatialExtent(hit[1], "named_place")


@dataclass(frozen=True)
class PartialExtent:
    """A bbox with at most one unknown edge, optionally with a known centre."""

    west: float | None
    south: float | None
    east: float | None
    north: float | None
    centroid: tuple[float, float] | None = None
    source_crs: str = "wgs84_decimal"


def _complete_bbox(p: PartialExtent) -> SpatialExtent:
    edges = [p.west, p.south, p.east, p.north]
    missing = [i for i, v in enumerate(edges) if v is None]
    if not missing:
        return SpatialExtent(tuple(edges), p.source_crs)
    if len(missing) > 1 or p.centroid is None:
        raise InsufficientData(f"cannot complete bbox with missing edges {missing} and centroid {p.centroid}")
    i = missing[0]
    opposite = (i + 2) % 4
    centre = p.centroid[i % 2]
    edges[i] = 2 * centre - edges[opposite]
    west, south, east, north = edges
    return SpatialExtent((min(west, east), min(south, north), max(west, east), max(south, north)), p.source_crs)


def interpolate_missing(extent=None, interval=None) -> tuple[SpatialExtent | None, TemporalInterval | None]:
    """Conservatively complete partial spatial and temporal information.

    A point becomes a degenerate bbox, a bbox missing one edge is mirrored
    about its centroid, and an interval missing one end takes the other end's
    own span (a year stays a whole year, a day becomes an instant).
    """
    spatial = temporal = None
    if isinstance(extent, SpatialExtent):
        spatial = extent
    elif isinstance(extent, PartialExtent):
        spatial = _complete_bbox(extent)
    elif extent is not None:
        lon, lat = _checked(*map(float, extent))
        spatial = SpatialExtent((lon, lat, lon, lat), "wgs84_decimal")

    if isinstance(interval, TemporalInterval):
        temporal = interval
    elif interval is not None:
        start, end = interval
        if start and end:
            temporal = TemporalInterval(standardize_time(start).start, standardize_time(end).end)
        elif start or end:
            temporal = standardize_time(start or end)

    if spatial is None and temporal is None:
        raise InsufficientData("insufficient spatiotemporal data")
    return spatial, temporal


# ---------------------------------------------------------------------------
# profile assembly

_KEYWORD_SPLIT = re.compile(r"\s*[,;|]\s*")
_WS = re.compile(r"\s+")


def _clean(value) -> str | None:
    if value is None:
        return None
    text = _WS.sub(" ", str(value)).strip()
    return text or None


def _split_keywords(value) -> list[str]:
    items = value if isinstance(value, (list, tuple)) else _KEYWORD_SPLIT.split(str(value))
    return [k for k in (_clean(i) for i in items) if k]


def dedupe_keywords(keywords: Sequence[str]) -> list[str]:
    seen: set[str] = set()
    out = []
    for k in keywords:
        if k.casefold() not in seen:
            seen.add(k.casefold())
            out.append(k)
    return out


def _normalize_identifier(raw: str) -> str | None:
    doi = find_doi(raw)
    if doi:
        return doi
    return raw if is_url(raw) else None


def _spatial_from_text(text: str, gazetteer: Gazetteer | None) -> SpatialExtent | None:
    for v in extract_with_patterns(text):
        if v.field == "bbox":
            return SpatialExtent(tuple(float(x) for x in v.value.split(",")), "wgs84_decimal")
        if v.field == "point":
            return interpolate_missing(tuple(float(x) for x in v.value.split(",")))[0]
    try:
        return register_geography(text, gazetteer)
    except PlaceUnknown:
        return None


def build_profile(canonical: Mapping[str, object], extracted: Sequence[ExtractedValue], source_id: str,
                  gazetteer: Gazetteer | None = None) -> FairProfile:
    """Merge classifier-located fields with extracted values into a valid profile.

    Extracted values win for spatial and temporal coverage; located nodes win
    for title and description. Values that fail validation are kept under
    ``extra`` instead of being dropped.
    """
    profile = FairProfile(source_id=source_id)
    extra: dict[str, str] = {}
    by_field: dict[str, list[ExtractedValue]] = {}
    for v in extracted:
        by_field.setdefault(v.field, []).append(v)

    def first(field: str) -> str | None:
        return by_field[field][0].value if field in by_field else None

    for key, value in canonical.items():
        if key.startswith(EXTRA_PREFIX) and _clean(value):
            extra[key[len(EXTRA_PREFIX):]] = _clean(value)

    profile.title = _clean(canonical.get("title"))
    profile.description = _clean(canonical.get("description"))
    profile.creator = _clean(canonical.get("creator"))
    profile.publisher = _clean(canonical.get("publisher")) or first("institution")

    raw_id = _clean(canonical.get("identifier"))
    if raw_id:
        profile.identifier = _normalize_identifier(raw_id)
        if profile.identifier is None:
            extra["identifier"] = raw_id
    if profile.identifier is None and first("identifier"):
        profile.identifier = first("identifier")

    raw_license = _clean(canonical.get("license"))
    if raw_license:
        profile.license = normalize_license(raw_license) or next(
            (v.value for v in extract_with_patterns(raw_license) if v.field == "license"), None
        )
        if profile.license is None:
            extra["license"] = raw_license
    if profile.license is None and first("license"):
        profile.license = first("license")

    raw_issued = _clean(canonical.get("issued"))
    if raw_issued:
        profile.issued = parse_date_expr(raw_issued) or next(
            (v.value for v in extract_with_patterns(raw_issued) if v.field == "date"), None
        )
        if profile.issued is None:
            extra["issued"] = raw_issued
    if profile.issued is None and first("date"):
        profile.issued = first("date")

    raw_url = _clean(canonical.get("access_url"))
    if raw_url:
        if is_url(raw_url):
            profile.access_url = raw_url
        else:
            extra["access_url"] = raw_url

    keywords = _split_keywords(canonical["keyword"]) if canonical.get("keyword") else []
    keywords += [v.value for v in by_field.get("keywords", [])]
    profile.keywords = dedupe_keywords(keywords)

    refs = canonical.get("references") or []
    refs = refs if isinstance(refs, (list, tuple)) else re.split(r"[\s,;]+", str(refs))
    cleaned_refs = []
    for r in refs:
        r = _clean(r)
        if r and (is_url(r) or is_doi(r)) and r not in cleaned_refs:
            cleaned_refs.append(r)
    profile.references = cleaned_refs

    start, end = first("temporal_start"), first("temporal_end")
    if start or end:
        try:
            profile.temporal = interpolate_missing(None, (start, end))[1]
        except ValueError:
            pass
    raw_time = _clean(canonical.get("temporal"))
    if profile.temporal is None and raw_time:
        try:
            profile.temporal = standardize_time(raw_time)
        except TemporalUnparseable:
            found = [v for v in extract_with_patterns(raw_time) if v.field in ("temporal_start", "temporal_end")]
            if found:
                s = next((v.value for v in found if v.field == "temporal_start"), None)
                e = next((v.value for v in found if v.field == "temporal_end"), None)
                profile.temporal = interpolate_missing(None, (s, e))[1]
            else:
                extra["temporal"] = raw_time

    if "bbox" in by_field:
        profile.spatial = SpatialExtent(tuple(float(x) for x in first("bbox").split(",")), "wgs84_decimal")
    elif "point" in by_field:
        profile.spatial = interpolate_missing(tuple(float(x) for x in first("point").split(",")))[0]
    raw_space = _clean(canonical.get("spatial"))
    if profile.spatial is None and raw_space:
        profile.spatial = _spatial_from_text(raw_space, gazetteer)
        if profile.spatial is None:
            extra["spatial"] = raw_space

    profile.extra = extra
    profile.check()
    return profile


# ---------------------------------------------------------------------------
# embedding

JSONLD_MIME = "application/ld+json"


def _ld_blocks(html: str):
    """Yield (script_start, script_end, body) for every JSON-LD script element."""
    tokens = tokenize_html(html)
    for i, tok in enumerate(tokens):
        if tok.kind is not TokenKind.START_TAG or tok.name != "script":
            continue
        if (tok.attr("type") or "").strip().lower() != JSONLD_MIME:
            continue
        body, end = "", tok.span[1]
        j = i + 1
        if j < len(tokens) and tokens[j].kind is TokenKind.TEXT:
            body, end = tokens[j].text, tokens[j].span[1]
            j += 1
        if j < len(tokens) and tokens[j].kind is TokenKind.END_TAG and tokens[j].name == "script":
            end = tokens[j].span[1]
        yield tok.span[0], end, body


def find_jsonld(html: str) -> list[dict]:
    """Every parseable JSON-LD object in the page (lists are flattened)."""
    out = []
    for _, _, body in _ld_blocks(html):
        try:
            doc = json.loads(body)
        except ValueError:
            continue
        docs = doc if isinstance(doc, list) else doc.get("@graph", [doc]) if isinstance(doc, dict) else []
        out.extend(d for d in docs if isinstance(d, dict))
    return out


def extract_profile(html: str) -> FairProfile | None:
    for doc in find_jsonld(html):
        if doc.get("@type") == DATASET_TYPE:
            return from_jsonld(doc)
    return None


def embed_profile(html: str, profile: FairProfile) -> str:
    """Place the profile's DCAT JSON-LD in the document head, replacing an earlier one."""
    block = f'<script type="{JSONLD_MIME}">\n{jsonld_dumps(to_jsonld(profile))}\n</script>'
    for start, end, body in _ld_blocks(html):
        try:
            doc = json.loads(body)
        except ValueError:
            continue
        if isinstance(doc, dict) and doc.get("@type") == DATASET_TYPE:
            return html[:start] + block + html[end:]
    tokens = tokenize_html(html)
    for tok in tokens:
        if tok.kind is TokenKind.END_TAG and tok.name == "head":
            return html[:tok.span[0]] + block + html[tok.span[0]:]
    for tok in tokens:
        if tok.kind in (TokenKind.START_TAG, TokenKind.SELF_CLOSING_TAG) and tok.name == "head":
            return html[:tok.span[1]] + block + html[tok.span[1]:]
    for tok in tokens:
        if tok.kind is TokenKind.START_TAG and tok.name == "html":
            return html[:tok.span[1]] + f"<head>{block}</head>" + html[tok.span[1]:]
    return f"<head>{block}</head>" + html
