"""Canonical dataset profile and its DCAT JSON-LD form."""

from __future__ import annotations

import datetime as dt
import json
import re
from dataclasses import dataclass, field, fields

from .patterns import is_doi, is_url

SOURCE_CRS = ("wgs84_dms", "wgs84_decimal", "web_mercator", "named_place")

JSONLD_CONTEXT = {
    "dcat": "http://www.w3.org/ns/dcat#",
    "dct": "http://purl.org/dc/terms/",
    "fairify": "urn:fairify:",
}
DATASET_TYPE = "dcat:Dataset"


class CoordinateRangeError(ValueError):
    pass


@dataclass(frozen=True)
class TemporalInterval:
    start: str
    end: str

    def __post_init__(self):
        try:
            start = dt.date.fromisoformat(self.start)
            end = dt.date.fromisoformat(self.end)
        except (TypeError, ValueError):
            raise ValueError(f"temporal bounds must be ISO dates, got {self.start!r}..{self.end!r}") from None
        if start > end:
            raise ValueError(f"temporal start {self.start} is after end {self.end}")

    def overlaps(self, other: TemporalInterval) -> bool:
        return self.start <= other.end and other.start <= self.end


@dataclass(frozen=True)
class SpatialExtent:
    bbox: tuple[float, float, float, float]
    source_crs: str = "wgs84_decimal"

    def __post_init__(self):
        west, south, east, north = self.bbox
        for name, v in zip(("west", "south", "east", "north"), self.bbox):
            if v != v or v in (float("inf"), float("-inf")):
                raise CoordinateRangeError(f"{name} edge is not finite: {v}")
        if not -180 <= west <= east <= 180:
            raise CoordinateRangeError(f"longitudes must satisfy -180 <= west <= east <= 180, got {west}, {east}")
        if not -90 <= south <= north <= 90:
            raise CoordinateRangeError(f"latitudes must satisfy -90 <= south <= north <= 90, got {south}, {north}")
        if self.source_crs not in SOURCE_CRS:
            raise ValueError(f"unknown source_crs {self.source_crs!r}")
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))

    @property
    def centroid(self) -> tuple[float, float]:
        west, south, east, north = self.bbox
        return (west + east) / 2, (south + north) / 2

    def intersects(self, other: SpatialExtent) -> bool:
        a, b = self.bbox, other.bbox
        return a[0] <= b[2] and b[0] <= a[2] and a[1] <= b[3] and b[1] <= a[3]


@dataclass
class FairProfile:
    source_id: str
    identifier: str | None = None
    title: str | None = None
    description: str | None = None
    keywords: list[str] = field(default_factory=list)
    creator: str | None = None
    publisher: str | None = None
    issued: str | None = None
    license: str | None = None
    access_url: str | None = None
    spatial: SpatialExtent | None = None
    temporal: TemporalInterval | None = None
    references: list[str] = field(default_factory=list)
    extra: dict[str, str] = field(default_factory=dict)

    def check(self) -> None:
        if self.identifier is not None and not (is_doi(self.identifier) or is_url(self.identifier)):
            raise ValueError(f"identifier {self.identifier!r} is neither a DOI nor a URL")
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, str) and not value.strip():
                raise ValueError(f"field {f.name} is populated but blank")
            if isinstance(value, list) and any(not str(v).strip() for v in value):
                raise ValueError(f"field {f.name} contains a blank entry")

    def has(self, name: str) -> bool:
        value = getattr(self, name)
        return bool(value) if isinstance(value, (list, dict)) else value is not None

    # flat dictionary used by the catalog log -------------------------------

    def to_dict(self) -> dict:
        out: dict = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None or value == [] or value == {}:
                continue
            if isinstance(value, SpatialExtent):
                value = {"bbox": list(value.bbox), "source_crs": value.source_crs}
            elif isinstance(value, TemporalInterval):
                value = {"start": value.start, "end": value.end}
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> FairProfile:
        data = dict(data)
        if sp := data.get("spatial"):
            data["spatial"] = SpatialExtent(tuple(sp["bbox"]), sp.get("source_crs", "wgs84_decimal"))
        if tp := data.get("temporal"):
            data["temporal"] = TemporalInterval(tp["start"], tp["end"])
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown profile keys: {sorted(unknown)}")
        return cls(**data)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))


# ---------------------------------------------------------------------------
# DCAT JSON-LD

def _wkt(bbox: tuple[float, float, float, float]) -> str:
    w, s, e, n = (repr(v) for v in bbox)
    return f"POLYGON(({w} {s},{e} {s},{e} {n},{w} {n},{w} {s}))"


_NUM = re.compile(r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?|-?inf|nan")


def _parse_wkt(text: str) -> tuple[float, float, float, float]:
    nums = [float(v) for v in _NUM.findall(text)]
    if len(nums) < 6:
        raise ValueError(f"bbox literal is not a polygon: {text!r}")
    return nums[0], nums[1], nums[2], nums[5]


def to_jsonld(profile: FairProfile) -> dict:
    doc: dict = {"@context": JSONLD_CONTEXT, "@type": DATASET_TYPE, "fairify:sourceId": profile.source_id}
    simple = {
        "identifier": "dct:identifier", "title": "dct:title", "description": "dct:description",
        "creator": "dct:creator", "publisher": "dct:publisher", "issued": "dct:issued",
        "license": "dct:license", "access_url": "dcat:accessURL",
    }
    for attr, term in simple.items():
        value = getattr(profile, attr)
        if value is not None:
            doc[term] = value
    if profile.keywords:
        doc["dcat:keyword"] = list(profile.keywords)
    if profile.references:
        doc["dct:references"] = list(profile.references)
    if profile.spatial is not None:
        doc["dct:spatial"] = {
            "@type": "dct:Location",
            "dcat:bbox": _wkt(profile.spatial.bbox),
            "fairify:sourceCrs": profile.spatial.source_crs,
        }
    if profile.temporal is not None:
        doc["dct:temporal"] = {
            "@type": "dct:PeriodOfTime",
            "dcat:startDate": profile.temporal.start,
            "dcat:endDate": profile.temporal.end,
        }
    if profile.extra:
        doc["fairify:extra"] = dict(profile.extra)
    return doc


def from_jsonld(doc: dict) -> FairProfile:
    if doc.get("@type") != DATASET_TYPE:
        raise ValueError(f"expected @type {DATASET_TYPE}, got {doc.get('@type')!r}")
    spatial = temporal = None
    if sp := doc.get("dct:spatial"):
        spatial = SpatialExtent(_parse_wkt(sp["dcat:bbox"]), sp.get("fairify:sourceCrs", "wgs84_decimal"))
    if tp := doc.get("dct:temporal"):
        temporal = TemporalInterval(tp["dcat:startDate"], tp["dcat:endDate"])
    return FairProfile(
        source_id=doc.get("fairify:sourceId", ""),
        identifier=doc.get("dct:identifier"),
        title=doc.get("dct:title"),
        description=doc.get("dct:description"),
        keywords=list(doc.get("dcat:keyword", [])),
        creator=doc.get("dct:creator"),
        publisher=doc.get("dct:publisher"),
        issued=doc.get("dct:issued"),
        license=doc.get("dct:license"),
        access_url=doc.get("dcat:accessURL"),
        spatial=spatial,
        temporal=temporal,
        references=list(doc.get("dct:references", [])),
        extra=dict(doc.get("fairify:extra", {})),
    )


def jsonld_dumps(doc: dict) -> str:
    # "<" is escaped so no string value can close the surrounding script element
    text = json.dumps(doc, sort_keys=True, ensure_ascii=False, indent=2)
    return text.replace("<", "\\u003c")
