"""Fine-grained value extraction from long text nodes.

Pattern rules are the offline default. An optional HTTP text-model backend
can contribute additional values; its failures never stop the pipeline.
"""

from __future__ import annotations

import json
import logging
import re
import time
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import requests

from .patterns import DATE_EXPR, DOI_RE, parse_date_expr, strip_doi

logger = logging.getLogger(__name__)

PATTERN_CONFIDENCE = 0.9
DEFAULT_LENGTH_THRESHOLD = 200
SINGULAR_FIELDS = frozenset({"identifier", "license", "temporal_start", "temporal_end", "bbox", "point", "date"})


@dataclass(frozen=True)
class ExtractedValue:
    field: str
    value: str
    span: tuple[int, int]
    confidence: float = PATTERN_CONFIDENCE
    method: str = "pattern"


@dataclass(frozen=True)
class ExtractionRequest:
    field: str
    text: str
    instruction: str = ""

    def __post_init__(self):
        if not self.text:
            raise ValueError("extraction request needs non-empty text")


@dataclass(frozen=True)
class BackendConfig:
    endpoint: str = ""
    timeout: float = 10.0
    max_retries: int = 3
    enabled: bool = False
    concurrency: int = 4

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError(f"backend timeout must be positive, got {self.timeout}")


# ---------------------------------------------------------------------------
# normalizers: each maps the exact span text to the stored value

def normalize_doi(text: str) -> str:
    return strip_doi(text)


def normalize_date(text: str) -> str:
    value = parse_date_expr(text)
    if value is None:
        raise ValueError(f"not a date: {text!r}")
    return value


def _fmt(x: float) -> str:
    out = f"{x:.6f}".rstrip("0").rstrip(".")
    return "0" if out == "-0" else out


_DEG = r"\d{1,3}(?:\.\d+)?"
_DMS = r"\d{1,3}\s*°\s*\d{1,2}(?:\.\d+)?\s*['′]\s*(?:\d{1,2}(?:\.\d+)?\s*(?:\"|″|'')\s*)?"
_ANGLE = rf"(?:{_DMS}|{_DEG}\s*°)"
_RANGE_SEP = r"\s*(?:–|—|-|to|~)\s*"
LAT_RANGE = rf"{_ANGLE}\s*[NS]{_RANGE_SEP}{_ANGLE}\s*[NS]"
LON_RANGE = rf"{_ANGLE}\s*[EW]{_RANGE_SEP}{_ANGLE}\s*[EW]"
_PAIR_SEP = r"\s*[,;/]?\s*(?:and\s+)?"
_BBOX_RE = re.compile(rf"(?:{LAT_RANGE}{_PAIR_SEP}{LON_RANGE}|{LON_RANGE}{_PAIR_SEP}{LAT_RANGE})(?![\w°])")
_POINT_RE = re.compile(
    rf"(?:{_ANGLE}\s*[NS]{_PAIR_SEP}{_ANGLE}\s*[EW]|{_ANGLE}\s*[EW]{_PAIR_SEP}{_ANGLE}\s*[NS])(?![\w°])"
    r"|\blat(?:itude)?\s*[:=]?\s*-?\d{1,2}(?:\.\d+)?\s*°?\s*[,;]?\s*lon(?:g|gitude)?\s*[:=]?\s*-?\d{1,3}(?:\.\d+)?",
    re.IGNORECASE,
)
_ANGLE_HEMI_RE = re.compile(
    r"(\d{1,3}(?:\.\d+)?)\s*°?\s*(?:(\d{1,2}(?:\.\d+)?)\s*['′]\s*(?:(\d{1,2}(?:\.\d+)?)\s*(?:\"|″|'')\s*)?)?([NSEW])"
)
_LATLON_WORDS_RE = re.compile(
    r"lat(?:itude)?\s*[:=]?\s*(-?\d{1,2}(?:\.\d+)?)\s*°?\s*[,;]?\s*lon(?:g|gitude)?\s*[:=]?\s*(-?\d{1,3}(?:\.\d+)?)",
    re.IGNORECASE,
)


def dms_to_decimal(degrees: float, minutes: float = 0.0, seconds: float = 0.0, hemisphere: str = "N") -> float:
    value = degrees + minutes / 60.0 + seconds / 3600.0
    return -value if hemisphere.upper() in ("S", "W") else value


def _angles(text: str) -> list[tuple[float, str]]:
    out = []
    for m in _ANGLE_HEMI_RE.finditer(text):
        deg, minutes, seconds, hemi = m.groups()
        out.append((dms_to_decimal(float(deg), float(minutes or 0), float(seconds or 0), hemi), hemi))
    return out


def _check_lat_lon(lat: float, lon: float) -> None:
    if not -90 <= lat <= 90:
        raise ValueError(f"latitude {lat} out of range")
    if not -180 <= lon <= 180:
        raise ValueError(f"longitude {lon} out of range")


def normalize_bbox(text: str) -> str:
    angles = _angles(text)
    lats = [v for v, h in angles if h in "NS"]
    lons = [v for v, h in angles if h in "EW"]
    if len(lats) != 2 or len(lons) != 2:
        raise ValueError(f"not a coordinate range pair: {text!r}")
    west, east = sorted(lons)
    south, north = sorted(lats)
    _check_lat_lon(south, west)
    _check_lat_lon(north, east)
    return ",".join(_fmt(v) for v in (west, south, east, north))


def normalize_point(text: str) -> str:
    m = _LATLON_WORDS_RE.search(text)
    if m:
        lat, lon = float(m[1]), float(m[2])
    else:
        angles = _angles(text)
        lats = [v for v, h in angles if h in "NS"]
        lons = [v for v, h in angles if h in "EW"]
        if len(lats) != 1 or len(lons) != 1:
            raise ValueError(f"not a coordinate pair: {text!r}")
        lat, lon = lats[0], lons[0]
    _check_lat_lon(lat, lon)
    return f"{_fmt(lon)},{_fmt(lat)}"


@dataclass(frozen=True)
class LicenseLexicon:
    forms: tuple[tuple[str, str], ...]  # (surface form, SPDX id), longest first

    @classmethod
    def parse(cls, text: str) -> LicenseLexicon:
        forms = []
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            spdx, _, surfaces = line.partition("\t")
            forms.extend((s.strip(), spdx.strip()) for s in surfaces.split(",") if s.strip())
            forms.append((spdx.strip(), spdx.strip()))
        forms.sort(key=lambda f: (-len(f[0]), f[0]))
        return cls(tuple(forms))

    @staticmethod
    def _pattern(surface: str) -> str:
        words = re.split(r"[\s_-]+", surface)
        return r"[\s_-]*".join(re.escape(w) for w in words)

    @property
    def regex(self) -> re.Pattern:
        return _compile_lexicon(self.forms)

    def normalize(self, text: str) -> str | None:
        key = _lexicon_key(text)
        for surface, spdx in self.forms:
            if _lexicon_key(surface) == key:
                return spdx
        return None


def _lexicon_key(text: str) -> str:
    return re.sub(r"[\s_-]+", "", text).lower()


@lru_cache(maxsize=8)
def _compile_lexicon(forms: tuple[tuple[str, str], ...]) -> re.Pattern:
    alternatives = "|".join(LicenseLexicon._pattern(s) for s, _ in forms)
    return re.compile(rf"(?<![\w.-])(?:{alternatives})(?![\w-]|\.\d)", re.IGNORECASE)


@lru_cache(maxsize=1)
def default_lexicon() -> LicenseLexicon:
    return LicenseLexicon.parse(resources.files("fairify.data").joinpath("licenses.tsv").read_text("utf-8"))


def normalize_license(text: str, lexicon: LicenseLexicon | None = None) -> str | None:
    return (lexicon or default_lexicon()).normalize(" ".join(text.split()))


_NAME_WORD = r"[A-Z][\w'&.-]*[\w&]|[A-Z]"
_CONNECT = r"(?:of|and|for|the|on|in|&|de|des|du|la|für)"
_NAME_SEQ = rf"(?:{_NAME_WORD})(?:\s+(?:{_CONNECT}\s+)*(?:{_NAME_WORD}))*"
INSTITUTION_CUES = ("provided by", "published by", "data center", "institute of", "university", "academy of sciences")
_CUE_WORDS = re.compile(r"data center|institute of|university|academy of sciences", re.IGNORECASE)
_BY_RE = re.compile(rf"\b(?:provided|published)\s+by\s+(?:the\s+)?({_NAME_SEQ}(?:,\s+{_NAME_SEQ})?)")
_SEQ_RE = re.compile(rf"{_NAME_SEQ}(?:,\s+{_NAME_SEQ})?")
_LEADING_ARTICLE = re.compile(r"(?:The|the)\s+")


def normalize_institution(text: str) -> str:
    lead = _LEADING_ARTICLE.match(text)
    return " ".join(text[lead.end():].split() if lead else text.split())


def _institution_spans(text: str) -> list[tuple[int, int]]:
    candidates: list[tuple[int, int]] = []
    for m in _BY_RE.finditer(text):
        start, end = m.span(1)
        head = text[start:end]
        if "," in head and not _CUE_WORDS.search(head.split(",", 1)[1]):
            end = start + head.index(",")
        candidates.append((start, end))
    for m in _SEQ_RE.finditer(text):
        seq = m.group(0)
        if not _CUE_WORDS.search(seq):
            continue
        start, end = m.span()
        if "," in seq:
            first, rest = seq.split(",", 1)
            if not _CUE_WORDS.search(rest):
                end = start + len(first)
            elif not _CUE_WORDS.search(first):
                start = start + len(first) + 1
                start += len(text[start:end]) - len(text[start:end].lstrip())
        lead = _LEADING_ARTICLE.match(text, start, end)
        if lead:
            start = lead.end()
        candidates.append((start, end))
    # longest match wins among overlapping candidates
    candidates.sort(key=lambda s: (-(s[1] - s[0]), s[0]))
    chosen: list[tuple[int, int]] = []
    for span in candidates:
        if all(span[1] <= a or span[0] >= b for a, b in chosen):
            chosen.append(span)
    return sorted(chosen)


# ---------------------------------------------------------------------------
# the rule inventory

_RANGE_RE = re.compile(
    rf"(?<![\w.])(?:between\s+(?P<a1>{DATE_EXPR})\s+and\s+(?P<b1>{DATE_EXPR})"
    rf"|(?P<a2>{DATE_EXPR})\s*(?:to|until|till|through|–|—|-|/)\s*(?P<b2>{DATE_EXPR}))(?![\w°′']|\.\d)",
    re.IGNORECASE,
)
_SINGLE_DATE_RE = re.compile(rf"(?<![\w./-])(?:{DATE_EXPR})(?![\w°′'/-]|\.\d)", re.IGNORECASE)


def _overlaps(span: tuple[int, int], taken: list[tuple[int, int]]) -> bool:
    return any(span[0] < b and a < span[1] for a, b in taken)


def _doi_rule(text: str) -> Iterable[tuple[str, tuple[int, int], Callable[[str], str]]]:
    for m in DOI_RE.finditer(text):
        value = strip_doi(m.group(0))
        if DOI_RE.fullmatch(value):
            yield "identifier", (m.start(), m.start() + len(value)), normalize_doi


def _date_rule(text: str):
    ranges = []
    for m in _RANGE_RE.finditer(text):
        a = "a1" if m.group("a1") else "a2"
        b = "b1" if m.group("b1") else "b2"
        start_v, end_v = parse_date_expr(m.group(a)), parse_date_expr(m.group(b))
        if start_v is None or end_v is None or start_v > end_v:
            continue
        ranges.append(m.span())
        yield "temporal_start", m.span(a), normalize_date
        yield "temporal_end", m.span(b), normalize_date
    for m in _SINGLE_DATE_RE.finditer(text):
        if _overlaps(m.span(), ranges) or parse_date_expr(m.group(0)) is None:
            continue
        yield "date", m.span(), normalize_date


def _coordinate_rule(text: str):
    boxes = []
    for m in _BBOX_RE.finditer(text):
        boxes.append(m.span())
        yield "bbox", m.span(), normalize_bbox
    for m in _POINT_RE.finditer(text):
        if not _overlaps(m.span(), boxes):
            yield "point", m.span(), normalize_point


def _license_rule(text: str):
    for m in default_lexicon().regex.finditer(text):
        yield "license", m.span(), normalize_license


def _institution_rule(text: str):
    for span in _institution_spans(text):
        yield "institution", span, normalize_institution


RULES = (_doi_rule, _date_rule, _coordinate_rule, _license_rule, _institution_rule)


def extract_with_patterns(text: str) -> list[ExtractedValue]:
    """Apply every rule in order; later rules never reuse text claimed earlier."""
    out: list[ExtractedValue] = []
    taken: list[tuple[int, int]] = []
    for rule in RULES:
        claimed = []
        for field, span, normalize in rule(text):
            if _overlaps(span, taken):
                continue
            try:
                value = normalize(text[span[0]:span[1]])
            except ValueError:
                continue
            if not value:
                continue
            out.append(ExtractedValue(field, value, span))
            claimed.append(span)
        taken.extend(claimed)
    return out


def needs_extraction(text: str, threshold: int = DEFAULT_LENGTH_THRESHOLD) -> bool:
    if len(text) > threshold:
        return True
    fields = {v.field for v in extract_with_patterns(text)}
    return len(fields) > 1


# ---------------------------------------------------------------------------
# optional backend

@lru_cache(maxsize=32)
def load_prompt(field: str) -> str:
    base = resources.files("fairify.data").joinpath("prompts")
    path = base.joinpath(f"{field}.txt")
    if not path.is_file():
        path = base.joinpath("default.txt")
    return path.read_text("utf-8").strip().replace("{field}", field)


def _parse_backend_response(payload, request: ExtractionRequest) -> list[ExtractedValue]:
    items = payload.get("values", []) if isinstance(payload, dict) else payload
    if not isinstance(items, list):
        raise ValueError("backend response is not a list of values")
    out = []
    for item in items:
        if not isinstance(item, dict):
            raise ValueError(f"backend value is not an object: {item!r}")
        value = str(item["value"]).strip()
        start, end = int(item["start"]), int(item["end"])
        confidence = float(item.get("confidence", 0.5))
        if not (0 <= start < end <= len(request.text)) or not value:
            logger.warning("backend value %r has span (%d, %d) outside the text; dropped", value, start, end)
            continue
        confidence = min(max(confidence, 1e-6), 1.0)
        out.append(ExtractedValue(str(item.get("field", request.field)), value, (start, end), confidence, "backend"))
    return out


def extract_with_backend(request: ExtractionRequest, config: BackendConfig,
                         session: requests.Session | None = None) -> list[ExtractedValue]:
    """POST ``{field, instruction, text}`` and parse ``{values: [{value, start, end, confidence}]}``."""
    if not config.enabled or not config.endpoint:
        return []
    body = {
        "field": request.field,
        "instruction": request.instruction or load_prompt(request.field),
        "text": request.text,
    }
    http = session or requests
    attempts = max(1, config.max_retries)
    for attempt in range(1, attempts + 1):
        try:
            resp = http.post(config.endpoint, json=body, timeout=config.timeout)
            resp.raise_for_status()
            return _parse_backend_response(resp.json(), request)
        except (requests.RequestException, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
            logger.warning("backend attempt %d/%d for field %s failed: %s", attempt, attempts, request.field, exc)
            if attempt < attempts:
                time.sleep(min(0.1 * attempt, 1.0))
    return []


def extract_many_with_backend(requests_: Sequence[ExtractionRequest], config: BackendConfig) -> list[list[ExtractedValue]]:
    if not config.enabled or not requests_:
        return [[] for _ in requests_]
    with ThreadPoolExecutor(max_workers=max(1, config.concurrency)) as pool:
        return list(pool.map(lambda r: extract_with_backend(r, config), requests_))


def merge_extractions(pattern_results: Sequence[ExtractedValue],
                      backend_results: Sequence[ExtractedValue]) -> list[ExtractedValue]:
    """One value per singular field (highest confidence, pattern wins ties); all distinct values otherwise."""
    merged: dict[str, list[ExtractedValue]] = {}
    for v in [*pattern_results, *backend_results]:
        bucket = merged.setdefault(v.field, [])
        if v.field in SINGULAR_FIELDS:
            if not bucket:
                bucket.append(v)
            elif v.confidence > bucket[0].confidence:
                bucket[0] = v
        elif all(o.value.casefold() != v.value.casefold() for o in bucket):
            bucket.append(v)
    return [v for bucket in merged.values() for v in bucket]
