"""Shared regular expressions and date helpers.

Used by the DOM featurizer (cheap presence flags), the pattern extractor and
the temporal standardizer, so the three agree on what a DOI or a date is.
"""

from __future__ import annotations

import calendar
import datetime as dt
import re

DOI_RE = re.compile(r'10\.\d{4,9}/[^\s"<>]+')
# trailing sentence punctuation is never part of a DOI found in prose
DOI_TRAILING = ".,;:)]}'"

URL_RE = re.compile(r"\bhttps?://[^\s\"'<>]+", re.IGNORECASE)

MONTHS = {
    name.lower(): i for i, name in enumerate(calendar.month_name) if name
}
MONTHS.update({name.lower(): i for i, name in enumerate(calendar.month_abbr) if name})
MONTHS["sept"] = 9

_MONTH_ALT = "|".join(sorted(MONTHS, key=len, reverse=True))
MONTH_WORD = rf"(?:{_MONTH_ALT})\.?"

YEAR = r"(?:1[5-9]\d\d|2[01]\d\d)"
ISO_DATE = rf"{YEAR}-(?:0[1-9]|1[0-2])-(?:0[1-9]|[12]\d|3[01])"
ISO_MONTH = rf"{YEAR}-(?:0[1-9]|1[0-2])(?![\d-])"

DATE_FLAG_RE = re.compile(
    rf"(?<![\d.])(?:{ISO_DATE}|{YEAR}|\d{{1,2}}/\d{{1,2}}/{YEAR})(?![\d°])"
    rf"|\b{MONTH_WORD}\s+\d{{1,2}},?\s+{YEAR}\b|\b\d{{1,2}}\s+{MONTH_WORD}\s+{YEAR}\b",
    re.IGNORECASE,
)


def strip_doi(raw: str) -> str:
    return raw.rstrip(DOI_TRAILING)


def find_doi(text: str) -> str | None:
    m = DOI_RE.search(text)
    if not m:
        return None
    doi = strip_doi(m.group(0))
    return doi if DOI_RE.fullmatch(doi) else None


def is_doi(value: str) -> bool:
    return bool(DOI_RE.fullmatch(value)) and value == strip_doi(value)


def is_url(value: str) -> bool:
    return bool(URL_RE.fullmatch(value))


def last_day(year: int, month: int) -> int:
    return calendar.monthrange(year, month)[1]


def iso(year: int, month: int, day: int) -> str:
    # raises ValueError for impossible dates such as 2021-02-30
    return dt.date(year, month, day).isoformat()


# date expressions, most specific first so alternation prefers them
TEXT_FULL_DMY = rf"\d{{1,2}}(?:st|nd|rd|th)?\s+{MONTH_WORD},?\s+{YEAR}"
TEXT_FULL_MDY = rf"{MONTH_WORD}\s+\d{{1,2}}(?:st|nd|rd|th)?,?\s+{YEAR}"
TEXT_MONTH_YEAR = rf"{MONTH_WORD},?\s+{YEAR}"
NUMERIC_DATE = rf"\d{{1,2}}[/.]\d{{1,2}}[/.]{YEAR}|{YEAR}/\d{{1,2}}/\d{{1,2}}"
DATE_EXPR = (
    rf"(?:{ISO_DATE}|{NUMERIC_DATE}|{TEXT_FULL_DMY}|{TEXT_FULL_MDY}|{TEXT_MONTH_YEAR}"
    rf"|{ISO_MONTH}|{YEAR})"
)

_ISO_DATE_FULL = re.compile(rf"({YEAR})-(\d\d)-(\d\d)")
_ISO_MONTH_FULL = re.compile(rf"({YEAR})-(\d\d)")
_YEAR_FULL = re.compile(YEAR)
_DMY = re.compile(rf"(\d{{1,2}})(?:st|nd|rd|th)?\s+({MONTH_WORD}),?\s+({YEAR})", re.IGNORECASE)
_MDY = re.compile(rf"({MONTH_WORD})\s+(\d{{1,2}})(?:st|nd|rd|th)?,?\s+({YEAR})", re.IGNORECASE)
_MY = re.compile(rf"({MONTH_WORD}),?\s+({YEAR})", re.IGNORECASE)
_NUM = re.compile(rf"(\d{{1,2}})[/.](\d{{1,2}})[/.]({YEAR})")
_YMD_SLASH = re.compile(rf"({YEAR})/(\d{{1,2}})/(\d{{1,2}})")


def _month(word: str) -> int:
    return MONTHS[word.lower().rstrip(".")]


def parse_date_expr(text: str) -> str | None:
    """ISO 8601 form of one date expression at its own precision.

    ``"5 Jan 2020"`` gives ``"2020-01-05"``, ``"January 2020"`` gives
    ``"2020-01"`` and ``"2020"`` stays a year. Numeric day/month forms are
    only accepted when unambiguous; impossible dates give None.
    """
    s = " ".join(text.split())
    try:
        if m := _ISO_DATE_FULL.fullmatch(s):
            return iso(int(m[1]), int(m[2]), int(m[3]))
        if m := _YMD_SLASH.fullmatch(s):
            return iso(int(m[1]), int(m[2]), int(m[3]))
        if m := _NUM.fullmatch(s):
            a, b, year = int(m[1]), int(m[2]), int(m[3])
            if a <= 12 and b <= 12 and a != b:
                return None
            day, month = (a, b) if b <= 12 else (b, a)
            return iso(year, month, day)
        if m := _DMY.fullmatch(s):
            return iso(int(m[3]), _month(m[2]), int(m[1]))
        if m := _MDY.fullmatch(s):
            return iso(int(m[3]), _month(m[1]), int(m[2]))
        if m := _MY.fullmatch(s):
            return f"{int(m[2]):04d}-{_month(m[1]):02d}"
        if m := _ISO_MONTH_FULL.fullmatch(s):
            if 1 <= int(m[2]) <= 12:
                return s
            return None
        if _YEAR_FULL.fullmatch(s):
            return s
    except (ValueError, KeyError):
        return None
    return None


def bounds_of(iso_value: str) -> tuple[str, str]:
    """First and last calendar day covered by a reduced-precision ISO date."""
    parts = [int(p) for p in iso_value.split("-")]
    if len(parts) == 1:
        return iso(parts[0], 1, 1), iso(parts[0], 12, 31)
    if len(parts) == 2:
        return iso(parts[0], parts[1], 1), iso(parts[0], parts[1], last_day(parts[0], parts[1]))
    value = iso(*parts)
    return value, value
