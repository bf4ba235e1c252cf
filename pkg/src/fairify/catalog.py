"""Append-only profile log with in-memory search indexes."""

from __future__ import annotations

import csv
import io
import json
import os
import re
import threading
from bisect import insort
from collections import Counter, defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

from .profile import FairProfile, SpatialExtent, TemporalInterval

FIELD_WEIGHTS = {"title": 3, "keywords": 3, "description": 1, "creator": 1, "publisher": 1}
_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def normalize_institution_name(name: str) -> str:
    return " ".join(name.split()).casefold()


@dataclass(frozen=True)
class SearchHit:
    source_id: str
    score: float
    matched_fields: tuple[str, ...]


def _field_text(profile: FairProfile, field: str) -> str:
    value = getattr(profile, field)
    if isinstance(value, list):
        return " ".join(value)
    return value or ""


def _postings_of(profile: FairProfile) -> set[tuple[str, str]]:
    return {(token, field) for field in FIELD_WEIGHTS for token in tokenize(_field_text(profile, field))}


class CatalogStore:
    """Profiles keyed by source id.

    Every insert appends one JSON line to the log; the last line for a source
    id wins. The indexes are updated incrementally under one lock, which
    queries also take, so a reader never sees a half-applied insert. They can
    always be rebuilt by replaying the log.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._records: dict[str, FairProfile] = {}
        self._postings: dict[str, set[tuple[str, str]]] = defaultdict(set)
        self._spatial: dict[str, tuple[float, float, float, float]] = {}
        self._temporal: list[tuple[str, str, str]] = []  # (start, end, source_id), sorted
        if self.path is not None and self.path.exists():
            for lineno, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), 1):
                if not line.strip():
                    continue
                try:
                    profile = FairProfile.from_dict(json.loads(line))
                except (ValueError, KeyError, TypeError) as e:
                    raise ValueError(f"{self.path}:{lineno}: bad catalog record: {e}") from None
                self._apply(profile)

    def _apply(self, profile: FairProfile) -> None:
        sid = profile.source_id
        old = self._records.get(sid)
        if old is not None:
            for token, field in _postings_of(old):
                bucket = self._postings[token]
                bucket.discard((sid, field))
                if not bucket:
                    del self._postings[token]
            self._spatial.pop(sid, None)
            if old.temporal is not None:
                self._temporal.remove((old.temporal.start, old.temporal.end, sid))
        self._records[sid] = profile
        for token, field in _postings_of(profile):
            self._postings[token].add((sid, field))
        if profile.spatial is not None:
            self._spatial[sid] = profile.spatial.bbox
        if profile.temporal is not None:
            insort(self._temporal, (profile.temporal.start, profile.temporal.end, sid))

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, source_id: str) -> bool:
        return source_id in self._records

    def get(self, source_id: str) -> FairProfile | None:
        return self._records.get(source_id)

    def records(self) -> list[FairProfile]:
        with self._lock:
            return [self._records[sid] for sid in sorted(self._records)]

    def insert(self, profile: FairProfile) -> None:
        self.insert_many([profile])

    def insert_many(self, profiles: Iterable[FairProfile]) -> None:
        profiles = list(profiles)
        for p in profiles:
            p.check()
        with self._lock:
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8", newline="\n") as fh:
                    for p in profiles:
                        fh.write(p.dumps() + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            for p in profiles:
                self._apply(p)

    def rebuild(self) -> CatalogStore:
        return CatalogStore(self.path)

    def index_state(self) -> tuple:
        """Canonical copy of every index, for comparing a store with its rebuild."""
        with self._lock:
            keyword = {t: tuple(sorted(v)) for t, v in sorted(self._postings.items())}
            return keyword, tuple(sorted(self._spatial.items())), tuple(self._temporal)

    # queries ---------------------------------------------------------------

    def search_keyword(self, query: str, limit: int | None = None) -> list[SearchHit]:
        scores: dict[str, float] = defaultdict(float)
        fields: dict[str, set[str]] = defaultdict(set)
        with self._lock:
            for token in dict.fromkeys(tokenize(query)):
                for sid, field in self._postings.get(token, ()):
                    scores[sid] += FIELD_WEIGHTS[field]
                    fields[sid].add(field)
        hits = [
            SearchHit(sid, score, tuple(f for f in FIELD_WEIGHTS if f in fields[sid]))
            for sid, score in scores.items()
        ]
        hits.sort(key=lambda h: (-h.score, h.source_id))
        return hits if limit is None else hits[:limit]

    def query_spatiotemporal(self, bbox: SpatialExtent | None = None,
                             interval: TemporalInterval | None = None) -> list[str]:
        with self._lock:
            if bbox is None and interval is None:
                return sorted(self._records)
            spatial = temporal = None
            if bbox is not None:
                spatial = {sid for sid, b in self._spatial.items() if SpatialExtent(b).intersects(bbox)}
            if interval is not None:
                temporal = set()
                for start, end, sid in self._temporal:
                    if start > interval.end:
                        break
                    if end >= interval.start:
                        temporal.add(sid)
        if spatial is None:
            return sorted(temporal)
        if temporal is None:
            return sorted(spatial)
        return sorted(spatial & temporal)

    def top_institutions(self, n: int) -> list[tuple[str, int]]:
        if n < 1:
            raise ValueError("n must be at least 1")
        counts: Counter[str] = Counter()
        display: dict[str, str] = {}
        for p in self.records():
            name = p.publisher or p.creator
            if not name:
                continue
            key = normalize_institution_name(name)
            counts[key] += 1
            shown = " ".join(name.split())
            # the display form is chosen independent of insertion order
            if key not in display or shown < display[key]:
                display[key] = shown
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return [(display[k], c) for k, c in ranked[:n]]


# ---------------------------------------------------------------------------
# exports

@dataclass(frozen=True)
class Export:
    text: str
    skipped: int

    def sidecar(self) -> str:
        return json.dumps({"skipped": self.skipped}, sort_keys=True) + "\n"


def _ordered(profiles: Sequence[FairProfile]) -> list[FairProfile]:
    return sorted(profiles, key=lambda p: p.source_id)


def export_spatial(profiles: Sequence[FairProfile]) -> Export:
    features, skipped = [], 0
    for p in _ordered(profiles):
        if p.spatial is None:
            skipped += 1
            continue
        lon, lat = p.spatial.centroid
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [lon, lat]},
            "properties": {
                "source_id": p.source_id,
                "title": p.title,
                "issued_year": int(p.issued[:4]) if p.issued else None,
            },
        })
    doc = {"type": "FeatureCollection", "features": features}
    return Export(json.dumps(doc, sort_keys=True, ensure_ascii=False, indent=1) + "\n", skipped)


def export_temporal_histogram(profiles: Sequence[FairProfile], bin: str = "year") -> Export:
    if bin != "year":
        raise ValueError(f"unsupported histogram bin {bin!r}")
    counts: Counter[int] = Counter()
    skipped = 0
    for p in profiles:
        if p.temporal is None:
            skipped += 1
        else:
            counts[int(p.temporal.start[:4])] += 1
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["year", "count"])
    for year in sorted(counts):
        writer.writerow([year, counts[year]])
    return Export(out.getvalue(), skipped)


# ---------------------------------------------------------------------------
# access status sidecar

def status_path(catalog_path: str | Path) -> Path:
    p = Path(catalog_path)
    return p.with_name(p.name + ".access.jsonl")


def load_access_status(catalog_path: str | Path) -> dict[str, dict]:
    path = status_path(catalog_path)
    out = {}
    if path.exists():
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                rec = json.loads(line)
                out[rec["source_id"]] = rec
    return out


def write_access_status(catalog_path: str | Path, statuses: dict[str, dict]) -> None:
    path = status_path(catalog_path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("".join(json.dumps(statuses[k], sort_keys=True) + "\n" for k in sorted(statuses)),
                   encoding="utf-8")
    os.replace(tmp, path)
