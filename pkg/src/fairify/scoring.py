"""FAIRness scoring of a page, with or without a built profile."""

from __future__ import annotations

import csv
import io
import json
import re
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from enum import Enum

from .alignment import find_jsonld
from .dom_graph import parse_html, text_content
from .extractor import default_lexicon
from .patterns import DATE_FLAG_RE, find_doi, is_doi, is_url
from .profile import DATASET_TYPE, FairProfile

PRINCIPLES = {
    "F": ("F1", "F2", "F3", "F4"),
    "A": ("A1", "A2"),
    "I": ("I1", "I3"),
    "R": ("R1.1", "R1.2", "R1.3"),
}


@dataclass(frozen=True)
class Indicator:
    id: str
    description: str
    level: str


INDICATORS = (
    Indicator("F1", "data has a persistent unique identifier", "data"),
    Indicator("F2", "data is described with rich metadata", "data"),
    Indicator("F3", "metadata contains the identifier of the data it describes", "metadata"),
    Indicator("F4", "metadata is stored in a machine-retrievable form", "metadata"),
    Indicator("A1", "metadata contains retrieval information about the data", "data"),
    Indicator("A2", "metadata stays accessible as a structured record", "metadata"),
    Indicator("I1", "metadata uses a formal shared vocabulary", "metadata"),
    Indicator("I3", "metadata links the data to other entities", "metadata"),
    Indicator("R1.1", "data carries a clear usage license", "data"),
    Indicator("R1.2", "data has detailed provenance", "data"),
    Indicator("R1.3", "metadata meets a community standard", "metadata"),
)
INDICATOR_IDS = tuple(i.id for i in INDICATORS)

CORE_ELEMENTS = ("creator", "title", "publisher", "issued", "description", "keywords")
NO_BLOCK = "no machine-readable block"


class Status(str, Enum):
    PASS = "pass"
    PARTIAL = "partial"
    FAIL = "fail"

    @property
    def weight(self) -> float:
        return {"pass": 1.0, "partial": 0.5, "fail": 0.0}[self.value]


@dataclass(frozen=True)
class IndicatorResult:
    id: str
    status: Status
    evidence: str

    def __post_init__(self):
        if self.status is not Status.FAIL and not self.evidence:
            raise ValueError(f"{self.id}: {self.status.value} needs evidence")


@dataclass(frozen=True)
class FairnessReport:
    source_id: str
    results: tuple[IndicatorResult, ...]

    def __post_init__(self):
        if tuple(r.id for r in self.results) != INDICATOR_IDS:
            raise ValueError("a report holds exactly one result per indicator, in rubric order")

    def status(self, indicator: str) -> Status:
        return next(r.status for r in self.results if r.id == indicator)

    @property
    def principle_scores(self) -> dict[str, float]:
        by_id = {r.id: r.status.weight for r in self.results}
        return {p: sum(by_id[i] for i in ids) / len(ids) for p, ids in PRINCIPLES.items()}

    @property
    def total(self) -> float:
        return sum(self.principle_scores.values()) / len(PRINCIPLES)

    def to_text(self) -> str:
        lines = [f"source {self.source_id}", ""]
        for r in self.results:
            lines.append(f"{r.id:<5} {r.status.value:<8} {r.evidence}")
        lines.append("")
        lines.extend(f"{p} {v:.4f}" for p, v in self.principle_scores.items())
        lines.append(f"total {self.total:.4f}")
        return "\n".join(lines) + "\n"

    def to_records(self) -> list[dict]:
        return [
            {"source_id": self.source_id, "indicator": r.id, "status": r.status.value, "evidence": r.evidence}
            for r in self.results
        ]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in self.to_records())


# ---------------------------------------------------------------------------
# page inspection

@dataclass(frozen=True)
class PageView:
    """What a reader can find on a page without any processing."""

    text: str
    title: str | None
    links: tuple[tuple[str, str], ...]
    paragraphs: tuple[str, ...]
    blocks: tuple[dict, ...]

    @property
    def dataset_block(self) -> dict | None:
        return next((b for b in self.blocks if b.get("@type") == DATASET_TYPE), None)


def inspect_page(html: str) -> PageView:
    nodes = parse_html(html)
    texts, links, paragraphs = [], [], []
    title = None
    for node in nodes:
        if node.is_text:
            parent = nodes[node.parent] if node.parent is not None else None
            if parent is None or parent.tag not in ("script", "style"):
                texts.append(node.text)
        elif node.tag in ("title", "h1") and title is None:
            title = text_content(nodes, node.node_id).strip() or None
        elif node.tag == "a" and node.attributes.get("href"):
            links.append((node.attributes["href"].strip(), text_content(nodes, node.node_id).strip()))
        elif node.tag == "p":
            paragraphs.append(text_content(nodes, node.node_id))
    return PageView(" ".join(texts), title, tuple(links), tuple(paragraphs), tuple(find_jsonld(html)))


_CUES = {
    "creator": re.compile(r"\b(?:creators?|authors?|contributors?)\b", re.IGNORECASE),
    "publisher": re.compile(r"\b(?:publisher|published by|provided by|distributor)\b", re.IGNORECASE),
    "description": re.compile(r"\b(?:abstract|description|summary)\b", re.IGNORECASE),
    "keywords": re.compile(r"\b(?:keywords?|tags|subjects?)\b", re.IGNORECASE),
}
_ACCESS_CUE = re.compile(r"\b(?:download|access|get data|data link|landing page)\b", re.IGNORECASE)
_PROVENANCE = ("creator", "publisher", "issued")
LONG_PARAGRAPH = 200


def _core_from_page(view: PageView) -> dict[str, str]:
    found = {}
    if view.title:
        found["title"] = "page title"
    for name, cue in _CUES.items():
        if m := cue.search(view.text):
            found[name] = f"cue {m.group(0).lower()!r} in text"
    if "description" not in found and any(len(p) >= LONG_PARAGRAPH for p in view.paragraphs):
        found["description"] = "long paragraph"
    if m := DATE_FLAG_RE.search(view.text):
        found["issued"] = f"date {m.group(0)!r} in text"
    return found


def _core_from_profile(profile: FairProfile) -> dict[str, str]:
    return {name: f"profile.{name}" for name in CORE_ELEMENTS if profile.has(name)}


def _f2(found: dict[str, str]) -> IndicatorResult:
    present = [n for n in CORE_ELEMENTS if n in found]
    evidence = ", ".join(f"{n} ({found[n]})" for n in present)
    if len(present) >= 5:
        return IndicatorResult("F2", Status.PASS, evidence)
    if len(present) >= 3:
        return IndicatorResult("F2", Status.PARTIAL, evidence)
    return IndicatorResult("F2", Status.FAIL, f"only {len(present)} of {len(CORE_ELEMENTS)} core elements")


def _r12(found: dict[str, str]) -> IndicatorResult:
    missing = [n for n in _PROVENANCE if n not in found]
    if not missing:
        return IndicatorResult("R1.2", Status.PASS, ", ".join(f"{n} ({found[n]})" for n in _PROVENANCE))
    return IndicatorResult("R1.2", Status.FAIL, f"missing {', '.join(missing)}")


def _data_level_raw(view: PageView) -> dict[str, IndicatorResult]:
    out = {}
    doi = find_doi(view.text)
    out["F1"] = (IndicatorResult("F1", Status.PASS, f"DOI {doi} in text") if doi
                 else IndicatorResult("F1", Status.FAIL, "no DOI in text"))
    found = _core_from_page(view)
    out["F2"] = _f2(found)
    access = next((href for href, label in view.links if is_url(href) and _ACCESS_CUE.search(label)), None)
    out["A1"] = (IndicatorResult("A1", Status.PASS, f"access link {access}") if access
                 else IndicatorResult("A1", Status.FAIL, "no access link"))
    lic = default_lexicon().regex.search(view.text)
    out["R1.1"] = (IndicatorResult("R1.1", Status.PASS, f"license {lic.group(0)!r} in text") if lic
                   else IndicatorResult("R1.1", Status.FAIL, "no recognised license in text"))
    out["R1.2"] = _r12(found)
    return out


def _data_level_profile(profile: FairProfile, access_check: Callable[[str], int | None] | None) -> dict:
    out = {}
    ident = profile.identifier
    if ident and (is_doi(ident) or is_url(ident)):
        out["F1"] = IndicatorResult("F1", Status.PASS, f"identifier {ident}")
    else:
        out["F1"] = IndicatorResult("F1", Status.FAIL, "no identifier")
    found = _core_from_profile(profile)
    out["F2"] = _f2(found)
    url = profile.access_url
    if url and is_url(url):
        out["A1"] = IndicatorResult("A1", Status.PASS, f"access_url {url}")
        if access_check is not None:
            status = access_check(url)
            if status is None or status >= 400:
                out["A1"] = IndicatorResult("A1", Status.PARTIAL, f"access_url {url} not reachable ({status})")
            else:
                out["A1"] = IndicatorResult("A1", Status.PASS, f"access_url {url} answered {status}")
    else:
        out["A1"] = IndicatorResult("A1", Status.FAIL, "no access_url")
    if profile.license and default_lexicon().normalize(profile.license) == profile.license:
        out["R1.1"] = IndicatorResult("R1.1", Status.PASS, f"license {profile.license}")
    else:
        out["R1.1"] = IndicatorResult("R1.1", Status.FAIL, "no normalised license")
    out["R1.2"] = _r12(found)
    return out


_DCAT_TERMS = ("dct:title", "dct:identifier", "dcat:keyword", "dct:description", "dcat:accessURL",
               "dct:license", "dct:spatial", "dct:temporal", "dct:creator", "dct:publisher", "dct:issued")


def _metadata_level(view: PageView) -> dict[str, IndicatorResult]:
    if not view.blocks:
        return {i: IndicatorResult(i, Status.FAIL, NO_BLOCK) for i in ("F3", "F4", "A2", "I1", "I3", "R1.3")}
    out = {}
    block = view.dataset_block
    out["F4"] = IndicatorResult("F4", Status.PASS, f"{len(view.blocks)} JSON-LD block(s)")
    out["A2"] = IndicatorResult("A2", Status.PASS, "JSON-LD block in page head")
    generic = view.blocks[0]
    ident = (block or {}).get("dct:identifier") or generic.get("identifier")
    if isinstance(ident, str) and (is_doi(ident) or is_url(ident)):
        out["F3"] = IndicatorResult("F3", Status.PASS, f"block identifier {ident}")
    else:
        out["F3"] = IndicatorResult("F3", Status.FAIL, "block has no identifier")
    if block is not None:
        used = [t for t in _DCAT_TERMS if t in block]
        vocab = IndicatorResult("I1", Status.PASS, f"dcat:Dataset with {len(used)} DCAT terms")
    else:
        vocab = IndicatorResult("I1", Status.PARTIAL, "JSON-LD block without DCAT vocabulary")
    out["I1"] = vocab
    out["R1.3"] = IndicatorResult("R1.3", vocab.status, vocab.evidence)
    refs = (block or {}).get("dct:references") or generic.get("citation") or []
    if refs:
        out["I3"] = IndicatorResult("I3", Status.PASS, f"{len(refs) if isinstance(refs, list) else 1} reference(s)")
    else:
        out["I3"] = IndicatorResult("I3", Status.FAIL, "block has no references")
    return out


def evaluate(profile: FairProfile | None, page_html: str, *, source_id: str | None = None,
             access_check: Callable[[str], int | None] | None = None) -> FairnessReport:
    """Score one page against the eleven indicators.

    Without a profile the page is scored raw: data-level indicators look for
    textual evidence, metadata-level ones for an existing JSON-LD block. With
    a profile, data-level indicators read the profile and metadata-level ones
    read the block embedded in ``page_html``.
    """
    view = inspect_page(page_html)
    data = _data_level_raw(view) if profile is None else _data_level_profile(profile, access_check)
    results = {**data, **_metadata_level(view)}
    sid = source_id if source_id is not None else (profile.source_id if profile else "")
    return FairnessReport(sid, tuple(results[i] for i in INDICATOR_IDS))


# ---------------------------------------------------------------------------
# comparison

@dataclass(frozen=True)
class Comparison:
    source_id: str
    deltas: dict[str, float]
    transitions: dict[str, tuple[str, str]]
    before: FairnessReport
    after: FairnessReport

    def to_text(self) -> str:
        lines = [f"source {self.source_id}", "principle before after delta"]
        b, a = self.before.principle_scores, self.after.principle_scores
        for p in PRINCIPLES:
            lines.append(f"{p} {b[p]:.4f} {a[p]:.4f} {self.deltas[p]:+.4f}")
        lines.append(f"total {self.before.total:.4f} {self.after.total:.4f} {self.deltas['total']:+.4f}")
        changed = [f"{i} {s}->{t}" for i, (s, t) in self.transitions.items() if s != t]
        if changed:
            lines.append("changed " + ", ".join(changed))
        return "\n".join(lines) + "\n"


def compare(before: FairnessReport, after: FairnessReport) -> Comparison:
    if before.source_id != after.source_id:
        raise ValueError(f"cannot compare reports of {before.source_id!r} and {after.source_id!r}")
    b, a = before.principle_scores, after.principle_scores
    deltas = {p: a[p] - b[p] for p in PRINCIPLES}
    deltas["total"] = after.total - before.total
    transitions = {i: (before.status(i).value, after.status(i).value) for i in INDICATOR_IDS}
    return Comparison(before.source_id, deltas, transitions, before, after)


def corpus_table(pairs: Iterable[tuple[FairnessReport, FairnessReport]]) -> str:
    """Mean before/after score per principle across a corpus, as CSV."""
    pairs = list(pairs)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["principle", "before", "after", "delta"])
    for p in (*PRINCIPLES, "total"):
        def score(r: FairnessReport) -> float:
            return r.total if p == "total" else r.principle_scores[p]
        before = sum(score(b) for b, _ in pairs) / len(pairs) if pairs else 0.0
        after = sum(score(a) for _, a in pairs) / len(pairs) if pairs else 0.0
        writer.writerow([p, f"{before:.4f}", f"{after:.4f}", f"{after - before:+.4f}"])
    return out.getvalue()


def http_status_check(timeout: float = 5.0, session=None) -> Callable[[str], int | None]:
    """An access check doing one HEAD request; None means no answer."""
    import requests

    http = session or requests.Session()

    def check(url: str) -> int | None:
        try:
            return http.head(url, timeout=timeout, allow_redirects=True).status_code
        except requests.RequestException:
            return None

    return check


def reports_jsonl(reports: Sequence[FairnessReport]) -> str:
    return "".join(r.to_jsonl() for r in reports)
