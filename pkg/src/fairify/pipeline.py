"""Ingest pages and run them through locate, extract, align, embed and score."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import os
import re
import time
from collections import Counter
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from urllib.parse import urlsplit

from .alignment import (
    Gazetteer,
    OntologyMap,
    align_field_names,
    build_profile,
    default_gazetteer,
    default_ontology,
    embed_profile,
)
from .catalog import CatalogStore
from .dom_graph import FeatureConfig, RawDocument, build_graph, text_content
from .extractor import (
    BackendConfig,
    ExtractedValue,
    ExtractionRequest,
    extract_many_with_backend,
    extract_with_patterns,
    merge_extractions,
    needs_extraction,
    normalize_bbox,
    normalize_date,
    normalize_doi,
    normalize_institution,
    normalize_license,
    normalize_point,
)
from .node_classifier import GnnParams, TrainConfig, predict_fields
from .patterns import is_doi, is_url
from .profile import FairProfile
from .scoring import FairnessReport, evaluate

logger = logging.getLogger(__name__)

MODEL_FEATURES_SUFFIX = ".features"
REPORTED_FIELDS = ("identifier", "title", "description", "keywords", "creator", "publisher", "issued",
                   "license", "access_url", "spatial", "temporal", "references")


class NothingIngested(RuntimeError):
    pass


class SystemicFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class FetchConfig:
    user_agent: str = "fairify/0.1 (+https://example.org/fairify)"
    per_host_delay_ms: int = 1000
    timeout_s: float = 10.0
    max_pages: int = 10000

    def __post_init__(self):
        if self.per_host_delay_ms < 0:
            raise ValueError("per_host_delay_ms must be >= 0")


@dataclass(frozen=True)
class PipelineConfig:
    corpus_dir: Path = Path("corpus")
    model_path: Path = Path("model.gnn")
    ontology_path: Path | None = None
    gazetteer_path: Path | None = None
    catalog_path: Path = Path("catalog.ndjson")
    output_dir: Path = Path("out")
    backend: BackendConfig = BackendConfig()
    fetch: FetchConfig = FetchConfig()
    live_checks: bool = False
    workers: int = os.cpu_count() or 1
    seed: int = 42
    confidence_threshold: float = 0.5

    def check_paths(self, *names: str) -> None:
        for name in names:
            path = getattr(self, name)
            if path is not None and not Path(path).exists():
                raise SystemicFailure(f"{name} {path} does not exist")


_PATH_KEYS = {"corpus_dir", "model_path", "ontology_path", "gazetteer_path", "catalog_path", "output_dir"}


def _coerce(value: str, like):
    if isinstance(like, bool):
        if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {value!r}")
        return value.lower() in ("true", "1", "yes")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def load_config(text: str, base: PipelineConfig = PipelineConfig()) -> PipelineConfig:
    """Read ``key=value`` lines; ``backend.*`` and ``fetch.*`` keys set nested fields."""
    top, nested = {}, {"backend": {}, "fetch": {}}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ValueError(f"config line {lineno}: expected key=value")
        group, dot, sub = key.partition(".")
        try:
            if dot and group in nested:
                current = getattr(base, group)
                if sub not in {f.name for f in fields(current)}:
                    raise ValueError(f"unknown key {key!r}")
                nested[group][sub] = _coerce(value, getattr(current, sub))
            elif key in _PATH_KEYS:
                top[key] = Path(value) if value else None
            elif key in {f.name for f in fields(base)} and key not in nested:
                top[key] = _coerce(value, getattr(base, key))
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as e:
            raise ValueError(f"config line {lineno}: {e}") from None
    cfg = replace(base, **top)
    for group, values in nested.items():
        if values:
            cfg = replace(cfg, **{group: replace(getattr(cfg, group), **values)})
    return cfg


# ---------------------------------------------------------------------------
# manifest

@dataclass
class DocumentOutcome:
    source_id: str
    stage: str
    warnings: list[str] = field(default_factory=list)
    fields: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"source_id": self.source_id, "stage": self.stage, "warnings": self.warnings, "fields": self.fields}


@dataclass
class RunManifest:
    run_id: str
    started_at: str
    documents: list[DocumentOutcome] = field(default_factory=list)

    def outcome(self, source_id: str) -> DocumentOutcome | None:
        return next((d for d in self.documents if d.source_id == source_id), None)

    def record(self, outcome: DocumentOutcome) -> None:
        if self.outcome(outcome.source_id) is not None:
            raise ValueError(f"document {outcome.source_id} recorded twice")
        self.documents.append(outcome)

    @property
    def aggregate(self) -> dict:
        ingested = [d for d in self.documents if d.stage != "ingest_failed"]
        parsed = [d for d in ingested if d.stage != "ingested"]
        built = [d for d in self.documents if d.stage == "done"]
        counts = Counter(f for d in built for f in d.fields)
        n = len(ingested)
        return {
            "documents": len(self.documents),
            "pages_parsed": len(parsed),
            "profiles_built": len(built),
            "fields_extracted": sum(counts.values()),
            "extraction_rate": {f: (counts[f] / n if n else 0.0) for f in REPORTED_FIELDS},
        }

    def dumps(self) -> str:
        lines = [json.dumps(d.to_dict(), sort_keys=True, ensure_ascii=False) for d in
                 sorted(self.documents, key=lambda d: d.source_id)]
        footer = {"run_id": self.run_id, "started_at": self.started_at, "aggregate": self.aggregate}
        lines.append(json.dumps(footer, sort_keys=True))
        return "\n".join(lines) + "\n"


def started_at() -> str:
    # SOURCE_DATE_EPOCH pins the timestamp so repeated runs are byte-identical
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = dt.datetime.fromtimestamp(int(epoch), dt.timezone.utc) if epoch else dt.datetime.now(dt.timezone.utc)
    return moment.replace(microsecond=0).isoformat()


def new_manifest(source_ids: Sequence[str], seed: int) -> RunManifest:
    digest = hashlib.sha256(("\n".join(sorted(source_ids)) + f"\n{seed}").encode()).hexdigest()[:16]
    return RunManifest(digest, started_at())


# ---------------------------------------------------------------------------
# ingest

def _source_id_for(path: Path) -> str:
    return path.stem


def _url_source_id(url: str) -> str:
    parts = urlsplit(url)
    slug = re.sub(r"[^A-Za-z0-9]+", "-", f"{parts.netloc}{parts.path}").strip("-")[:60]
    return f"{slug}-{hashlib.sha1(url.encode()).hexdigest()[:8]}"


def ingest(source: str | Path, config: PipelineConfig, manifest: RunManifest | None = None,
           session=None, sleep: Callable[[float], None] = time.sleep) -> list[RawDocument]:
    """Read a directory of .html files or fetch a newline-separated URL list.

    Fetch failures are recorded in ``manifest`` and skipped; only an empty
    result is fatal.
    """
    source = Path(source)
    docs: list[RawDocument] = []
    failures: list[DocumentOutcome] = []
    if source.is_dir():
        for path in sorted(p for p in source.iterdir() if p.suffix.lower() in (".html", ".htm")):
            try:
                docs.append(RawDocument.from_bytes(_source_id_for(path), path.read_bytes(), path.resolve().as_uri()))
            except OSError as e:
                failures.append(DocumentOutcome(_source_id_for(path), "ingest_failed", [str(e)]))
    elif source.is_file():
        urls = [u.strip() for u in source.read_text(encoding="utf-8").splitlines()
                if u.strip() and not u.startswith("#")]
        docs, failures = _fetch_all(urls[: config.fetch.max_pages], config.fetch, session, sleep)
    else:
        raise NothingIngested(f"nothing ingested: {source} does not exist")
    if manifest is not None:
        for f in failures:
            manifest.record(f)
    if not docs:
        raise NothingIngested(f"nothing ingested from {source} ({len(failures)} failures)")
    return docs


def _fetch_all(urls, fetch: FetchConfig, session, sleep):
    import requests

    http = session or requests.Session()
    last_hit: dict[str, float] = {}
    docs, failures = [], []
    for url in urls:
        sid = _url_source_id(url)
        host = urlsplit(url).netloc
        wait = fetch.per_host_delay_ms / 1000 - (time.monotonic() - last_hit.get(host, -1e9))
        if wait > 0:
            sleep(wait)
        last_hit[host] = time.monotonic()
        try:
            resp = http.get(url, timeout=fetch.timeout_s, headers={"User-Agent": fetch.user_agent})
            resp.raise_for_status()
            now = dt.datetime.now(dt.timezone.utc)
            docs.append(RawDocument.from_bytes(sid, resp.content, url, now))
        except requests.RequestException as e:
            failures.append(DocumentOutcome(sid, "ingest_failed", [f"fetch {url}: {e}"]))
    return docs, failures


# ---------------------------------------------------------------------------
# per-document processing

_LABEL_PREFIX = re.compile(r"^\s*[A-Za-z][\w ()/'-]{0,40}:\s+(?=\S)")
_NORMALIZERS = {
    "identifier": normalize_doi, "date": normalize_date, "temporal_start": normalize_date,
    "temporal_end": normalize_date, "bbox": normalize_bbox, "point": normalize_point,
    "license": normalize_license, "institution": normalize_institution,
}
_BACKEND_FIELDS = {
    "abstract": ("temporal_start", "temporal_end", "bbox", "institution"),
    "spatial_text": ("bbox", "point"),
    "temporal_text": ("temporal_start", "temporal_end"),
}
# fields searched across the whole page when the classifier did not locate them
_FALLBACK = {
    "identifier": ("identifier",), "license": ("license",), "temporal": ("temporal_start", "temporal_end"),
    "spatial": ("bbox", "point"), "publisher": ("institution",), "issued": ("date",),
}


@dataclass
class Resources:
    params: GnnParams
    features: FeatureConfig
    ontology: OntologyMap
    gazetteer: Gazetteer
    config: PipelineConfig
    access_check: Callable[[str], int | None] | None = None


@dataclass
class DocumentResult:
    source_id: str
    outcome: DocumentOutcome
    profile: FairProfile | None = None
    before: FairnessReport | None = None
    after: FairnessReport | None = None
    fairified_html: str | None = None


def load_model(model_path: str | Path) -> tuple[GnnParams, FeatureConfig]:
    model_path = Path(model_path)
    features_path = model_path.with_name(model_path.name + MODEL_FEATURES_SUFFIX)
    try:
        params = GnnParams.load(model_path)
        features = FeatureConfig.load(features_path)
    except (OSError, ValueError, KeyError) as e:
        raise SystemicFailure(f"cannot load model {model_path}: {e}") from None
    if features.feature_dim != params.feature_dim:
        raise SystemicFailure(
            f"model expects {params.feature_dim} features, feature config gives {features.feature_dim}"
        )
    return params, features


def save_model(params: GnnParams, features: FeatureConfig, model_path: str | Path) -> None:
    model_path = Path(model_path)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    params.save(model_path)
    features.save(model_path.with_name(model_path.name + MODEL_FEATURES_SUFFIX))


def load_resources(config: PipelineConfig, access_check=None) -> Resources:
    params, features = load_model(config.model_path)
    try:
        ontology = OntologyMap.load(config.ontology_path) if config.ontology_path else default_ontology()
        gazetteer = Gazetteer.load(config.gazetteer_path) if config.gazetteer_path else default_gazetteer()
    except (OSError, ValueError) as e:
        raise SystemicFailure(str(e)) from None
    return Resources(params, features, ontology, gazetteer, config, access_check)


def _node_value(nodes, node_id: int, label: str) -> str:
    node = nodes[node_id]
    if label == "access_link":
        current = node
        while current is not None:
            if current.tag == "a" and current.attributes.get("href"):
                return current.attributes["href"].strip()
            current = nodes[current.parent] if current.parent is not None else None
        for nid in node.children:
            child = nodes[nid]
            if child.tag == "a" and child.attributes.get("href"):
                return child.attributes["href"].strip()
    text = text_content(nodes, node_id)
    return _LABEL_PREFIX.sub("", text, count=1) if label not in ("abstract",) else text


def _references(nodes, exclude: set[str]) -> list[str]:
    section_cue = re.compile(r"related|reference|publication|citation|see also", re.IGNORECASE)
    refs = []
    for node in nodes:
        if node.tag != "a" or not node.attributes.get("href"):
            continue
        href = node.attributes["href"].strip()
        if not is_url(href) or href in exclude or any(e and e in href for e in exclude if is_doi(e)):
            continue
        # only links inside a block introduced as related material count
        ancestor, context = node.parent, ""
        for _ in range(3):
            if ancestor is None:
                break
            context += " " + text_content(nodes, ancestor)[:200] + " " + " ".join(nodes[ancestor].attributes.values())
            ancestor = nodes[ancestor].parent
        if section_cue.search(context) and href not in refs:
            refs.append(href)
    return refs


def _backend_values(located_texts: dict[str, str], backend: BackendConfig) -> list[ExtractedValue]:
    reqs = []
    for label, text in sorted(located_texts.items()):
        for name in _BACKEND_FIELDS.get(label, ()):
            reqs.append(ExtractionRequest(name, text))
    out = []
    for req, values in zip(reqs, extract_many_with_backend(reqs, backend)):
        for v in values:
            normalize = _NORMALIZERS.get(v.field)
            try:
                value = normalize(v.value) if normalize else v.value
            except ValueError:
                logger.warning("backend value %r for %s does not normalise; dropped", v.value, v.field)
                continue
            if value:
                out.append(replace(v, value=value))
    return out


def process_document(doc: RawDocument, res: Resources) -> DocumentResult:
    outcome = DocumentOutcome(doc.source_id, "ingested")
    result = DocumentResult(doc.source_id, outcome)
    try:
        before = evaluate(None, doc.html, source_id=doc.source_id)
        graph = build_graph(doc.html, res.features, doc.source_id)
        outcome.stage = "parsed"
        threshold = TrainConfig(confidence_threshold=res.config.confidence_threshold)
        located = predict_fields(graph, res.params, threshold)
        outcome.stage = "classified"

        raw = {label: _node_value(graph.nodes, node, label) for label, (node, _) in sorted(located.items())}
        raw = {k: v for k, v in raw.items() if v}
        long_texts = {k: v for k, v in raw.items() if k != "access_link" and needs_extraction(v)}
        pattern_values = [v for text in long_texts.values() for v in extract_with_patterns(text)]
        backend_values = _backend_values(long_texts, res.config.backend) if res.config.backend.enabled else []
        extracted = merge_extractions(pattern_values, backend_values)
        outcome.stage = "extracted"

        canonical = align_field_names(raw, res.ontology)
        page_values = extract_with_patterns(text_content(graph.nodes, 0))
        have = {v.field for v in extracted}
        for target, names in _FALLBACK.items():
            if canonical.get(target) or have & set(names):
                continue
            extracted.extend(v for v in page_values if v.field in names)
        identifier = str(canonical.get("identifier") or "")
        exclude = {str(canonical.get("access_url") or ""), identifier}
        exclude |= {v.value for v in extracted if v.field == "identifier"}
        refs = _references(graph.nodes, exclude)
        if refs:
            canonical["references"] = refs
        outcome.stage = "aligned"

        profile = build_profile(canonical, extracted, doc.source_id, res.gazetteer)
        for key in sorted(profile.extra):
            outcome.warnings.append(f"{key} kept unvalidated: {profile.extra[key]!r}")
        outcome.stage = "profiled"
        html = embed_profile(doc.html, profile)
        outcome.stage = "embedded"
        after = evaluate(profile, html, access_check=res.access_check)
        outcome.fields = [f for f in REPORTED_FIELDS if profile.has(f)]
        outcome.stage = "done"
        result.profile, result.before, result.after, result.fairified_html = profile, before, after, html
    except Exception as e:  # one bad page must not stop the run
        logger.exception("document %s failed after stage %s", doc.source_id, outcome.stage)
        outcome.warnings.append(f"{type(e).__name__}: {e}")
    return result


@dataclass
class PipelineResult:
    results: list[DocumentResult]
    manifest: RunManifest

    @property
    def profiles(self) -> list[FairProfile]:
        return [r.profile for r in self.results if r.profile is not None]

    @property
    def report_pairs(self) -> list[tuple[FairnessReport, FairnessReport]]:
        return [(r.before, r.after) for r in self.results if r.after is not None]


def run_pipeline(docs: Sequence[RawDocument], res: Resources, manifest: RunManifest | None = None,
                 catalog: CatalogStore | None = None, workers: int | None = None) -> PipelineResult:
    """Process documents on a thread pool; results and catalog writes follow source_id order."""
    ordered = sorted(docs, key=lambda d: d.source_id)
    manifest = manifest or new_manifest([d.source_id for d in ordered], res.config.seed)
    width = max(1, workers or res.config.workers)
    if width == 1:
        results = [process_document(d, res) for d in ordered]
    else:
        with ThreadPoolExecutor(max_workers=width) as pool:
            results = list(pool.map(lambda d: process_document(d, res), ordered))
    for r in results:
        manifest.record(r.outcome)
    if catalog is not None:
        catalog.insert_many(r.profile for r in results if r.profile is not None)
    return PipelineResult(results, manifest)


def write_outputs(result: PipelineResult, out_dir: str | Path) -> Path:
    """Fairified pages, per-source reports, the corpus score table and the manifest."""
    from .scoring import compare, corpus_table

    out = Path(out_dir)
    (out / "fairified").mkdir(parents=True, exist_ok=True)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    records = []
    for r in result.results:
        if r.fairified_html is None:
            continue
        (out / "fairified" / f"{r.source_id}.html").write_text(r.fairified_html, encoding="utf-8")
        text = "before\n" + r.before.to_text() + "\nafter\n" + r.after.to_text() + "\n"
        text += compare(r.before, r.after).to_text()
        (out / "reports" / f"{r.source_id}.txt").write_text(text, encoding="utf-8")
        for phase, report in (("before", r.before), ("after", r.after)):
            records.extend({**rec, "phase": phase} for rec in report.to_records())
    (out / "reports.jsonl").write_text(
        "".join(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n" for rec in records), encoding="utf-8")
    (out / "scores.csv").write_text(corpus_table(result.report_pairs), encoding="utf-8")
    (out / "manifest.jsonl").write_text(result.manifest.dumps(), encoding="utf-8")
    return out
