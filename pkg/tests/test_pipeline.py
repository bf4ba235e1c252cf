import json
from pathlib import Path

import pytest

from conftest import QuietHandler, serve
from fairify.catalog import CatalogStore
from fairify.dom_graph import RawDocument
from fairify.pipeline import (
    FetchConfig,
    NothingIngested,
    PipelineConfig,
    SystemicFailure,
    ingest,
    load_config,
    load_resources,
    new_manifest,
    process_document,
    run_pipeline,
    write_outputs,
)
from fairify.profile import SpatialExtent, TemporalInterval
from fairify.scoring import Status
from fairify.synthetic import PAGE_TYPE, split


@pytest.fixture(scope="module")
def resources(trained_model):
    return load_resources(PipelineConfig(model_path=trained_model, workers=2))


@pytest.fixture(scope="module")
def held_out(corpus):
    return split(corpus, 42)[1]


# --- config ---------------------------------------------------------------------

def test_config_file():
    cfg = load_config("# comment\nworkers = 3\nlive_checks=true\nbackend.endpoint=http://x\n"
                      "fetch.per_host_delay_ms=50\ncatalog_path=/tmp/c.ndjson\n")
    assert cfg.workers == 3 and cfg.live_checks
    assert cfg.backend.endpoint == "http://x"
    assert cfg.fetch.per_host_delay_ms == 50
    assert cfg.catalog_path == Path("/tmp/c.ndjson")


@pytest.mark.parametrize("text, match", [
    ("colour=red", "line 1: unknown key"),
    ("workers=many", "line 1"),
    ("\nfetch.nope=1", "line 2: unknown key"),
    ("live_checks=maybe", "boolean"),
])
def test_config_errors(text, match):
    with pytest.raises(ValueError, match=match):
        load_config(text)


# --- ingest ---------------------------------------------------------------------

def test_directory_ingest(tmp_path):
    for name in ("b", "a", "c"):
        (tmp_path / f"{name}.html").write_text(f"<p>{name}</p>")
    (tmp_path / "notes.txt").write_text("skip")
    docs = ingest(tmp_path, PipelineConfig())
    assert [d.source_id for d in docs] == ["a", "b", "c"]
    assert docs[0].html == "<p>a</p>"


def test_empty_directory(tmp_path):
    with pytest.raises(NothingIngested, match="nothing ingested"):
        ingest(tmp_path, PipelineConfig())


class PageServer(QuietHandler):
    def do_GET(self):
        body = f"<html><body><p>{self.path}</p></body></html>".encode()
        self.send_response(200)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


def test_url_list_with_dead_host(tmp_path):
    sleeps = []
    with serve(PageServer) as url:
        urls = tmp_path / "urls.txt"
        urls.write_text(f"{url}/one\n# skipped\nhttp://127.0.0.1:9/dead\n{url}/two\n")
        manifest = new_manifest([], 42)
        cfg = PipelineConfig(fetch=FetchConfig(per_host_delay_ms=1000, timeout_s=2))
        docs = ingest(urls, cfg, manifest, sleep=sleeps.append)
    assert len(docs) == 2 and "/two" in docs[1].html
    assert [d.stage for d in manifest.documents] == ["ingest_failed"]
    # the second request to the live host waited out the politeness delay
    assert len(sleeps) == 1 and 0.5 < sleeps[0] <= 1.0


def test_missing_model_is_systemic(tmp_path):
    with pytest.raises(SystemicFailure, match="cannot load model"):
        load_resources(PipelineConfig(model_path=tmp_path / "none.gnn"))


# --- per-document behaviour -----------------------------------------------------

def test_structured_page(resources, held_out):
    page = next(p for p in held_out if PAGE_TYPE[p.template] == 2 and "identifier" in p.truth)
    r = process_document(RawDocument(page.source_id, page.html), resources)
    assert r.outcome.stage == "done"
    assert r.profile.title == page.truth["title"]
    assert r.profile.publisher == page.truth["publisher"]
    assert r.profile.identifier == page.truth["identifier"]
    assert r.profile.access_url == page.truth["access_url"]
    assert r.after.total > r.before.total


def test_prose_page_fills_coverage(resources, held_out):
    page = next(p for p in held_out if PAGE_TYPE[p.template] == 3 and "temporal_start" in p.truth
                and p.truth.get("spatial_kind") == "bbox")
    r = process_document(RawDocument(page.source_id, page.html), resources)
    t = page.truth
    assert r.profile.temporal.start[:len(t["temporal_start"])] == t["temporal_start"]
    assert r.profile.temporal.end[:len(t["temporal_end"])] == t["temporal_end"]
    assert r.profile.spatial == SpatialExtent(tuple(float(v) for v in t["spatial_value"].split(",")))
    deltas = {p: r.after.principle_scores[p] - r.before.principle_scores[p] for p in "AR"}
    assert deltas["A"] > 0 and deltas["R"] > 0


def test_page_without_metadata(resources):
    r = process_document(RawDocument("bare", "<html><body><p>Hello world.</p></body></html>"), resources)
    assert r.outcome.stage == "done"
    assert sum(r.profile.has(f) for f in ("identifier", "license", "spatial", "temporal", "creator")) == 0
    for i in ("F1", "R1.1"):
        assert r.before.status(i) is Status.FAIL and r.after.status(i) is Status.FAIL


def test_failure_is_isolated(resources, held_out, monkeypatch):
    import fairify.pipeline as pl

    real = pl.build_profile

    def flaky(canonical, extracted, source_id, gazetteer=None):
        if source_id == held_out[1].source_id:
            raise RuntimeError("boom")
        return real(canonical, extracted, source_id, gazetteer)

    monkeypatch.setattr(pl, "build_profile", flaky)
    docs = [RawDocument(p.source_id, p.html) for p in held_out[:3]]
    result = run_pipeline(docs, resources, workers=2)
    stages = [d.stage for d in result.manifest.documents]
    assert stages == ["done", "aligned", "done"]
    assert "RuntimeError: boom" in result.manifest.documents[1].warnings
    assert len(result.profiles) == 2


def test_outputs_and_catalog(resources, held_out, tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    docs = [RawDocument(p.source_id, p.html) for p in held_out[:6]]
    catalog = CatalogStore(tmp_path / "c.ndjson")
    result = run_pipeline(docs, resources, catalog=catalog, workers=3)
    out = write_outputs(result, tmp_path / "out")
    assert len(catalog) == 6
    assert sorted(f.name for f in (out / "fairified").iterdir()) == [f"{d.source_id}.html" for d in docs]
    lines = (out / "manifest.jsonl").read_text().splitlines()
    footer = json.loads(lines[-1])
    assert footer["started_at"] == "2023-11-14T22:13:20+00:00"
    assert footer["aggregate"]["profiles_built"] == 6
    assert set(footer["aggregate"]["extraction_rate"]) >= {"identifier", "license", "temporal", "spatial"}
    assert (out / "scores.csv").read_text().startswith("principle,before,after,delta\n")
    records = [json.loads(line) for line in (out / "reports.jsonl").read_text().splitlines()]
    assert len(records) == 6 * 2 * 11


def test_worker_count_does_not_change_results(resources, held_out, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    docs = [RawDocument(p.source_id, p.html) for p in held_out[:8]]
    one = run_pipeline(docs, resources, workers=1)
    four = run_pipeline(docs, resources, workers=4)
    assert [p.dumps() for p in one.profiles] == [p.dumps() for p in four.profiles]
    assert one.manifest.dumps() == four.manifest.dumps()


def test_manifest_rates_are_per_document():
    from fairify.pipeline import DocumentOutcome

    m = new_manifest(["a", "b"], 1)
    m.record(DocumentOutcome("a", "done", fields=["identifier"]))
    m.record(DocumentOutcome("b", "parsed"))
    assert m.aggregate["extraction_rate"]["identifier"] == 0.5
    with pytest.raises(ValueError, match="twice"):
        m.record(DocumentOutcome("a", "done"))
