import json

import pytest

from conftest import QuietHandler, serve
from fairify.catalog import CatalogStore, load_access_status
from fairify.cli import main
from fairify.profile import FairProfile
from fairify.synthetic import generate_corpus, write_corpus


@pytest.fixture()
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    return tmp_path


@pytest.fixture()
def small_corpus(workdir):
    return write_corpus(generate_corpus(12, 3), workdir / "corpus")


def test_usage_error_exit_code(capsys):
    assert main_exit(["frobnicate"]) == 1
    assert main_exit(["query", "institutions", "--top", "zero"]) == 1


def main_exit(argv):
    try:
        return main(argv)
    except SystemExit as e:
        return e.code


def test_synth_then_train_is_reproducible(small_corpus, workdir, capsys):
    assert main(["--seed", "5", "train", str(small_corpus), "--epochs", "20", "--model", "m1.gnn"]) == 0
    out = capsys.readouterr().out
    assert "final loss" in out and "held-out accuracy" in out
    assert main(["train", str(small_corpus), "--epochs", "20", "--model", "m2.gnn", "--seed", "5"]) == 0
    assert (workdir / "m1.gnn").read_bytes() == (workdir / "m2.gnn").read_bytes()
    assert (workdir / "m1.gnn.features").exists()


def test_corrupt_labels_abort_with_line(small_corpus, capsys):
    bad = small_corpus / "bad.tsv"
    bad.write_text("page-0000\t0\tnone\npage-0000\t1\tweird\n")
    assert main(["train", str(small_corpus), "--labels", str(bad)]) == 2
    assert "bad.tsv:2" in capsys.readouterr().err


def test_no_labels_abort(small_corpus, capsys):
    empty = small_corpus / "empty.tsv"
    empty.write_text("# nothing\n")
    assert main(["train", str(small_corpus), "--labels", str(empty)]) == 2
    assert "no labels" in capsys.readouterr().err


def test_run_query_export(small_corpus, trained_model, workdir, capsys):
    assert main(["run", str(small_corpus / "pages"), "--model", str(trained_model), "--workers", "2"]) == 0
    out = capsys.readouterr().out
    assert "extraction_rate" in out and "principle,before,after,delta" in out
    assert len(CatalogStore(workdir / "catalog.ndjson")) == 12
    assert (workdir / "out" / "manifest.jsonl").exists()

    assert main(["query", "keyword", "inventory"]) == 0
    assert capsys.readouterr().out.splitlines()[0].split() == ["source_id", "score", "fields", "title"]

    assert main(["query", "institutions", "--top", "8"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split() == ["rank", "institution", "datasets"]
    assert 1 <= len(lines) - 1 <= 8
    counts = [int(line.split()[-1]) for line in lines[1:]]
    assert counts == sorted(counts, reverse=True)

    assert main(["query", "spatiotemporal", "--bbox", "-10,-10,-5,-5", "--from", "2000", "--to", "2001"]) == 0
    assert "0 records" in capsys.readouterr().out

    assert main(["export", "--geojson", "e/all.geojson", "--csv", "e/years.csv"]) == 0
    doc = json.loads((workdir / "e" / "all.geojson").read_text())
    assert doc["type"] == "FeatureCollection"
    assert (workdir / "e" / "years.csv").read_text().startswith("year,count\n")
    assert json.loads((workdir / "e" / "all.geojson.summary.json").read_text())["skipped"] >= 0


def test_score_command(small_corpus, capsys):
    page = sorted((small_corpus / "pages").iterdir())[0]
    assert main(["score", str(page), "--jsonl"]) == 0
    records = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert len(records) == 11 and records[0]["indicator"] == "F1"


def test_missing_catalog_hint(workdir, capsys):
    assert main(["query", "keyword", "collapse"]) == 2
    assert "run `fairify run" in capsys.readouterr().err


def test_nothing_ingested_exit_code(workdir, trained_model, capsys):
    (workdir / "empty").mkdir()
    assert main(["run", "empty", "--model", str(trained_model)]) == 3
    assert "nothing ingested" in capsys.readouterr().err


def test_missing_model_is_systemic(small_corpus, capsys):
    assert main(["run", str(small_corpus / "pages"), "--model", "nope.gnn"]) == 2


def test_bad_config_is_usage_error(workdir, capsys):
    (workdir / "bad.conf").write_text("colour=blue\n")
    assert main(["--config", "bad.conf", "query", "keyword", "x"]) == 1


def test_recheck_needs_live_checks(workdir, capsys):
    CatalogStore(workdir / "catalog.ndjson").insert(FairProfile("a", access_url="https://example.org/x"))
    assert main(["recheck"]) == 1
    assert "--live-checks" in capsys.readouterr().err


def test_recheck_empty_catalog(workdir, capsys):
    (workdir / "catalog.ndjson").write_text("")
    assert main(["recheck", "--live-checks"]) == 0
    assert "checked 0 records" in capsys.readouterr().out
    assert load_access_status(workdir / "catalog.ndjson") == {}


class AccessServer(QuietHandler):
    def do_HEAD(self):
        self.send_response(200 if self.path == "/ok" else 404)
        self.end_headers()


def test_recheck_records_statuses(workdir, capsys):
    with serve(AccessServer) as url:
        CatalogStore(workdir / "catalog.ndjson").insert_many([
            FairProfile("a", access_url=f"{url}/ok"),
            FairProfile("b", access_url=f"{url}/gone"),
        ])
        assert main(["recheck", "--live-checks"]) == 0
    status = load_access_status(workdir / "catalog.ndjson")
    assert (status["a"]["status"], status["a"]["http_status"]) == ("ok", 200)
    assert (status["b"]["status"], status["b"]["http_status"]) == ("broken", 404)
