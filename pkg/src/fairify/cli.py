"""Turn dataset web pages into FAIR metadata and a searchable local catalog.

Exit codes: 0 success, 1 usage error, 2 systemic failure, 3 nothing ingested.
"""

from __future__ import annotations

import argparse
import datetime as dt
import logging
import random
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .alignment import extract_profile
from .catalog import (
    CatalogStore,
    export_spatial,
    export_temporal_histogram,
    load_access_status,
    write_access_status,
)
from .dom_graph import FeatureConfig, RawDocument, build_graph
from .extractor import BackendConfig
from .node_classifier import LabelFileError, TrainConfig, accuracy, read_labels, train
from .pipeline import (
    NothingIngested,
    PipelineConfig,
    SystemicFailure,
    ingest,
    load_config,
    load_resources,
    new_manifest,
    run_pipeline,
    save_model,
    write_outputs,
)
from .profile import SpatialExtent, TemporalInterval
from .scoring import evaluate, http_status_check

EXIT_OK, EXIT_USAGE, EXIT_SYSTEMIC, EXIT_NOTHING = 0, 1, 2, 3

log = logging.getLogger("fairify")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _opt(args, name):
    return getattr(args, name, None)


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    config_path = _opt(args, "config")
    if config_path:
        try:
            cfg = load_config(Path(config_path).read_text(encoding="utf-8"), cfg)
        except OSError as e:
            raise UsageError(f"cannot read config: {e}") from None
        except ValueError as e:
            raise UsageError(f"{config_path}: {e}") from None
    overrides = {}
    seed, workers = _opt(args, "seed"), _opt(args, "workers")
    if seed is not None:
        overrides["seed"] = seed
    if workers is not None:
        if workers < 1:
            raise UsageError("--workers must be at least 1")
        overrides["workers"] = workers
    if _opt(args, "live_checks"):
        overrides["live_checks"] = True
    for name in ("model", "catalog"):
        value = _opt(args, name)
        if value:
            overrides[f"{name}_path"] = Path(value)
    cfg = replace(cfg, **overrides)
    endpoint = _opt(args, "backend_endpoint")
    if endpoint:
        cfg = replace(cfg, backend=replace(cfg.backend, endpoint=endpoint, enabled=True))
    return cfg


def _open_catalog(cfg: PipelineConfig) -> CatalogStore:
    if not Path(cfg.catalog_path).exists():
        raise SystemicFailure(f"no catalog at {cfg.catalog_path}; run `fairify run <corpus>` first")
    return CatalogStore(cfg.catalog_path)


def _write(path: str | None, text: str) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def _print_table(header: list[str], rows: list[list]) -> None:
    cells = [header] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    for r in cells:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())


def _exports(records, args) -> None:
    if getattr(args, "geojson", None):
        spatial = export_spatial(records)
        _write(args.geojson, spatial.text)
        _write(args.geojson + ".summary.json", spatial.sidecar())
        print(f"wrote {args.geojson} ({len(records) - spatial.skipped} features, {spatial.skipped} skipped)")
    if getattr(args, "csv", None):
        hist = export_temporal_histogram(records)
        _write(args.csv, hist.text)
        _write(args.csv + ".summary.json", hist.sidecar())
        print(f"wrote {args.csv} ({hist.skipped} skipped)")


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args, cfg: PipelineConfig) -> int:
    from .synthetic import generate_corpus, write_corpus

    pages = generate_corpus(args.pages, cfg.seed)
    out = write_corpus(pages, args.out)
    print(f"wrote {len(pages)} pages, labels and ground truth under {out}")
    return EXIT_OK


def cmd_ingest(args, cfg: PipelineConfig) -> int:
    manifest = new_manifest([], cfg.seed)
    docs = ingest(args.source, cfg, manifest)
    _print_table(["source_id", "bytes", "url"], [[d.source_id, len(d.html.encode()), d.url or ""] for d in docs])
    for failed in manifest.documents:
        print(f"failed {failed.source_id}: {'; '.join(failed.warnings)}", file=sys.stderr)
    return EXIT_OK


def _corpus_pages(corpus: Path) -> Path:
    return corpus / "pages" if (corpus / "pages").is_dir() else corpus


def cmd_train(args, cfg: PipelineConfig) -> int:
    corpus = Path(args.corpus)
    label_path = Path(args.labels) if args.labels else corpus / "labels.tsv"
    try:
        labels = read_labels(label_path)
    except OSError as e:
        raise SystemicFailure(f"cannot read labels: {e}") from None
    if not labels:
        raise SystemicFailure(f"{label_path} holds no labels")
    docs = {d.source_id: d for d in ingest(_corpus_pages(corpus), cfg)}
    missing = sorted(set(labels) - set(docs))
    if missing:
        raise SystemicFailure(f"labels refer to documents not in the corpus: {', '.join(missing[:5])}")
    features = FeatureConfig()
    ids = sorted(labels)
    order = list(ids)
    random.Random(cfg.seed).shuffle(order)
    cut = round(len(order) * (1 - args.holdout)) if args.holdout > 0 else len(order)
    train_ids, test_ids = sorted(order[:cut]), sorted(order[cut:])
    graphs = {sid: build_graph(docs[sid].html, features, sid) for sid in ids}
    try:
        tc = TrainConfig(learning_rate=args.lr, epochs=args.epochs, seed=cfg.seed)
    except ValueError as e:
        raise UsageError(str(e)) from None
    final = []
    params = train([graphs[s] for s in train_ids], [labels[s] for s in train_ids], tc,
                   on_epoch=lambda epoch, value: final.append(value))
    save_model(params, features, cfg.model_path)
    n_labelled = sum(len(labels[s]) for s in train_ids)
    print(f"trained on {len(train_ids)} documents ({n_labelled} labelled nodes), {tc.epochs} epochs")
    print(f"final loss {final[-1]:.6f} (mean {final[-1] / n_labelled:.6f} per node)")
    print(f"train accuracy {accuracy([graphs[s] for s in train_ids], [labels[s] for s in train_ids], params):.4f}")
    if test_ids:
        acc = accuracy([graphs[s] for s in test_ids], [labels[s] for s in test_ids], params)
        print(f"held-out accuracy {acc:.4f} on {len(test_ids)} documents")
    print(f"model written to {cfg.model_path}")
    return EXIT_OK


def cmd_run(args, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out) if args.out else cfg.output_dir
    res = load_resources(cfg, http_status_check() if cfg.live_checks else None)
    manifest = new_manifest([], cfg.seed)
    docs = ingest(args.source, cfg, manifest)
    manifest.run_id = new_manifest([d.source_id for d in docs], cfg.seed).run_id
    catalog = CatalogStore(cfg.catalog_path)
    result = run_pipeline(docs, res, manifest, catalog, cfg.workers)
    write_outputs(result, out_dir)
    agg = result.manifest.aggregate
    print(f"documents {agg['documents']}  parsed {agg['pages_parsed']}  profiles {agg['profiles_built']}")
    _print_table(["field", "extraction_rate"],
                 [[f, f"{rate:.4f}"] for f, rate in agg["extraction_rate"].items()])
    print((out_dir / "scores.csv").read_text(encoding="utf-8"), end="")
    print(f"outputs in {out_dir}, catalog {cfg.catalog_path} ({len(catalog)} records)")
    return EXIT_OK


def cmd_score(args, cfg: PipelineConfig) -> int:
    for page in args.pages:
        try:
            html = RawDocument.from_bytes(Path(page).stem, Path(page).read_bytes()).html
        except OSError as e:
            raise SystemicFailure(f"cannot read {page}: {e}") from None
        profile = None if args.raw else extract_profile(html)
        report = evaluate(profile, html, source_id=Path(page).stem,
                          access_check=http_status_check() if cfg.live_checks else None)
        print(report.to_jsonl() if args.jsonl else report.to_text(), end="")
    return EXIT_OK


def _parse_bbox(text: str) -> SpatialExtent:
    try:
        values = tuple(float(v) for v in text.split(","))
        if len(values) != 4:
            raise ValueError("expected west,south,east,north")
        return SpatialExtent(values)
    except ValueError as e:
        raise UsageError(f"bad --bbox {text!r}: {e}") from None


def _parse_interval(start: str | None, end: str | None) -> TemporalInterval | None:
    if start is None and end is None:
        return None
    from .alignment import TemporalUnparseable, standardize_time

    try:
        lo = standardize_time(start).start if start else "0001-01-01"
        hi = standardize_time(end).end if end else "9999-12-31"
        return TemporalInterval(lo, hi)
    except (TemporalUnparseable, ValueError) as e:
        raise UsageError(f"bad --from/--to: {e}") from None


def cmd_query(args, cfg: PipelineConfig) -> int:
    catalog = _open_catalog(cfg)
    if args.kind == "keyword":
        hits = catalog.search_keyword(" ".join(args.terms), args.limit)
        _print_table(["source_id", "score", "fields", "title"],
                     [[h.source_id, f"{h.score:g}", ",".join(h.matched_fields), catalog.get(h.source_id).title or ""]
                      for h in hits])
        print(f"{len(hits)} hits")
        records = [catalog.get(h.source_id) for h in hits]
    elif args.kind == "spatiotemporal":
        bbox = _parse_bbox(args.bbox) if args.bbox else None
        ids = catalog.query_spatiotemporal(bbox, _parse_interval(args.start, args.end))
        records = [catalog.get(s) for s in ids]
        _print_table(["source_id", "bbox", "temporal", "title"], [
            [p.source_id, ",".join(f"{v:g}" for v in p.spatial.bbox) if p.spatial else "",
             f"{p.temporal.start}/{p.temporal.end}" if p.temporal else "", p.title or ""] for p in records])
        print(f"{len(records)} records")
    else:
        if args.top < 1:
            raise UsageError("--top must be at least 1")
        _print_table(["rank", "institution", "datasets"],
                     [[i, name, n] for i, (name, n) in enumerate(catalog.top_institutions(args.top), 1)])
        records = []
    _exports(records, args)
    return EXIT_OK


def cmd_export(args, cfg: PipelineConfig) -> int:
    if not args.geojson and not args.csv:
        raise UsageError("export needs --geojson and/or --csv")
    _exports(_open_catalog(cfg).records(), args)
    return EXIT_OK


def cmd_recheck(args, cfg: PipelineConfig) -> int:
    if not cfg.live_checks:
        print("recheck performs network requests; enable them with --live-checks "
              "(or live_checks=true in the config)", file=sys.stderr)
        return EXIT_USAGE
    catalog = _open_catalog(cfg)
    check = http_status_check(timeout=cfg.fetch.timeout_s)
    statuses = load_access_status(cfg.catalog_path)
    rows = []
    for p in catalog.records():
        if not p.access_url:
            continue
        code = check(p.access_url)
        stamp = dt.datetime.now(dt.timezone.utc).replace(microsecond=0).isoformat()
        status = "unreachable" if code is None else ("ok" if code < 400 else "broken")
        statuses[p.source_id] = {"source_id": p.source_id, "access_url": p.access_url,
                                 "http_status": code, "status": status, "checked_at": stamp}
        rows.append([p.source_id, status, code if code is not None else "-", p.access_url])
    if rows:
        write_access_status(cfg.catalog_path, statuses)
    _print_table(["source_id", "status", "http", "access_url"], rows)
    print(f"checked {len(rows)} records")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand from resetting a flag given before it
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--seed", type=int, help="seed for every random choice")
    common.add_argument("--workers", type=int, help="document worker threads")
    common.add_argument("--backend-endpoint", help="URL of an extraction backend (enables it)")
    common.add_argument("--live-checks", action="store_true", help="allow network access checks")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="fairify", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"fairify {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write the synthetic labelled corpus")
    p.add_argument("out")
    p.add_argument("--pages", type=int, default=200)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="list the documents a source yields")
    p.add_argument("source", help="directory of .html files or a file of URLs")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common], help="train the node classifier")
    p.add_argument("corpus", help="corpus directory (pages/ and labels.tsv)")
    p.add_argument("--labels", help="label file (default <corpus>/labels.tsv)")
    p.add_argument("--model", help="where to write the model")
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--holdout", type=float, default=0.2, help="share of documents held out for accuracy")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", parents=[common], help="run the full pipeline and fill the catalog")
    p.add_argument("source", help="directory of .html files or a file of URLs")
    p.add_argument("--model")
    p.add_argument("--catalog")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("score", parents=[common], help="score pages against the FAIR indicators")
    p.add_argument("pages", nargs="+")
    p.add_argument("--raw", action="store_true", help="ignore any embedded profile")
    p.add_argument("--jsonl", action="store_true", help="one JSON record per indicator")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("query", parents=[common], help="query the catalog")
    kinds = p.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    for name in ("keyword", "spatiotemporal", "institutions"):
        q = kinds.add_parser(name, parents=[common])
        q.add_argument("--catalog")
        q.add_argument("--geojson", help="write matching records as GeoJSON")
        q.add_argument("--csv", help="write a yearly histogram of matching records")
        q.set_defaults(func=cmd_query)
        if name == "keyword":
            q.add_argument("terms", nargs="+")
            q.add_argument("--limit", type=int)
        elif name == "spatiotemporal":
            q.add_argument("--bbox", help="west,south,east,north")
            q.add_argument("--from", dest="start")
            q.add_argument("--to", dest="end")
        else:
            q.add_argument("--top", type=int, default=8)

    p = sub.add_parser("export", parents=[common], help="export the whole catalog")
    p.add_argument("--catalog")
    p.add_argument("--geojson")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("recheck", parents=[common], help="check every access_url and record its status")
    p.add_argument("--catalog")
    p.set_defaults(func=cmd_recheck)
    return parser


def _join_bbox(argv: list[str]) -> list[str]:
    # a western or southern bbox starts with "-" and would read as an option
    out, args = [], iter(argv)
    for arg in args:
        out.append(f"--bbox={next(args, '')}" if arg == "--bbox" else arg)
    return out


def main(argv: list[str] | None = None) -> int:
    argv = _join_bbox(list(sys.argv[1:] if argv is None else argv))
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if _opt(args, "verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, _config(args))
    except UsageError as e:
        print(f"fairify: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NothingIngested as e:
        print(f"fairify: {e}", file=sys.stderr)
        return EXIT_NOTHING
    except LabelFileError as e:
        print(f"fairify: corrupt label file: {e}", file=sys.stderr)
        return EXIT_SYSTEMIC
    except SystemicFailure as e:
        print(f"fairify: {e}", file=sys.stderr)
        return EXIT_SYSTEMIC


if __name__ == "__main__":
    sys.exit(main())
