import threading
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from fairify.dom_graph import FeatureConfig, build_graph
from fairify.node_classifier import TrainConfig, train
from fairify.pipeline import save_model
from fairify.synthetic import generate_corpus, split


@pytest.fixture(scope="session")
def corpus():
    return generate_corpus(200, 42)


@pytest.fixture(scope="session")
def trained_model(corpus, tmp_path_factory):
    """Model trained on the standard 80% split; path to the model file."""
    train_pages, _ = split(corpus, 42)
    features = FeatureConfig()
    graphs = [build_graph(p.html, features, p.source_id) for p in train_pages]
    params = train(graphs, [p.labels for p in train_pages], TrainConfig())
    path = tmp_path_factory.mktemp("model") / "model.gnn"
    save_model(params, features, path)
    return path


@contextmanager
def serve(handler_cls):
    """Run a throwaway HTTP server on localhost; yields its base URL."""
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler_cls)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_address[1]}"
    finally:
        server.shutdown()
        server.server_close()


class QuietHandler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
