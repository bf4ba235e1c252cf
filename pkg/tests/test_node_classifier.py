import math

import numpy as np
import pytest

from fairify.dom_graph import DomGraph, DomNode, FeatureConfig, build_graph
from fairify.node_classifier import (
    LABEL_INDEX,
    LABELS,
    NUM_CLASSES,
    DimensionError,
    GnnParams,
    LabelFileError,
    NonFiniteError,
    Prediction,
    TrainConfig,
    aggregate,
    feature_statistics,
    forward,
    init_params,
    loss,
    message,
    predict_fields,
    read_labels,
    train,
    write_labels,
)
from oracles import (
    max_relative_gradient_error,
    random_labels,
    random_params,
    random_tree_graph,
    scalar_loss,
)


def test_label_set():
    assert NUM_CLASSES == 12 and LABELS[0] == "none"


# --- message and aggregation ----------------------------------------------------

def test_zero_weight_message():
    assert not message(np.array([3.0, -1.0, 2.0]), np.zeros((4, 3))).any()


def test_identity_message_clamps():
    assert message(np.array([1.0, -2.0]), np.eye(2)).tolist() == [1.0, 0.0]


def test_random_message_matches_loops():
    rng = np.random.default_rng(3)
    w, h = rng.normal(size=(3, 3)), rng.normal(size=3)
    expected = [max(0.0, sum(w[i][j] * h[j] for j in range(3))) for i in range(3)]
    assert message(h, w) == pytest.approx(expected, abs=1e-12)


def test_message_dimension_error_names_both():
    with pytest.raises(DimensionError, match="3.*2"):
        message(np.ones(2), np.ones((4, 3)))


def test_aggregate_means():
    assert aggregate([np.array([2.0, 4.0])]).tolist() == [2.0, 4.0]
    assert aggregate([np.array([0.0, 0.0]), np.array([2.0, 4.0])]).tolist() == [1.0, 2.0]


# --- forward pass ---------------------------------------------------------------

def two_node_graph():
    nodes = [DomNode(0, "div"), DomNode(1, "p", parent=0, depth=1)]
    return DomGraph(nodes, [(0, 1)], np.array([[1.0, 0.0], [0.0, 1.0]]))


def test_zero_weights_give_uniform():
    g = random_tree_graph(np.random.default_rng(0), 6, 5)
    params = GnnParams((np.zeros((4, 5)),), np.zeros((NUM_CLASSES, 4)))
    assert np.allclose(forward(g, params).probabilities, 1 / 12)


def test_two_node_forward_by_hand():
    # messages: relu(W x0) = (1, 2), relu(W x1) = relu(-1, 1) = (0, 1);
    # both nodes average themselves and the other -> h = (0.5, 1.5).
    # classifier row 1 = (2, 0) -> logit 1, row 2 = (0, 2) -> logit 3, rest 0.
    w1 = np.array([[1.0, -1.0], [2.0, 1.0]])
    wc = np.zeros((NUM_CLASSES, 2))
    wc[1] = [2.0, 0.0]
    wc[2] = [0.0, 2.0]
    probs = forward(two_node_graph(), GnnParams((w1,), wc)).probabilities
    z = 10 + math.e + math.e ** 3
    expected = [1 / z, math.e / z, math.e ** 3 / z] + [1 / z] * 9
    assert probs[0] == pytest.approx(expected, abs=1e-12)
    assert probs[1] == pytest.approx(expected, abs=1e-12)


def test_forward_dimension_error():
    params = init_params(4, (3,), seed=0)
    with pytest.raises(DimensionError, match="5.*4"):
        forward(random_tree_graph(np.random.default_rng(0), 3, 5), params)


def test_corrupt_weights_detected():
    with pytest.raises(NonFiniteError):
        GnnParams((np.full((2, 2), np.nan),), np.zeros((NUM_CLASSES, 2)))


# --- loss -----------------------------------------------------------------------

def test_confident_prediction_zero_loss():
    probs = np.eye(NUM_CLASSES)[[3, 5]]
    assert loss(Prediction(probs), {0: 3, 1: 5}) == 0.0


def test_uniform_prediction_loss():
    probs = np.full((2, NUM_CLASSES), 1 / NUM_CLASSES)
    assert loss(Prediction(probs), {1: 4}) == pytest.approx(2.4849066, abs=1e-6)


def test_loss_matches_scalar_recomputation():
    rng = np.random.default_rng(11)
    for _ in range(5):
        g = random_tree_graph(rng, int(rng.integers(5, 11)), 6)
        params = random_params(rng, 6, 8, 2, scale=0.5)
        labels = random_labels(rng, g)
        assert loss(forward(g, params), labels) == pytest.approx(scalar_loss([g], [labels], params), rel=1e-12)


def test_loss_rejects_missing_node():
    with pytest.raises(KeyError, match="node 7"):
        loss(Prediction(np.full((3, NUM_CLASSES), 1 / 12)), {7: 1})


# --- gradients and training -----------------------------------------------------

def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    g = random_tree_graph(rng, 5, 6)
    params = random_params(rng, 6, 8, 2)
    assert max_relative_gradient_error([g], [random_labels(rng, g)], params) < 1e-4


def test_training_reduces_loss():
    g = random_tree_graph(np.random.default_rng(2), 5, 4)
    history = []
    train([g], [{2: 7}], TrainConfig(learning_rate=0.5, hidden_dims=(8, 8)),
          on_epoch=lambda e, v: history.append(v))
    assert len(history) == 200 and history[-1] < history[0]


def test_training_is_deterministic():
    rng = np.random.default_rng(9)
    graphs = [random_tree_graph(rng, 8, 5) for _ in range(3)]
    labels = [random_labels(rng, g) for g in graphs]
    cfg = TrainConfig(epochs=20, hidden_dims=(8, 8))
    assert train(graphs, labels, cfg).dumps() == train(graphs, labels, cfg).dumps()


def test_non_finite_loss_aborts_with_epoch():
    g = random_tree_graph(np.random.default_rng(2), 5, 4)
    bad = GnnParams((np.full((4, 4), 1e200),), np.full((NUM_CLASSES, 4), 1e200))
    with pytest.raises((NonFiniteError, FloatingPointError), match="epoch 1|non-finite"):
        with np.errstate(all="ignore"):
            train([g], [{0: 1}], TrainConfig(epochs=3), init=bad)


def test_no_labels_rejected():
    g = random_tree_graph(np.random.default_rng(2), 5, 4)
    with pytest.raises(ValueError, match="labelled"):
        train([g], [{}])


def test_feature_statistics_constant_columns():
    x = np.array([[0.0, 1.0], [0.0, 3.0]])
    shift, scale = feature_statistics(x)
    assert shift.tolist() == [0.0, 2.0] and scale.tolist() == [1.0, 1.0]


def test_standardization_off_is_identity():
    x = np.arange(6.0).reshape(2, 3)
    params = init_params(3, (2,))
    assert params.prepare(x) is x


# --- prediction -----------------------------------------------------------------

def fixed_probabilities(monkeypatch, probs):
    import fairify.node_classifier as nc

    monkeypatch.setattr(nc, "forward", lambda graph, params: Prediction(np.asarray(probs)))


def test_uniform_predictions_give_nothing():
    g = random_tree_graph(np.random.default_rng(0), 4, 3)
    params = GnnParams((np.zeros((2, 3)),), np.zeros((NUM_CLASSES, 2)))
    assert predict_fields(g, params) == {}


def test_confident_title(monkeypatch):
    probs = np.full((3, NUM_CLASSES), 0.01)
    probs[:, 0] = 0.89
    probs[1] = 0.1 / 11
    probs[1, LABEL_INDEX["title"]] = 0.9
    fixed_probabilities(monkeypatch, probs)
    out = predict_fields(None, None)
    assert out == {"title": (1, pytest.approx(0.9))}


def test_tie_goes_to_lower_node(monkeypatch):
    probs = np.full((4, NUM_CLASSES), 0.1 / 11)
    probs[:, 0] = 0.9
    for node in (2, 3):
        probs[node] = 0.1 / 11
        probs[node, LABEL_INDEX["title"]] = 0.9
    fixed_probabilities(monkeypatch, probs)
    assert predict_fields(None, None)["title"][0] == 2


# --- persistence ----------------------------------------------------------------

def test_model_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(1)
    graphs = [random_tree_graph(rng, 6, 5)]
    params = train(graphs, [{0: 1, 3: 2}], TrainConfig(epochs=5, hidden_dims=(4, 4)))
    params.save(tmp_path / "m")
    again = GnnParams.load(tmp_path / "m")
    assert again.dumps() == params.dumps()
    assert np.array_equal(forward(graphs[0], again).probabilities, forward(graphs[0], params).probabilities)


def test_model_dimension_mismatch_rejected(tmp_path):
    text = init_params(4, (3,)).dumps().replace("dims=4,3", "dims=4,5")
    with pytest.raises(DimensionError):
        GnnParams.loads(text)


def test_label_file_round_trip(tmp_path):
    labels = {"a": {0: 0, 3: LABEL_INDEX["license"]}, "b": {1: LABEL_INDEX["title"]}}
    write_labels(tmp_path / "l.tsv", labels)
    assert read_labels(tmp_path / "l.tsv") == labels


def test_corrupt_label_file_names_line(tmp_path):
    path = tmp_path / "l.tsv"
    path.write_text("a\t0\ttitle\na\tzero\ttitle\n")
    with pytest.raises(LabelFileError, match=r"l\.tsv:2"):
        read_labels(path)
    path.write_text("a\t0\ttitle\n\na\t1\tbogus\n")
    with pytest.raises(LabelFileError, match=r":3: unknown class"):
        read_labels(path)


def test_html_graph_trains(corpus):
    cfg = FeatureConfig()
    page = corpus[0]
    g = build_graph(page.html, cfg, page.source_id)
    assert max(page.labels) < g.num_nodes
    params = train([g], [page.labels], TrainConfig(epochs=5))
    assert params.feature_dim == cfg.feature_dim
