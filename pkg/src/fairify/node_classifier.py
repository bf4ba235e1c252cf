"""Message-passing node classifier over DOM graphs.

Each layer sends ``ReLU(W h_j)`` from every node to its tree neighbours and
takes the mean over the neighbourhood plus the node itself. A softmax layer
on the final representations gives per-node field probabilities, trained by
full-batch gradient descent on the summed cross-entropy of labelled nodes.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .dom_graph import DomGraph

logger = logging.getLogger(__name__)

LABELS = (
    "none", "identifier", "title", "creator", "publisher", "release_date", "abstract",
    "keywords", "license", "access_link", "spatial_text", "temporal_text",
)
LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}
NUM_CLASSES = len(LABELS)

MODEL_MAGIC = "fairify-gnn 1"


class DimensionError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


@dataclass(frozen=True)
class GnnParams:
    layer_weights: tuple[np.ndarray, ...]
    classifier_weights: np.ndarray
    seed: int = 0
    # fixed input standardisation learnt from the training features; None
    # means raw features go straight into the first layer
    input_shift: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    def __post_init__(self):
        expected = self.feature_dim
        if (self.input_shift is None) != (self.input_scale is None):
            raise ValueError("input_shift and input_scale must be given together")
        if self.input_shift is not None:
            for name, v in (("input_shift", self.input_shift), ("input_scale", self.input_scale)):
                if v.shape != (expected,):
                    raise DimensionError(f"{name} must have shape ({expected},), got {v.shape}")
                if not np.all(np.isfinite(v)):
                    raise NonFiniteError(f"{name} contains non-finite values")
            if np.any(self.input_scale <= 0):
                raise ValueError("input_scale must be positive")
        for i, w in enumerate(self.layer_weights, 1):
            if w.ndim != 2 or w.shape[1] != expected:
                raise DimensionError(f"layer {i} expects input dim {expected}, weight has shape {w.shape}")
            expected = w.shape[0]
        if self.classifier_weights.shape != (NUM_CLASSES, expected):
            raise DimensionError(
                f"classifier weight must be {(NUM_CLASSES, expected)}, got {self.classifier_weights.shape}"
            )
        for w in self.matrices:
            if not np.all(np.isfinite(w)):
                raise NonFiniteError("model contains non-finite weights")

    @property
    def layer_count(self) -> int:
        return len(self.layer_weights)

    @property
    def feature_dim(self) -> int:
        if self.layer_weights:
            return self.layer_weights[0].shape[1]
        return self.classifier_weights.shape[1]

    @property
    def dims(self) -> list[int]:
        return [self.feature_dim] + [w.shape[0] for w in self.layer_weights]

    @property
    def matrices(self) -> list[np.ndarray]:
        return [*self.layer_weights, self.classifier_weights]

    def prepare(self, x: np.ndarray) -> np.ndarray:
        if self.input_shift is None:
            return x
        return (x - self.input_shift) / self.input_scale

    def with_weights(self, layers: Sequence[np.ndarray], classifier: np.ndarray) -> GnnParams:
        return GnnParams(tuple(layers), classifier, self.seed, self.input_shift, self.input_scale)

    def dumps(self) -> str:
        lines = [
            f"# {MODEL_MAGIC}",
            f"layers={self.layer_count}",
            f"feature_dim={self.feature_dim}",
            f"dims={','.join(map(str, self.dims))}",
            f"classes={NUM_CLASSES}",
            f"labels={','.join(LABELS)}",
            f"seed={self.seed}",
        ]
        if self.input_shift is not None:
            for name, v in (("shift", self.input_shift), ("scale", self.input_scale)):
                lines.append(f"[{name} 1x{len(v)}]")
                lines.append(" ".join(float(x).hex() for x in v))
        for i, w in enumerate(self.matrices):
            name = "classifier" if i == self.layer_count else f"layer{i + 1}"
            lines.append(f"[{name} {w.shape[0]}x{w.shape[1]}]")
            lines.extend(" ".join(float(v).hex() for v in row) for row in w)
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> GnnParams:
        lines = text.splitlines()
        if not lines or lines[0].strip() != f"# {MODEL_MAGIC}":
            raise ValueError("not a fairify model file")
        header: dict[str, str] = {}
        i = 1
        while i < len(lines) and not lines[i].startswith("["):
            key, _, value = lines[i].partition("=")
            header[key.strip()] = value.strip()
            i += 1
        if int(header["classes"]) != NUM_CLASSES or header["labels"].split(",") != list(LABELS):
            raise DimensionError(f"model label set {header['labels']!r} does not match {LABELS}")
        matrices: list[np.ndarray] = []
        vectors: dict[str, np.ndarray] = {}
        while i < len(lines):
            section = lines[i].strip("[]").split()
            rows, cols = map(int, section[1].split("x"))
            body = lines[i + 1: i + 1 + rows]
            if len(body) != rows:
                raise ValueError(f"matrix {section[0]} truncated")
            m = np.array([[float.fromhex(v) for v in row.split()] for row in body], dtype=np.float64)
            if m.shape != (rows, cols):
                raise DimensionError(f"matrix {section[0]} declared {rows}x{cols}, found {m.shape}")
            if section[0] in ("shift", "scale"):
                vectors[section[0]] = m[0]
            else:
                matrices.append(m)
            i += 1 + rows
        if not matrices:
            raise ValueError("model file holds no weight matrices")
        params = cls(tuple(matrices[:-1]), matrices[-1], int(header["seed"]),
                     vectors.get("shift"), vectors.get("scale"))
        declared = [int(v) for v in header["dims"].split(",")]
        if declared != params.dims or int(header["layers"]) != params.layer_count:
            raise DimensionError(f"header dims {declared} do not chain with stored weights {params.dims}")
        return params

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="ascii")

    @classmethod
    def load(cls, path: str | Path) -> GnnParams:
        return cls.loads(Path(path).read_text(encoding="ascii"))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1.0
    epochs: int = 200
    seed: int = 42
    confidence_threshold: float = 0.5
    hidden_dims: tuple[int, ...] = (32, 32)
    standardize: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 < self.confidence_threshold < 1:
            raise ValueError(f"confidence_threshold must be in (0, 1), got {self.confidence_threshold}")


@dataclass
class Prediction:
    probabilities: np.ndarray

    @property
    def argmax_labels(self) -> np.ndarray:
        return self.probabilities.argmax(axis=1)

    @property
    def confidence(self) -> np.ndarray:
        return self.probabilities.max(axis=1)


def message(h_prev: np.ndarray, w: np.ndarray) -> np.ndarray:
    if w.shape[1] != h_prev.shape[-1]:
        raise DimensionError(f"weight expects input dim {w.shape[1]}, got vector of dim {h_prev.shape[-1]}")
    return np.maximum(w @ h_prev, 0.0)


def aggregate(messages: Iterable[np.ndarray]) -> np.ndarray:
    stacked = np.stack(list(messages))
    return stacked.mean(axis=0)


def init_params(feature_dim: int, hidden_dims: Sequence[int] = (32, 32), seed: int = 0) -> GnnParams:
    rng = np.random.default_rng(seed)
    dims = [feature_dim, *hidden_dims]
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(d_in)
        layers.append(rng.uniform(-bound, bound, size=(d_out, d_in)))
    bound = 1.0 / np.sqrt(dims[-1])
    classifier = rng.uniform(-bound, bound, size=(NUM_CLASSES, dims[-1]))
    return GnnParams(tuple(layers), classifier, seed)


def mean_adjacency(num_nodes: int, edges: Iterable[tuple[int, int]]) -> sp.csr_matrix:
    """Row-normalized (A + I) for an undirected graph."""
    edges = list(edges)
    rows = [i for i in range(num_nodes)]
    cols = list(rows)
    for a, b in edges:
        rows += [a, b]
        cols += [b, a]
    a = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(num_nodes, num_nodes))
    degree = np.asarray(a.sum(axis=1)).ravel()
    return sp.diags(1.0 / degree) @ a


@dataclass
class _Batch:
    x: np.ndarray
    adj: sp.csr_matrix
    offsets: list[int] = field(default_factory=list)


def _batch(graphs: Sequence[DomGraph]) -> _Batch:
    offsets, total = [], 0
    for g in graphs:
        offsets.append(total)
        total += g.num_nodes
    x = np.vstack([g.feature_matrix for g in graphs]) if graphs else np.zeros((0, 0))
    adj = sp.block_diag([mean_adjacency(g.num_nodes, g.edge_list) for g in graphs], format="csr")
    return _Batch(x, adj, offsets)


def _forward(x: np.ndarray, adj: sp.csr_matrix, params: GnnParams):
    if x.shape[1] != params.feature_dim:
        raise DimensionError(
            f"graph feature_dim {x.shape[1]} does not match model feature_dim {params.feature_dim}"
        )
    hs = [params.prepare(x)]
    pre = []
    for w in params.layer_weights:
        z = hs[-1] @ w.T
        pre.append(z)
        hs.append(adj @ np.maximum(z, 0.0))
    logits = hs[-1] @ params.classifier_weights.T
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    if not np.all(np.isfinite(probs)):
        raise NonFiniteError("non-finite activations in forward pass; model weights are corrupt")
    return probs, hs, pre


def forward(graph: DomGraph, params: GnnParams) -> Prediction:
    adj = mean_adjacency(graph.num_nodes, graph.edge_list)
    probs, _, _ = _forward(graph.feature_matrix, adj, params)
    return Prediction(probs)


def _label_arrays(labels: Mapping[int, int], num_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.fromiter(labels.keys(), dtype=np.int64, count=len(labels))
    cls = np.fromiter(labels.values(), dtype=np.int64, count=len(labels))
    if len(idx) and (idx.min() < 0 or idx.max() >= num_nodes):
        bad = idx[(idx < 0) | (idx >= num_nodes)][0]
        raise KeyError(f"label references node {bad}, graph has {num_nodes} nodes")
    if len(cls) and (cls.min() < 0 or cls.max() >= NUM_CLASSES):
        raise ValueError(f"class index out of range [0, {NUM_CLASSES})")
    return idx, cls


def loss(pred: Prediction, labels: Mapping[int, int]) -> float:
    idx, cls = _label_arrays(labels, pred.probabilities.shape[0])
    p = pred.probabilities[idx, cls]
    with np.errstate(divide="ignore"):
        return float(-np.sum(np.log(p))) + 0.0


def _loss_and_grads(batch: _Batch, idx: np.ndarray, cls: np.ndarray, params: GnnParams):
    probs, hs, pre = _forward(batch.x, batch.adj, params)
    with np.errstate(divide="ignore"):
        value = float(-np.sum(np.log(probs[idx, cls])))
    g = np.zeros_like(probs)
    g[idx] = probs[idx]
    # duplicate indices cannot occur: labels are keyed by node
    g[idx, cls] -= 1.0
    grad_classifier = g.T @ hs[-1]
    dh = g @ params.classifier_weights
    grads_layers = []
    adj_t = batch.adj.T.tocsr()
    for layer in range(params.layer_count - 1, -1, -1):
        dm = adj_t @ dh
        dz = dm * (pre[layer] > 0)
        grads_layers.append(dz.T @ hs[layer])
        dh = dz @ params.layer_weights[layer]
    grads_layers.reverse()
    return value, grads_layers, grad_classifier


def gradients(graphs: Sequence[DomGraph], labels: Sequence[Mapping[int, int]],
              params: GnnParams) -> tuple[float, list[np.ndarray]]:
    """Loss and its gradient w.r.t. every weight matrix (layers then classifier)."""
    batch = _batch(graphs)
    idx, cls = _stack_labels(graphs, labels, batch)
    value, gl, gc = _loss_and_grads(batch, idx, cls, params)
    return value, [*gl, gc]


def _stack_labels(graphs, labels, batch):
    if len(graphs) != len(labels):
        raise ValueError(f"{len(graphs)} graphs but {len(labels)} label maps")
    all_idx, all_cls = [], []
    for g, lab, off in zip(graphs, labels, batch.offsets):
        idx, cls = _label_arrays(lab, g.num_nodes)
        all_idx.append(idx + off)
        all_cls.append(cls)
    if not all_idx:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(all_idx), np.concatenate(all_cls)


def train(graphs: Sequence[DomGraph], labels: Sequence[Mapping[int, int]],
          config: TrainConfig = TrainConfig(), *,
          init: GnnParams | None = None,
          on_epoch: Callable[[int, float], None] | None = None) -> GnnParams:
    """Full-batch gradient descent on the summed cross-entropy of labelled nodes.

    The gradient step is divided by the number of labelled nodes so one
    learning rate works for corpora of any size. Features are all
    non-negative and the layers carry no bias, so by default each feature
    column is standardised with statistics of the training graphs; without
    that, descent from the small initial weights sits on the class prior for
    hundreds of epochs.
    """
    batch = _batch(graphs)
    idx, cls = _stack_labels(graphs, labels, batch)
    if len(idx) == 0:
        raise ValueError("training needs at least one labelled node")
    if init is None:
        params = init_params(batch.x.shape[1], config.hidden_dims, config.seed)
        if config.standardize:
            shift, scale = feature_statistics(batch.x)
            params = GnnParams(params.layer_weights, params.classifier_weights, params.seed, shift, scale)
    else:
        params = init
    layers = [w.copy() for w in params.layer_weights]
    classifier = params.classifier_weights.copy()
    step = config.learning_rate / len(idx)
    for epoch in range(1, config.epochs + 1):
        current = params.with_weights(layers, classifier)
        value, gl, gc = _loss_and_grads(batch, idx, cls, current)
        if not np.isfinite(value):
            raise NonFiniteError(f"loss became non-finite at epoch {epoch}")
        if on_epoch is not None:
            on_epoch(epoch, value)
        for w, g in zip(layers, gl):
            w -= step * g
        classifier -= step * gc
    return params.with_weights(layers, classifier)


def feature_statistics(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column means and standard deviations; constant columns get scale 1."""
    shift = x.mean(axis=0) if len(x) else np.zeros(x.shape[1])
    scale = x.std(axis=0) if len(x) else np.ones(x.shape[1])
    scale = np.where(scale > 1e-12, scale, 1.0)
    return shift, scale


def predict_fields(graph: DomGraph, params: GnnParams,
                   config: TrainConfig = TrainConfig()) -> dict[str, tuple[int, float]]:
    pred = forward(graph, params)
    probs = pred.probabilities
    best = pred.argmax_labels
    out: dict[str, tuple[int, float]] = {}
    for c in range(1, NUM_CLASSES):
        col = np.where(best == c, probs[:, c], -1.0)
        node = int(np.argmax(col))  # first maximum -> lowest node id on ties
        if col[node] >= config.confidence_threshold:
            out[LABELS[c]] = (node, float(col[node]))
    return out


def accuracy(graphs: Sequence[DomGraph], labels: Sequence[Mapping[int, int]], params: GnnParams) -> float:
    hit = total = 0
    for g, lab in zip(graphs, labels):
        predicted = forward(g, params).argmax_labels
        for node, c in lab.items():
            hit += int(predicted[node] == c)
            total += 1
    return hit / total if total else 0.0


# ---------------------------------------------------------------------------
# label files: source_id <TAB> node_id <TAB> class name

class LabelFileError(ValueError):
    pass


def read_labels(path: str | Path) -> dict[str, dict[int, int]]:
    out: dict[str, dict[int, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise LabelFileError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            source_id, node, name = parts
            try:
                node_id = int(node)
            except ValueError:
                raise LabelFileError(f"{path}:{lineno}: node_id {node!r} is not an integer") from None
            if name not in LABEL_INDEX:
                raise LabelFileError(f"{path}:{lineno}: unknown class {name!r}")
            out.setdefault(source_id, {})[node_id] = LABEL_INDEX[name]
    return out


def write_labels(path: str | Path, labels: Mapping[str, Mapping[int, int]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for source_id in sorted(labels):
            for node_id, c in sorted(labels[source_id].items()):
                fh.write(f"{source_id}\t{node_id}\t{LABELS[c]}\n")
