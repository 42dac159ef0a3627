"""Target models: a 2-layer graph convolution network and an adjacency-free MLP.

Both are trained full-batch with Adam on softmax cross-entropy. The GCN
propagates through the symmetrically normalized adjacency; the MLP sees only
node features of the labeled (train + validation) nodes, making it agnostic
to the target model and the graph structure.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    DivergedTrainingError,
    InvalidRateError,
    ShapeMismatchError,
)
from .graph import Graph, SparseRowMatrix, Split, sym_norm_adjacency
from .kernels import (
    AdamState,
    adam_step,
    cross_entropy,
    relu,
    sample_dropout_mask,
    softmax_rows,
    spmm,
)

__all__ = [
    "PredictionSource",
    "PredictionBundle",
    "TrainConfig",
    "GcnModel",
    "MlpModel",
    "train_gcn",
    "gcn_forward_deterministic",
    "gcn_mc_dropout",
    "train_mlp",
    "mlp_forward",
    "classify_failures",
    "save_model",
    "load_model",
    "save_bundle",
    "load_bundle",
]

CHECKPOINT_VERSION = 1


class PredictionSource(Enum):
    GCN_DETERMINISTIC = "gcn_deterministic"
    GCN_MC_DROPOUT = "gcn_mc_dropout"
    MLP = "mlp"


@dataclass(frozen=True)
class PredictionBundle:
    """Per-node categorical distributions and argmax labels from one model."""

    probs: np.ndarray
    predicted: np.ndarray
    source: PredictionSource

    def __post_init__(self):
        if self.probs.ndim != 2:
            raise ShapeMismatchError("probs must be N x c")
        sums = self.probs.sum(axis=1)
        if not np.all(np.abs(sums - 1.0) <= 1e-9):
            raise ShapeMismatchError("prediction rows must sum to 1 within 1e-9")

    @classmethod
    def from_probs(cls, probs: np.ndarray, source: PredictionSource) -> "PredictionBundle":
        # np.argmax returns the lowest index on ties, which is the tie rule.
        return cls(probs=probs, predicted=np.argmax(probs, axis=1), source=source)

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 0.01
    hidden: int = 64
    weight_decay: float = 5e-4
    dropout: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidRateError(f"dropout rate must lie in [0, 1), got {self.dropout}")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.hidden < 1:
            raise ValueError("hidden width must be positive")


@dataclass(frozen=True, eq=False)
class GcnModel:
    """Two graph-convolution layers d -> hidden -> c with ReLU, no biases."""

    w1: np.ndarray
    w2: np.ndarray
    config: TrainConfig
    train_losses: tuple = ()

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def num_classes(self) -> int:
        return self.w2.shape[1]


@dataclass(frozen=True, eq=False)
class MlpModel:
    """Two dense layers d -> hidden -> c with ReLU and biases."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    config: TrainConfig
    train_losses: tuple = ()

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def num_classes(self) -> int:
        return self.w2.shape[1]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


def _gcn_step(ax: np.ndarray, a_hat: SparseRowMatrix, w1: np.ndarray, w2: np.ndarray,
              labels: np.ndarray, mask: np.ndarray, weight_decay: float,
              drop_values: np.ndarray | None) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and analytic weight gradients for one full-batch GCN pass.

    ``ax`` is the pre-aggregated feature matrix (adjacency @ features) and
    ``drop_values`` an optional dropout mask applied to the hidden layer.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        pre1 = ax @ w1
        h1 = relu(pre1)
        h1d = h1 * drop_values if drop_values is not None else h1
        s = spmm(a_hat, h1d)
        probs = softmax_rows(s @ w2)
        loss, dlogits = cross_entropy(probs, labels, mask)
        loss += 0.5 * weight_decay * (float((w1 * w1).sum()) + float((w2 * w2).sum()))

        dw2 = s.T @ dlogits + weight_decay * w2
        dh1d = spmm(a_hat, dlogits) @ w2.T
        dh1 = dh1d * drop_values if drop_values is not None else dh1d
        dpre1 = dh1 * (pre1 > 0)
        dw1 = ax.T @ dpre1 + weight_decay * w1
    return loss, dw1, dw2


def train_gcn(g: Graph, cfg: TrainConfig) -> GcnModel:
    """Train the target GCN on the train split; deterministic for a fixed seed."""
    train_mask = g.split == int(Split.TRAIN)
    if not train_mask.any():
        raise ValueError("train split is empty")
    a_hat = sym_norm_adjacency(g)
    ax = spmm(a_hat, g.features)

    rng = np.random.default_rng(cfg.seed)
    w1 = _glorot(rng, g.feature_dim, cfg.hidden)
    w2 = _glorot(rng, cfg.hidden, g.num_classes)
    opt1 = AdamState.for_param(w1, cfg.learning_rate)
    opt2 = AdamState.for_param(w2, cfg.learning_rate)

    losses = []
    for _ in range(cfg.epochs):
        drop = (sample_dropout_mask((g.n, cfg.hidden), cfg.dropout, rng).values
                if cfg.dropout > 0.0 else None)
        try:
            loss, dw1, dw2 = _gcn_step(ax, a_hat, w1, w2, g.labels, train_mask,
                                       cfg.weight_decay, drop)
        except ShapeMismatchError as err:
            # shapes are fixed by construction, so a kernel rejection here
            # means activations overflowed to non-finite values
            raise DivergedTrainingError(f"non-finite values during training: {err}") from err
        if not np.isfinite(loss):
            raise DivergedTrainingError(f"loss became {loss}")
        losses.append(loss)
        w1 = adam_step(opt1, w1, dw1)
        w2 = adam_step(opt2, w2, dw2)
        if not (np.isfinite(w1).all() and np.isfinite(w2).all()):
            raise DivergedTrainingError("weights became non-finite")

    return GcnModel(w1=w1, w2=w2, config=cfg, train_losses=tuple(losses))


def _gcn_hidden(model: GcnModel, g: Graph) -> tuple[np.ndarray, SparseRowMatrix]:
    a_hat = sym_norm_adjacency(g)
    if g.feature_dim != model.w1.shape[0]:
        raise ShapeMismatchError(
            f"graph features have width {g.feature_dim}, model expects {model.w1.shape[0]}")
    h1 = relu(spmm(a_hat, g.features) @ model.w1)
    return h1, a_hat


def gcn_forward_deterministic(model: GcnModel, g: Graph) -> PredictionBundle:
    """Dropout-free forward pass; idempotent across calls."""
    h1, a_hat = _gcn_hidden(model, g)
    probs = softmax_rows(spmm(a_hat, h1) @ model.w2)
    return PredictionBundle.from_probs(probs, PredictionSource.GCN_DETERMINISTIC)


def gcn_mc_dropout(model: GcnModel, g: Graph, passes: int = 10, rate: float = 0.5,
                   seed: int = 0, average: str = "logits") -> PredictionBundle:
    """Monte-Carlo dropout forward: average over stochastic passes.

    Each pass applies a fresh mask to the hidden embeddings before the second
    aggregation. With ``average="logits"`` the pre-softmax outputs are
    averaged and softmax is applied to the mean; ``average="probs"`` instead
    averages the per-pass distributions.
    """
    if passes < 1:
        raise ValueError("passes must be >= 1")
    if not 0.0 <= rate < 1.0:
        raise InvalidRateError(f"dropout rate must lie in [0, 1), got {rate}")
    if average not in ("logits", "probs"):
        raise ValueError("average must be 'logits' or 'probs'")
    if rate == 0.0:
        # All-ones masks make every pass identical to the deterministic
        # forward; short-circuit so the equality is exact.
        det = gcn_forward_deterministic(model, g)
        return PredictionBundle(probs=det.probs, predicted=det.predicted,
                                source=PredictionSource.GCN_MC_DROPOUT)
    h1, a_hat = _gcn_hidden(model, g)
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(passes)]
    acc = np.zeros((g.n, model.num_classes))
    for rng in streams:
        mask = sample_dropout_mask(h1.shape, rate, rng).values
        logits = spmm(a_hat, h1 * mask) @ model.w2
        acc += softmax_rows(logits) if average == "probs" else logits
    mean = acc / passes
    probs = mean if average == "probs" else softmax_rows(mean)
    return PredictionBundle.from_probs(probs, PredictionSource.GCN_MC_DROPOUT)


def _mlp_step(x: np.ndarray, y: np.ndarray, w1, b1, w2, b2, weight_decay: float,
              drop_values: np.ndarray | None):
    """Loss and analytic gradients (w1, b1, w2, b2) for one MLP pass."""
    with np.errstate(over="ignore", invalid="ignore"):
        pre1 = x @ w1 + b1
        h1 = relu(pre1)
        h1d = h1 * drop_values if drop_values is not None else h1
        probs = softmax_rows(h1d @ w2 + b2)
        loss, dlogits = cross_entropy(probs, y, np.ones(x.shape[0], dtype=bool))
        loss += 0.5 * weight_decay * (float((w1 * w1).sum()) + float((w2 * w2).sum()))

        dw2 = h1d.T @ dlogits + weight_decay * w2
        db2 = dlogits.sum(axis=0)
        dh1d = dlogits @ w2.T
        dh1 = dh1d * drop_values if drop_values is not None else dh1d
        dpre1 = dh1 * (pre1 > 0)
        dw1 = x.T @ dpre1 + weight_decay * w1
        db1 = dpre1.sum(axis=0)
    return loss, (dw1, db1, dw2, db2)


def train_mlp(g: Graph, cfg: TrainConfig) -> MlpModel:
    """Train the model-agnostic MLP on labeled (train + validation) features."""
    labeled = (g.split == int(Split.TRAIN)) | (g.split == int(Split.VAL))
    if not labeled.any():
        raise ValueError("no labeled nodes to train the MLP")
    x = g.features[labeled]
    y = g.labels[labeled]

    rng = np.random.default_rng(cfg.seed)
    w1 = _glorot(rng, g.feature_dim, cfg.hidden)
    b1 = np.zeros(cfg.hidden)
    w2 = _glorot(rng, cfg.hidden, g.num_classes)
    b2 = np.zeros(g.num_classes)
    opts = [AdamState.for_param(p, cfg.learning_rate) for p in (w1, b1, w2, b2)]

    losses = []
    for _ in range(cfg.epochs):
        drop = (sample_dropout_mask((x.shape[0], cfg.hidden), cfg.dropout, rng).values
                if cfg.dropout > 0.0 else None)
        try:
            loss, grads = _mlp_step(x, y, w1, b1, w2, b2, cfg.weight_decay, drop)
        except ShapeMismatchError as err:
            raise DivergedTrainingError(f"non-finite values during training: {err}") from err
        if not np.isfinite(loss):
            raise DivergedTrainingError(f"loss became {loss}")
        losses.append(loss)
        w1 = adam_step(opts[0], w1, grads[0])
        b1 = adam_step(opts[1], b1, grads[1])
        w2 = adam_step(opts[2], w2, grads[2])
        b2 = adam_step(opts[3], b2, grads[3])
        if not (np.isfinite(w1).all() and np.isfinite(w2).all()):
            raise DivergedTrainingError("weights became non-finite")

    return MlpModel(w1=w1, b1=b1, w2=w2, b2=b2, config=cfg, train_losses=tuple(losses))


def mlp_forward(model: MlpModel, features: np.ndarray) -> PredictionBundle:
    """Forward any feature rows through the MLP; never reads the adjacency."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.w1.shape[0]:
        raise ShapeMismatchError(
            f"features of shape {features.shape}, model expects width {model.w1.shape[0]}")
    h1 = relu(features @ model.w1 + model.b1)
    probs = softmax_rows(h1 @ model.w2 + model.b2)
    return PredictionBundle.from_probs(probs, PredictionSource.MLP)


def classify_failures(bundle: PredictionBundle, g: Graph) -> np.ndarray:
    """1 where the predicted label mismatches the ground truth, else 0."""
    if bundle.predicted.shape[0] != g.n:
        raise ShapeMismatchError("bundle does not cover all nodes")
    return (bundle.predicted != g.labels).astype(np.int8)


# ---------------------------------------------------------------------------
# checkpoint and bundle IO


def _arr_to_json(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(x) for x in a.ravel()]}


def _arr_from_json(d: dict) -> np.ndarray:
    return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])


def save_model(model, path) -> None:
    """Versioned JSON checkpoint; reloading reproduces outputs bitwise."""
    if isinstance(model, GcnModel):
        payload = {"kind": "gcn", "w1": _arr_to_json(model.w1), "w2": _arr_to_json(model.w2)}
    elif isinstance(model, MlpModel):
        payload = {"kind": "mlp", "w1": _arr_to_json(model.w1), "b1": _arr_to_json(model.b1),
                   "w2": _arr_to_json(model.w2), "b2": _arr_to_json(model.b2)}
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    payload["version"] = CHECKPOINT_VERSION
    payload["config"] = vars(model.config) | {}
    Path(path).write_text(json.dumps(payload))


def load_model(path):
    payload = json.loads(Path(path).read_text())
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    cfg = TrainConfig(**payload["config"])
    if payload["kind"] == "gcn":
        return GcnModel(w1=_arr_from_json(payload["w1"]),
                        w2=_arr_from_json(payload["w2"]), config=cfg)
    if payload["kind"] == "mlp":
        return MlpModel(w1=_arr_from_json(payload["w1"]), b1=_arr_from_json(payload["b1"]),
                        w2=_arr_from_json(payload["w2"]), b2=_arr_from_json(payload["b2"]),
                        config=cfg)
    raise ValueError(f"unknown checkpoint kind {payload['kind']!r}")


def save_bundle(bundle: PredictionBundle, path) -> None:
    c = bundle.num_classes
    header = "node_id,predicted," + ",".join(f"p_{k}" for k in range(c))
    with open(path, "w") as fh:
        fh.write(f"# graphrank-predictions v1 source={bundle.source.value} classes={c}\n")
        fh.write(header + "\n")
        for i in range(bundle.probs.shape[0]):
            row = ",".join(format(x, ".17g") for x in bundle.probs[i])
            fh.write(f"{i},{int(bundle.predicted[i])},{row}\n")


def load_bundle(path) -> PredictionBundle:
    with open(path) as fh:
        meta = fh.readline().strip()
        if not meta.startswith("# graphrank-predictions v1"):
            raise ValueError(f"{path}: not a prediction file")
        source = PredictionSource(meta.split("source=")[1].split()[0])
        fh.readline()  # column header
        probs, predicted = [], []
        for line in fh:
            parts = line.strip().split(",")
            predicted.append(int(parts[1]))
            probs.append([float(x) for x in parts[2:]])
    bundle = PredictionBundle.from_probs(np.asarray(probs), source)
    if not np.array_equal(bundle.predicted, np.asarray(predicted, dtype=np.int64)):
        raise ValueError(f"{path}: stored predictions disagree with argmax of rows")
    return bundle
