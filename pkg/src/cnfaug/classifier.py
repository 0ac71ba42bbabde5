"""Feed-forward classifier trained with plain mini-batch SGD."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .datagen import COL, K, Dataset, rng_for
from .scm import DistTable

INPUT_DIM = 28 * 28 * 3


class TrainingDiverged(RuntimeError):
    pass


class DimensionError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr: float = 0.05
    decay_epochs: tuple[int, ...] = (15, 25)
    decay: float = 0.5
    hidden: tuple[int, ...] = (256, 64)
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr >= 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        self.decay_epochs = tuple(self.decay_epochs)
        self.hidden = tuple(self.hidden)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``; halves once each decay epoch is reached."""
        return self.lr * self.decay ** sum(epoch >= e for e in self.decay_epochs)


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    per_class_accuracy: tuple[float, ...]
    mean_loss: float


@dataclass(eq=False)
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    history: list[float] = field(default_factory=list)

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def dtype(self):
        return self.weights[0].dtype

    @classmethod
    def init(cls, sizes: Sequence[int], seed: int, dtype="float64") -> "MlpModel":
        """Glorot-uniform weights, zero biases."""
        rng = rng_for(seed, 7)
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
            bs.append(np.zeros(fan_out, dtype=dtype))
        return cls(ws, bs)

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases], list(self.history))

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def logits(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise DimensionError(f"input has shape {x.shape}, model expects (*, {self.sizes[0]})")
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                np.maximum(h, 0, out=h)
        return h

    def loss_and_grads(self, x: np.ndarray, targets: np.ndarray):
        """Mean soft-label cross-entropy and its gradients (dW, db per layer)."""
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                np.maximum(h, 0, out=h)
            acts.append(h)
        logp = log_softmax(acts[-1])
        n = len(x)
        loss = float(-(targets * logp).sum() / n)
        delta = (np.exp(logp) - targets) / n
        gw, gb = [None] * len(self.weights), [None] * len(self.weights)
        for i in range(last, -1, -1):
            gw[i] = acts[i].T @ delta
            gb[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
        return loss, gw, gb

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return np.exp(log_softmax(self.logits(x)))


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _inputs(images: np.ndarray, dtype) -> np.ndarray:
    return images.reshape(len(images), -1).astype(dtype) / dtype(255.0)


def train(dataset: Dataset, config: TrainConfig | None = None, model: MlpModel | None = None) -> MlpModel:
    config = config or TrainConfig()
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    dtype = np.dtype(config.dtype).type
    if dataset.images[0].size != INPUT_DIM and model is None:
        raise DimensionError(f"images have {dataset.images[0].size} values, expected {INPUT_DIM}")
    if model is None:
        model = MlpModel.init((INPUT_DIM, *config.hidden, K), config.seed, dtype)
    elif dataset.images[0].size != model.sizes[0]:
        raise DimensionError(f"images have {dataset.images[0].size} values, model expects {model.sizes[0]}")
    rng = rng_for(config.seed, 11)
    soft = dataset.soft.astype(dtype)
    for epoch in range(config.epochs):
        lr = dtype(config.lr_at(epoch))
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = np.sort(order[lo : lo + config.batch_size])
            x = _inputs(dataset.images[idx], dtype)
            loss, gw, gb = model.loss_and_grads(x, soft[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            total += loss * len(idx)
            if lr:
                for w, g in zip(model.weights, gw):
                    w -= lr * g
                for b, g in zip(model.biases, gb):
                    b -= lr * g
        model.history.append(total / n)
    if not all(np.all(np.isfinite(p)) for p in model.params()):
        raise TrainingDiverged("non-finite parameters after training")
    return model


def predict(model: MlpModel, image: np.ndarray) -> np.ndarray:
    """Class probabilities for one image (or a batch of images)."""
    img = np.asarray(image)
    single = img.ndim == 3 or (img.ndim == 1)
    x = img.reshape(1 if single else len(img), -1)
    if x.dtype == np.uint8:
        x = x.astype(model.dtype) / model.dtype.type(255.0)
    p = model.predict_proba(x.astype(model.dtype, copy=False))
    return p[0] if single else p


def predict_labels(model: MlpModel, dataset: Dataset, batch: int = 4096) -> np.ndarray:
    out = np.empty(len(dataset), dtype=np.int64)
    dtype = model.dtype.type
    for lo in range(0, len(dataset), batch):
        out[lo : lo + batch] = model.logits(_inputs(dataset.images[lo : lo + batch], dtype)).argmax(axis=1)
    return out


def evaluate(model: MlpModel, dataset: Dataset, batch: int = 4096) -> Metrics:
    dtype = model.dtype.type
    preds = np.empty(len(dataset), dtype=np.int64)
    loss = 0.0
    for lo in range(0, len(dataset), batch):
        x = _inputs(dataset.images[lo : lo + batch], dtype)
        logp = log_softmax(model.logits(x))
        preds[lo : lo + batch] = logp.argmax(axis=1)
        loss += float(-(dataset.soft[lo : lo + batch] * logp).sum())
    truth = dataset.soft.argmax(axis=1)
    correct = preds == truth
    per_class = tuple(float(correct[truth == c].mean()) if np.any(truth == c) else float("nan") for c in range(K))
    return Metrics(float(correct.mean()), per_class, loss / len(dataset))


def predicted_joint(model: MlpModel, dataset: Dataset, zi: str, preds: np.ndarray | None = None) -> DistTable:
    """Empirical joint of (style factor, true digit, predicted label)."""
    style = dataset.factors[:, COL[zi]].astype(np.int64)
    if np.any(style >= K):
        raise ValueError(f"dataset carries no provenance for {zi!r}")
    digit = dataset.factors[:, COL["digit"]].astype(np.int64)
    yhat = predict_labels(model, dataset) if preds is None else preds
    counts = np.bincount((style * K + digit) * K + yhat, minlength=K**3).reshape(K, K, K)
    return DistTable((zi, "digit", "yhat"), counts / counts.sum())


def gradient_check(model: MlpModel, x: np.ndarray, targets: np.ndarray, h: float = 1e-5) -> float:
    """Largest relative error between analytic and central-difference gradients.

    The error is measured per parameter tensor as ||a - n|| / (||a|| + ||n||).
    """
    model = MlpModel([w.astype(np.float64) for w in model.weights], [b.astype(np.float64) for b in model.biases])
    _, gw, gb = model.loss_and_grads(x, targets)
    worst = 0.0
    for param, grad in zip(model.params(), [g for pair in zip(gw, gb) for g in pair]):
        num = np.zeros_like(param)
        it = np.nditer(param, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = param[i]
            param[i] = old + h
            up = model.loss_and_grads(x, targets)[0]
            param[i] = old - h
            down = model.loss_and_grads(x, targets)[0]
            param[i] = old
            num[i] = (up - down) / (2 * h)
        denom = np.linalg.norm(grad) + np.linalg.norm(num)
        if denom > 0:
            worst = max(worst, float(np.linalg.norm(grad - num) / denom))
    return worst


# ---------------------------------------------------------------------------
# Checkpoints: u64 layer count, u64 sizes, then W (row-major) and b per layer as <f8


def save_model(model: MlpModel, path, sidecar: dict | None = None) -> None:
    path = Path(path)
    sizes = model.sizes
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(sizes)))
        fh.write(struct.pack(f"<{len(sizes)}Q", *sizes))
        for w, b in zip(model.weights, model.biases):
            fh.write(w.astype("<f8").tobytes())
            fh.write(b.astype("<f8").tobytes())
    meta = {"sizes": list(sizes), "dtype": str(model.dtype), "history": model.history, **(sidecar or {})}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=1, default=_jsonable))


def _jsonable(obj):
    if isinstance(obj, TrainConfig):
        return asdict(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def load_model(path) -> MlpModel:
    path = Path(path)
    raw = path.read_bytes()
    (count,) = struct.unpack_from("<Q", raw, 0)
    sizes = struct.unpack_from(f"<{count}Q", raw, 8)
    offset = 8 + 8 * count
    side = path.with_suffix(path.suffix + ".json")
    dtype = "float64"
    history = []
    if side.exists():
        meta = json.loads(side.read_text())
        dtype, history = meta.get("dtype", dtype), meta.get("history", [])
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(raw, "<f8", fan_in * fan_out, offset).reshape(fan_in, fan_out)
        offset += 8 * fan_in * fan_out
        b = np.frombuffer(raw, "<f8", fan_out, offset)
        offset += 8 * fan_out
        ws.append(w.astype(dtype))
        bs.append(b.astype(dtype))
    if offset != len(raw):
        raise ValueError("checkpoint has trailing bytes")
    return MlpModel(ws, bs, history)
