"""Contrastive pretraining and supervised fine-tuning over action-unit embeddings.

Encoder: two same-padded 1-D convolutions (32 and 64 filters, kernel 3) over
the feature axis, each followed by ReLU and dropout, then an LSTM with 64
hidden units that reads the 64-channel conv output position by position.
The final hidden state is the representation.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class NonFiniteError(FloatingPointError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class SSLConfig:
    batch_size: int = 64
    temperature: float = 0.5
    lr: float = 1e-3
    pretrain_epochs: int = 100
    finetune_epochs: int = 50
    seed: int = 0
    noise_sigma: float = 0.05
    scale_mean: float = 1.0
    scale_std: float = 0.1
    threshold: float = 0.7
    dropout: float = 0.1
    kernel_size: int = 3
    conv_channels: tuple[int, int] = (32, 64)
    hidden: int = 64
    proj_dims: tuple[int, int, int] = (128, 256, 128)
    head_hidden: int = 256
    freeze_encoder: bool = False

    def __post_init__(self):
        self.conv_channels = tuple(self.conv_channels)
        self.proj_dims = tuple(self.proj_dims)
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0 < self.threshold <= 1:
            raise ValueError("threshold must be in (0, 1]")

    @classmethod
    def from_dict(cls, raw: dict) -> "SSLConfig":
        return cls(**raw)


# augmentations -----------------------------------------------------------------

def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def augment_noise(x, sigma: float, seed) -> np.ndarray:
    """Add elementwise Gaussian noise with standard deviation ``sigma``."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    if sigma == 0:
        return x.copy()
    return x + _rng(seed).normal(0.0, sigma, size=x.shape)


def augment_scale(x, mean: float, std: float, seed) -> np.ndarray:
    """Multiply every feature by its own factor drawn from Normal(mean, std)."""
    if not (np.isfinite(mean) and np.isfinite(std)) or std < 0:
        raise ValueError("scale distribution parameters must be finite, std >= 0")
    x = np.asarray(x, dtype=np.float64)
    if std == 0:
        return x * mean
    return x * _rng(seed).normal(mean, std, size=x.shape)


# parameters --------------------------------------------------------------------

def init_encoder(rng, config: SSLConfig) -> dict[str, Tensor]:
    c1, c2 = config.conv_channels
    k = config.kernel_size
    H = config.hidden
    b = np.zeros(4 * H)
    b[H:2 * H] = 1.0  # forget-gate bias
    return {
        "conv1_w": ag.glorot(rng, k, c1 * k, shape=(c1, 1, k)),
        "conv1_b": ag.parameter(np.zeros(c1)),
        "conv2_w": ag.glorot(rng, c1 * k, c2 * k, shape=(c2, c1, k)),
        "conv2_b": ag.parameter(np.zeros(c2)),
        "lstm_wih": ag.glorot(rng, c2, 4 * H),
        "lstm_whh": ag.glorot(rng, H, 4 * H),
        "lstm_b": ag.parameter(b),
    }


def _linear_stack(rng, dims: Sequence[int], prefix: str) -> dict[str, Tensor]:
    out = {}
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        out[f"{prefix}{i}_w"] = ag.glorot(rng, a, b)
        out[f"{prefix}{i}_b"] = ag.parameter(np.zeros(b))
    return out


def init_projection(rng, config: SSLConfig) -> dict[str, Tensor]:
    return _linear_stack(rng, (config.hidden, *config.proj_dims), "proj")


def init_head(rng, config: SSLConfig, n_classes: int) -> dict[str, Tensor]:
    if n_classes < 2:
        raise ValueError("prediction head needs at least two classes")
    return _linear_stack(rng, (config.hidden, config.head_hidden, n_classes), "head")


def _check(t: Tensor, layer: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError(f"non-finite values after {layer}")
    return t


def encode(params: dict, x, training: bool = False, dropout: float = 0.1, rng=None) -> Tensor:
    """Features (B, d) -> representations (B, hidden)."""
    x = ag.as_tensor(np.atleast_2d(np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)))
    p = params
    if training and dropout > 0 and rng is None:
        raise ValueError("training mode with dropout needs an rng")
    h = x.reshape(x.shape[0], 1, x.shape[1])
    h = _check(ag.relu(ag.conv1d(h, p["conv1_w"], p["conv1_b"])), "conv1")
    h = ag.dropout(h, dropout, rng, training)
    h = _check(ag.relu(ag.conv1d(h, p["conv2_w"], p["conv2_b"])), "conv2")
    h = ag.dropout(h, dropout, rng, training)
    h = h.swapaxes(1, 2)
    return _check(ag.lstm(h, p["lstm_wih"], p["lstm_whh"], p["lstm_b"]), "lstm")


def mlp(params: dict, h: Tensor, prefix: str) -> Tensor:
    n = sum(1 for k in params if k.startswith(prefix) and k.endswith("_w"))
    for i in range(n):
        h = h @ params[f"{prefix}{i}_w"] + params[f"{prefix}{i}_b"]
        if i < n - 1:
            h = ag.relu(h)
        _check(h, f"{prefix}{i}")
    return h


# loss --------------------------------------------------------------------------

def nt_xent(z, tau: float) -> Tensor:
    """Normalised-temperature cross entropy over 2N vectors paired (2i, 2i+1).

    Averages the per-anchor loss over all 2N anchors.
    """
    z = ag.as_tensor(z)
    if z.ndim != 2 or z.shape[0] % 2 or z.shape[0] < 2:
        raise ValueError("expected an even number (2N >= 2) of row vectors")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    sq = (z * z).sum(axis=1, keepdims=True)
    if np.any(sq.data <= 0):
        raise ValueError("cosine similarity undefined for a zero vector")
    zn = z / ag.sqrt(sq)
    sim = (zn @ zn.transpose()) * (1.0 / tau)
    n2 = z.shape[0]
    diag = np.zeros((n2, n2))
    np.fill_diagonal(diag, -np.inf)
    partner = np.arange(n2) ^ 1
    pos = sim[np.arange(n2), partner]
    lse = ag.logsumexp(sim + Tensor(diag), axis=1)
    return (lse - pos).mean()


# training -------------------------------------------------------------------------

def _batches(n: int, size: int, rng) -> list[np.ndarray]:
    perm = rng.permutation(n)
    out = [perm[s:s + size] for s in range(0, n, size)]
    return [b for b in out if len(b) >= 2]


def _pairs(X: np.ndarray, config: SSLConfig, rng) -> np.ndarray:
    a = augment_noise(X, config.noise_sigma, rng)
    b = augment_scale(X, config.scale_mean, config.scale_std, rng)
    out = np.empty((2 * len(X), X.shape[1]))
    out[0::2], out[1::2] = a, b
    return out


@dataclass
class Encoder:
    params: dict[str, np.ndarray]
    config: SSLConfig
    history: dict = field(default_factory=dict)

    def tensors(self, trainable: bool = False) -> dict[str, Tensor]:
        if trainable:
            return {k: ag.parameter(v) for k, v in self.params.items()}
        return {k: Tensor(v) for k, v in self.params.items()}

    def __call__(self, X) -> np.ndarray:
        with ag.no_grad():
            return encode(self.tensors(), X, training=False).data


def _contrastive_loss(params, X, config, rng, training, drop_rng=None) -> Tensor:
    views = _pairs(X, config, rng)
    r = encode(params, views, training, config.dropout, drop_rng)
    return nt_xent(mlp(params, r, "proj"), config.temperature)


def pretrain(data, config: SSLConfig | None = None, init: Encoder | None = None) -> Encoder:
    """Contrastive pretraining; the projection head is discarded afterwards.

    ``history["loss"]`` holds the loss on a fixed evaluation subset (fixed
    augmentations, dropout off) at initialisation and after each epoch;
    ``history["train_loss"]`` the mean training-batch loss per epoch. ``init``
    warm-starts the encoder weights; the projection head is always fresh.
    """
    config = config or SSLConfig()
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or len(X) < config.batch_size:
        raise ValueError(f"pretraining needs at least batch_size={config.batch_size} samples")
    rng = np.random.default_rng(config.seed)
    params = {**init_encoder(rng, config), **init_projection(rng, config)}
    if init is not None:
        params.update(init.tensors(trainable=True))
    opt = ag.Adam(params, lr=config.lr)
    eval_X = X[: 4 * config.batch_size]

    def eval_loss():
        with ag.no_grad():
            ev = np.random.default_rng(config.seed + 7919)
            losses = [_contrastive_loss(params, eval_X[s:s + config.batch_size], config, ev, False).item()
                      for s in range(0, len(eval_X), config.batch_size)
                      if len(eval_X[s:s + config.batch_size]) >= 2]
        return float(np.mean(losses))

    trace = [eval_loss()]
    train_trace = []
    for epoch in range(config.pretrain_epochs):
        running = []
        for idx in _batches(len(X), config.batch_size, rng):
            loss = _contrastive_loss(params, X[idx], config, rng, True, rng)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"contrastive loss diverged in epoch {epoch + 1}", trace + [loss.item()])
            opt.zero_grad()
            loss.backward()
            opt.step()
            running.append(loss.item())
        train_trace.append(float(np.mean(running)))
        trace.append(eval_loss())
        logger.debug("pretrain epoch %d loss %.4f", epoch + 1, trace[-1])
    enc_keys = [k for k in params if not k.startswith("proj")]
    return Encoder({k: params[k].data.copy() for k in enc_keys}, config,
                   {"loss": trace, "train_loss": train_trace, "n_samples": len(X)})


def random_encoder(config: SSLConfig) -> Encoder:
    rng = np.random.default_rng(config.seed)
    return Encoder({k: v.data.copy() for k, v in init_encoder(rng, config).items()}, config)


@dataclass
class Classifier:
    encoder: dict[str, np.ndarray]
    head: dict[str, np.ndarray]
    labels: list[str]
    config: SSLConfig
    history: dict = field(default_factory=dict)
    tag: int = 0

    def index_of(self, label: str) -> int:
        return self.labels.index(label)

    def label_of(self, index: int) -> str:
        return self.labels[index]

    def logits(self, X) -> np.ndarray:
        params = {k: Tensor(v) for k, v in {**self.encoder, **self.head}.items()}
        with ag.no_grad():
            out = []
            X = np.atleast_2d(np.asarray(X, dtype=np.float64))
            for s in range(0, len(X), 512):
                out.append(mlp(params, encode(params, X[s:s + 512]), "head").data)
        return np.concatenate(out) if out else np.zeros((0, len(self.labels)))

    def predict_proba(self, X) -> np.ndarray:
        return ag.softmax_np(self.logits(X), axis=1)

    # persistence -----------------------------------------------------------------
    def save(self, path) -> None:
        meta = {"schema_version": SCHEMA_VERSION, "kind": "classifier", "labels": self.labels,
                "config": asdict(self.config), "seed": self.config.seed, "history": self.history,
                "tag": self.tag}
        arrays = {f"enc.{k}": v for k, v in self.encoder.items()}
        arrays.update({f"head.{k}": v for k, v in self.head.items()})
        np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path) -> "Classifier":
        with np.load(path) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            if meta.get("schema_version") != SCHEMA_VERSION or meta.get("kind") != "classifier":
                raise ValueError(f"{path}: not a classifier checkpoint of schema {SCHEMA_VERSION}")
            enc = {k[4:]: z[k].copy() for k in z.files if k.startswith("enc.")}
            head = {k[5:]: z[k].copy() for k in z.files if k.startswith("head.")}
        return cls(enc, head, meta["labels"], SSLConfig.from_dict(meta["config"]), meta["history"], meta["tag"])


def fine_tune(encoder: Encoder, seeds, labels: Sequence[str] | None = None,
              config: SSLConfig | None = None) -> Classifier:
    """Attach a prediction head and minimise cross-entropy on labelled seed points.

    ``seeds`` is either an (n, d) array with ``labels`` alongside, or a list of
    (vector, label) pairs. The encoder is updated too unless
    ``config.freeze_encoder`` is set.
    """
    config = config or encoder.config
    if labels is None:
        X = np.stack([np.asarray(v, dtype=np.float64) for v, _ in seeds]) if len(seeds) else np.zeros((0, 0))
        labels = [l for _, l in seeds]
    else:
        X = np.asarray(seeds, dtype=np.float64)
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValueError("fine-tuning needs seed points from at least two activities")
    y = np.array([classes.index(l) for l in labels])
    rng = np.random.default_rng(config.seed + 1)
    enc = encoder.tensors(trainable=not config.freeze_encoder)
    head = init_head(rng, config, len(classes))
    params = {**enc, **head}
    trainable = params if not config.freeze_encoder else head
    opt = ag.Adam(trainable, lr=config.lr)

    def eval_loss():
        with ag.no_grad():
            return ag.cross_entropy(mlp(params, encode(params, X), "head"), y).item()

    trace = [eval_loss()]
    for epoch in range(config.finetune_epochs):
        for idx in _batches(len(X), config.batch_size, rng):
            r = encode(params, X[idx], True, config.dropout, rng)
            loss = ag.cross_entropy(mlp(params, r, "head"), y[idx])
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"fine-tuning diverged in epoch {epoch + 1}", trace)
            opt.zero_grad()
            loss.backward()
            opt.step()
        trace.append(eval_loss())
    with ag.no_grad():
        acc = float((mlp(params, encode(params, X), "head").data.argmax(1) == y).mean())
    return Classifier({k: params[k].data.copy() for k in enc}, {k: params[k].data.copy() for k in head},
                      classes, config, {"loss": trace, "train_accuracy": acc, "n_seeds": len(X)})


def predict_thresholded(classifier: Classifier, x, theta: float | None = None):
    """(activity, confidence) when the top softmax probability reaches ``theta``, else None."""
    theta = classifier.config.threshold if theta is None else theta
    if not 0 < theta <= 1:
        raise ValueError("theta must be in (0, 1]")
    probs = classifier.predict_proba(np.atleast_2d(x))[0]
    return threshold_probs(probs, classifier.labels, theta)


def threshold_probs(probs: np.ndarray, labels: Sequence[str], theta: float):
    k = int(np.argmax(probs))
    conf = float(probs[k])
    return (labels[k], conf) if conf >= theta else None


def predict_many(classifier: Classifier, X, theta: float | None = None) -> list:
    theta = classifier.config.threshold if theta is None else theta
    probs = classifier.predict_proba(X) if len(X) else np.zeros((0, len(classifier.labels)))
    return [threshold_probs(p, classifier.labels, theta) for p in probs]


def loss_trace_csv(trace: Sequence[float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss"])
    for i, v in enumerate(trace):
        w.writerow([i, repr(float(v))])
    return buf.getvalue()
