"""Masked-token window embedder: one self-attention block trained from scratch."""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from . import autograd as ag
from .action_units import EventWindow, Vocabulary
from .autograd import Tensor

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PARAM_NAMES = ("tok", "pos", "wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2", "wout", "bout")


@dataclass
class EmbedderConfig:
    dim: int = 64
    mask_prob: float = 0.15
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 64
    heldout_frac: float = 0.1
    seed: int = 0


def draw_mask(rng: np.random.Generator, shape, p: float) -> np.ndarray:
    return rng.random(shape) < p


def init_params(vocab_size: int, window: int, dim: int, rng) -> dict[str, Tensor]:
    hidden = 2 * dim
    return {
        "tok": ag.parameter(rng.normal(0.0, 0.1, size=(vocab_size, dim))),
        "pos": ag.parameter(rng.normal(0.0, 0.1, size=(window, dim))),
        "wq": ag.glorot(rng, dim, dim),
        "wk": ag.glorot(rng, dim, dim),
        "wv": ag.glorot(rng, dim, dim),
        "wo": ag.glorot(rng, dim, dim),
        "w1": ag.glorot(rng, dim, hidden),
        "b1": ag.parameter(np.zeros(hidden)),
        "w2": ag.glorot(rng, hidden, dim),
        "b2": ag.parameter(np.zeros(dim)),
        "wout": ag.glorot(rng, dim, vocab_size),
        "bout": ag.parameter(np.zeros(vocab_size)),
    }


def encode_block(params: dict[str, Tensor], ids: np.ndarray) -> Tensor:
    """Token ids (B, L) -> contextual states (B, L, d)."""
    p = params
    d = p["wq"].shape[0]
    h0 = p["tok"][ids] + p["pos"]
    q, k, v = h0 @ p["wq"], h0 @ p["wk"], h0 @ p["wv"]
    att = ag.softmax((q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(d)), axis=-1)
    h1 = h0 + (att @ v) @ p["wo"]
    return h1 + ag.relu(h1 @ p["w1"] + p["b1"]) @ p["w2"] + p["b2"]


def masked_loss(params: dict[str, Tensor], ids: np.ndarray, mask: np.ndarray, mask_id: int = 0):
    """Cross-entropy of the original tokens at masked positions; None if nothing is masked."""
    if not mask.any():
        return None, np.zeros(0, dtype=bool)
    inp = np.where(mask, mask_id, ids)
    h = encode_block(params, inp)
    logits = h @ params["wout"] + params["bout"]
    flat = logits.reshape(-1, logits.shape[-1])
    pos = np.flatnonzero(mask.ravel())
    picked = flat[pos]
    targets = ids.ravel()[pos]
    loss = ag.cross_entropy(picked, targets)
    correct = picked.data.argmax(axis=1) == targets
    return loss, correct


@dataclass
class MaskedEmbedder:
    vocab: Vocabulary
    params: dict[str, np.ndarray]
    window: int = 20
    mask_prob: float = 0.15
    seed: int = 0
    history: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.params["wq"].shape[0]

    def _tensors(self) -> dict[str, Tensor]:
        return {k: Tensor(v) for k, v in self.params.items()}

    def encode_ids(self, ids: np.ndarray) -> np.ndarray:
        with ag.no_grad():
            return encode_block(self._tensors(), ids).data.mean(axis=1)

    def embed(self, window: EventWindow) -> np.ndarray:
        return self.embed_many([window])[0]

    def embed_many(self, windows: Sequence[EventWindow], batch: int = 512) -> np.ndarray:
        if not windows:
            return np.zeros((0, self.dim))
        ids = np.stack([self.vocab.encode_window(w) for w in windows])
        if ids.shape[1] != self.window:
            raise ValueError(f"windows must have {self.window} tokens")
        return np.concatenate([self.encode_ids(ids[i:i + batch]) for i in range(0, len(ids), batch)])

    # persistence ------------------------------------------------------------
    def save(self, path) -> None:
        meta = {"schema_version": SCHEMA_VERSION, "kind": "masked_embedder", "window": self.window,
                "mask_prob": self.mask_prob, "seed": self.seed, "vocab": self.vocab.to_list(),
                "history": self.history}
        np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                 **self.params)

    @classmethod
    def load(cls, path) -> "MaskedEmbedder":
        with np.load(path) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            if meta.get("schema_version") != SCHEMA_VERSION or meta.get("kind") != "masked_embedder":
                raise ValueError(f"{path}: not a masked-embedder checkpoint of schema {SCHEMA_VERSION}")
            params = {k: z[k].copy() for k in PARAM_NAMES}
        return cls(Vocabulary.from_list(meta["vocab"]), params, meta["window"], meta["mask_prob"],
                   meta["seed"], meta["history"])


def _evaluate(params, ids, mask, mask_id):
    with ag.no_grad():
        loss, correct = masked_loss(params, ids, mask, mask_id)
    if loss is None:
        return float("nan"), float("nan")
    return loss.item(), float(correct.mean())


def train_embedder(windows: Sequence[EventWindow], config: EmbedderConfig | None = None) -> MaskedEmbedder:
    """Fit the embedder by masked-token prediction.

    A held-out split (``heldout_frac`` of the windows, at least one) is scored
    with a fixed mask before and after training; with fewer than ten windows
    the training windows double as the held-out set.
    """
    config = config or EmbedderConfig()
    if not windows:
        raise ValueError("need at least one window")
    if not 0 < config.mask_prob < 1:
        raise ValueError("mask probability must be in (0, 1)")
    vocab = Vocabulary.from_windows(windows)
    if vocab.n_event_tokens < 2:
        raise ValueError("vocabulary needs at least two distinct event tokens")
    size = len(windows[0])
    ids = np.stack([vocab.encode_window(w) for w in windows])

    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(ids))
    if len(ids) >= 10:
        n_held = max(1, int(round(config.heldout_frac * len(ids))))
        held, train = ids[order[:n_held]], ids[order[n_held:]]
    else:
        held, train = ids, ids
    held_mask = draw_mask(np.random.default_rng(config.seed + 1), held.shape, config.mask_prob)
    if not held_mask.any():
        held_mask.flat[0] = True

    params = init_params(len(vocab), size, config.dim, rng)
    opt = ag.Adam(params, lr=config.lr)
    init_loss, init_acc = _evaluate(params, held, held_mask, vocab.mask_id)
    masked = total = 0
    losses = []
    for epoch in range(config.epochs):
        perm = rng.permutation(len(train))
        running = []
        for s in range(0, len(train), config.batch_size):
            batch = train[perm[s:s + config.batch_size]]
            mask = draw_mask(rng, batch.shape, config.mask_prob)
            masked += int(mask.sum())
            total += mask.size
            loss, _ = masked_loss(params, batch, mask, vocab.mask_id)
            if loss is None:
                continue
            opt.zero_grad()
            loss.backward()
            opt.step()
            running.append(loss.item())
        losses.append(float(np.mean(running)) if running else float("nan"))
        logger.debug("embedder epoch %d loss %.4f", epoch + 1, losses[-1])
    final_loss, final_acc = _evaluate(params, held, held_mask, vocab.mask_id)
    history = {"train_loss": losses, "heldout_loss_initial": init_loss, "heldout_loss_final": final_loss,
               "heldout_acc_initial": init_acc, "heldout_acc_final": final_acc,
               "masked_fraction": masked / total if total else 0.0}
    logger.info("embedder held-out loss %.4f -> %.4f", init_loss, final_loss)
    return MaskedEmbedder(vocab, {k: p.data.copy() for k, p in params.items()}, size,
                          config.mask_prob, config.seed, history)
