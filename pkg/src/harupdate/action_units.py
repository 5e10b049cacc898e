"""Tokens, event windows and action-unit sequences."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .events import EventStream

MASK = "[MASK]"
UNK = "[UNK]"
DEFAULT_WINDOW = 20


class ShortStreamWarning(UserWarning):
    pass


class Vocabulary:
    """Bijection between ``SENSOR=STATE`` keys and integer ids.

    Ids 0 and 1 are reserved for the mask and unknown tokens.
    """

    def __init__(self, keys: Iterable[str]):
        self.itos = [MASK, UNK] + sorted(set(keys) - {MASK, UNK})
        self.stoi = {k: i for i, k in enumerate(self.itos)}

    @classmethod
    def from_windows(cls, windows: Sequence["EventWindow"]) -> "Vocabulary":
        return cls(tok for w in windows for tok in w.tokens)

    @property
    def mask_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def n_event_tokens(self) -> int:
        return len(self.itos) - 2

    def __len__(self):
        return len(self.itos)

    def encode(self, key: str) -> int:
        return self.stoi.get(key, self.unk_id)

    def decode(self, idx: int) -> str:
        return self.itos[idx]

    def encode_window(self, window: "EventWindow") -> np.ndarray:
        return np.array([self.encode(t) for t in window.tokens], dtype=np.int64)

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: list[str]) -> "Vocabulary":
        v = cls(itos[2:])
        if v.itos != itos:
            raise ValueError("vocabulary list is not in canonical order")
        return v


@dataclass(frozen=True)
class EventWindow:
    tokens: tuple[str, ...]
    span: tuple[int, int]  # first and last event index, inclusive

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class ActionUnitSequence:
    """Cluster ids of consecutive windows.

    ``spans`` holds inclusive (first, last) event indices in the stream the
    units were computed on, shifted by the block offset when one is given.
    """
    ids: tuple[int, ...]
    spans: tuple[tuple[int, int], ...]
    block: str = ""

    def __len__(self):
        return len(self.ids)

    def __post_init__(self):
        if len(self.ids) != len(self.spans):
            raise ValueError("ids and spans differ in length")
        if any(b[0] < a[0] for a, b in zip(self.spans, self.spans[1:])):
            raise ValueError("action-unit spans must be ordered")

    def event_span(self, start: int, stop: int) -> tuple[int, int]:
        """Inclusive event range covered by units ``[start, stop)``."""
        return self.spans[start][0], self.spans[stop - 1][1]

    @staticmethod
    def concat(seqs: Sequence["ActionUnitSequence"], block: str = "") -> "ActionUnitSequence":
        ids, spans = [], []
        for s in seqs:
            ids.extend(s.ids)
            spans.extend(s.spans)
        return ActionUnitSequence(tuple(ids), tuple(spans), block)


def make_windows(stream: EventStream, size: int = DEFAULT_WINDOW, stride: int | None = None) -> list[EventWindow]:
    """Fixed-size windows at offsets 0, stride, 2*stride, ...; a ragged tail is dropped."""
    stride = size if stride is None else stride
    if size < 1 or not 1 <= stride <= size:
        raise ValueError("need size >= 1 and 1 <= stride <= size")
    n = len(stream.events)
    if n < size:
        if n:
            warnings.warn(f"{n} events is shorter than one window of {size}", ShortStreamWarning)
        return []
    tokens = [ev.token for ev in stream.events]
    return [EventWindow(tuple(tokens[i:i + size]), (i, i + size - 1))
            for i in range(0, n - size + 1, stride)]


def expected_unit_count(n_events: int, size: int, stride: int) -> int:
    return 0 if n_events < size else (n_events - size) // stride + 1


def predict_action_units(stream: EventStream, embedder, kmeans, stride: int | None = None,
                         offset: int = 0, block: str = "") -> tuple[ActionUnitSequence, np.ndarray]:
    """Window the stream, embed every window and assign the nearest centroid.

    Returns the sequence and the (n_units, d) window embeddings, which the
    contrastive module consumes as its input features.
    """
    if embedder.dim != kmeans.centroids.shape[1]:
        raise ValueError("embedder and k-means dimensions differ")
    windows = make_windows(stream, embedder.window, stride)
    if not windows:
        return ActionUnitSequence((), (), block), np.zeros((0, embedder.dim))
    vectors = embedder.embed_many(windows)
    ids = kmeans.predict(vectors)
    spans = tuple((w.span[0] + offset, w.span[1] + offset) for w in windows)
    return ActionUnitSequence(tuple(int(i) for i in ids), spans, block), vectors
