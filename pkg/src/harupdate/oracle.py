"""Desk-scale stand-in for the resident: answers motif label queries from ground truth."""

from __future__ import annotations

import logging
from collections import Counter
from typing import Sequence

import numpy as np

from .events import AnnotationInterval

logger = logging.getLogger(__name__)


def innermost_assignment(intervals: Sequence[AnnotationInterval], n_events: int) -> np.ndarray:
    """Index of the innermost interval covering each event, -1 where none does.

    Innermost means shortest; among equally long intervals the one that
    started latest wins.
    """
    owner = np.full(n_events, -1, dtype=np.int64)
    order = sorted(range(len(intervals)),
                   key=lambda i: (-(intervals[i].end_index - intervals[i].start_index), intervals[i].start_index))
    for i in order:
        iv = intervals[i]
        lo, hi = max(iv.start_index, 0), min(iv.end_index, n_events - 1)
        if lo <= hi:
            owner[lo:hi + 1] = i
    return owner


class AnnotationOracle:
    """Labels event spans by the activity covering at least ``coverage`` of their events.

    Every call to :meth:`query` is one question to the resident and is logged.
    """

    def __init__(self, intervals: Sequence[AnnotationInterval], n_events: int, coverage: float = 0.5):
        self.intervals = tuple(intervals)
        self.n_events = n_events
        self.coverage = coverage
        self.owner = innermost_assignment(self.intervals, n_events)
        names = sorted({iv.activity for iv in self.intervals})
        self._names = names
        code = {a: k for k, a in enumerate(names)}
        self._label_codes = np.array([code[iv.activity] for iv in self.intervals] + [-1], dtype=np.int64)
        self.event_label = self._label_codes[self.owner]   # owner -1 picks the trailing -1
        self.log: list[dict] = []
        self.stragglers = 0

    @classmethod
    def from_stream(cls, stream, coverage: float = 0.5) -> "AnnotationOracle":
        return cls(stream.intervals, len(stream.events), coverage)

    def label_span(self, first: int, last: int) -> str | None:
        if first < 0 or last >= self.n_events or first > last:
            return None
        codes = self.event_label[first:last + 1]
        codes = codes[codes >= 0]
        if len(codes) == 0:
            return None
        counts = np.bincount(codes)
        best = int(counts.argmax())
        share = counts[best] / (last - first + 1)
        if share < self.coverage:
            return None
        if (counts > 0).sum() > 1:
            self.stragglers += 1
        return self._names[best]

    def oracle_label(self, spans: Sequence[tuple[int, int]]) -> list[str | None]:
        return [self.label_span(a, b) for a, b in spans]

    def query(self, pattern, spans: Sequence[tuple[int, int]]) -> list[str | None]:
        answers = self.oracle_label(spans)
        tally = Counter(a or "?" for a in answers)
        self.log.append({"pattern": [int(x) for x in pattern], "instances": len(spans),
                         "answers": dict(sorted(tally.items()))})
        return answers

    @property
    def budget(self) -> int:
        return len(self.log)
