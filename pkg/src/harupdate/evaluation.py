"""Segmentation accuracy and forward-only evaluation of every model version."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from .action_units import ActionUnitSequence
from .events import AnnotationInterval
from .oracle import innermost_assignment
from .orchestrator import SeedPoint, block_data, recognize, update_blocks
from .rundir import completed_cycles, load_embedder, load_kmeans, load_model, open_run

logger = logging.getLogger(__name__)


@dataclass
class SegAccuracyRow:
    activity: str
    model: str                 # "GT", "M1", "M2", ...
    mean: float                # table-style: mean per-instance AU count
    std: float
    ratio: float | None        # identified / activity AUs, micro-averaged; None when undefined
    counts: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _stats(counts: Sequence[int]) -> tuple[float, float]:
    if not counts:
        return 0.0, 0.0
    arr = np.asarray(counts, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def unit_instances(aus: ActionUnitSequence, intervals: Sequence[AnnotationInterval], n_events: int) -> np.ndarray:
    """Interval index owning each action unit (strict majority of its events), -1 if none."""
    owner = innermost_assignment(intervals, n_events)
    out = np.full(len(aus), -1, dtype=np.int64)
    for u, (a, b) in enumerate(aus.spans):
        vals = owner[a:b + 1]
        vals = vals[vals >= 0]
        if len(vals) == 0:
            continue
        counts = np.bincount(vals)
        best = int(counts.argmax())
        if 2 * counts[best] > b - a + 1:
            out[u] = best
    return out


def seg_accuracy(segments: Sequence[SeedPoint], intervals: Sequence[AnnotationInterval],
                 aus: ActionUnitSequence, activity: str, n_events: int | None = None,
                 owners: np.ndarray | None = None) -> tuple[float | None, list[int], list[int]]:
    """Fraction of the activity's ground-truth action units covered by same-label segments.

    ``intervals`` and ``aus.spans`` must use the same event indexing. Returns
    (ratio, identified count per instance, ground-truth count per instance);
    instances that own no whole action unit are left out.
    """
    if owners is None:
        n_events = n_events if n_events is not None else (aus.spans[-1][1] + 1 if len(aus) else 0)
        owners = unit_instances(aus, intervals, n_events)
    hit = np.zeros(len(aus), dtype=bool)
    for p in segments:
        if p.label == activity:
            hit[p.au_span[0]:p.au_span[1]] = True
    gt, found = [], []
    for i, iv in enumerate(intervals):
        if iv.activity != activity:
            continue
        mine = owners == i
        total = int(mine.sum())
        if total == 0:
            continue
        gt.append(total)
        found.append(int((mine & hit).sum()))
    denom = sum(gt)
    ratio = sum(found) / denom if denom else None
    return ratio, found, gt


@dataclass
class EvalMatrix:
    """Rows are model versions, columns test blocks; only cells with block >= version exist."""
    versions: list[int]
    blocks: list[int]
    activities: list[str]
    cells: dict[tuple[int, int], dict[str, SegAccuracyRow]] = field(default_factory=dict)
    gt: dict[int, dict[str, SegAccuracyRow]] = field(default_factory=dict)

    def populated(self, version: int, block: int) -> bool:
        return block >= version

    def set(self, version: int, block: int, rows: dict[str, SegAccuracyRow]) -> None:
        if not self.populated(version, block):
            raise AssertionError(f"model M{version} cannot be evaluated on earlier block {block}")
        self.cells[(version, block)] = rows

    def get(self, version: int, block: int) -> dict[str, SegAccuracyRow] | None:
        return self.cells.get((version, block))

    def to_dict(self) -> dict:
        return {"versions": self.versions, "blocks": self.blocks, "activities": self.activities,
                "gt": {str(b): {a: r.to_dict() for a, r in rows.items()} for b, rows in self.gt.items()},
                "cells": [{"version": v, "block": b, "rows": {a: r.to_dict() for a, r in rows.items()}}
                          for (v, b), rows in sorted(self.cells.items())]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalMatrix":
        m = cls(d["versions"], d["blocks"], d["activities"])
        m.gt = {int(b): {a: SegAccuracyRow(**r) for a, r in rows.items()} for b, rows in d["gt"].items()}
        for c in d["cells"]:
            m.set(c["version"], c["block"], {a: SegAccuracyRow(**r) for a, r in c["rows"].items()})
        return m


def evaluate_run(run_dir, max_blocks: int | None = None) -> EvalMatrix:
    """Evaluate each saved model version on every full test block at or after it.

    Model M_t is the state after cycle t-1 (M1 comes from the bootstrap).
    Activities are those recognised by the bootstrap memory.
    """
    _, config, stream, _ = open_run(run_dir)
    last = completed_cycles(run_dir)
    if last < 0:
        raise FileNotFoundError(f"{run_dir} holds no bootstrap checkpoint")
    blocks = update_blocks(stream, config.schedule, full_only=True)
    if max_blocks is not None:
        blocks = blocks[:max_blocks]
    embedder = load_embedder(run_dir)
    activities = load_model(run_dir, 0)[0].labels
    versions = [t for t in range(1, last + 2) if t <= len(blocks)]
    matrix = EvalMatrix(versions, [b.index for b in blocks], activities)

    for t in versions:
        memory, clf = load_model(run_dir, t - 1)
        kmeans = load_kmeans(run_dir, t - 1)
        for blk in blocks:
            if not matrix.populated(t, blk.index):
                continue
            bd = block_data(f"b{blk.index}", blk, embedder, kmeans, config.stride)
            local = ActionUnitSequence(bd.aus.ids, tuple((a - blk.offset, b - blk.offset) for a, b in bd.aus.spans))
            owners = unit_instances(local, blk.stream.intervals, len(blk.stream))
            points = recognize(memory, clf, bd)
            rows = {}
            for act in activities:
                ratio, found, gt = seg_accuracy(points, blk.stream.intervals, local, act, owners=owners)
                rows[act] = SegAccuracyRow(act, f"M{t}", *_stats(found), ratio, found)
                if blk.index not in matrix.gt or act not in matrix.gt[blk.index]:
                    matrix.gt.setdefault(blk.index, {})[act] = SegAccuracyRow(act, "GT", *_stats(gt), 1.0 if gt else None, gt)
            matrix.set(t, blk.index, rows)
            logger.info("M%d on block %d: %s", t, blk.index,
                        {a: None if r.ratio is None else round(r.ratio, 3) for a, r in rows.items()})
    return matrix


def trend_fraction(matrix: EvalMatrix) -> tuple[float | None, dict[str, bool]]:
    """Share of activities whose mean count never drops from M_{t-1} to M_t on a shared block.

    Activities with no ground-truth units on any shared block are left out.
    Returns (fraction or None when nothing is comparable, per-activity verdicts).
    """
    verdicts: dict[str, bool] = {}
    for act in matrix.activities:
        for t in matrix.versions[1:]:
            for b in matrix.blocks:
                old, new = matrix.get(t - 1, b), matrix.get(t, b)
                if old is None or new is None or old[act].ratio is None:
                    continue
                ok = new[act].mean >= old[act].mean
                verdicts[act] = verdicts.get(act, True) and ok
    if not verdicts:
        return None, verdicts
    return sum(verdicts.values()) / len(verdicts), verdicts
