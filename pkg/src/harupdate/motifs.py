"""Motif discovery, labelling, merging, matching and the versioned motif memory.

Action-unit spans here are half-open ``(start, stop)`` index pairs into an
action-unit sequence.
"""

from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field, asdict, replace
from typing import Protocol, Sequence

import numpy as np

from .action_units import ActionUnitSequence

logger = logging.getLogger(__name__)

MIN_LEN = 2
MIN_SUPPORT = 5
DEFAULT_MAX_LEN = 25
DEFAULT_HOMOGENEITY = 0.8
SCHEMA_VERSION = 1

Pattern = tuple[int, ...]
Span = tuple[int, int]


class FilterViolation(AssertionError):
    """A motif in memory breaks the length/support filters."""


@dataclass(frozen=True)
class MotifCandidate:
    pattern: Pattern
    support: int
    instance_spans: tuple[Span, ...]
    event_spans: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class Motif:
    au_pattern: Pattern
    support: int
    label: str
    version_introduced: int
    instance_spans: tuple[Span, ...] = ()
    patterns: tuple[Pattern, ...] = ()   # every pattern this motif matches, au_pattern first
    motif_id: str = ""
    provenance: tuple[dict, ...] = ()

    def __post_init__(self):
        if not self.patterns:
            object.__setattr__(self, "patterns", (tuple(self.au_pattern),))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["au_pattern"] = list(self.au_pattern)
        d["patterns"] = [list(p) for p in self.patterns]
        d["instance_spans"] = [list(s) for s in self.instance_spans]
        d["provenance"] = list(self.provenance)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Motif":
        return cls(tuple(d["au_pattern"]), d["support"], d["label"], d["version_introduced"],
                   tuple(tuple(s) for s in d["instance_spans"]), tuple(tuple(p) for p in d["patterns"]),
                   d["motif_id"], tuple(d["provenance"]))


@dataclass(frozen=True)
class Detection:
    au_span: Span
    activity: str
    motif_id: str
    model_version: int
    pattern: Pattern = ()


@dataclass(frozen=True)
class NonDetectionRegion:
    au_span: Span


def check_filters(motif: Motif) -> None:
    if len(motif.au_pattern) < MIN_LEN or any(len(p) < MIN_LEN for p in motif.patterns):
        raise FilterViolation(f"motif {motif.motif_id} shorter than {MIN_LEN}")
    if motif.support < MIN_SUPPORT:
        raise FilterViolation(f"motif {motif.motif_id} support {motif.support} < {MIN_SUPPORT}")
    if not motif.label:
        raise FilterViolation(f"motif {motif.motif_id} has no label")


@dataclass
class MotifMemory:
    version: int = 1
    motifs: list[Motif] = field(default_factory=list)
    next_id: int = 0

    def __post_init__(self):
        if self.version < 1:
            raise ValueError("memory versions start at 1")

    def __len__(self):
        return len(self.motifs)

    @property
    def labels(self) -> list[str]:
        return sorted({m.label for m in self.motifs})

    def known_patterns(self) -> set[Pattern]:
        return {p for m in self.motifs for p in m.patterns}

    def check(self) -> None:
        seen: set[Pattern] = set()
        for m in self.motifs:
            check_filters(m)
            if m.au_pattern in seen:
                raise FilterViolation(f"duplicate pattern {m.au_pattern}")
            seen.add(m.au_pattern)

    def to_json(self) -> str:
        return json.dumps({"schema_version": SCHEMA_VERSION, "version": self.version,
                           "next_id": self.next_id,
                           "motifs": [m.to_dict() for m in self.motifs]}, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MotifMemory":
        raw = json.loads(text)
        if raw.get("schema_version") != SCHEMA_VERSION:
            raise ValueError("unsupported motif memory schema")
        return cls(raw["version"], [Motif.from_dict(m) for m in raw["motifs"]], raw["next_id"])


# discovery ----------------------------------------------------------------------

def greedy_occurrences(positions: Sequence[int], length: int) -> list[int]:
    """Leftmost-greedy non-overlapping subset of sorted occurrence positions."""
    out, free = [], -1
    for p in positions:
        if p >= free:
            out.append(p)
            free = p + length
    return out


def _ids(seq) -> list[int]:
    return list(seq.ids) if isinstance(seq, ActionUnitSequence) else [int(x) for x in seq]


def discover_motifs(seq, min_len: int = MIN_LEN, max_len: int = DEFAULT_MAX_LEN,
                    min_support: int = MIN_SUPPORT) -> list[MotifCandidate]:
    """Frequent, maximal contiguous action-unit patterns.

    Support is the leftmost-greedy count of non-overlapping occurrences. A
    frequent pattern is dropped when every one of its occurrences lies inside
    an occurrence of a longer returned pattern.
    """
    if max_len < min_len:
        raise ValueError("max_len must be >= min_len")
    ids = _ids(seq)
    n = len(ids)
    if n < min_len:
        return []

    by_len: dict[int, dict[Pattern, list[int]]] = {}
    level: dict[Pattern, list[int]] = defaultdict(list)
    for p, a in enumerate(ids):
        level[(a,)].append(p)
    level = {k: v for k, v in level.items() if len(v) >= min_support}
    L = 1
    while level and L < max_len:
        nxt: dict[Pattern, list[int]] = defaultdict(list)
        for pat, pos in level.items():
            for p in pos:
                if p + L < n:
                    nxt[pat + (ids[p + L],)].append(p)
        L += 1
        level = {k: v for k, v in nxt.items() if len(v) >= min_support}
        if L >= min_len:
            by_len[L] = level

    result: list[MotifCandidate] = []
    reach = np.full(n, -1, dtype=np.int64)   # max end of a kept occurrence starting at each index
    for L in sorted(by_len, reverse=True):
        cover = np.maximum.accumulate(reach)
        kept = []
        for pat, pos in by_len[L].items():
            greedy = greedy_occurrences(pos, L)
            if len(greedy) < min_support:
                continue
            arr = np.asarray(pos)
            if np.all(cover[arr] >= arr + L):
                continue
            kept.append(MotifCandidate(pat, len(greedy), tuple((p, p + L) for p in greedy)))
            for p in pos:
                reach[p] = max(reach[p], p + L)
        result.extend(kept)
    if isinstance(seq, ActionUnitSequence):
        result = [replace(c, event_spans=tuple(seq.event_span(s, e) for s, e in c.instance_spans))
                  for c in result]
    result.sort(key=lambda c: (-len(c.pattern), -c.support, c.pattern))
    return result


# labelling ----------------------------------------------------------------------

class AnnotationSource(Protocol):
    def query(self, pattern: Pattern, event_spans: Sequence[tuple[int, int]]) -> list[str | None]:
        ...


def vote(labels: Sequence[str | None], threshold: float) -> tuple[str | None, str]:
    """Apply the homogeneity and strict-majority rules to per-instance labels."""
    n = len(labels)
    counts = Counter(l for l in labels if l is not None)
    if not counts:
        return None, "all instances unknown"
    ranked = counts.most_common()
    top, top_n = ranked[0]
    if len(ranked) > 1 and ranked[1][1] == top_n:
        return None, "no strict majority (tie)"
    if top_n * 2 <= n:
        return None, f"no strict majority ({top_n}/{n})"
    if top_n / n < threshold:
        return None, f"not homogeneous ({top_n}/{n} < {threshold})"
    return top, f"accepted {top} ({top_n}/{n})"


def label_motifs(candidates: Sequence[MotifCandidate], oracle: AnnotationSource,
                 homogeneity_threshold: float = DEFAULT_HOMOGENEITY, version: int = 1,
                 block: str = "", log: list | None = None) -> list[Motif]:
    """Query the oracle once per candidate and keep the homogeneous, majority-labelled ones."""
    out = []
    for cand in candidates:
        spans = cand.event_spans or cand.instance_spans
        labels = oracle.query(cand.pattern, spans)
        label, reason = vote(labels, homogeneity_threshold)
        entry = {"pattern": list(cand.pattern), "support": cand.support, "block": block,
                 "labels": [l or "?" for l in labels], "decision": reason}
        if log is not None:
            log.append(entry)
        if label is None:
            logger.debug("dropped motif %s: %s", cand.pattern, reason)
            continue
        out.append(Motif(cand.pattern, cand.support, label, version, cand.instance_spans,
                         provenance=({"block": block, "filter": reason},)))
    return out


# merging ------------------------------------------------------------------------

def _contains(big: Pattern, small: Pattern) -> bool:
    m = len(small)
    return any(big[i:i + m] == small for i in range(len(big) - m + 1))


def _overlap_merge(a: Pattern, b: Pattern) -> Pattern | None:
    """Merged pattern when a suffix of one equals a prefix of the other by >= half the shorter."""
    need = 0.5 * min(len(a), len(b))
    best = None
    for x, y in ((a, b), (b, a)):
        for ov in range(min(len(x), len(y)) - 1, 0, -1):
            if ov < need:
                break
            if x[-ov:] == y[:ov]:
                cand = x + y[ov:]
                if best is None or len(cand) < len(best) or (len(cand) == len(best) and cand < best):
                    best = cand
                break
    return best


def max_disjoint(spans) -> tuple[Span, ...]:
    """Largest set of pairwise non-overlapping spans (earliest end first)."""
    chosen, free = [], -1
    for s, e in sorted(set(spans), key=lambda se: (se[1], se[0])):
        if s >= free:
            chosen.append((s, e))
            free = e
    return tuple(sorted(chosen))


def _combine(a: Motif, b: Motif, pattern: Pattern) -> Motif:
    first, second = sorted((a, b), key=lambda m: (m.version_introduced, m.motif_id == "", m.motif_id))
    patterns = [pattern] + [p for p in (*a.patterns, *b.patterns) if p != pattern]
    patterns = tuple(dict.fromkeys(patterns))
    spans = max_disjoint((*a.instance_spans, *b.instance_spans))
    # the joined instances never support the merge less than either member did
    support = max(len(spans), a.support, b.support)
    return Motif(pattern, support, a.label, first.version_introduced, spans, patterns,
                 first.motif_id or second.motif_id, (*first.provenance, *second.provenance))


def merge_motifs(motifs: Sequence[Motif]) -> list[Motif]:
    """Merge same-label motifs related by containment or by a >= 50% end overlap.

    The merged motif keeps the longer (or joined) pattern as its canonical
    pattern and retains every member pattern for matching.
    """
    pool = sorted(motifs, key=lambda m: (m.label, -len(m.au_pattern), -m.support, m.au_pattern))
    changed = True
    while changed:
        changed = False
        for i in range(len(pool)):
            for j in range(i + 1, len(pool)):
                a, b = pool[i], pool[j]
                if a.label != b.label:
                    continue
                pa, pb = a.au_pattern, b.au_pattern
                if len(pa) >= len(pb) and _contains(pa, pb):
                    merged = _combine(a, b, pa)
                elif len(pb) > len(pa) and _contains(pb, pa):
                    merged = _combine(a, b, pb)
                else:
                    joined = _overlap_merge(pa, pb)
                    if joined is None or any(m.au_pattern == joined for m in pool):
                        continue
                    merged = _combine(a, b, joined)
                pool = [m for k, m in enumerate(pool) if k not in (i, j)] + [merged]
                pool.sort(key=lambda m: (m.label, -len(m.au_pattern), -m.support, m.au_pattern))
                changed = True
                break
            if changed:
                break
    return pool


# matching -----------------------------------------------------------------------

def _precedence(memory: MotifMemory) -> dict[int, dict[Pattern, Motif]]:
    entries = [(p, m) for m in memory.motifs for p in m.patterns]
    entries.sort(key=lambda pm: (-len(pm[0]), -pm[1].support, pm[0], pm[1].motif_id))
    table: dict[int, dict[Pattern, Motif]] = defaultdict(dict)
    for p, m in entries:
        table[len(p)].setdefault(p, m)
    return table


def gaps(n: int, covered: Sequence[Span]) -> list[NonDetectionRegion]:
    out, pos = [], 0
    for s, e in sorted(covered):
        if s > pos:
            out.append(NonDetectionRegion((pos, s)))
        pos = max(pos, e)
    if pos < n:
        out.append(NonDetectionRegion((pos, n)))
    return out


def match(seq, memory: MotifMemory) -> tuple[list[Detection], list[NonDetectionRegion]]:
    """Exact leftmost-greedy matching, longest pattern first at each position."""
    ids = tuple(_ids(seq))
    n = len(ids)
    table = _precedence(memory)
    lengths = sorted(table, reverse=True)
    detections = []
    i = 0
    while i < n:
        hit = None
        for L in lengths:
            if i + L > n:
                continue
            m = table[L].get(ids[i:i + L])
            if m is not None:
                hit = (L, m)
                break
        if hit is None:
            i += 1
            continue
        L, m = hit
        detections.append(Detection((i, i + L), m.label, m.motif_id, memory.version, ids[i:i + L]))
        i += L
    return detections, gaps(n, [d.au_span for d in detections])


# memory updates -----------------------------------------------------------------

def assign_ids(memory: MotifMemory, motifs: Sequence[Motif]) -> tuple[list[Motif], int]:
    out, nid = [], memory.next_id
    for m in motifs:
        if m.motif_id:
            out.append(m)
        else:
            out.append(replace(m, motif_id=f"m{nid:05d}"))
            nid += 1
    return out, nid


def update_memory(memory: MotifMemory, new_motifs: Sequence[Motif]) -> MotifMemory:
    """Return version+1 holding the old motifs merged with the new ones; nothing is evicted."""
    known = memory.known_patterns()
    fresh = [m for m in new_motifs if m.au_pattern not in known]
    for m in fresh:
        check_filters(replace(m, motif_id=m.motif_id or "new"))
    fresh, nid = assign_ids(memory, fresh)
    merged = merge_motifs(list(memory.motifs) + fresh)
    out = MotifMemory(memory.version + 1, merged, nid)
    out.check()
    missing = known - out.known_patterns()
    if missing:
        raise FilterViolation(f"update dropped patterns {sorted(missing)[:3]}")
    return out


def build_memory(motifs: Sequence[Motif], version: int = 1) -> MotifMemory:
    """First memory from freshly labelled motifs (merged)."""
    base = MotifMemory(version, [], 0)
    with_ids, nid = assign_ids(base, motifs)
    mem = MotifMemory(version, merge_motifs(with_ids), nid)
    mem.check()
    return mem
