"""CASAS-style event streams: parsing, sensor filtering and week partitioning."""

from __future__ import annotations

import json
import logging
import re
import warnings
from dataclasses import dataclass, field, asdict
from datetime import date, datetime, timedelta
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

DEFAULT_KEEP = frozenset({"M", "D"})
TIME_FORMAT = "%Y-%m-%d %H:%M:%S.%f"

_BINARY_STATES = {
    "M": {"ON", "OFF"},
    "D": {"OPEN", "CLOSE"},
}
_PREFIX_RE = re.compile(r"^[A-Za-z]+")


class ParseError(ValueError):
    """Raised when too many lines of a log cannot be parsed."""


class EmptyStreamWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SensorEvent:
    timestamp: datetime
    sensor_id: str
    state: str
    raw_annotation: tuple[str, str] | None = None

    @property
    def token(self) -> str:
        return f"{self.sensor_id}={self.state}"

    @property
    def category(self) -> str:
        return sensor_category(self.sensor_id)


@dataclass(frozen=True)
class AnnotationInterval:
    activity: str
    start_index: int
    end_index: int
    start_time: datetime
    end_time: datetime
    auto_closed: bool = False

    def __post_init__(self):
        if self.start_index > self.end_index:
            raise ValueError(f"interval {self.activity} has start > end")

    def shifted(self, offset: int) -> "AnnotationInterval":
        return AnnotationInterval(self.activity, self.start_index + offset,
                                  self.end_index + offset, self.start_time,
                                  self.end_time, self.auto_closed)


@dataclass(frozen=True)
class DatasetSummary:
    days: int
    sensor_count: int
    activity_count: int
    resident_note: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


@dataclass(frozen=True)
class Diagnostic:
    line: int
    message: str
    text: str = ""


@dataclass(frozen=True)
class EventStream:
    events: tuple[SensorEvent, ...]
    intervals: tuple[AnnotationInterval, ...]
    summary: DatasetSummary
    diagnostics: tuple[Diagnostic, ...] = ()

    def __len__(self):
        return len(self.events)

    @property
    def activities(self) -> list[str]:
        return sorted({iv.activity for iv in self.intervals})


@dataclass(frozen=True)
class EventBlock:
    """A contiguous calendar slice of a stream.

    ``offset`` is the index of the block's first event in the parent stream;
    interval indices inside ``stream`` are local to the block.
    """
    index: int
    start_date: date
    end_date: date  # exclusive
    offset: int
    stream: EventStream
    partial: bool = False

    def __len__(self):
        return len(self.stream)


def sensor_category(sensor_id: str) -> str:
    m = _PREFIX_RE.match(sensor_id)
    return m.group(0).upper() if m else sensor_id


def summarize(events: Sequence[SensorEvent], intervals: Sequence[AnnotationInterval],
              note: str = "") -> DatasetSummary:
    days = len({e.timestamp.date() for e in events})
    sensors = len({e.sensor_id for e in events})
    activities = len({iv.activity for iv in intervals})
    return DatasetSummary(days, sensors, activities, note)


def make_stream(events: Sequence[SensorEvent], intervals: Sequence[AnnotationInterval] = (),
                diagnostics: Sequence[Diagnostic] = (), note: str = "") -> EventStream:
    events = tuple(events)
    intervals = tuple(sorted(intervals, key=lambda iv: (iv.start_index, iv.end_index, iv.activity)))
    for iv in intervals:
        if not 0 <= iv.start_index <= iv.end_index < len(events):
            raise ValueError(f"interval {iv} outside event range")
    return EventStream(events, intervals, summarize(events, intervals, note), tuple(diagnostics))


def _parse_timestamp(day: str, clock: str) -> datetime:
    text = f"{day} {clock}"
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        pass
    for fmt in (TIME_FORMAT, "%Y-%m-%d %H:%M:%S"):
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            continue
    raise ValueError(f"bad timestamp {text!r}")


def _valid_state(sensor_id: str, state: str) -> bool:
    cat = sensor_category(sensor_id)
    if cat in _BINARY_STATES:
        return state.upper() in _BINARY_STATES[cat]
    if cat == "T":
        try:
            float(state)
        except ValueError:
            return False
        return True
    return bool(state)


def _parse_line(text: str) -> SensorEvent:
    parts = text.split()
    if len(parts) < 4:
        raise ValueError("expected at least date, time, sensor and state")
    if len(parts) > 6:
        raise ValueError("too many fields")
    ts = _parse_timestamp(parts[0], parts[1])
    sensor, state = parts[2], parts[3]
    if not _valid_state(sensor, state):
        raise ValueError(f"state {state!r} not valid for sensor {sensor!r}")
    if sensor_category(sensor) in _BINARY_STATES:
        state = state.upper()
    annotation = None
    if len(parts) == 6:
        marker = parts[5].lower()
        if marker not in ("begin", "end"):
            raise ValueError(f"annotation marker {parts[5]!r} is not begin/end")
        annotation = (parts[4], marker)
    elif len(parts) == 5:
        raise ValueError("activity token without begin/end marker")
    return SensorEvent(ts, sensor, state, annotation)


def reconcile_annotations(events: Sequence[SensorEvent]) -> tuple[list[AnnotationInterval], list[Diagnostic]]:
    """Pair begin/end markers into intervals.

    A begin with no matching end is closed just before the next begin of the
    same activity (or at the last event) and flagged ``auto_closed``.
    """
    open_at: dict[str, int] = {}
    intervals: list[AnnotationInterval] = []
    diags: list[Diagnostic] = []

    def close(activity, start, end, auto):
        intervals.append(AnnotationInterval(activity, start, end, events[start].timestamp,
                                            events[end].timestamp, auto))

    for i, ev in enumerate(events):
        if ev.raw_annotation is None:
            continue
        activity, marker = ev.raw_annotation
        if marker == "begin":
            if activity in open_at:
                start = open_at[activity]
                close(activity, start, max(start, i - 1), True)
                diags.append(Diagnostic(-1, f"auto-closed {activity} begun at event {start}"))
            open_at[activity] = i
        else:
            if activity not in open_at:
                diags.append(Diagnostic(-1, f"unmatched end of {activity} at event {i}"))
                continue
            close(activity, open_at.pop(activity), i, False)
    last = len(events) - 1
    for activity, start in sorted(open_at.items(), key=lambda kv: kv[1]):
        close(activity, start, last, True)
        diags.append(Diagnostic(-1, f"auto-closed {activity} begun at event {start} at end of stream"))
    return intervals, diags


def parse_casas(lines: Iterable[str], max_error_rate: float = 0.05, note: str = "") -> EventStream:
    """Parse whitespace-separated CASAS log lines into an annotated stream.

    Malformed lines are skipped and recorded as diagnostics; if their share of
    the non-empty lines exceeds ``max_error_rate`` a ParseError is raised.
    """
    events: list[SensorEvent] = []
    diags: list[Diagnostic] = []
    n_lines = 0
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text:
            continue
        n_lines += 1
        try:
            events.append(_parse_line(text))
        except ValueError as exc:
            diags.append(Diagnostic(lineno, str(exc), text[:200]))
    if n_lines and len(diags) / n_lines > max_error_rate:
        raise ParseError(f"{len(diags)} of {n_lines} lines malformed "
                         f"(threshold {max_error_rate:.1%}); first: line {diags[0].line}: {diags[0].message}")

    if any(b.timestamp < a.timestamp for a, b in zip(events, events[1:])):
        order = sorted(range(len(events)), key=lambda i: events[i].timestamp)
        moved = sum(1 for pos, i in enumerate(order) if pos != i)
        events = [events[i] for i in order]
        diags.append(Diagnostic(-1, f"reordered {moved} out-of-order events by timestamp"))

    intervals, ann_diags = reconcile_annotations(events)
    diags.extend(ann_diags)
    if diags:
        logger.info("parse_casas: %d diagnostics", len(diags))
    return make_stream(events, intervals, diags, note)


def read_casas(path, **kwargs) -> EventStream:
    with open(path, encoding="utf-8", errors="replace") as fh:
        return parse_casas(fh, **kwargs)


def format_event(ev: SensorEvent) -> str:
    parts = [ev.timestamp.strftime(TIME_FORMAT), ev.sensor_id, ev.state]
    if ev.raw_annotation is not None:
        parts.extend(ev.raw_annotation)
    return " ".join(parts)


def to_casas_lines(stream: EventStream) -> list[str]:
    return [format_event(ev) for ev in stream.events]


def write_casas(stream: EventStream, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in to_casas_lines(stream):
            fh.write(line + "\n")


def diagnostics_json(stream: EventStream) -> str:
    return json.dumps([asdict(d) for d in stream.diagnostics], indent=2)


def _reindex(intervals, keep_mask) -> list[AnnotationInterval]:
    new_index = []
    count = 0
    for k in keep_mask:
        new_index.append(count if k else -1)
        count += int(k)
    out = []
    for iv in intervals:
        kept = [new_index[i] for i in range(iv.start_index, iv.end_index + 1) if keep_mask[i]]
        if not kept:
            continue
        out.append(AnnotationInterval(iv.activity, kept[0], kept[-1], iv.start_time,
                                      iv.end_time, iv.auto_closed))
    return out


def filter_sensors(stream: EventStream, keep: Iterable[str] = DEFAULT_KEEP) -> EventStream:
    """Keep only events whose sensor category prefix is in ``keep``.

    Intervals are re-indexed onto the surviving events; intervals left with no
    events are dropped.
    """
    keep = {k.upper() for k in keep}
    if not keep:
        raise ValueError("keep set must not be empty")
    mask = [ev.category in keep for ev in stream.events]
    events = [ev for ev, k in zip(stream.events, mask) if k]
    if not events and stream.events:
        warnings.warn(f"filter_sensors: no events left for keep={sorted(keep)}", EmptyStreamWarning)
    intervals = _reindex(stream.intervals, mask)
    return make_stream(events, intervals, stream.diagnostics, stream.summary.resident_note)


def slice_stream(stream: EventStream, start: int, stop: int) -> EventStream:
    """Events ``[start, stop)`` with intervals clipped and re-based."""
    events = stream.events[start:stop]
    intervals = []
    for iv in stream.intervals:
        lo, hi = max(iv.start_index, start), min(iv.end_index, stop - 1)
        if lo > hi:
            continue
        intervals.append(AnnotationInterval(iv.activity, lo - start, hi - start,
                                            stream.events[lo].timestamp,
                                            stream.events[hi].timestamp, iv.auto_closed))
    return make_stream(events, intervals, (), stream.summary.resident_note)


def _index_at_or_after(events, moment: datetime, lo: int = 0) -> int:
    hi = len(events)
    while lo < hi:
        mid = (lo + hi) // 2
        if events[mid].timestamp < moment:
            lo = mid + 1
        else:
            hi = mid
    return lo


def slice_dates(stream: EventStream, start: date, end: date) -> tuple[int, int]:
    """Index range of events with calendar date in ``[start, end)``."""
    ev = stream.events
    lo = _index_at_or_after(ev, datetime.combine(start, datetime.min.time()))
    hi = _index_at_or_after(ev, datetime.combine(end, datetime.min.time()), lo)
    return lo, hi


def partition_weeks(stream: EventStream, block_weeks: int) -> list[EventBlock]:
    """Split a stream into consecutive blocks of ``block_weeks`` calendar weeks.

    Boundaries start at midnight of the first event's date. The last block is
    flagged partial when the data ends before the block's final day.
    """
    if block_weeks < 1:
        raise ValueError("block_weeks must be positive")
    if not stream.events:
        raise ValueError("cannot partition an empty stream")
    first = stream.events[0].timestamp.date()
    last = stream.events[-1].timestamp.date()
    span = timedelta(days=7 * block_weeks)
    blocks = []
    start = first
    idx = 0
    pos = 0
    while start <= last:
        end = start + span
        lo, hi = slice_dates(stream, start, end)
        assert lo == pos
        partial = last < end - timedelta(days=1)
        blocks.append(EventBlock(idx, start, end, lo, slice_stream(stream, lo, hi), partial))
        pos = hi
        idx += 1
        start = end
    return blocks


def concat_blocks(blocks: Sequence[EventBlock]) -> EventBlock:
    """Merge adjacent blocks into one block (intervals re-joined per block)."""
    if not blocks:
        raise ValueError("no blocks to concatenate")
    events: list[SensorEvent] = []
    intervals: list[AnnotationInterval] = []
    for b in blocks:
        intervals.extend(iv.shifted(len(events)) for iv in b.stream.intervals)
        events.extend(b.stream.events)
    note = blocks[0].stream.summary.resident_note
    return EventBlock(blocks[0].index, blocks[0].start_date, blocks[-1].end_date,
                      blocks[0].offset, make_stream(events, intervals, (), note),
                      any(b.partial for b in blocks))


def stream_span_days(stream: EventStream) -> int:
    if not stream.events:
        return 0
    return (stream.events[-1].timestamp.date() - stream.events[0].timestamp.date()).days + 1
