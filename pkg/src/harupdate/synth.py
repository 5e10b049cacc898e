"""Deterministic synthetic smart-home streams with exactly known annotations."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from datetime import date, datetime, timedelta

import numpy as np

from .events import AnnotationInterval, EventStream, SensorEvent, make_stream, sensor_category


@dataclass
class ActivitySpec:
    name: str
    template: list[str]          # tokens "SENSOR=STATE", replayed in order
    start_hour: float            # time of day the activity starts
    repeats: list[int] = field(default_factory=lambda: [1, 1])  # inclusive range per instance


@dataclass
class SynthConfig:
    activities: list[ActivitySpec]
    days: int = 56
    start_date: str = "2020-01-06"
    jitter_minutes: float = 0.0
    noise_rate: float = 0.0
    event_gap_seconds: float = 5.0
    noise_sensors: list[str] = field(default_factory=list)
    note: str = "synthetic"

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthConfig":
        raw = dict(raw)
        acts = []
        for a in raw.pop("activities"):
            a = dict(a)
            rep = a.get("repeats", [1, 1])
            a["repeats"] = [rep, rep] if isinstance(rep, int) else list(rep)
            acts.append(ActivitySpec(**a))
        return cls(activities=acts, **raw)

    @classmethod
    def from_json(cls, text: str) -> "SynthConfig":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return asdict(self)


def _noise_pool(config: SynthConfig) -> list[str]:
    if config.noise_sensors:
        return sorted(set(config.noise_sensors))
    sensors = set()
    for act in config.activities:
        for tok in act.template:
            sensors.add(tok.split("=", 1)[0])
    return sorted(sensors)


def _random_state(sensor: str, rng) -> str:
    cat = sensor_category(sensor)
    if cat == "D":
        return "OPEN" if rng.random() < 0.5 else "CLOSE"
    if cat == "T":
        return f"{rng.normal(21.0, 1.5):.1f}"
    return "ON" if rng.random() < 0.5 else "OFF"


def synth_generate(config: SynthConfig, seed: int) -> EventStream:
    """Generate ``config.days`` days of scheduled activities plus noise events.

    Every template event is preceded by a geometric number of noise events so
    that noise makes up ``noise_rate`` of all events in expectation. Intervals
    span from the first to the last template event of each instance.
    """
    if not config.activities:
        raise ValueError("synthetic config needs at least one activity")
    if not 0 <= config.noise_rate < 1:
        raise ValueError("noise_rate must be in [0, 1)")
    rng = np.random.default_rng(seed)
    pool = _noise_pool(config)
    gap = timedelta(seconds=config.event_gap_seconds)
    day0 = date.fromisoformat(config.start_date)
    schedule = sorted(config.activities, key=lambda a: a.start_hour)

    events: list[SensorEvent] = []
    spans: list[tuple[str, int, int]] = []
    clock = datetime.combine(day0, datetime.min.time())

    for d in range(config.days):
        midnight = datetime.combine(day0 + timedelta(days=d), datetime.min.time())
        for act in schedule:
            lo, hi = act.repeats
            reps = int(rng.integers(lo, hi + 1))
            tokens = list(act.template) * reps
            if len(tokens) < 2:
                raise ValueError(f"activity {act.name} needs at least two template events")
            offset = timedelta(hours=act.start_hour)
            if config.jitter_minutes > 0:
                offset += timedelta(minutes=float(rng.normal(0.0, config.jitter_minutes)))
            start_at = max(midnight + offset, clock)
            clock = start_at
            first = None
            for tok in tokens:
                while config.noise_rate > 0 and rng.random() < config.noise_rate:
                    sensor = pool[int(rng.integers(len(pool)))]
                    events.append(SensorEvent(clock, sensor, _random_state(sensor, rng)))
                    clock += gap
                sensor, state = tok.split("=", 1)
                if first is None:
                    first = len(events)
                events.append(SensorEvent(clock, sensor, state))
                clock += gap
            spans.append((act.name, first, len(events) - 1))

    annotated = list(events)
    intervals = []
    for name, s, e in spans:
        annotated[s] = SensorEvent(events[s].timestamp, events[s].sensor_id, events[s].state, (name, "begin"))
        annotated[e] = SensorEvent(events[e].timestamp, events[e].sensor_id, events[e].state, (name, "end"))
        intervals.append(AnnotationInterval(name, s, e, events[s].timestamp, events[e].timestamp))
    return make_stream(annotated, intervals, (), config.note)


def default_home(days: int = 56, noise_rate: float = 0.05, jitter_minutes: float = 10.0) -> SynthConfig:
    """Four-activity home used by the end-to-end tests and the CLI demo."""
    return SynthConfig(
        activities=[
            ActivitySpec("Sleep", ["M020=ON", "M021=ON", "M020=OFF", "M022=ON", "M021=OFF",
                                   "M022=OFF", "M023=ON", "M023=OFF"], 1.0, [28, 36]),
            ActivitySpec("Meal_Preparation", ["M010=ON", "D005=OPEN", "M011=ON", "M010=OFF",
                                              "D005=CLOSE", "M012=ON", "M011=OFF", "M012=OFF",
                                              "M013=ON", "M013=OFF"], 8.0, [22, 30]),
            ActivitySpec("Work", ["M030=ON", "M031=ON", "M030=OFF", "M032=ON", "M031=OFF",
                                  "M032=OFF"], 11.0, [34, 44]),
            ActivitySpec("Relax", ["M001=ON", "M002=ON", "M001=OFF", "M003=ON", "M002=OFF",
                                   "M004=ON", "M003=OFF", "M004=OFF", "D001=OPEN",
                                   "D001=CLOSE"], 18.0, [22, 30]),
        ],
        days=days,
        jitter_minutes=jitter_minutes,
        noise_rate=noise_rate,
        noise_sensors=["M001", "M005", "M006", "M010", "M020", "M030", "M040", "M041", "D002"],
    )
