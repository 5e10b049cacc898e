"""Bootstrap and the data-incremental update-and-extend cycle."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict, replace
from datetime import date, timedelta
from typing import Sequence

import numpy as np

from .action_units import ActionUnitSequence, make_windows, predict_action_units
from .embedder import EmbedderConfig, MaskedEmbedder, train_embedder
from .events import EventBlock, EventStream, concat_blocks, partition_weeks, stream_span_days
from .kmeans import KMeansModel, fit_kmeans, select_k
from .motifs import (MotifMemory, Pattern, build_memory, discover_motifs, label_motifs, match,
                     update_memory)
from .ssl import Classifier, SSLConfig, fine_tune, predict_many, pretrain

logger = logging.getLogger(__name__)

MOTIF = "motif"
SSL = "ssl"


class BootstrapError(RuntimeError):
    def __init__(self, message, filter_log):
        super().__init__(message)
        self.filter_log = filter_log


class CausalityError(AssertionError):
    pass


@dataclass
class Schedule:
    n: int = 2
    m: int = 2
    update_weeks: int = 2

    def __post_init__(self):
        if min(self.n, self.m, self.update_weeks) < 1:
            raise ValueError("schedule lengths must be at least one week")

    @property
    def bootstrap_weeks(self) -> int:
        return self.n + self.m


@dataclass
class PipelineConfig:
    schedule: Schedule = field(default_factory=Schedule)
    window: int = 20
    stride: int = 20
    k: int = 24
    auto_k: bool = False
    max_len: int = 25
    homogeneity: float = 0.8
    seed: int = 0
    seed_origin: str = MOTIF   # "motif" or "all"
    warm_start: bool = False
    refresh_au: bool = False
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    ssl: SSLConfig = field(default_factory=SSLConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        raw = dict(raw)
        sched = Schedule(**raw.pop("schedule", {}))
        emb = EmbedderConfig(**raw.pop("embedder", {}))
        ssl = SSLConfig.from_dict(raw.pop("ssl", {}))
        return cls(schedule=sched, embedder=emb, ssl=ssl, **raw)


def derive_seed(base: int, *keys: int) -> int:
    return int(np.random.SeedSequence(base, spawn_key=tuple(keys)).generate_state(1)[0] >> 1)


@dataclass(frozen=True)
class SeedPoint:
    block: str
    au_span: tuple[int, int]      # half-open, local to the block's action units
    event_span: tuple[int, int]   # inclusive, global event indices
    label: str
    origin: str
    model_version: int

    def to_dict(self) -> dict:
        return {"block": self.block, "au_span": list(self.au_span), "event_span": list(self.event_span),
                "label": self.label, "origin": self.origin, "version": self.model_version}

    @classmethod
    def from_dict(cls, d: dict) -> "SeedPoint":
        return cls(d["block"], tuple(d["au_span"]), tuple(d["event_span"]), d["label"], d["origin"],
                   d["version"])


@dataclass
class SegmentSet:
    points: list[SeedPoint] = field(default_factory=list)
    version: int = 0
    sizes: list[int] = field(default_factory=list)

    def extend(self, new: Sequence[SeedPoint]) -> "SegmentSet":
        points = self.points + sorted(new, key=_point_key)
        return SegmentSet(points, self.version + 1, self.sizes + [len(points)])

    def covered(self, block: str, label: str | None = None) -> set[int]:
        out = set()
        for p in self.points:
            if p.block == block and (label is None or p.label == label):
                out.update(range(*p.au_span))
        return out

    def __len__(self):
        return len(self.points)


def _point_key(p: SeedPoint):
    return (p.block, p.au_span, p.origin, p.label)


@dataclass
class BlockData:
    name: str
    block: EventBlock
    aus: ActionUnitSequence
    features: np.ndarray

    @property
    def start_date(self) -> date:
        return self.block.start_date

    @property
    def end_date(self) -> date:
        return self.block.end_date


@dataclass
class UpdateState:
    config: PipelineConfig
    embedder: MaskedEmbedder
    kmeans: KMeansModel
    memory: MotifMemory
    classifier: Classifier | None
    segments: SegmentSet
    periods: dict[str, BlockData]
    cursor: int = 0
    version: int = 1
    queried: set = field(default_factory=set)
    budget: list[dict] = field(default_factory=list)
    filter_log: list[dict] = field(default_factory=list)
    audit: list[dict] = field(default_factory=list)
    traces: dict = field(default_factory=dict)
    new_points: list[SeedPoint] = field(default_factory=list)

    @property
    def next_start(self) -> date:
        last = self.periods[f"b{self.cursor}"] if self.cursor else self.periods["warm"]
        return last.end_date

    @property
    def observed(self) -> list[BlockData]:
        """Periods seen so far in time order (cold, warm, b1..b_cursor)."""
        names = ["cold", "warm"] + [f"b{i}" for i in range(1, self.cursor + 1)]
        return [self.periods[n] for n in names if n in self.periods]

    def check_lockstep(self) -> None:
        tag = self.classifier.tag if self.classifier is not None else self.version
        if not (self.memory.version == self.version == tag == self.segments.version):
            raise AssertionError(f"version mismatch: memory {self.memory.version}, state {self.version}, "
                                 f"classifier {tag}, segments {self.segments.version}")


# schedule slicing --------------------------------------------------------------------

def bootstrap_periods(stream: EventStream, schedule: Schedule) -> tuple[EventBlock, EventBlock]:
    weeks = partition_weeks(stream, 1)
    if stream_span_days(stream) < 7 * schedule.bootstrap_weeks:
        raise ValueError(f"bootstrap needs {schedule.bootstrap_weeks} weeks of data, "
                         f"stream spans {stream_span_days(stream)} days")
    cold = concat_blocks(weeks[:schedule.n])
    warm = concat_blocks(weeks[schedule.n:schedule.bootstrap_weeks])
    return cold, warm


def update_blocks(stream: EventStream, schedule: Schedule, full_only: bool = False) -> list[EventBlock]:
    """Blocks of ``update_weeks`` weeks following the bootstrap weeks, numbered from 1."""
    weeks = partition_weeks(stream, 1)[schedule.bootstrap_weeks:]
    out = []
    for i in range(0, len(weeks), schedule.update_weeks):
        group = weeks[i:i + schedule.update_weeks]
        blk = concat_blocks(group)
        partial = blk.partial or len(group) < schedule.update_weeks
        blk = replace(blk, index=len(out) + 1, partial=partial)
        if full_only and partial:
            break
        out.append(blk)
    return out


def block_data(name: str, block: EventBlock, embedder: MaskedEmbedder, kmeans: KMeansModel,
               stride: int) -> BlockData:
    aus, feats = predict_action_units(block.stream, embedder, kmeans, stride, block.offset, name)
    return BlockData(name, block, aus, feats)


# recognition --------------------------------------------------------------------------

def coalesce(preds: Sequence, start: int) -> list[tuple[int, int, str]]:
    """Runs of equal non-None labels -> (start, stop, label), indices offset by ``start``."""
    runs = []
    i = 0
    while i < len(preds):
        if preds[i] is None:
            i += 1
            continue
        label = preds[i][0]
        j = i + 1
        while j < len(preds) and preds[j] is not None and preds[j][0] == label:
            j += 1
        runs.append((start + i, start + j, label))
        i = j
    return runs


def _subtract(span: tuple[int, int], covered: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    pieces = [span]
    for cs, ce in covered:
        nxt = []
        for s, e in pieces:
            if ce <= s or cs >= e:
                nxt.append((s, e))
                continue
            if s < cs:
                nxt.append((s, cs))
            if ce < e:
                nxt.append((ce, e))
        pieces = nxt
    return pieces


def detections_to_points(bd: BlockData, detections) -> list[SeedPoint]:
    return [SeedPoint(bd.name, d.au_span, bd.aus.event_span(*d.au_span), d.activity, MOTIF, d.model_version)
            for d in detections]


def ssl_fill(bd: BlockData, regions, classifier: Classifier | None, theta: float | None = None) -> list[SeedPoint]:
    if classifier is None:
        return []
    out = []
    for r in regions:
        s, e = r.au_span
        preds = predict_many(classifier, bd.features[s:e], theta)
        for a, b, label in coalesce(preds, s):
            out.append(SeedPoint(bd.name, (a, b), bd.aus.event_span(a, b), label, SSL, classifier.tag))
    return out


def recognize(memory: MotifMemory, classifier: Classifier | None, bd: BlockData,
              theta: float | None = None) -> list[SeedPoint]:
    """Motif detections, with SSL predictions filling the uncovered action units."""
    detections, regions = match(bd.aus, memory)
    return sorted(detections_to_points(bd, detections) + ssl_fill(bd, regions, classifier, theta), key=_point_key)


# training ----------------------------------------------------------------------------

def seed_points_for_training(state: UpdateState, origin: str | None = None) -> list[tuple[np.ndarray, str]]:
    """One (feature vector, label) pair per action unit inside a seed-point span."""
    origin = origin or state.config.seed_origin
    pairs = []
    for p in state.segments.points:
        if origin != "all" and p.origin != origin:
            continue
        feats = state.periods[p.block].features
        for i in range(*p.au_span):
            pairs.append((feats[i], p.label))
    return pairs


def _train_classifier(state: UpdateState, tag: int) -> Classifier | None:
    cfg = state.config
    data = np.concatenate([bd.features for bd in state.observed])
    ssl_cfg = replace(cfg.ssl, seed=derive_seed(cfg.seed, 2, tag))
    seeds = seed_points_for_training(state)
    labels = sorted({l for _, l in seeds})
    if len(labels) < 2:
        logger.warning("only %d seed-point activities; SSL classifier not trained", len(labels))
        state.traces = {"pretrain": [], "finetune": []}
        return None
    init = None
    if cfg.warm_start and state.classifier is not None:
        from .ssl import Encoder
        init = Encoder(state.classifier.encoder, ssl_cfg)
    encoder = pretrain(data, ssl_cfg, init=init)
    clf = fine_tune(encoder, seeds, config=ssl_cfg)
    clf.tag = tag
    state.traces = {"pretrain": encoder.history["loss"], "finetune": clf.history["loss"]}
    return clf


def _discover_and_label(state: UpdateState, oracle, version: int, block_name: str):
    cfg = state.config
    seq = ActionUnitSequence.concat([bd.aus for bd in state.observed if bd.name != "cold"], "cumulative")
    known = state.memory.known_patterns() if state.memory is not None else set()
    candidates = [c for c in discover_motifs(seq, max_len=cfg.max_len)
                  if c.pattern not in state.queried and c.pattern not in known]
    log: list[dict] = []
    before = len(getattr(oracle, "log", []))
    motifs = label_motifs(candidates, oracle, cfg.homogeneity, version, block_name, log)
    state.queried.update(c.pattern for c in candidates)
    for entry in log:
        entry["cycle"] = state.cursor
    state.filter_log.extend(log)
    state.budget.extend({"cycle": state.cursor, "pattern": e["pattern"]} for e in log)
    if hasattr(oracle, "log") and len(oracle.log) - before != len(candidates):
        raise AssertionError("oracle query count differs from candidates queried")
    return motifs, log


def _audit(state: UpdateState, limit: date, label: str) -> None:
    latest = max((bd.block.stream.events[-1].timestamp.date() for bd in state.observed if len(bd.block.stream)),
                 default=None)
    entry = {"cycle": state.cursor, "step": label, "data_end": str(latest), "limit": str(limit)}
    state.audit.append(entry)
    if latest is not None and latest >= limit:
        raise CausalityError(f"{label}: read data from {latest}, beyond {limit}")


# lifecycle -----------------------------------------------------------------------------

def bootstrap(stream: EventStream, schedule: Schedule | None, oracle, config: PipelineConfig | None = None) -> UpdateState:
    """Cold phase learns action units, warm phase discovers and labels motifs.

    Produces memory v1, the warm-phase detections A1, and the first SSL
    classifier trained on A1.
    """
    config = config or PipelineConfig()
    if schedule is not None:
        config = replace(config, schedule=schedule)
    cold, warm = bootstrap_periods(stream, config.schedule)
    windows = make_windows(cold.stream, config.window, config.stride)
    if not windows:
        raise BootstrapError("cold phase holds no complete window", [])
    emb_cfg = replace(config.embedder, seed=derive_seed(config.seed, 0))
    embedder = train_embedder(windows, emb_cfg)
    vectors = embedder.embed_many(windows)
    k = config.k
    if config.auto_k:
        k, _ = select_k(vectors, seed=derive_seed(config.seed, 1))
        config = replace(config, k=k)
    kmeans = fit_kmeans(vectors, k, derive_seed(config.seed, 1))
    periods = {"cold": block_data("cold", cold, embedder, kmeans, config.stride),
               "warm": block_data("warm", warm, embedder, kmeans, config.stride)}
    state = UpdateState(config, embedder, kmeans, None, None, SegmentSet(), periods)
    _audit(state, warm.end_date, "bootstrap")

    motifs, log = _discover_and_label(state, oracle, 1, "warm")
    if not motifs:
        raise BootstrapError(f"no motif survived the filters ({len(log)} candidates queried)", log)
    state.memory = build_memory(motifs, 1)
    detections, _ = match(periods["warm"].aus, state.memory)
    a1 = detections_to_points(periods["warm"], detections)
    state.segments = state.segments.extend(a1)
    state.new_points = sorted(a1, key=_point_key)
    state.classifier = _train_classifier(state, 1)
    state.check_lockstep()
    logger.info("bootstrap: k=%d, %d motifs, %d seed points, budget %d", k, len(state.memory),
                len(a1), len(state.budget))
    return state


def run_update_cycle(state: UpdateState, block: EventBlock, oracle) -> UpdateState:
    """Process the next block (recognise, discover, extend, retrain).

    Mutates and returns ``state``.
    """
    if block.start_date != state.next_start:
        raise ValueError(f"block starts {block.start_date}, expected {state.next_start}")
    cfg = state.config
    t = state.cursor + 1
    v = state.version + 1
    name = f"b{t}"
    if cfg.refresh_au and len(block):
        _refresh_kmeans(state, block)
    bd = block_data(name, block, state.embedder, state.kmeans, cfg.stride)
    state.periods[name] = bd
    state.cursor = t
    _audit(state, block.end_date, f"cycle {t}")

    if len(bd.aus) == 0:
        state.memory = update_memory(state.memory, [])
        if state.classifier is not None:
            state.classifier = replace(state.classifier, tag=v)
        state.segments = state.segments.extend([])
        state.new_points = []
        state.version = v
        state.check_lockstep()
        return state

    prev_detections, regions = match(bd.aus, state.memory)
    ssl_points = ssl_fill(bd, regions, state.classifier)

    motifs, _ = _discover_and_label(state, oracle, v, name)
    state.memory = update_memory(state.memory, motifs)
    detections, _ = match(bd.aus, state.memory)
    motif_points = detections_to_points(bd, detections)
    covered = sorted(d.au_span for d in detections)
    trimmed = []
    for p in ssl_points:
        for s, e in _subtract(p.au_span, covered):
            trimmed.append(replace(p, au_span=(s, e), event_span=bd.aus.event_span(s, e)))
    a_t = motif_points + trimmed
    state.segments = state.segments.extend(a_t)
    state.new_points = sorted(a_t, key=_point_key)
    state.classifier = _train_classifier(state, v) or (
        replace(state.classifier, tag=v) if state.classifier is not None else None)
    state.version = v
    state.check_lockstep()
    logger.info("cycle %d: %d prior detections, %d new motifs, |A_t|=%d (%d ssl), memory v%d",
                t, len(prev_detections), len(motifs), len(a_t), len(trimmed), state.memory.version)
    return state


def _refresh_kmeans(state: UpdateState, block: EventBlock) -> None:
    """Re-fit k-means on all observed windows, starting from the current centroids."""
    vecs = [bd.features for bd in state.observed]
    windows = make_windows(block.stream, state.config.window, state.config.stride)
    vecs.append(state.embedder.embed_many(windows))
    X = np.concatenate(vecs)
    state.kmeans = fit_kmeans(X, state.kmeans.k, state.kmeans.seed, init=state.kmeans.centroids)
    for name, bd in list(state.periods.items()):
        state.periods[name] = BlockData(name, bd.block, replace(bd.aus, ids=tuple(int(i) for i in state.kmeans.predict(bd.features))), bd.features)


def run_all(stream: EventStream, oracle, config: PipelineConfig, max_cycles: int | None = None,
            on_cycle=None) -> UpdateState:
    """Bootstrap then run one cycle per update block (full and partial)."""
    state = bootstrap(stream, None, oracle, config)
    if on_cycle:
        on_cycle(state)
    for blk in update_blocks(stream, config.schedule):
        if max_cycles is not None and state.cursor >= max_cycles:
            break
        run_update_cycle(state, blk, oracle)
        if on_cycle:
            on_cycle(state)
    return state
