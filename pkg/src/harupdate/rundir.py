"""Run-directory layout: manifest, per-cycle checkpoints, resume."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from . import __version__
from .embedder import MaskedEmbedder
from .events import DEFAULT_KEEP, EventStream, filter_sensors, read_casas
from .kmeans import KMeansModel
from .motifs import MotifMemory
from .oracle import AnnotationOracle
from .orchestrator import (PipelineConfig, SeedPoint, SegmentSet, UpdateState, block_data, bootstrap_periods,
                           update_blocks)
from .ssl import Classifier, loss_trace_csv
from .synth import SynthConfig, synth_generate

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"


class RunDirError(RuntimeError):
    pass


def cycle_dir(run_dir, cycle: int) -> Path:
    return Path(run_dir) / f"cycle_{cycle:03d}"


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def casas_source(path) -> dict:
    path = os.path.abspath(path)
    return {"kind": "casas", "path": path, "sha256": file_sha256(path)}


def synth_source(config: SynthConfig, seed: int) -> dict:
    return {"kind": "synth", "config": config.to_dict(), "seed": seed}


def load_source(source: dict, keep=DEFAULT_KEEP) -> EventStream:
    if source["kind"] == "casas":
        if not os.path.exists(source["path"]):
            raise RunDirError(f"input {source['path']} not found")
        if file_sha256(source["path"]) != source["sha256"]:
            raise RunDirError(f"input {source['path']} changed since the run started")
        stream = read_casas(source["path"])
    elif source["kind"] == "synth":
        stream = synth_generate(SynthConfig.from_dict(source["config"]), source["seed"])
    else:
        raise RunDirError(f"unknown source kind {source['kind']!r}")
    return filter_sensors(stream, keep)


def _dump(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_manifest(run_dir, config: PipelineConfig, source: dict, keep) -> None:
    doc = {"schema_version": SCHEMA_VERSION, "package_version": __version__, "source": source,
           "keep_sensors": sorted(keep), "config": config.to_dict()}
    _dump(Path(run_dir) / MANIFEST, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    if not path.exists():
        raise RunDirError(f"no manifest at {path}")
    doc = json.loads(path.read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise RunDirError("unsupported manifest schema")
    return doc


def segments_jsonl(points) -> str:
    return "".join(json.dumps(p.to_dict(), sort_keys=True) + "\n" for p in points)


def save_cycle(run_dir, state: UpdateState) -> Path:
    """Write the artifacts of the cycle just completed (cycle 0 is the bootstrap)."""
    run_dir = Path(run_dir)
    au = run_dir / "au"
    if not (au / "embedder.npz").exists():
        au.mkdir(parents=True, exist_ok=True)
        state.embedder.save(au / "embedder.npz")
        _dump(au / "kmeans.json", state.kmeans.to_json())
    cdir = cycle_dir(run_dir, state.cursor)
    cdir.mkdir(parents=True, exist_ok=True)
    _dump(cdir / "memory.json", state.memory.to_json() + "\n")
    if state.classifier is not None:
        state.classifier.save(cdir / "classifier.npz")
    if state.config.refresh_au:
        _dump(cdir / "kmeans.json", state.kmeans.to_json())
    _dump(cdir / "segments.jsonl", segments_jsonl(state.new_points))
    _dump(cdir / "budget.jsonl", "".join(json.dumps(e, sort_keys=True) + "\n"
                                         for e in state.filter_log if e.get("cycle") == state.cursor))
    _dump(cdir / "pretrain_loss.csv", loss_trace_csv(state.traces.get("pretrain", [])))
    _dump(cdir / "finetune_loss.csv", loss_trace_csv(state.traces.get("finetune", [])))
    doc = {"cursor": state.cursor, "version": state.version, "has_classifier": state.classifier is not None,
           "queried": sorted(list(p) for p in state.queried), "segment_sizes": state.segments.sizes,
           "budget": len(state.budget), "audit": state.audit, "k": state.kmeans.k}
    _dump(cdir / "state.json", json.dumps(doc, sort_keys=True) + "\n")
    return cdir


def completed_cycles(run_dir) -> int:
    """Number of update cycles with a state file; -1 when not even bootstrapped."""
    t = -1
    while (cycle_dir(run_dir, t + 1) / "state.json").exists():
        t += 1
    return t


def load_kmeans(run_dir, cycle: int) -> KMeansModel:
    """The k-means model in force after ``cycle`` (refreshed copies override the base one)."""
    for c in range(cycle, -1, -1):
        p = cycle_dir(run_dir, c) / "kmeans.json"
        if p.exists():
            return KMeansModel.from_json(p.read_text())
    p = Path(run_dir) / "au" / "kmeans.json"
    if not p.exists():
        raise RunDirError(f"missing checkpoint {p}")
    return KMeansModel.from_json(p.read_text())


def load_model(run_dir, cycle: int) -> tuple[MotifMemory, Classifier | None]:
    cdir = cycle_dir(run_dir, cycle)
    state_path = cdir / "state.json"
    if not state_path.exists():
        raise RunDirError(f"missing checkpoint {state_path}")
    doc = json.loads(state_path.read_text())
    memory = MotifMemory.from_json((cdir / "memory.json").read_text())
    clf = None
    if doc["has_classifier"]:
        if not (cdir / "classifier.npz").exists():
            raise RunDirError(f"missing checkpoint {cdir / 'classifier.npz'}")
        clf = Classifier.load(cdir / "classifier.npz")
    return memory, clf


def load_embedder(run_dir) -> MaskedEmbedder:
    p = Path(run_dir) / "au" / "embedder.npz"
    if not p.exists():
        raise RunDirError(f"missing checkpoint {p}")
    return MaskedEmbedder.load(p)


def open_run(run_dir) -> tuple[dict, PipelineConfig, EventStream, AnnotationOracle]:
    man = read_manifest(run_dir)
    config = PipelineConfig.from_dict(man["config"])
    stream = load_source(man["source"], set(man["keep_sensors"]))
    return man, config, stream, AnnotationOracle.from_stream(stream)


def load_state(run_dir) -> tuple[UpdateState, EventStream, AnnotationOracle]:
    """Rebuild the state after the last completed cycle, ready for the next one."""
    _, config, stream, oracle = open_run(run_dir)
    last = completed_cycles(run_dir)
    if last < 0:
        raise RunDirError(f"{run_dir} holds no bootstrap checkpoint")
    embedder = load_embedder(run_dir)
    kmeans = load_kmeans(run_dir, last)
    memory, clf = load_model(run_dir, last)
    doc = json.loads((cycle_dir(run_dir, last) / "state.json").read_text())

    cold, warm = bootstrap_periods(stream, config.schedule)
    periods = {"cold": block_data("cold", cold, embedder, kmeans, config.stride),
               "warm": block_data("warm", warm, embedder, kmeans, config.stride)}
    for blk in update_blocks(stream, config.schedule)[:last]:
        name = f"b{blk.index}"
        periods[name] = block_data(name, blk, embedder, kmeans, config.stride)

    points = []
    for c in range(last + 1):
        text = (cycle_dir(run_dir, c) / "segments.jsonl").read_text()
        points.extend(SeedPoint.from_dict(json.loads(line)) for line in text.splitlines() if line)
    segments = SegmentSet(points, len(doc["segment_sizes"]), list(doc["segment_sizes"]))
    budget = []
    for c in range(last + 1):
        text = (cycle_dir(run_dir, c) / "budget.jsonl").read_text()
        budget.extend({"cycle": c, "pattern": json.loads(l)["pattern"]} for l in text.splitlines() if l)
    state = UpdateState(config, embedder, kmeans, memory, clf, segments, periods, cursor=last,
                        version=doc["version"], queried={tuple(p) for p in doc["queried"]}, budget=budget,
                        audit=list(doc["audit"]))
    if len(budget) != doc["budget"]:
        raise RunDirError("budget ledger does not match the recorded count")
    state.check_lockstep()
    return state, stream, oracle


def next_block(state: UpdateState, stream: EventStream):
    blocks = update_blocks(stream, state.config.schedule)
    if state.cursor >= len(blocks):
        return None
    return blocks[state.cursor]

