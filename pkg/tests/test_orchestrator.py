import copy
from dataclasses import replace
from datetime import datetime, timedelta

import numpy as np
import pytest

from conftest import small_home
from harupdate.embedder import EmbedderConfig
from harupdate.events import EventBlock, SensorEvent, make_stream
from harupdate.oracle import AnnotationOracle
from harupdate.orchestrator import (BootstrapError, PipelineConfig, Schedule, SeedPoint, SegmentSet, _subtract,
                                    bootstrap, bootstrap_periods, coalesce, run_update_cycle,
                                    seed_points_for_training, update_blocks)
from harupdate.rundir import load_state, save_cycle, segments_jsonl, synth_source, write_manifest, cycle_dir
from harupdate.ssl import SSLConfig
from harupdate.synth import synth_generate

FAST = PipelineConfig(k=10, embedder=EmbedderConfig(dim=16, epochs=3),
                      ssl=SSLConfig(pretrain_epochs=1, finetune_epochs=3, conv_channels=(4, 8), hidden=8,
                                    proj_dims=(16, 16, 8), head_hidden=16))


@pytest.fixture(scope="module")
def home():
    cfg = small_home(days=42, noise_rate=0.05, jitter=5)
    return cfg, synth_generate(cfg, 0)


@pytest.fixture(scope="module")
def booted(home):
    _, stream = home
    oracle = AnnotationOracle.from_stream(stream)
    return bootstrap(stream, None, oracle, FAST), oracle


def test_schedule_validation_and_periods(home):
    with pytest.raises(ValueError):
        Schedule(n=0)
    _, stream = home
    cold, warm = bootstrap_periods(stream, Schedule())
    assert (cold.start_date.isoformat(), cold.end_date.isoformat()) == ("2020-01-06", "2020-01-20")
    assert (warm.start_date.isoformat(), warm.end_date.isoformat()) == ("2020-01-20", "2020-02-03")
    assert warm.offset == len(cold)
    blocks = update_blocks(stream, Schedule())
    assert [b.index for b in blocks] == [1] and not blocks[0].partial
    with pytest.raises(ValueError):
        bootstrap_periods(synth_generate(small_home(days=20), 0), Schedule())


def test_update_blocks_partial_tail():
    stream = synth_generate(small_home(days=60), 0)
    blocks = update_blocks(stream, Schedule())
    assert [b.partial for b in blocks] == [False, False, True]
    assert len(update_blocks(stream, Schedule(), full_only=True)) == 2


def test_bootstrap_finds_every_activity(booted):
    state, oracle = booted
    assert set(state.memory.labels) == {"Sleep", "Eat", "Work"}
    assert state.memory.version == 1 and state.classifier.tag == 1
    assert len(state.budget) == oracle.budget == len(state.queried)
    warm = state.periods["warm"]
    assert all(p.block == "warm" and p.origin == "motif" for p in state.segments.points)
    assert all(warm.block.offset <= p.event_span[0] <= p.event_span[1] < warm.block.offset + len(warm.block)
               for p in state.segments.points)
    state.check_lockstep()


def test_bootstrap_fails_on_pure_noise():
    rng = np.random.default_rng(0)
    t0 = datetime(2020, 1, 6)
    events = [SensorEvent(t0 + timedelta(minutes=10 * i), f"M{rng.integers(1, 7):03d}", "ON") for i in range(4200)]
    stream = make_stream(events)
    with pytest.raises(BootstrapError) as err:
        bootstrap(stream, None, AnnotationOracle.from_stream(stream), FAST)
    assert err.value.filter_log and all(e["decision"] == "all instances unknown" for e in err.value.filter_log)


def test_update_cycle_grows_segments(home, booted):
    _, stream = home
    state, oracle = copy.deepcopy(booted)
    before = list(state.segments.points)
    covered = len(state.segments.covered("warm"))
    blk = update_blocks(stream, state.config.schedule)[0]
    with pytest.raises(ValueError):
        run_update_cycle(state, replace(blk, start_date=blk.start_date + timedelta(days=1)), oracle)
    run_update_cycle(state, blk, oracle)
    assert state.segments.points[:len(before)] == before
    assert len(state.segments.covered("warm")) == covered
    assert len(state.segments.covered("b1")) > 0
    assert state.version == state.memory.version == state.classifier.tag == 2
    assert state.segments.sizes == [len(before), len(state.segments)]
    assert len(state.budget) == oracle.budget
    assert state.audit[-1]["data_end"] < state.audit[-1]["limit"]


def test_empty_block_only_bumps_versions(booted):
    state, oracle = copy.deepcopy(booted)
    start = state.next_start
    empty = EventBlock(1, start, start + timedelta(days=14), 10_000, make_stream([]))
    motifs = state.memory.motifs
    run_update_cycle(state, empty, oracle)
    assert state.cursor == 1 and state.version == 2 and state.memory.version == 2
    assert state.memory.motifs == motifs and state.new_points == []


def test_seed_points_for_training(booted):
    state, _ = copy.deepcopy(booted)
    state.segments = SegmentSet()
    assert seed_points_for_training(state) == []
    state.segments = SegmentSet().extend([SeedPoint("warm", (2, 5), (0, 1), "Sleep", "motif", 1),
                                          SeedPoint("warm", (7, 9), (0, 1), "Work", "ssl", 1)])
    pairs = seed_points_for_training(state)
    assert [l for _, l in pairs] == ["Sleep"] * 3
    assert np.array_equal(pairs[0][0], state.periods["warm"].features[2])
    assert len(seed_points_for_training(state, "all")) == 5


def test_coalesce_and_subtract():
    preds = [("A", 0.9), ("A", 0.8), None, ("B", 0.9), ("A", 0.9)]
    assert coalesce(preds, 10) == [(10, 12, "A"), (13, 14, "B"), (14, 15, "A")]
    assert _subtract((0, 10), [(2, 4), (6, 7)]) == [(0, 2), (4, 6), (7, 10)]
    assert _subtract((3, 5), [(0, 10)]) == []


def test_bootstrap_is_deterministic(home, booted):
    _, stream = home
    again = bootstrap(stream, None, AnnotationOracle.from_stream(stream), FAST)
    assert segments_jsonl(again.segments.points) == segments_jsonl(booted[0].segments.points)


def test_resume_matches_uninterrupted_run(tmp_path):
    cfg = small_home(days=56, noise_rate=0.05)
    stream = synth_generate(cfg, 1)
    oracle = AnnotationOracle.from_stream(stream)
    straight = bootstrap(stream, None, oracle, FAST)
    blocks = update_blocks(stream, FAST.schedule)
    run_update_cycle(straight, blocks[0], oracle)
    run_update_cycle(straight, blocks[1], oracle)

    write_manifest(tmp_path, FAST, synth_source(cfg, 1), {"M", "D"})
    resumed = bootstrap(stream, None, AnnotationOracle.from_stream(stream), FAST)
    save_cycle(tmp_path, resumed)
    resumed, stream2, oracle2 = load_state(tmp_path)
    run_update_cycle(resumed, blocks[0], oracle2)
    save_cycle(tmp_path, resumed)
    resumed, _, oracle3 = load_state(tmp_path)
    run_update_cycle(resumed, blocks[1], oracle3)
    assert segments_jsonl(resumed.new_points) == segments_jsonl(straight.new_points)
    assert resumed.memory.to_json() == straight.memory.to_json()
    assert (cycle_dir(tmp_path, 1) / "segments.jsonl").exists()
