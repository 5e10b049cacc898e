"""Acceptance criteria, one test each. Every test records a PASS/FAIL line shown in the summary."""

import math
import time
from pathlib import Path

import numpy as np
import pytest

import conftest
import gradcases
import test_properties
from harupdate.cli import continue_run, replay, start_run
from harupdate.embedder import EmbedderConfig
from harupdate.evaluation import evaluate_run, trend_fraction
from harupdate.events import DEFAULT_KEEP, read_casas
from harupdate.orchestrator import PipelineConfig
from harupdate.rundir import casas_source, synth_source
from harupdate.ssl import SSLConfig, nt_xent
from harupdate.synth import default_home

HOMES = {"aruba": (219, 39, 11), "milan": (92, 33, 14), "cairo": (56, 27, 6)}


def record(n, ok, detail):
    conftest.ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    assert ok, detail


def casas_file(home):
    root = Path(conftest.casas_data_dir())
    for cand in (root / home / "data", root / home / "data.txt", root / f"{home}.txt", root / home):
        if cand.is_file():
            return cand
    return None


def _missing(n, homes):
    record(n, False, f"CASAS exports not found for {', '.join(homes)} under {conftest.casas_data_dir()} "
                     "(set CASAS_DATA_DIR)")


def test_criterion_1_ingestion_parity():
    missing = [h for h in HOMES if casas_file(h) is None]
    if missing:
        _missing(1, missing)
    parts, ok = [], True
    for home, expect in HOMES.items():
        t0 = time.perf_counter()
        s = read_casas(casas_file(home)).summary
        dt = time.perf_counter() - t0
        got = (s.days, s.sensor_count, s.activity_count)
        ok &= got == expect and dt < 30
        parts.append(f"{home} {got} in {dt:.1f}s")
    record(1, ok, "; ".join(parts))


def test_criterion_2_loss_and_gradients():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    single = nt_xent(rng.normal(size=(2, 8)), 0.5).item()
    ortho = nt_xent(np.array([[1.0, 0], [1.0, 0], [0, 1.0], [0, 1.0]]), 1.0).item()
    expect = math.log(1 + 2 / math.e)
    worst = max(gradcases.max_rel_error(name, seed) for name in gradcases.CASES for seed in range(20))
    dt = time.perf_counter() - t0
    ok = single == 0.0 and abs(ortho - expect) <= 1e-6 and worst <= 1e-4 and dt < 60
    record(2, ok, f"N=1 loss {single}; fixture {ortho:.12f} vs {expect:.12f}; "
                  f"worst gradient rel error {worst:.2e} over 20 seeds; {dt:.1f}s")


def test_criterion_3_synthetic_end_to_end(tmp_path):
    config = PipelineConfig(seed=0, embedder=EmbedderConfig(epochs=5),
                            ssl=SSLConfig(pretrain_epochs=3, finetune_epochs=10))
    source = synth_source(default_home(56), 0)
    run_dir = tmp_path / "run"
    t0 = time.perf_counter()
    start_run(run_dir, config, source, DEFAULT_KEEP)
    cycles = continue_run(run_dir, 2)
    dt = time.perf_counter() - t0

    m = evaluate_run(run_dir)
    last_v, last_b = m.versions[-1], m.blocks[-1]
    final = m.get(last_v, last_b)
    floor_ok = all(r.ratio is not None and r.ratio >= 0.9 for r in final.values())
    drops = []
    for b in m.blocks:
        one, two = m.get(1, b), m.get(2, b)
        if one is None or two is None:
            continue
        drops += [f"{a} b{b} {one[a].ratio:.4f}->{two[a].ratio:.4f}" for a in m.activities
                  if one[a].ratio is not None and two[a].ratio < one[a].ratio]
    diffs = replay(run_dir / "manifest.json", tmp_path / "replay")
    ok = cycles == 2 and dt < 300 and floor_ok and not drops and not diffs
    ratios = ", ".join(f"{a} {r.ratio:.4f}" for a, r in final.items())
    record(3, ok, f"{cycles} cycles in {dt:.0f}s; M{last_v} on block {last_b}: {ratios}; "
                  f"M2 below M1: {'; '.join(drops) or 'none'}; replay diffs: {len(diffs)}")


@pytest.mark.parametrize("home", ["aruba", "milan", "cairo"])
def test_criterion_4_trend_on_real_data(home, tmp_path):
    path = casas_file(home)
    if path is None:
        _missing(4, [home])
    t0 = time.perf_counter()
    run_dir = tmp_path / home
    start_run(run_dir, PipelineConfig(), casas_source(str(path)), DEFAULT_KEEP)
    continue_run(run_dir, None)
    frac, verdicts = trend_fraction(evaluate_run(run_dir))
    dt = time.perf_counter() - t0
    ok = frac is not None and frac >= 2 / 3 and dt <= 1800
    shown = "n/a" if frac is None else f"{frac:.3f}"
    record(4, ok, f"{home}: non-decreasing share {shown} {verdicts}; {dt / 60:.1f} min")


def test_criterion_5_invariants():
    failed = []
    for prop in test_properties.PROPERTIES:
        try:
            prop()
        except Exception as exc:  # noqa: BLE001 - report every property
            failed.append(f"{prop.__name__}: {type(exc).__name__}")
    record(5, not failed, f"{len(test_properties.PROPERTIES)} properties x 500 cases; failed: {failed or 'none'}")
