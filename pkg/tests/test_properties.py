"""Property tests. Each runs at least 500 generated examples."""

from datetime import datetime

from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from oracles import match_brute
from harupdate.action_units import ActionUnitSequence
from harupdate.evaluation import EvalMatrix, seg_accuracy
from harupdate.events import AnnotationInterval
from harupdate.motifs import Motif, MotifMemory, build_memory, check_filters, match, update_memory
from harupdate.orchestrator import SeedPoint, SegmentSet

EXAMPLES = settings(max_examples=500, deadline=None, suppress_health_check=[HealthCheck.too_slow])
LABELS = ["Sleep", "Eat", "Work"]
T0 = datetime(2020, 1, 1)

patterns = st.lists(st.integers(0, 5), min_size=2, max_size=6).map(tuple)
motif = st.builds(lambda p, s, l: Motif(p, s, l, 1), patterns, st.integers(5, 12), st.sampled_from(LABELS))


def _memory(entries):
    return MotifMemory(1, [Motif(p, s, l, 1, motif_id=f"m{i}") for i, (p, s, l) in enumerate(entries)], len(entries))


entries = st.lists(st.tuples(patterns, st.integers(5, 12), st.sampled_from(LABELS)), max_size=10,
                   unique_by=lambda e: e[0])


@EXAMPLES
@given(st.lists(motif, min_size=1, max_size=16, unique_by=lambda m: m.au_pattern), st.lists(st.integers(0, 4), max_size=4))
def test_memory_versions_pass_filters(pool, sizes):
    # discovery labels each pattern once, so patterns are unique across the whole run
    mem = build_memory(pool[:2])
    batches, pos = [], 2
    for k in sizes:
        batches.append(pool[pos:pos + k])
        pos += k
    for batch in batches:
        nxt = update_memory(mem, batch)
        assert nxt.version == mem.version + 1
        assert mem.known_patterns() <= nxt.known_patterns()
        mem = nxt
        for m in mem.motifs:
            check_filters(m)


@EXAMPLES
@given(entries, st.lists(st.integers(0, 5), max_size=200))
def test_detections_and_gaps_partition(ents, ids):
    dets, gaps = match(ids, _memory(ents))
    spans = sorted([d.au_span for d in dets] + [g.au_span for g in gaps])
    pos = 0
    for s, e in spans:
        assert s == pos and e > s
        pos = e
    assert pos == len(ids)


@EXAMPLES
@given(entries, st.lists(st.integers(0, 5), max_size=200))
def test_matcher_equals_brute_force(ents, ids):
    dets, _ = match(ids, _memory(ents))
    assert [(d.au_span[0], d.au_span[1], d.activity) for d in dets] == match_brute(ids, ents)


point = st.builds(lambda b, s, n, l, o: SeedPoint(b, (s, s + n), (0, 1), l, o, 1),
                  st.sampled_from(["warm", "b1", "b2"]), st.integers(0, 50), st.integers(1, 10),
                  st.sampled_from(LABELS), st.sampled_from(["motif", "ssl"]))


@EXAMPLES
@given(st.lists(st.lists(point, max_size=6), max_size=5))
def test_segment_set_only_grows(batches):
    seg = SegmentSet()
    for batch in batches:
        nxt = seg.extend(batch)
        assert nxt.points[:len(seg)] == seg.points and nxt.version == seg.version + 1
        for b in ("warm", "b1", "b2"):
            assert seg.covered(b) <= nxt.covered(b)
        seg = nxt


@EXAMPLES
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6))
def test_causality_mask(nv, nb, v, b):
    m = EvalMatrix(list(range(1, nv + 1)), list(range(1, nb + 1)), [])
    if b >= v:
        m.set(v, b, {})
        assert (v, b) in m.cells
    else:
        try:
            m.set(v, b, {})
        except AssertionError:
            assert (v, b) not in m.cells
        else:
            raise AssertionError("earlier block accepted")


@st.composite
def scenario(draw):
    n_aus = draw(st.integers(1, 30))
    size = 5
    n_events = n_aus * size
    cuts = sorted(draw(st.sets(st.integers(1, n_events - 1), max_size=6))) if n_events > 1 else []
    bounds = [0] + cuts + [n_events]
    intervals = [AnnotationInterval(draw(st.sampled_from(LABELS)), a, b - 1, T0, T0)
                 for a, b in zip(bounds, bounds[1:]) if draw(st.booleans())]
    aus = ActionUnitSequence(tuple([0] * n_aus), tuple((size * i, size * i + size - 1) for i in range(n_aus)))
    pts = draw(st.lists(st.builds(lambda s, n, l: SeedPoint("b", (s, min(s + n, n_aus)), (0, 1), l, "motif", 1),
                                  st.integers(0, n_aus - 1), st.integers(1, 8), st.sampled_from(LABELS)),
                        max_size=8))
    k = draw(st.integers(0, len(pts)))
    return intervals, aus, n_events, pts[:k], pts


@EXAMPLES
@given(scenario(), st.sampled_from(LABELS))
def test_seg_accuracy_bounded_and_monotone(sc, activity):
    intervals, aus, n_events, fewer, more = sc
    r1, f1, gt = seg_accuracy(fewer, intervals, aus, activity, n_events)
    r2, f2, gt2 = seg_accuracy(more, intervals, aus, activity, n_events)
    assert gt == gt2
    if r1 is None:
        assert r2 is None and sum(gt) == 0
        return
    assert 0.0 <= r1 <= r2 <= 1.0
    assert all(0 <= a <= b <= g for a, b, g in zip(f1, f2, gt))


PROPERTIES = [test_memory_versions_pass_filters, test_detections_and_gaps_partition, test_matcher_equals_brute_force,
              test_segment_set_only_grows, test_causality_mask, test_seg_accuracy_bounded_and_monotone]
