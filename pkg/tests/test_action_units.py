import numpy as np
import pytest

from conftest import small_home
from harupdate.action_units import (ActionUnitSequence, EventWindow, ShortStreamWarning, Vocabulary,
                                    expected_unit_count, make_windows, predict_action_units)
from harupdate.embedder import EmbedderConfig, MaskedEmbedder, train_embedder
from harupdate.events import slice_stream
from harupdate.kmeans import KMeansModel, fit_kmeans, select_k, silhouette
from harupdate.synth import synth_generate


@pytest.fixture(scope="module")
def stream():
    return synth_generate(small_home(days=3, noise_rate=0.05), 0)


def test_window_counts(stream):
    s40 = slice_stream(stream, 0, 40)
    assert len(make_windows(s40, 20, 20)) == 2
    assert len(make_windows(s40, 20, 1)) == 21
    with pytest.warns(ShortStreamWarning):
        assert make_windows(slice_stream(stream, 0, 19), 20) == []
    w = make_windows(s40, 20, 20)[1]
    assert w.span == (20, 39) and w.tokens[0] == stream.events[20].token


@pytest.mark.parametrize("n,size,stride", [(40, 20, 20), (57, 20, 20), (57, 20, 3), (19, 20, 20), (20, 20, 7)])
def test_expected_unit_count(n, size, stride):
    assert expected_unit_count(n, size, stride) == len(range(0, n - size + 1, stride))


def test_vocabulary_roundtrip():
    v = Vocabulary.from_windows([EventWindow(("a=ON", "b=ON"), (0, 1))])
    assert v.encode("a=ON") >= 2 and v.decode(v.encode("b=ON")) == "b=ON"
    assert v.encode("zzz") == v.unk_id
    assert Vocabulary.from_list(v.to_list()).to_list() == v.to_list()


def test_single_window_is_memorised():
    w = EventWindow(tuple(f"M{i:03d}=ON" for i in range(20)), (0, 19))
    emb = train_embedder([w] * 8, EmbedderConfig(epochs=50, dim=16, lr=1e-2))
    assert emb.history["heldout_acc_final"] == 1.0


def test_masked_fraction(stream):
    windows = make_windows(stream, 20, 1)
    emb = train_embedder(windows, EmbedderConfig(epochs=3, dim=8))
    assert abs(emb.history["masked_fraction"] - 0.15) <= 0.01


def test_embedder_deterministic_and_pure(stream, tmp_path):
    windows = make_windows(stream, 20)
    cfg = EmbedderConfig(epochs=2, dim=16)
    a, b = train_embedder(windows, cfg), train_embedder(windows, cfg)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert np.array_equal(a.embed(windows[0]), a.embed(windows[0]))
    unk = EventWindow(tuple(["X999=ON"] * 20), (0, 19))
    assert np.all(np.isfinite(a.embed(unk)))
    changed = EventWindow((windows[0].tokens[1],) + windows[0].tokens[1:], windows[0].span)
    assert not np.allclose(a.embed(changed), a.embed(windows[0]))
    a.save(tmp_path / "e.npz")
    back = MaskedEmbedder.load(tmp_path / "e.npz")
    assert np.array_equal(back.embed_many(windows[:5]), a.embed_many(windows[:5]))


def test_embedder_needs_two_tokens():
    with pytest.raises(ValueError):
        train_embedder([EventWindow(("a=ON",) * 20, (0, 19))])


def blobs(seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal([0, 0], 0.1, size=(200, 2))
    b = rng.normal([10, 10], 0.1, size=(200, 2))
    return np.concatenate([a, b]), a.mean(axis=0), b.mean(axis=0)


def test_kmeans_blob_means():
    X, ma, mb = blobs()
    m = fit_kmeans(X, 2, seed=0)
    got = sorted(map(tuple, m.centroids))
    assert np.allclose(got[0], ma, atol=1e-9) and np.allclose(got[1], mb, atol=1e-9)
    assert all(b <= a + 1e-9 for a, b in zip(m.history, m.history[1:]))


def test_kmeans_k_equals_n_and_determinism():
    X = np.random.default_rng(1).normal(size=(6, 3))
    assert fit_kmeans(X, 6, seed=2).inertia == 0.0
    a, b = fit_kmeans(X, 3, seed=5), fit_kmeans(X, 3, seed=5)
    assert np.array_equal(a.centroids, b.centroids) and a.history == b.history
    assert np.array_equal(KMeansModel.from_json(a.to_json()).centroids, a.centroids)


def test_kmeans_errors_and_ties():
    with pytest.raises(ValueError):
        fit_kmeans(np.zeros((5, 2)), 2)
    with pytest.raises(ValueError):
        fit_kmeans(np.eye(3), 4)
    m = KMeansModel(np.array([[0.0], [2.0]]), 0.0)
    assert m.predict([[1.0]])[0] == 0


def test_kmeans_warm_start_keeps_order():
    X, _, _ = blobs(3)
    init = np.array([[10.0, 10.0], [0.0, 0.0]])
    m = fit_kmeans(X, 2, init=init)
    assert m.centroids[0, 0] > 5 and m.centroids[1, 0] < 5


def silhouette_brute(X, labels):
    n = len(X)
    D = np.sqrt(((X[:, None] - X[None]) ** 2).sum(-1))
    s = []
    for i in range(n):
        own = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not own:
            s.append(0.0)
            continue
        a = np.mean(D[i, own])
        b = min(np.mean(D[i, labels == c]) for c in set(labels) if c != labels[i])
        s.append((b - a) / max(a, b))
    return float(np.mean(s))


def test_silhouette_matches_brute_force():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(40, 3))
    labels = rng.integers(0, 4, 40)
    labels[0] = 5   # singleton cluster
    assert np.isclose(silhouette(X, labels), silhouette_brute(X, labels))


def test_select_k_prefers_true_blob_count():
    rng = np.random.default_rng(0)
    centers = rng.uniform(-50, 50, size=(5, 2))
    X = np.concatenate([c + rng.normal(0, 0.5, (40, 2)) for c in centers])
    k, scores = select_k(X, ks=range(2, 9))
    assert k == 5 and set(scores) == set(range(2, 9))


def test_predict_action_units_alternating_windows():
    from harupdate.events import SensorEvent, make_stream
    from datetime import datetime, timedelta
    a = [f"M00{i}" for i in range(1, 6)] * 4
    b = [f"M01{i}" for i in range(1, 6)] * 4
    t0 = datetime(2020, 1, 1)
    events = [SensorEvent(t0 + timedelta(seconds=i), s, "ON") for i, s in enumerate((a + b) * 6)]
    stream = make_stream(events)
    windows = make_windows(stream, 20)
    emb = train_embedder(windows, EmbedderConfig(epochs=2, dim=8))
    vecs = emb.embed_many(windows)
    km = fit_kmeans(vecs, 2, seed=0)
    seq, feats = predict_action_units(stream, emb, km, offset=100, block="x")
    brute = [int(np.argmin([np.sum((v - c) ** 2) for c in km.centroids])) for v in feats]
    assert list(seq.ids) == brute
    assert seq.ids[0] != seq.ids[1] and list(seq.ids[::2]) == [seq.ids[0]] * 6
    assert seq.spans[0] == (100, 119) and len(seq) == expected_unit_count(len(events), 20, 20)
    with pytest.warns(ShortStreamWarning):
        short, f = predict_action_units(slice_stream(stream, 0, 5), emb, km)
    assert len(short) == 0 and f.shape == (0, 8)


def test_sequence_concat_and_event_span():
    s = ActionUnitSequence((1, 2), ((0, 19), (20, 39)))
    t = ActionUnitSequence((3,), ((40, 59),))
    c = ActionUnitSequence.concat([s, t])
    assert c.ids == (1, 2, 3) and c.event_span(1, 3) == (20, 59)
