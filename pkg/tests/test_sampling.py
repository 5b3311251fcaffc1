import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from actor_observer.errors import (ConfigError, DegenerateVideoError, IngestError,
                                   InfeasiblePairError, MalformedPairError, ScenarioMismatchError)
from actor_observer.sampling import (EGO, FrameRecord, SamplerConfig, VideoPair,
                                     build_pair_index, cross_person_triplets,
                                     enumerate_test_triplets, epoch_triplets, sample_triplet,
                                     split_pairs, time_map, validate_triplet)
from actor_observer.synthetic import SyntheticConfig, synthesize

from conftest import make_pair


def frames_of(pair):
    return list(pair.third.frames) + list(pair.ego.frames)


def test_build_pair_index_examples():
    a, b = make_pair("a"), make_pair("b", seed=1)
    index = build_pair_index(frames_of(a) + frames_of(b))
    assert sorted(index) == ["a", "b"]
    with pytest.raises(MalformedPairError):
        build_pair_index(list(a.third.frames))


def test_build_pair_index_round_trips_synthetic_frames():
    ds = synthesize(SyntheticConfig(n_pairs=10, frames_per_video=30, seed=1))
    frames = [fr for p in ds.pairs.values() for fr in frames_of(p)]
    index = build_pair_index(frames)
    assert len(frames) == 600
    assert sum(len(p.third) + len(p.ego) for p in index.values()) == 600
    assert all(index[k].third.frames == ds.pairs[k].third.frames for k in index)


def test_build_pair_index_rejects_bad_input():
    a = make_pair("a")
    shuffled = frames_of(a)
    shuffled[0], shuffled[5] = shuffled[5], shuffled[0]
    with pytest.raises(IngestError):
        build_pair_index(shuffled)
    odd = FrameRecord("a_x", "a", "side", 0.0, np.zeros(4), 0)
    with pytest.raises(IngestError):
        build_pair_index(frames_of(a) + [odd])
    extra = FrameRecord("a_ego2", "a", EGO, 99.0, np.zeros(4), 0)
    with pytest.raises(MalformedPairError):
        build_pair_index(frames_of(a) + [extra])


def test_time_map_examples():
    assert time_map(make_pair(d3=20, de=20), 7.25) == 7.25
    half = make_pair(d3=30.0, de=15.0)
    assert time_map(half, 10.0) == 5.0
    assert time_map(half, 30.0) == 15.0


@given(st.floats(1.0, 100.0), st.floats(1.0, 100.0))
def test_time_map_endpoints_exact(d3, de):
    p = make_pair(n3=5, ne=5, d3=d3, de=de)
    assert time_map(p, d3) == p.ego.duration
    assert time_map(p, 0.0) == 0.0


def test_time_map_degenerate():
    p = make_pair(n3=1, ne=5)
    with pytest.raises(DegenerateVideoError):
        time_map(p, 0.0)


def test_sample_triplet_window_membership():
    p = make_pair(n3=61, ne=61, d3=30.0, de=30.0)  # frames every 0.5 s
    cfg = SamplerConfig()
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(2000):
        t = sample_triplet(p, cfg, rng)
        validate_triplet(t, cfg, p.third, p.ego)
        if t.x.timestamp == 5.0:
            assert 4.0 < t.z.timestamp < 6.0
            seen.add(t.z.timestamp)
    assert seen == {4.5, 5.0, 5.5}


def test_short_video_infeasible():
    p = make_pair(n3=9, ne=9, d3=8.0, de=8.0)
    with pytest.raises(InfeasiblePairError):
        sample_triplet(p, SamplerConfig(), np.random.default_rng(0))


def test_anchor_distribution_uniform():
    p = make_pair(n3=30, ne=30)
    rng = np.random.default_rng(1)
    counts = np.bincount([sample_triplet(p, SamplerConfig(), rng).x.index for _ in range(10_000)],
                         minlength=30)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_enumerate_examples():
    p = make_pair(n3=30, ne=30)
    cfg = SamplerConfig(seed=5)
    ts = enumerate_test_triplets(p, cfg)
    assert len(ts) == 30
    assert all(t.z.timestamp == t.x.timestamp for t in ts)
    again = enumerate_test_triplets(make_pair(n3=30, ne=30), cfg)
    assert [t.canonical() for t in ts] == [t.canonical() for t in again]


def test_cross_person():
    ds = synthesize(SyntheticConfig(n_pairs=4, frames_per_video=40, seed=2))
    a, b, c = ds.pairs["p0000"], ds.pairs["p0001"], ds.pairs["p0002"]
    cfg = SamplerConfig()
    same = cross_person_triplets(a, a, cfg)
    assert [t.canonical() for t in same] == [t.canonical() for t in enumerate_test_triplets(a, cfg)]
    ts = cross_person_triplets(a, b, cfg)
    cls_a = ds.sidecar["p0000"]["third"]["frame_class"]
    cls_b = ds.sidecar["p0001"]["ego"]["frame_class"]
    agree = np.mean([cls_a[t.x.index] == cls_b[t.z.index] for t in ts])
    assert agree > 0.8  # positives share the scripted segment except near boundaries
    with pytest.raises(ScenarioMismatchError):
        cross_person_triplets(a, c, cfg)


def test_sampler_config_validation():
    with pytest.raises(ConfigError):
        SamplerConfig(delta=5.0, delta_prime=2.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_split_is_disjoint_and_seeded(seed):
    ids = [f"p{i}" for i in range(25)]
    tr, te = split_pairs(ids, 0.2, seed)
    assert not set(tr) & set(te) and sorted(tr + te) == sorted(ids)
    assert len(te) == 5
    assert split_pairs(ids, 0.2, seed) == (tr, te)


def test_epoch_skips_infeasible(caplog):
    good, short = make_pair("g"), make_pair("s", n3=9, ne=9, d3=8.0, de=8.0)
    ts = epoch_triplets([good, short], SamplerConfig(), np.random.default_rng(0))
    assert len(ts) == 30 and all(t.x.pair_id == "g" for t in ts)
    assert "skipping" in caplog.text


def test_frame_labels_from_intervals():
    p = make_pair(n3=11, ne=11, d3=10.0, de=10.0)
    q = VideoPair("p", p.third, p.ego, None, (0, 2), ((0, 0.0, 5.0), (2, 5.0, 10.0)))
    y = q.frame_labels(3)
    assert y[:5, 0].all() and not y[5:, 0].any()
    assert y[5:, 2].all() and not y[:5, 2].any()
    with pytest.raises(ConfigError):
        q.frame_labels(2)
