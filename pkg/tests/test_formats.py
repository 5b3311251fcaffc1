import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from actor_observer import formats as fmt
from actor_observer.errors import ConfigError, CorruptionError, FormatError, IngestError
from actor_observer.sampling import SamplerConfig, enumerate_test_triplets
from actor_observer.synthetic import SyntheticConfig, synthesize
from actor_observer.training import TrainConfig, train


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 20), st.integers(1, 6), st.data())
def test_feature_file_round_trip(count, dim, data):
    ts = np.cumsum(data.draw(arrays(np.float64, count, elements=st.floats(0.01, 5.0))))
    feats = data.draw(arrays(np.float64, (count, dim),
                             elements=st.floats(allow_nan=False, allow_infinity=False)))
    blob = fmt.encode_feature_file(ts, feats)
    ts2, f2 = fmt.decode_feature_file(blob)
    assert ts2.tobytes() == ts.tobytes() and f2.tobytes() == feats.tobytes()
    assert fmt.encode_feature_file(ts2, f2) == blob


def test_feature_file_on_disk(tmp_path):
    rng = np.random.default_rng(0)
    ts, feats = np.arange(10) * 0.25, rng.normal(size=(10, 3))
    path = tmp_path / "v.aofv"
    fmt.write_feature_file(path, ts, feats)
    ts2, f2 = fmt.read_feature_file(path)
    assert np.array_equal(ts, ts2) and np.array_equal(feats, f2)
    assert not [p for p in tmp_path.iterdir() if p.name.endswith(".tmp")]


def test_feature_file_errors():
    blob = fmt.encode_feature_file(np.arange(10.0), np.zeros((10, 4)))
    with pytest.raises(CorruptionError):
        fmt.decode_feature_file(blob[:-8 * 4])  # one row short
    with pytest.raises(CorruptionError):
        fmt.decode_feature_file(blob[:6])
    with pytest.raises(FormatError):
        fmt.decode_feature_file(b"XXXX" + blob[4:])
    bad_version = blob[:4] + (2).to_bytes(4, "little") + blob[8:]
    with pytest.raises(FormatError):
        fmt.decode_feature_file(bad_version)
    with pytest.raises(IngestError):
        fmt.encode_feature_file([0.0, 1.0, 1.0], np.zeros((3, 2)))
    backwards = bytearray(blob)
    backwards[16:24] = np.float64(5.0).tobytes()  # first timestamp after the second
    with pytest.raises(IngestError):
        fmt.decode_feature_file(bytes(backwards))
    assert issubclass(CorruptionError, FormatError)


def test_empty_video_is_valid():
    ts, feats = fmt.decode_feature_file(fmt.encode_feature_file([], np.zeros((0, 7))))
    assert ts.shape == (0,) and feats.shape == (0, 7)


def test_config_parser():
    sections = fmt.parse_config("# comment\ntrain.base_lr = 1e-3\n\ntrain.mixed_mode = true\n"
                                "synth.seed=4  # trailing\nname = 'x y'\n")
    assert sections == {"train": {"base_lr": 1e-3, "mixed_mode": True},
                        "synth": {"seed": 4}, "": {"name": "x y"}}
    assert fmt.parse_config(fmt.format_config(sections)) == sections
    with pytest.raises(ConfigError):
        fmt.parse_config("just words")


@pytest.fixture(scope="module")
def dataset():
    return synthesize(SyntheticConfig(n_pairs=6, frames_per_video=30, feature_dim=6,
                                      latent_dim=3, seed=2))


def test_dataset_round_trip(tmp_path, dataset):
    manifest = fmt.write_synthetic(dataset, tmp_path)
    pairs = fmt.load_dataset(manifest, 24)
    assert list(pairs) == sorted(dataset.pairs)
    for pid, p in pairs.items():
        q = dataset.pairs[pid]
        assert p.third.features.tobytes() == q.third.features.tobytes()
        assert p.ego.timestamps.tobytes() == q.ego.timestamps.tobytes()
        assert p.scenario == q.scenario and p.labels == q.labels
        assert p.label_intervals == q.label_intervals
    assert fmt.read_sidecar(tmp_path / "sidecar.json") == json.loads(
        json.dumps(dataset.sidecar))


def test_manifest_validation(tmp_path, dataset):
    manifest = fmt.write_synthetic(dataset, tmp_path)
    records = fmt.read_jsonl(manifest)
    with pytest.raises(FormatError):
        fmt.load_manifest(manifest, n_classes=2)
    dup = tmp_path / "dup.jsonl"
    fmt.write_jsonl(dup, records + records[:1])
    with pytest.raises(FormatError):
        fmt.load_manifest(dup)
    missing = tmp_path / "missing.jsonl"
    fmt.write_jsonl(missing, [{**records[0], "ego_feature_path": "features/none.aofv"}])
    with pytest.raises(FormatError):
        fmt.load_manifest(missing)
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    with pytest.raises(ConfigError):
        fmt.load_dataset(empty)


def test_synthetic_is_byte_identical(tmp_path, dataset):
    fmt.write_synthetic(dataset, tmp_path / "a")
    fmt.write_synthetic(synthesize(dataset.config), tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_checkpoint_round_trip_and_resume(tmp_path, dataset):
    cfg = TrainConfig(base_lr=1e-3, epochs=2, hidden_dim=8, embed_dim=4, mixed_mode=True,
                      n_classes=24)
    res = train(cfg, dataset.pairs)
    split = {"train": res.train_ids, "test": res.test_ids}
    path = tmp_path / "ck.aock"
    fmt.write_checkpoint(path, res.state, cfg.as_dict(), split)
    state, header = fmt.read_checkpoint(path)
    assert fmt.encode_checkpoint(state, header["config"], header["split"]) == path.read_bytes()
    assert header["optimizer"]["epoch"] == 2 and header["split"] == split
    a, b = res.state.model.named_parameters(), state.model.named_parameters()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert state.loss_state == res.state.loss_state
    assert [acc for _, acc in state.accumulators.items()] == [
        acc for _, acc in res.state.accumulators.items()]
    # two more epochs from the checkpoint equal four straight epochs
    cfg4 = TrainConfig(**{**cfg.as_dict(), "epochs": 4})
    resumed = train(cfg4, dataset.pairs, state=state, split=(res.train_ids, res.test_ids))
    straight = train(cfg4, dataset.pairs)
    a, b = resumed.state.model.named_parameters(), straight.state.model.named_parameters()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_checkpoint_corruption(tmp_path, dataset):
    cfg = TrainConfig(epochs=1, hidden_dim=4, embed_dim=2)
    blob = fmt.encode_checkpoint(train(cfg, dataset.pairs).state, cfg.as_dict())
    with pytest.raises(CorruptionError):
        fmt.decode_checkpoint(blob[:-3])
    with pytest.raises(FormatError):
        fmt.decode_checkpoint(b"AOFV" + blob[4:])
    with pytest.raises(CorruptionError):
        fmt.decode_checkpoint(blob[:20])


def test_results_writers(tmp_path, dataset):
    fmt.write_csv(tmp_path / "r.csv", ["a", "b"], [[1, 0.1], ["x", 2.5]])
    assert (tmp_path / "r.csv").read_text() == "a,b\n1,0.1\nx,2.5\n"
    t = enumerate_test_triplets(next(iter(dataset.pairs.values())), SamplerConfig())[0]
    fmt.write_jsonl(tmp_path / "t.jsonl", [fmt.triplet_record(t)])
    assert fmt.read_jsonl(tmp_path / "t.jsonl")[0]["x"][0] == t.x.video_id
