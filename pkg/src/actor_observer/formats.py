"""On-disk formats: feature files, manifests, checkpoints, config and results.

Binary formats are little-endian with 64-bit floats.  Every writer goes
through a temp-file-and-rename so partial files are never observed.
"""
from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConfigError, CorruptionError, FormatError, IngestError
from .model import ModelParameters
from .objective import RunningLossState
from .sampling import EGO, THIRD, Video, VideoPair
from .selector import AccumulatorBank, VideoAccumulator

FEATURE_MAGIC = b"AOFV"
FEATURE_VERSION = 1
CHECKPOINT_MAGIC = b"AOCK"
CHECKPOINT_VERSION = 1
RESULTS_VERSION = 1
FORMAT_VERSIONS = {"feature_file": FEATURE_VERSION, "checkpoint": CHECKPOINT_VERSION,
                   "results": RESULTS_VERSION}

_FEATURE_HEADER = struct.Struct("<4sIII")
_CKPT_HEADER = struct.Struct("<4sIQ")


def atomic_write(path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- feature files --------------------------------------------------------

def encode_feature_file(timestamps, features) -> bytes:
    ts = np.asarray(timestamps, dtype="<f8").reshape(-1)
    feats = np.asarray(features, dtype="<f8")
    if ts.size == 0:
        feats = feats.reshape(0, feats.shape[-1] if feats.ndim == 2 else 0)
    if feats.ndim != 2 or feats.shape[0] != ts.size:
        raise FormatError(f"features {feats.shape} do not match {ts.size} timestamps")
    if np.any(np.diff(ts) <= 0):
        raise IngestError("timestamps must be strictly ascending")
    header = _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, feats.shape[1], ts.size)
    return header + ts.tobytes() + np.ascontiguousarray(feats).tobytes()


def decode_feature_file(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    if len(data) < _FEATURE_HEADER.size:
        raise CorruptionError("feature file shorter than its header")
    magic, version, dim, count = _FEATURE_HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"bad feature-file magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature-file version {version}")
    expected = _FEATURE_HEADER.size + 8 * count * (1 + dim)
    if len(data) != expected:
        raise CorruptionError(f"feature payload is {len(data)} bytes, header implies {expected}")
    off = _FEATURE_HEADER.size
    ts = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64)
    feats = np.frombuffer(data, dtype="<f8", count=count * dim,
                          offset=off + 8 * count).astype(np.float64).reshape(count, dim)
    if np.any(np.diff(ts) <= 0):
        raise IngestError("timestamps in feature file are not strictly ascending")
    return ts, feats


def write_feature_file(path, timestamps, features) -> None:
    atomic_write(path, encode_feature_file(timestamps, features))


def read_feature_file(path) -> tuple[np.ndarray, np.ndarray]:
    return decode_feature_file(Path(path).read_bytes())


# -- line-delimited records -----------------------------------------------

def dumps_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def write_jsonl(path, records: Iterable[dict]) -> None:
    atomic_write(path, "".join(dumps_record(r) + "\n" for r in records))


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{n}: {exc}") from None
    return out


# -- manifest -------------------------------------------------------------

def load_manifest(path, n_classes: int | None = None) -> list[dict]:
    records = read_jsonl(path)
    seen = set()
    base = Path(path).parent
    for r in records:
        for key in ("pair_id", "third_feature_path", "ego_feature_path"):
            if key not in r:
                raise FormatError(f"manifest record lacks {key!r}: {r}")
        if r["pair_id"] in seen:
            raise FormatError(f"duplicate pair id {r['pair_id']!r} in manifest")
        seen.add(r["pair_id"])
        for key in ("third_feature_path", "ego_feature_path"):
            if not (base / r[key]).is_file():
                raise FormatError(f"missing feature file {r[key]!r} for pair {r['pair_id']}")
        if n_classes is not None:
            for c in r.get("labels", []):
                if not 0 <= int(c) < n_classes:
                    raise FormatError(f"label {c} of pair {r['pair_id']} outside [0, {n_classes})")
    return records


def load_dataset(manifest_path, n_classes: int | None = None) -> dict[str, VideoPair]:
    base = Path(manifest_path).parent
    pairs = {}
    for r in load_manifest(manifest_path, n_classes):
        pid = r["pair_id"]
        videos = {}
        for mod, key in ((THIRD, "third_feature_path"), (EGO, "ego_feature_path")):
            ts, feats = read_feature_file(base / r[key])
            videos[mod] = Video.from_arrays(r.get(f"{mod}_video_id", f"{pid}_{mod}"),
                                            pid, mod, ts, feats)
        intervals = tuple((int(c), float(a), float(b)) for c, a, b in r.get("label_intervals", []))
        pairs[pid] = VideoPair(pid, videos[THIRD], videos[EGO], r.get("scenario_tag"),
                               tuple(int(c) for c in r.get("labels", [])), intervals)
    if not pairs:
        raise ConfigError(f"manifest {manifest_path} lists no pairs")
    dims = {p.third.frames[0].features.shape[0] for p in pairs.values() if len(p.third)}
    if len(dims) > 1:
        raise IngestError(f"inconsistent feature dims {sorted(dims)}")
    return dict(sorted(pairs.items()))


def write_dataset(out_dir, pairs: dict[str, VideoPair], extra: dict | None = None) -> Path:
    """Feature files plus ``manifest.jsonl``; returns the manifest path."""
    out_dir = Path(out_dir)
    records = []
    for pid in sorted(pairs):
        p = pairs[pid]
        rec = {"pair_id": pid, "scenario_tag": p.scenario, "labels": list(p.labels)}
        for mod, video in ((THIRD, p.third), (EGO, p.ego)):
            rel = f"features/{video.video_id}.aofv"
            write_feature_file(out_dir / rel, video.timestamps, video.features)
            rec[f"{mod}_feature_path"] = rel
            rec[f"{mod}_video_id"] = video.video_id
        if p.label_intervals:
            rec["label_intervals"] = [list(iv) for iv in p.label_intervals]
        rec.update((extra or {}).get(pid, {}))
        records.append(rec)
    manifest = out_dir / "manifest.jsonl"
    write_jsonl(manifest, records)
    return manifest


# -- key = value config files ---------------------------------------------

def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def parse_config(text: str) -> dict[str, dict]:
    """``section.key = value`` lines -> {section: {key: value}}; bare keys go to ``""``."""
    out: dict[str, dict] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"config line {n}: empty key")
        section, _, name = key.rpartition(".")
        out.setdefault(section, {})[name] = _parse_value(value)
    return out


def load_config(path) -> dict[str, dict]:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def format_config(sections: dict[str, dict]) -> str:
    lines = []
    for section in sorted(sections):
        for key in sorted(sections[section]):
            value = sections[section][key]
            if isinstance(value, bool):
                value = "true" if value else "false"
            name = f"{section}.{key}" if section else key
            lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"


# -- checkpoints ----------------------------------------------------------

def encode_checkpoint(state, config: dict, split: dict | None = None,
                      extra: dict | None = None) -> bytes:
    """Serialize a training state; the header is canonical JSON, tensors follow."""
    model: ModelParameters = state.model
    opt = state.optimizer
    tensors: list[tuple[str, np.ndarray]] = []
    for name, arr in model.named_parameters().items():
        tensors.append((f"param/{name}", arr))
    for name in sorted(opt.velocity):
        tensors.append((f"velocity/{name}", opt.velocity[name]))
    accs = []
    for key, acc in state.accumulators.items():
        accs.append({"video_id": key[0], "modality": key[1], "count": acc.count,
                     "init": acc.init})
    if accs:
        tensors.append(("accumulators/sigma",
                        np.array([acc.sigma for _, acc in state.accumulators.items()])))
        tensors.append(("accumulators/k",
                        np.array([acc.k for _, acc in state.accumulators.items()])))
    ls = state.loss_state
    tensors.append(("loss_state", np.array([ls.L, ls.sigma, ls.k])))
    tensors.append(("optimizer", np.array([opt.learning_rate, opt.momentum])))
    tensors.append(("bank", np.array([state.accumulators.k])))

    directory, offset = [], 0
    for name, arr in tensors:
        arr = np.asarray(arr, dtype=np.float64)
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header = {
        "config": config,
        "split": split or {},
        "tensors": directory,
        "accumulators": accs,
        "bank_init": state.accumulators.init,
        "loss_count": ls.count,
        "optimizer": {"epoch": opt.epoch, "step": opt.step},
        "model": {"trunk_map": model.trunk_map, "selector_map": model.selector_map,
                  "classifier": model.classifier,
                  "groups": {g: sorted(ps) for g, ps in model.groups.items()}},
        "formats": FORMAT_VERSIONS,
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in tensors)
    return _CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(hbytes)) + hbytes + payload


def decode_checkpoint(data: bytes):
    """Returns (TrainingState, header dict)."""
    from .training import OptimizerState, TrainingState

    if len(data) < _CKPT_HEADER.size:
        raise CorruptionError("checkpoint shorter than its header")
    magic, version, hlen = _CKPT_HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    start = _CKPT_HEADER.size
    if len(data) < start + hlen:
        raise CorruptionError("checkpoint header truncated")
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"unreadable checkpoint header: {exc}") from None
    payload = data[start + hlen:]
    total = sum(int(np.prod(t["shape"], dtype=np.int64)) for t in header["tensors"])
    if len(payload) != 8 * total:
        raise CorruptionError(f"checkpoint payload is {len(payload)} bytes, expected {8 * total}")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    tensors = {}
    for t in header["tensors"]:
        size = int(np.prod(t["shape"], dtype=np.int64))
        tensors[t["name"]] = flat[t["offset"]:t["offset"] + size].reshape(t["shape"]).copy()

    m = header["model"]
    groups = {g: {n: tensors[f"param/{g}.{n}"] for n in names} for g, names in m["groups"].items()}
    model = ModelParameters(groups, m["trunk_map"], m["selector_map"], m["classifier"])
    velocity = {k[len("velocity/"):]: v for k, v in tensors.items() if k.startswith("velocity/")}
    lr, momentum = tensors["optimizer"]
    opt = OptimizerState(velocity, float(lr), float(momentum),
                         header["optimizer"]["epoch"], header["optimizer"]["step"])
    bank = AccumulatorBank(float(tensors["bank"][0]), header["bank_init"])
    for i, a in enumerate(header["accumulators"]):
        bank.set(VideoAccumulator((a["video_id"], a["modality"]),
                                  float(tensors["accumulators/sigma"][i]), a["count"],
                                  float(tensors["accumulators/k"][i]), a["init"]))
    L, sigma, k = tensors["loss_state"]
    loss_state = RunningLossState(float(L), float(sigma), header["loss_count"], float(k))
    return TrainingState(model, opt, bank, loss_state), header


def write_checkpoint(path, state, config: dict, split: dict | None = None,
                     extra: dict | None = None) -> None:
    atomic_write(path, encode_checkpoint(state, config, split, extra))


def read_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())


# -- results --------------------------------------------------------------

def write_csv(path, header: list[str], rows: Iterable[Iterable]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    atomic_write(path, buf.getvalue())


def triplet_record(t) -> dict:
    return {
        "pair_id": t.x.pair_id,
        "x": [t.x.video_id, t.x.index, t.x.timestamp],
        "z": [t.z.video_id, t.z.index, t.z.timestamp],
        "z_prime": [t.z_prime.video_id, t.z_prime.index, t.z_prime.timestamp],
    }


# -- synthetic datasets on disk --------------------------------------------

def write_synthetic(dataset, out_dir) -> Path:
    """Feature files, manifest, ground-truth sidecar and generator config."""
    out_dir = Path(out_dir)
    manifest = write_dataset(out_dir, dataset.pairs)
    atomic_write(out_dir / "sidecar.json",
                 json.dumps(dataset.sidecar, sort_keys=True, separators=(",", ":")))
    atomic_write(out_dir / "synth.cfg", format_config({"synth": dataset.config.as_dict()}))
    return manifest


def read_sidecar(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"unreadable sidecar {path}: {exc}") from None
