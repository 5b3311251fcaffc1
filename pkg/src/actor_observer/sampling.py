"""Paired-stream indexing and triplet generation.

Third-person and first-person videos of a pair are recorded separately, so
correspondence is defined through a linear rescaling of the third-person
timeline onto the first-person one.
"""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (ConfigError, DegenerateVideoError, InfeasiblePairError,
                     IngestError, MalformedPairError, ScenarioMismatchError)

log = logging.getLogger(__name__)

THIRD = "third"
EGO = "ego"
MODALITIES = (THIRD, EGO)


@dataclass(frozen=True, eq=False)
class FrameRecord:
    video_id: str
    pair_id: str
    modality: str
    timestamp: float
    features: np.ndarray
    index: int = 0

    @property
    def key(self) -> tuple[str, str]:
        """Accumulator key of the video this frame belongs to."""
        return (self.video_id, self.modality)

    def canonical(self) -> tuple:
        return (self.pair_id, self.modality, self.video_id, self.index)


@dataclass(frozen=True, eq=False)
class TripletSample:
    x: FrameRecord
    z: FrameRecord
    z_prime: FrameRecord

    def canonical(self) -> tuple:
        return self.x.canonical() + self.z.canonical() + self.z_prime.canonical()


@dataclass(frozen=True)
class SamplerConfig:
    delta: float = 1.0
    delta_prime: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.delta < self.delta_prime:
            raise ConfigError(
                f"need 0 < delta < delta_prime, got {self.delta}, {self.delta_prime}")


@dataclass(eq=False)
class Video:
    video_id: str
    pair_id: str
    modality: str
    frames: list[FrameRecord]

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([f.timestamp for f in self.frames], dtype=np.float64)

    @property
    def features(self) -> np.ndarray:
        if not self.frames:
            return np.zeros((0, 0))
        return np.stack([f.features for f in self.frames])

    @property
    def duration(self) -> float:
        """Span of the timeline, taken as the last timestamp (videos start at 0)."""
        return float(self.frames[-1].timestamp) if self.frames else 0.0

    def __len__(self):
        return len(self.frames)

    @classmethod
    def from_arrays(cls, video_id: str, pair_id: str, modality: str,
                    timestamps, features) -> "Video":
        ts = np.asarray(timestamps, dtype=np.float64)
        feats = np.asarray(features, dtype=np.float64)
        frames = [FrameRecord(video_id, pair_id, modality, float(t), feats[i], i)
                  for i, t in enumerate(ts)]
        return cls(video_id, pair_id, modality, frames)


@dataclass(eq=False)
class VideoPair:
    pair_id: str
    third: Video
    ego: Video
    scenario: str | None = None
    labels: tuple[int, ...] = ()
    # (class id, start, end) on the third-person timeline, when known
    label_intervals: tuple[tuple[int, float, float], ...] = ()
    _cache: dict = field(default_factory=dict, repr=False)

    def video(self, modality: str) -> Video:
        return self.third if modality == THIRD else self.ego

    def frame_labels(self, n_classes: int) -> np.ndarray:
        """Multi-hot labels of each third-person frame.

        Frames take the classes whose interval covers their timestamp; without
        intervals every frame takes the video-level labels.
        """
        out = np.zeros((len(self.third), n_classes))
        for c in self.labels:
            if not 0 <= c < n_classes:
                raise ConfigError(f"label {c} outside [0, {n_classes})")
        if not self.label_intervals:
            out[:, list(self.labels)] = 1.0
            return out
        ts = self.third.timestamps
        last = ts[-1] if ts.size else 0.0
        for c, start, end in self.label_intervals:
            if not 0 <= c < n_classes:
                raise ConfigError(f"label {c} outside [0, {n_classes})")
            hit = (ts >= start) & ((ts < end) | ((end >= last) & (ts <= end)))
            out[hit, c] = 1.0
        return out


def build_pair_index(frames: Iterable[FrameRecord], scenarios: dict | None = None,
                     labels: dict | None = None) -> dict[str, VideoPair]:
    """Group frames into pairs.  Frames of a video must arrive in time order."""
    videos: dict[tuple[str, str], list[FrameRecord]] = {}
    video_ids: dict[tuple[str, str], str] = {}
    for fr in frames:
        if fr.modality not in MODALITIES:
            raise IngestError(f"unknown modality {fr.modality!r}")
        key = (fr.pair_id, fr.modality)
        if key in video_ids and video_ids[key] != fr.video_id:
            raise MalformedPairError(
                f"pair {fr.pair_id} has more than one {fr.modality} video")
        video_ids[key] = fr.video_id
        videos.setdefault(key, []).append(fr)
    pair_ids = sorted({pid for pid, _ in videos})
    index = {}
    dims = set()
    for pid in pair_ids:
        parts = {}
        for mod in MODALITIES:
            frs = videos.get((pid, mod))
            if not frs:
                raise MalformedPairError(f"pair {pid} lacks a {mod} video")
            ts = np.array([f.timestamp for f in frs])
            if np.any(np.diff(ts) < 0):
                raise IngestError(f"timestamps of {pid}/{mod} are not in time order")
            dims.update(f.features.shape[0] for f in frs)
            parts[mod] = Video(video_ids[(pid, mod)], pid, mod, list(frs))
        index[pid] = VideoPair(pid, parts[THIRD], parts[EGO],
                               scenario=(scenarios or {}).get(pid),
                               labels=tuple((labels or {}).get(pid, ())))
    if len(dims) > 1:
        raise IngestError(f"inconsistent feature dims {sorted(dims)}")
    return index


def _durations(third: Video, ego: Video) -> tuple[float, float]:
    d3, de = third.duration, ego.duration
    if d3 <= 0 or de <= 0:
        raise DegenerateVideoError(
            f"zero-duration video in {third.video_id}/{ego.video_id}")
    return d3, de


def _map(t, third: Video, ego: Video):
    # fraction first, so both endpoints map exactly
    d3, de = _durations(third, ego)
    return de * (np.asarray(t, dtype=np.float64) / d3)


def time_map(pair: VideoPair, t_third):
    """Third-person time -> first-person time by linear duration scaling."""
    out = _map(t_third, pair.third, pair.ego)
    return float(out) if out.ndim == 0 else out


def _candidates(third: Video, ego: Video, config: SamplerConfig):
    mapped = _map(third.timestamps, third, ego)
    gap = np.abs(mapped[:, None] - ego.timestamps[None, :])
    return mapped, gap < config.delta, gap > config.delta_prime


def _pair_rng(seed: int, *keys: str) -> np.random.Generator:
    entropy = [seed & 0xFFFFFFFF] + [zlib.crc32(k.encode()) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def worker_rng(seed: int, worker_id: int) -> np.random.Generator:
    return np.random.default_rng(seed ^ worker_id)


def sample_triplet(pair: VideoPair, config: SamplerConfig,
                   rng: np.random.Generator) -> TripletSample:
    """Draw one triplet uniformly from the valid triplet domain of the pair.

    The anchor is uniform over third-person frames that admit at least one
    positive and one negative.
    """
    key = ("sample", config.delta, config.delta_prime)
    cached = pair._cache.get(key)
    if cached is None:
        _, pos, neg = _candidates(pair.third, pair.ego, config)
        ok = np.flatnonzero(pos.any(axis=1) & neg.any(axis=1))
        cached = (ok, [np.flatnonzero(r) for r in pos], [np.flatnonzero(r) for r in neg])
        pair._cache[key] = cached
    ok, pos, neg = cached
    if ok.size == 0:
        raise InfeasiblePairError(f"pair {pair.pair_id} has no valid triplet")
    i = int(ok[rng.integers(ok.size)])
    j = int(pos[i][rng.integers(pos[i].size)])
    jn = int(neg[i][rng.integers(neg[i].size)])
    return TripletSample(pair.third.frames[i], pair.ego.frames[j], pair.ego.frames[jn])


def _enumerate(third: Video, ego: Video, config: SamplerConfig,
               rng: np.random.Generator) -> list[TripletSample]:
    mapped, pos, neg = _candidates(third, ego, config)
    ego_ts = ego.timestamps
    out = []
    for i in range(len(third)):
        negs = np.flatnonzero(neg[i])
        if negs.size == 0 or not pos[i].any():
            continue
        j = int(np.argmin(np.abs(ego_ts - mapped[i])))
        jn = int(negs[rng.integers(negs.size)])
        out.append(TripletSample(third.frames[i], ego.frames[j], ego.frames[jn]))
    if not out:
        raise InfeasiblePairError(
            f"no test triplet for {third.video_id}/{ego.video_id}")
    return out


def enumerate_test_triplets(pair: VideoPair, config: SamplerConfig) -> list[TripletSample]:
    """One triplet per usable third-person frame, with the best-matching positive.

    Frames lacking a positive within delta or any negative are skipped.
    """
    return _enumerate(pair.third, pair.ego, config, _pair_rng(config.seed, pair.pair_id))


def cross_person_triplets(pair_a: VideoPair, pair_b: VideoPair,
                          config: SamplerConfig) -> list[TripletSample]:
    """Third-person frames of ``pair_a`` against the first-person video of ``pair_b``."""
    if pair_a is pair_b or pair_a.pair_id == pair_b.pair_id:
        return enumerate_test_triplets(pair_a, config)
    if pair_a.scenario is None or pair_a.scenario != pair_b.scenario:
        raise ScenarioMismatchError(
            f"pairs {pair_a.pair_id} and {pair_b.pair_id} do not share a scenario")
    rng = _pair_rng(config.seed, pair_a.pair_id, pair_b.pair_id)
    return _enumerate(pair_a.third, pair_b.ego, config, rng)


def validate_triplet(t: TripletSample, config: SamplerConfig,
                     third: Video, ego: Video) -> None:
    """Raise if the triplet violates the window constraints of its videos."""
    m = float(_map(t.x.timestamp, third, ego))
    if t.x.modality != THIRD or t.z.modality != EGO or t.z_prime.modality != EGO:
        raise MalformedPairError("triplet modalities must be (third, ego, ego)")
    if t.z.video_id != t.z_prime.video_id:
        raise MalformedPairError("positive and negative must come from one video")
    if not abs(m - t.z.timestamp) < config.delta:
        raise InfeasiblePairError("positive outside the delta window")
    if not abs(m - t.z_prime.timestamp) > config.delta_prime:
        raise InfeasiblePairError("negative inside the delta' exclusion")


def split_pairs(pair_ids: Sequence[str], test_fraction: float = 0.2,
                seed: int = 0) -> tuple[list[str], list[str]]:
    """Seeded train/test split by pair id."""
    ids = sorted(pair_ids)
    order = np.random.default_rng(seed).permutation(len(ids))
    n_test = int(round(test_fraction * len(ids)))
    test = sorted(ids[i] for i in order[:n_test])
    train = sorted(ids[i] for i in order[n_test:])
    return train, test


def epoch_triplets(pairs: Sequence[VideoPair], config: SamplerConfig,
                   rng: np.random.Generator, per_pair: int | None = None) -> list[TripletSample]:
    """Uniform triplet draws for one epoch, shuffled across pairs.

    Infeasible pairs are skipped with a warning.
    """
    out = []
    for pair in pairs:
        n = len(pair.third) if per_pair is None else per_pair
        try:
            out.extend(sample_triplet(pair, config, rng) for _ in range(n))
        except InfeasiblePairError as exc:
            log.warning("skipping pair: %s", exc)
    order = rng.permutation(len(out))
    return [out[i] for i in order]
