"""Correspondence, alignment and zero-shot evaluation protocols.

Models are duck-typed: anything with ``embed_frames(frames)`` and
``frame_scores(frames, role=None)`` works, which lets the planted-latent
oracle and random baselines run through the same code.
"""
from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit

from .errors import ConfigError, DegenerateVideoError, ModeError
from .sampling import FrameRecord, TripletSample, Video, VideoPair
from .selector import video_softmax_exact

DEFAULT_FRACTIONS = (0.5, 0.1, 0.05)


@dataclass
class CorrespondenceResult:
    accuracy_all: float
    accuracy_at: dict[float, float]
    n_triplets: int
    weighting: str = "selector"


@dataclass
class AlignmentResult:
    per_pair_error: dict[str, float]
    median_error: float
    mean_error: float


@dataclass
class ZeroShotResult:
    per_class_ap: np.ndarray  # NaN for classes without positives
    map: float
    n_videos: int = 0
    classes_used: int = 0


@dataclass(frozen=True)
class AlignmentChoice:
    ego_start: float
    third_start: float
    error: float
    score: float = float("nan")


# -- correspondence -------------------------------------------------------

def baseline_weight(d_pos: float, d_neg: float) -> float:
    """Distance margin used to rank triplets for the baseline rows."""
    return d_neg - d_pos


def _videos_of(triplets: Sequence[TripletSample]) -> dict[tuple, list[FrameRecord]]:
    """Frames per video as they appear in the triplets (fallback normalization set)."""
    seen: dict[tuple, dict[int, FrameRecord]] = {}
    for t in triplets:
        for fr in (t.x, t.z, t.z_prime):
            seen.setdefault(fr.key, {})[fr.index] = fr
    return {k: [v[i] for i in sorted(v)] for k, v in seen.items()}


def frame_softmax(model, frames: Sequence[FrameRecord], role: str | None = None) -> np.ndarray:
    """Exact VideoSoftmax of the model's selector over the frames of one video."""
    return video_softmax_exact(model.frame_scores(frames, role))


def selector_weights(model, triplets: Sequence[TripletSample],
                     videos: dict[tuple, Sequence[FrameRecord]] | None = None) -> np.ndarray:
    """p(x) p(z) p(z') with each factor the exact softmax over its whole video."""
    videos = videos if videos is not None else _videos_of(triplets)
    tables: dict[tuple, dict[int, float]] = {}

    def prob(fr: FrameRecord, role: str) -> float:
        key = fr.key + (role,)
        if key not in tables:
            frames = videos[fr.key]
            p = frame_softmax(model, frames, role)
            tables[key] = {f.index: float(v) for f, v in zip(frames, p)}
        return tables[key][fr.index]

    return np.array([prob(t.x, "x") * prob(t.z, "z") * prob(t.z_prime, "zp")
                     for t in triplets])


def triplet_distances(model, triplets: Sequence[TripletSample]) -> tuple[np.ndarray, np.ndarray]:
    ex = model.embed_frames([t.x for t in triplets])
    ez = model.embed_frames([t.z for t in triplets])
    ezp = model.embed_frames([t.z_prime for t in triplets])
    return np.linalg.norm(ex - ez, axis=1), np.linalg.norm(ex - ezp, axis=1)


def top_fraction_indices(weights, keys: Sequence[tuple], fraction: float) -> np.ndarray:
    """Indices of the ceil(fraction * n) highest weights; ties by canonical key."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"selection fraction must lie in (0, 1], got {fraction}")
    n = len(keys)
    order = sorted(range(n), key=lambda i: (-weights[i], keys[i]))
    return np.asarray(order[:max(1, math.ceil(fraction * n - 1e-9))], dtype=int)


def correspondence_accuracy(model, triplets: Sequence[TripletSample],
                            fractions: Iterable[float] = DEFAULT_FRACTIONS,
                            weighting: str = "selector",
                            videos: dict | None = None) -> CorrespondenceResult:
    """Fraction of triplets with d_pos < d_neg, overall and on top-weighted subsets.

    ``weighting`` picks the ranking: ``"selector"`` (learned triplet weight),
    ``"margin"`` (|d_neg - d_pos| on the model's embeddings) or
    ``"feature_margin"`` (the same on raw input features).
    """
    fractions = list(fractions)
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ConfigError(f"selection fraction must lie in (0, 1], got {f}")
    if not triplets:
        raise ConfigError("no triplets to evaluate")
    d_pos, d_neg = triplet_distances(model, triplets)
    correct = d_pos < d_neg
    if weighting == "selector":
        w = selector_weights(model, triplets, videos)
    elif weighting == "margin":
        w = np.abs([baseline_weight(a, b) for a, b in zip(d_pos, d_neg)])
    elif weighting == "feature_margin":
        fx = np.stack([t.x.features for t in triplets])
        fp = np.linalg.norm(fx - np.stack([t.z.features for t in triplets]), axis=1)
        fn = np.linalg.norm(fx - np.stack([t.z_prime.features for t in triplets]), axis=1)
        w = np.abs([baseline_weight(a, b) for a, b in zip(fp, fn)])
    else:
        raise ConfigError(f"unknown weighting {weighting!r}")
    keys = [t.canonical() for t in triplets]
    acc_at = {}
    for f in fractions:
        idx = top_fraction_indices(w, keys, f)
        acc_at[f] = float(np.mean(correct[idx]))
    return CorrespondenceResult(float(np.mean(correct)), acc_at, len(triplets), weighting)


def pair_videos(pairs: Iterable[VideoPair]) -> dict[tuple, list[FrameRecord]]:
    out = {}
    for p in pairs:
        for v in (p.third, p.ego):
            out[(v.video_id, v.modality)] = v.frames
    return out


# -- alignment ------------------------------------------------------------

def _windows(ts: np.ndarray, window: float, min_frames: int | None) -> tuple[np.ndarray, np.ndarray]:
    """[start, stop) frame ranges of every window that fits inside the video."""
    duration = ts[-1] - ts[0]
    if len(ts) < 2 or duration < window - 1e-9:
        raise DegenerateVideoError(f"video of {duration:.3f}s is shorter than a {window}s moment")
    starts = np.flatnonzero(ts + window <= ts[-1] + 1e-9)
    stops = np.searchsorted(ts, ts[starts] + window - 1e-9, side="left")
    if min_frames:
        stops = np.maximum(stops, np.minimum(starts + min_frames, len(ts)))
    stops = np.maximum(stops, starts + 1)
    return starts, stops


def align_videos(emb_third: np.ndarray, ts_third: np.ndarray, emb_ego: np.ndarray,
                 ts_ego: np.ndarray, window: float = 1.0,
                 frame_rate_hint: float | None = None) -> AlignmentChoice:
    """Best-matching pair of one-second moments by mean cross-modal distance."""
    ts_third = np.asarray(ts_third, dtype=np.float64)
    ts_ego = np.asarray(ts_ego, dtype=np.float64)
    min_frames = int(round(frame_rate_hint * window)) if frame_rate_hint else None
    a, b = _windows(ts_third, window, min_frames)
    c, e = _windows(ts_ego, window, min_frames)
    dist = cdist(emb_third, emb_ego)
    prefix = np.zeros((dist.shape[0] + 1, dist.shape[1] + 1))
    prefix[1:, 1:] = dist.cumsum(0).cumsum(1)
    A, B, C, E = a[:, None], b[:, None], c[None, :], e[None, :]
    block = prefix[B, E] - prefix[A, E] - prefix[B, C] + prefix[A, C]
    score = block / ((B - A) * (E - C))
    i, j = np.unravel_index(int(np.argmin(score)), score.shape)
    t3 = float(ts_third[a[i]])
    te = float(ts_ego[c[j]])
    d3, de = ts_third[-1], ts_ego[-1]
    truth = d3 * (te / de)  # ego moment mapped onto the third-person timeline
    return AlignmentChoice(te, t3, abs(t3 - truth), float(score[i, j]))


def align_pair(model, pair: VideoPair, frame_rate_hint: float | None = None,
               window: float = 1.0, ego_video: Video | None = None) -> AlignmentChoice:
    """Align a one-second moment between the pair's videos.

    ``ego_video`` substitutes another actor's first-person video of the same
    script (the cross-person protocol).
    """
    ego = ego_video or pair.ego
    return align_videos(model.embed_frames(pair.third.frames), pair.third.timestamps,
                        model.embed_frames(ego.frames), ego.timestamps, window,
                        frame_rate_hint)


def alignment_errors(model, pairs: Sequence[VideoPair], **kw) -> AlignmentResult:
    errs = {p.pair_id: align_pair(model, p, **kw).error for p in pairs}
    vals = np.array(list(errs.values()))
    return AlignmentResult(errs, float(np.median(vals)), float(np.mean(vals)))


def random_alignment_errors(pairs: Sequence[VideoPair], draws_per_pair: int,
                            rng: np.random.Generator, window: float = 1.0) -> np.ndarray:
    """Errors of uniformly random moment pairs: the chance-level baseline."""
    out = []
    for p in pairs:
        ts3, tse = p.third.timestamps, p.ego.timestamps
        a, _ = _windows(ts3, window, None)
        c, _ = _windows(tse, window, None)
        i = rng.integers(a.size, size=draws_per_pair)
        j = rng.integers(c.size, size=draws_per_pair)
        t3, te = ts3[a[i]], tse[c[j]]
        out.append(np.abs(t3 - ts3[-1] * (te / tse[-1])))
    return np.concatenate(out)


# -- zero-shot recognition ------------------------------------------------

def zero_shot_predict(model, frames: Sequence[FrameRecord]) -> np.ndarray:
    """Mean over frames of per-class probabilities from the classifier head."""
    if getattr(model, "classifier", None) is None:
        raise ModeError("model has no classifier head")
    if not frames:
        raise ConfigError("cannot pool an empty video")
    emb = model.embed_frames(frames)
    return expit(model.classifier_logits(emb)).mean(axis=0)


def average_precision(scores, labels) -> float:
    """Non-interpolated AP; ties broken by video index.  NaN with no positives.

    Precisions are summed as exact rationals, so the result is the correctly
    rounded AP regardless of ranking length.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    order = np.argsort(-scores, kind="stable")
    hits = labels[order] > 0
    n_pos = int(hits.sum())
    if n_pos == 0:
        return float("nan")
    ranks = (np.flatnonzero(hits) + 1).tolist()
    total = sum((Fraction(i, r) for i, r in enumerate(ranks, 1)), Fraction(0))
    return float(total / n_pos)


def video_map(scores, labels) -> ZeroShotResult:
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    labels = np.atleast_2d(np.asarray(labels))
    if scores.shape != labels.shape or scores.shape[0] == 0:
        raise ConfigError(f"score shape {scores.shape} and label shape {labels.shape} disagree")
    ap = np.array([average_precision(scores[:, c], labels[:, c])
                   for c in range(scores.shape[1])])
    used = ~np.isnan(ap)
    m = float(np.mean(ap[used])) if used.any() else float("nan")
    return ZeroShotResult(ap, m, scores.shape[0], int(used.sum()))


def zero_shot_map(model, pairs: Sequence[VideoPair], n_classes: int) -> ZeroShotResult:
    scores = np.stack([zero_shot_predict(model, p.ego.frames) for p in pairs])
    labels = np.zeros((len(pairs), n_classes), dtype=int)
    for i, p in enumerate(pairs):
        labels[i, list(p.labels)] = 1
    return video_map(scores, labels)


# -- retrieval ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Neighbor:
    frame: FrameRecord
    distance: float
    index: int


def nearest_neighbors(model, query: FrameRecord, gallery: Sequence[FrameRecord],
                      k: int) -> list[Neighbor]:
    if k <= 0:
        raise ConfigError("k must be positive")
    if not gallery:
        raise ConfigError("empty gallery")
    k = min(k, len(gallery))
    q = model.embed_frames([query])[0]
    d = np.linalg.norm(model.embed_frames(gallery) - q, axis=1)
    order = np.argsort(d, kind="stable")[:k]
    return [Neighbor(gallery[i], float(d[i]), int(i)) for i in order]


# -- selector diagnostics -------------------------------------------------

@dataclass
class InformativenessResult:
    mean_informative: float
    mean_uninformative: float
    ratio: float
    per_video: list = field(default_factory=list)


def selector_informativeness(model, pairs: Sequence[VideoPair], sidecar: dict) -> InformativenessResult:
    """Mean normalized selector weight (p * n_frames) on planted informative vs other frames."""
    inf, uninf = [], []
    for p in pairs:
        for video in (p.third, p.ego):
            mask = np.asarray(sidecar[p.pair_id][video.modality]["informative"], dtype=bool)
            w = frame_softmax(model, video.frames) * len(video)
            inf.extend(w[mask])
            uninf.extend(w[~mask])
    mi, mu = float(np.mean(inf)), float(np.mean(uninf))
    return InformativenessResult(mi, mu, mi / mu if mu > 0 else float("inf"))
