"""Per-video sample selector: exact VideoSoftmax, its online form, and gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Iterable

import numpy as np

from .errors import ConstraintError, EmptyVideoError, NumericError

DEFAULT_K = 0.1
SCALE_FLOOR = 0.01
SCALE_INIT_SIGMA = 5.0


@dataclass
class SelectorHead:
    """Linear score on an embedding followed by ``scale * tanh``.

    ``scale`` is stored as a one-element array so it can be perturbed in place.
    """

    weight: np.ndarray  # (1, embed_dim)
    bias: np.ndarray  # (1,)
    scale: np.ndarray  # (1,)

    @classmethod
    def initialize(cls, embed_dim: int, rng: np.random.Generator,
                   weight_sigma: float = 0.01,
                   scale_sigma: float = SCALE_INIT_SIGMA) -> "SelectorHead":
        scale = max(abs(rng.normal(0.0, scale_sigma)), SCALE_FLOOR)
        return cls(weight=rng.normal(0.0, weight_sigma, size=(1, embed_dim)),
                   bias=np.zeros(1), scale=np.array([scale]))

    def project(self) -> None:
        np.maximum(self.scale, SCALE_FLOOR, out=self.scale)


def video_softmax_exact(scores) -> np.ndarray:
    """Softmax over all frames of a single video."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if s.size == 0:
        raise EmptyVideoError("VideoSoftmax over a video with no frames")
    if not np.all(np.isfinite(s)):
        raise NumericError("non-finite selector score")
    e = np.exp(s - s.max())
    return e / e.sum()


def video_softmax_by_group(scores, groups) -> np.ndarray:
    """Exact VideoSoftmax applied independently within each group label."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    out = np.empty_like(scores)
    groups = list(groups)
    if len(groups) != scores.size:
        raise ValueError("one group label per score required")
    index: dict = {}
    for i, g in enumerate(groups):
        index.setdefault(g, []).append(i)
    for idx in index.values():
        out[idx] = video_softmax_exact(scores[idx])
    return out


@dataclass
class VideoAccumulator:
    """Running normalizer of one video's online VideoSoftmax."""

    video_id: Hashable
    sigma: float = 0.0
    count: int = 0
    k: float = DEFAULT_K
    init: str = "first"  # "first": sigma <- e^f on first sight; "one": sigma starts at 1.0

    def __post_init__(self):
        if not 0.0 < self.k <= 1.0:
            raise ConstraintError(f"k must lie in (0, 1], got {self.k}")
        if self.init not in ("first", "one"):
            raise ConstraintError(f"unknown accumulator init {self.init!r}")


def accumulator_update(acc: VideoAccumulator, f: float) -> tuple[float, VideoAccumulator]:
    """Fold one score into the running normalizer; returns (p/k, new accumulator)."""
    ef = math.exp(f)
    if acc.count == 0:
        sigma = ef if acc.init == "first" else acc.k * ef + (1.0 - acc.k)
    else:
        sigma = acc.k * ef + (1.0 - acc.k) * acc.sigma
    new = VideoAccumulator(acc.video_id, sigma, acc.count + 1, acc.k, acc.init)
    return ef / sigma, new


class AccumulatorBank:
    """All per-video accumulators, keyed by (video id, modality)."""

    def __init__(self, k: float = DEFAULT_K, init: str = "first"):
        self.k = k
        self.init = init
        self._accs: dict[tuple, VideoAccumulator] = {}

    def __len__(self):
        return len(self._accs)

    def __contains__(self, key):
        return key in self._accs

    def __getitem__(self, key) -> VideoAccumulator:
        return self._accs[key]

    def get(self, key) -> VideoAccumulator:
        acc = self._accs.get(key)
        if acc is None:
            acc = VideoAccumulator(key, k=self.k, init=self.init)
        return acc

    def observe(self, key, f: float) -> float:
        p_over_k, acc = accumulator_update(self.get(key), f)
        self._accs[key] = acc
        return p_over_k

    def items(self) -> Iterable[tuple[tuple, VideoAccumulator]]:
        return sorted(self._accs.items(), key=lambda kv: tuple(str(x) for x in kv[0]))

    def set(self, acc: VideoAccumulator) -> None:
        self._accs[acc.video_id] = acc

    def reset(self) -> None:
        self._accs.clear()


def triplet_weight(p_x: float, p_z: float, p_zp: float) -> float:
    """Factorized selector value of a triplet, in p/k units."""
    if p_x <= 0 or p_z <= 0 or p_zp <= 0:
        raise ConstraintError("selector weights must be positive")
    return p_x * p_z * p_zp


def selector_gradient(p: float, l: float, L: float) -> float:
    """Gradient of the weighted objective w.r.t. a pre-softmax score."""
    if p <= 0:
        raise ConstraintError("selector weight must be positive")
    return p * (l - L)
