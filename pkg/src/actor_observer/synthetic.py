"""Planted paired-stream generator for desk-scale verification.

Each scenario is a script: a sequence of action segments, each tied to a
latent class center.  Every pair acting out the script gets its own video
durations, informative-frame masks and noise.  Informative frames carry a
modality-specific linear view of the latent; uninformative frames are noise.
"""
from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError
from .sampling import EGO, THIRD, Video, VideoPair


@dataclass(frozen=True)
class SyntheticConfig:
    n_pairs: int = 100
    frames_per_video: int = 64
    duration_seconds: float = 31.2
    latent_dim: int = 8
    feature_dim: int = 32
    informative_fraction: float = 0.5
    domain_noise_scale: float = 0.1
    uninformative_noise_scale: float = 1.0
    n_classes: int = 24
    seed: int = 0
    pairs_per_scenario: int = 2
    modality_gap: float = 0.5
    center_offset: float = 1.0
    center_radius: float = 1.5
    identity_transforms: bool = False
    segment_min_seconds: float = 4.0
    segment_max_seconds: float = 7.0
    duration_jitter: float = 0.15
    ego_duration_jitter: float = 0.1

    def __post_init__(self):
        for name in ("n_pairs", "frames_per_video", "duration_seconds", "latent_dim",
                     "feature_dim", "n_classes", "pairs_per_scenario", "segment_min_seconds"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.frames_per_video < 2:
            raise ConfigError("need at least two frames per video")
        if not 0.0 < self.informative_fraction <= 1.0:
            raise ConfigError("informative_fraction must lie in (0, 1]")
        for name in ("domain_noise_scale", "uninformative_noise_scale", "modality_gap",
                     "duration_jitter", "ego_duration_jitter"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.segment_max_seconds < self.segment_min_seconds:
            raise ConfigError("segment_max_seconds < segment_min_seconds")
        if self.identity_transforms and self.feature_dim < self.latent_dim:
            raise ConfigError("identity transforms need feature_dim >= latent_dim")
        if not 0.0 <= self.duration_jitter < 1.0 or not 0.0 <= self.ego_duration_jitter < 1.0:
            raise ConfigError("duration jitters must lie in [0, 1)")

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "SyntheticConfig":
        unknown = set(values) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown synthetic keys: {sorted(unknown)}")
        return cls(**values)


@dataclass
class SyntheticDataset:
    config: SyntheticConfig
    pairs: dict[str, VideoPair]
    sidecar: dict  # pair_id -> ground truth (JSON-serializable)


def _script(cfg: SyntheticConfig, rng: np.random.Generator) -> list[tuple[int, float, float]]:
    """Segments as (class id, start fraction, end fraction)."""
    lengths = []
    while sum(lengths) < cfg.duration_seconds:
        lengths.append(rng.uniform(cfg.segment_min_seconds, cfg.segment_max_seconds))
    lengths[-1] -= sum(lengths) - cfg.duration_seconds
    # distinct classes inside a script while the class pool allows it
    if len(lengths) <= cfg.n_classes:
        classes = rng.choice(cfg.n_classes, size=len(lengths), replace=False)
    else:
        classes = rng.integers(cfg.n_classes, size=len(lengths))
    edges = np.concatenate([[0.0], np.cumsum(lengths)]) / cfg.duration_seconds
    edges[-1] = 1.0
    return [(int(c), float(edges[i]), float(edges[i + 1])) for i, c in enumerate(classes)]


def _segment_at(script, s: np.ndarray) -> np.ndarray:
    ends = np.array([seg[2] for seg in script])
    return np.minimum(np.searchsorted(ends, s, side="right"), len(script) - 1)


def synthesize(cfg: SyntheticConfig) -> SyntheticDataset:
    """Build the whole dataset in memory; a pure function of ``cfg``."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5E7]))
    # points on a sphere around a common offset: every class is a hull vertex,
    # hence linearly separable from the rest
    directions = rng.normal(size=(cfg.n_classes, cfg.latent_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centers = cfg.center_offset + cfg.center_radius * directions
    if cfg.identity_transforms:
        a_third = np.zeros((cfg.feature_dim, cfg.latent_dim))
        a_third[:cfg.latent_dim] = np.eye(cfg.latent_dim)
        a_ego = a_third.copy()
    else:
        a_third = rng.normal(0.0, 1.0 / np.sqrt(cfg.latent_dim), (cfg.feature_dim, cfg.latent_dim))
        a_ego = a_third + cfg.modality_gap * rng.normal(
            0.0, 1.0 / np.sqrt(cfg.latent_dim), (cfg.feature_dim, cfg.latent_dim))
    transforms = {THIRD: a_third, EGO: a_ego}

    n = cfg.frames_per_video
    pairs: dict[str, VideoPair] = {}
    sidecar: dict = {}
    scripts: dict[int, list] = {}
    for p in range(cfg.n_pairs):
        scen = p // cfg.pairs_per_scenario
        if scen not in scripts:
            scripts[scen] = _script(cfg, rng)
        script = scripts[scen]
        pair_id = f"p{p:04d}"
        d3 = cfg.duration_seconds * rng.uniform(1 - cfg.duration_jitter, 1 + cfg.duration_jitter)
        de = d3 * rng.uniform(1 - cfg.ego_duration_jitter, 1 + cfg.ego_duration_jitter)
        videos, truth = {}, {}
        for mod, dur in ((THIRD, d3), (EGO, de)):
            ts = np.arange(n) * (dur / (n - 1))
            ts[-1] = dur
            seg = _segment_at(script, ts / dur)
            latents = centers[[script[i][0] for i in seg]]
            informative = rng.random(n) < cfg.informative_fraction
            feats = latents @ transforms[mod].T + cfg.domain_noise_scale * rng.normal(
                size=(n, cfg.feature_dim))
            noise = cfg.uninformative_noise_scale * rng.normal(size=(n, cfg.feature_dim))
            feats = np.where(informative[:, None], feats, noise)
            vid = f"{pair_id}_{mod}"
            videos[mod] = Video.from_arrays(vid, pair_id, mod, ts, feats)
            truth[mod] = {
                "video_id": vid,
                "duration": float(dur),
                "informative": informative.astype(int).tolist(),
                "frame_class": [script[i][0] for i in seg],
                "latents": latents.tolist(),
            }
        labels = tuple(sorted({c for c, _, _ in script}))
        scenario = f"s{scen:04d}"
        intervals = tuple((c, a * d3, b * d3) for c, a, b in script)
        pairs[pair_id] = VideoPair(pair_id, videos[THIRD], videos[EGO], scenario, labels,
                                   intervals)
        sidecar[pair_id] = {"scenario": scenario, "labels": list(labels),
                            "script": [list(s) for s in script], **truth}
    return SyntheticDataset(cfg, pairs, sidecar)


class LatentOracle:
    """Stand-in model that embeds every frame as its planted latent."""

    def __init__(self, sidecar: dict):
        self._latents = {}
        for truth in sidecar.values():
            for mod in (THIRD, EGO):
                lat = np.asarray(truth[mod]["latents"], dtype=np.float64)
                self._latents[truth[mod]["video_id"]] = lat
        self.embed_dim = next(iter(self._latents.values())).shape[1]

    def embed_frames(self, frames) -> np.ndarray:
        return np.stack([self._latents[f.video_id][f.index] for f in frames])

    def frame_scores(self, frames, role=None) -> np.ndarray:
        return np.zeros(len(frames))


class FeatureIdentity:
    """Stand-in model whose embedding is the raw feature vector."""

    def embed_frames(self, frames) -> np.ndarray:
        return np.stack([f.features for f in frames])

    def frame_scores(self, frames, role=None) -> np.ndarray:
        return np.zeros(len(frames))


class RandomEmbedding:
    """Every frame gets an independent Gaussian embedding (a random metric).

    Rows come from one generator per video, so a frame's vector depends only
    on (seed, video id, frame index).
    """

    def __init__(self, dim: int = 16, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._cache: dict = {}  # video id -> (generator, rows drawn so far)

    def _rows(self, video_id: str, upto: int) -> np.ndarray:
        rng, rows = self._cache.get(video_id, (None, None))
        if rng is None:
            rng = np.random.default_rng(np.random.SeedSequence(
                [self.seed, zlib.crc32(video_id.encode())]))
            rows = np.empty((0, self.dim))
        if rows.shape[0] < upto:
            rows = np.vstack([rows, rng.normal(size=(max(upto, 64) - rows.shape[0], self.dim))])
        self._cache[video_id] = (rng, rows)
        return rows

    def embed_frames(self, frames) -> np.ndarray:
        out = np.empty((len(frames), self.dim))
        for i, f in enumerate(frames):
            out[i] = self._rows(f.video_id, f.index + 1)[f.index]
        return out

    def frame_scores(self, frames, role=None) -> np.ndarray:
        return self.embed_frames(frames)[:, 0]
