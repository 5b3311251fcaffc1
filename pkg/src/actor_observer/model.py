"""Three-stream embedding model with selector heads and an optional classifier.

Parameters live in named groups; streams refer to groups through a sharing
map, so aliased streams hold the very same arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import ModeError, ShapeError
from .mathops import (AffineLayer, GradientBlock, affine_backward, affine_forward,
                      l2_distance, l2_distance_backward, scaled_tanh,
                      scaled_tanh_backward)
from .objective import triplet_loss
from .sampling import EGO, THIRD, FrameRecord, TripletSample
from .selector import SCALE_FLOOR, SCALE_INIT_SIGMA, SelectorHead

# selector roles: anchor, positive, negative
ROLES = ("x", "z", "zp")
ROLE_MODALITY = {"x": THIRD, "z": EGO, "zp": EGO}


@dataclass
class ModelParameters:
    groups: dict[str, dict[str, np.ndarray]]
    trunk_map: dict[str, str]  # modality -> trunk group
    selector_map: dict[str, str]  # role -> selector group
    classifier: str | None = None  # classifier group name, when present

    @classmethod
    def initialize(cls, feature_dim: int, hidden_dim: int = 128, embed_dim: int = 128,
                   rng: np.random.Generator | None = None, *, share_trunk: bool = True,
                   share_ego_selector: bool = True, n_classes: int | None = None,
                   scale_init_sigma: float = SCALE_INIT_SIGMA,
                   selector_weight_sigma: float = 0.01) -> "ModelParameters":
        rng = np.random.default_rng(0) if rng is None else rng

        def trunk():
            return {
                "w1": rng.normal(0.0, 1.0 / np.sqrt(feature_dim), (hidden_dim, feature_dim)),
                "b1": np.zeros(hidden_dim),
                "w2": rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), (embed_dim, hidden_dim)),
                "b2": np.zeros(embed_dim),
            }

        def selector():
            head = SelectorHead.initialize(embed_dim, rng, selector_weight_sigma,
                                           scale_init_sigma)
            return {"weight": head.weight, "bias": head.bias, "scale": head.scale}

        groups: dict[str, dict[str, np.ndarray]] = {}
        if share_trunk:
            groups["trunk"] = trunk()
            trunk_map = {THIRD: "trunk", EGO: "trunk"}
        else:
            groups["trunk_third"] = trunk()
            groups["trunk_ego"] = trunk()
            trunk_map = {THIRD: "trunk_third", EGO: "trunk_ego"}
        groups["sel_third"] = selector()
        if share_ego_selector:
            groups["sel_ego"] = selector()
            selector_map = {"x": "sel_third", "z": "sel_ego", "zp": "sel_ego"}
        else:
            groups["sel_ego_pos"] = selector()
            groups["sel_ego_neg"] = selector()
            selector_map = {"x": "sel_third", "z": "sel_ego_pos", "zp": "sel_ego_neg"}
        classifier = None
        if n_classes:
            groups["classifier"] = {
                "weight": rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (n_classes, embed_dim)),
                "bias": np.zeros(n_classes),
            }
            classifier = "classifier"
        return cls(groups, trunk_map, selector_map, classifier)

    # -- introspection -------------------------------------------------

    @property
    def feature_dim(self) -> int:
        return self.groups[self.trunk_map[THIRD]]["w1"].shape[1]

    @property
    def embed_dim(self) -> int:
        return self.groups[self.trunk_map[THIRD]]["w2"].shape[0]

    @property
    def n_classes(self) -> int | None:
        return None if self.classifier is None else self.groups[self.classifier]["bias"].size

    def named_parameters(self) -> dict[str, np.ndarray]:
        return {f"{g}.{n}": a for g in sorted(self.groups) for n, a in sorted(self.groups[g].items())}

    def copy(self) -> "ModelParameters":
        groups = {g: {n: a.copy() for n, a in ps.items()} for g, ps in self.groups.items()}
        return ModelParameters(groups, dict(self.trunk_map), dict(self.selector_map),
                               self.classifier)

    def project(self) -> None:
        """Keep every tanh scale above the floor."""
        for g in set(self.selector_map.values()):
            np.maximum(self.groups[g]["scale"], SCALE_FLOOR, out=self.groups[g]["scale"])

    # -- forward pieces ------------------------------------------------

    def _trunk_layers(self, modality: str):
        p = self.groups[self.trunk_map[modality]]
        return AffineLayer(p["w1"], p["b1"]), AffineLayer(p["w2"], p["b2"])

    def embed(self, features, modality: str) -> np.ndarray:
        return self._embed(features, modality)[0]

    def _embed(self, features, modality: str):
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if x.shape[1] != self.feature_dim:
            raise ShapeError(f"feature dim {x.shape[1]} != model input dim {self.feature_dim}")
        l1, l2 = self._trunk_layers(modality)
        h = np.tanh(affine_forward(l1, x))
        return affine_forward(l2, h), (x, h)

    def _trunk_backward(self, modality: str, cache, d_emb) -> GradientBlock:
        x, h = cache
        l1, l2 = self._trunk_layers(modality)
        g2, dh = affine_backward(l2, h, d_emb)
        g1, _ = affine_backward(l1, x, dh * (1.0 - h * h))
        name = self.trunk_map[modality]
        return GradientBlock({f"{name}.w1": g1["weight"], f"{name}.b1": g1["bias"],
                              f"{name}.w2": g2["weight"], f"{name}.b2": g2["bias"]})

    def selector_scores(self, embeddings, role: str) -> np.ndarray:
        return self._scores(embeddings, role)[0]

    def _scores(self, embeddings, role: str):
        p = self.groups[self.selector_map[role]]
        raw = affine_forward(AffineLayer(p["weight"], p["bias"]), np.atleast_2d(embeddings))[:, 0]
        return scaled_tanh(raw, p["scale"][0]), raw

    def _selector_backward(self, role: str, emb, raw, d_f) -> tuple[GradientBlock, np.ndarray]:
        name = self.selector_map[role]
        p = self.groups[name]
        d_raw, d_scale = scaled_tanh_backward(raw, p["scale"][0], d_f)
        g, d_emb = affine_backward(AffineLayer(p["weight"], p["bias"]), emb, d_raw[:, None])
        return GradientBlock({f"{name}.weight": g["weight"], f"{name}.bias": g["bias"],
                              f"{name}.scale": np.array([np.sum(d_scale)])}), d_emb

    def classifier_logits(self, embeddings) -> np.ndarray:
        if self.classifier is None:
            raise ModeError("model has no classifier head")
        p = self.groups[self.classifier]
        return affine_forward(AffineLayer(p["weight"], p["bias"]), np.atleast_2d(embeddings))

    # -- frame-level helpers used by evaluation --------------------------

    def embed_frames(self, frames: Sequence[FrameRecord]) -> np.ndarray:
        out = np.empty((len(frames), self.embed_dim))
        for mod in (THIRD, EGO):
            idx = [i for i, f in enumerate(frames) if f.modality == mod]
            if idx:
                out[idx] = self.embed(np.stack([frames[i].features for i in idx]), mod)
        return out

    def frame_scores(self, frames: Sequence[FrameRecord], role: str | None = None) -> np.ndarray:
        """Pre-softmax selector score of each frame.

        Without ``role``, third-person frames use the anchor head and
        first-person frames the positive head.
        """
        emb = self.embed_frames(frames)
        if role is not None:
            return self.selector_scores(emb, role)
        out = np.empty(len(frames))
        for r in ("x", "z"):
            idx = [i for i, f in enumerate(frames) if f.modality == ROLE_MODALITY[r]]
            if idx:
                out[idx] = self.selector_scores(emb[idx], r)
        return out


@dataclass
class TripletForward:
    """Everything the backward pass needs for a batch of triplets."""

    emb: dict[str, np.ndarray]
    caches: dict[str, tuple]
    raw: dict[str, np.ndarray]
    f: dict[str, np.ndarray]
    d_pos: np.ndarray
    d_neg: np.ndarray
    l: np.ndarray
    keys: list[tuple] = field(default_factory=list)


def forward_triplets(model: ModelParameters, triplets: Sequence[TripletSample]) -> TripletForward:
    frames = {
        "x": [t.x for t in triplets],
        "z": [t.z for t in triplets],
        "zp": [t.z_prime for t in triplets],
    }
    emb, caches, raw, f = {}, {}, {}, {}
    for role, frs in frames.items():
        emb[role], caches[role] = model._embed(np.stack([fr.features for fr in frs]),
                                               ROLE_MODALITY[role])
        f[role], raw[role] = model._scores(emb[role], role)
    d_pos = np.atleast_1d(l2_distance(emb["x"], emb["z"]))
    d_neg = np.atleast_1d(l2_distance(emb["x"], emb["zp"]))
    l = np.atleast_1d(triplet_loss(d_pos, d_neg).l)
    keys = [(t.x.key, t.z.key, t.z_prime.key) for t in triplets]
    return TripletForward(emb, caches, raw, f, d_pos, d_neg, l, keys)


def backward_triplets(model: ModelParameters, fwd: TripletForward, weights,
                      L: float) -> tuple[GradientBlock, GradientBlock]:
    """Gradients of the weighted objective, split into (embedding path, selector path).

    ``weights`` multiplies each triplet's loss gradient; the selector path
    carries ``weight * (l - L)`` into each of the three frame scores.
    """
    w = np.asarray(weights, dtype=np.float64)
    slope = fwd.l * (1.0 - fwd.l)
    up_pos = w * slope
    up_neg = -w * slope
    gx_p, gz = l2_distance_backward(fwd.emb["x"], fwd.emb["z"], up_pos)
    gx_n, gzp = l2_distance_backward(fwd.emb["x"], fwd.emb["zp"], up_neg)
    d_emb = {"x": gx_p + gx_n, "z": gz, "zp": gzp}
    emb_block = GradientBlock()
    for role in ROLES:
        emb_block.accumulate(model._trunk_backward(ROLE_MODALITY[role], fwd.caches[role],
                                                   d_emb[role]))
    d_f = w * (fwd.l - L)
    sel_block = GradientBlock()
    for role in ROLES:
        g, d_e = model._selector_backward(role, fwd.emb[role], fwd.raw[role], d_f)
        sel_block.accumulate(g)
        sel_block.accumulate(model._trunk_backward(ROLE_MODALITY[role], fwd.caches[role], d_e))
    return emb_block, sel_block


def classification_forward_backward(model: ModelParameters, frames: Sequence[FrameRecord],
                                    labels, weight: float = 1.0) -> tuple[float, GradientBlock]:
    """Per-class logistic loss on third-person embeddings, summed over frames."""
    if model.classifier is None:
        raise ModeError("classification requires a classifier head")
    y = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    emb, cache = model._embed(np.stack([f.features for f in frames]), THIRD)
    logits = model.classifier_logits(emb)
    if logits.shape != y.shape:
        raise ShapeError(f"label shape {y.shape} != logits shape {logits.shape}")
    loss = float(np.sum(np.logaddexp(0.0, logits) - y * logits))
    d_logits = weight * (expit(logits) - y)
    p = model.groups[model.classifier]
    g, d_emb = affine_backward(AffineLayer(p["weight"], p["bias"]), emb, d_logits)
    block = GradientBlock({f"{model.classifier}.weight": g["weight"],
                           f"{model.classifier}.bias": g["bias"]})
    block.accumulate(model._trunk_backward(THIRD, cache, d_emb))
    return loss, block


def normalized_objective(model: ModelParameters, triplets: Sequence[TripletSample],
                         normalizers: dict) -> tuple[float, TripletForward, np.ndarray]:
    """Self-normalized weighted loss over a fixed triplet set.

    Each frame's selector value is ``e^f / normalizers[video key]`` with the
    normalizers held constant, as the running per-video normalizers are during
    a backward pass.  Returns (objective, forward record, normalized weights).
    """
    fwd = forward_triplets(model, triplets)
    log_w = fwd.f["x"] + fwd.f["z"] + fwd.f["zp"]
    log_w = log_w - np.log([normalizers[kx] * normalizers[kz] * normalizers[kzp]
                            for kx, kz, kzp in fwd.keys])
    w = np.exp(log_w - log_w.max())
    w_bar = w / w.sum()
    return float(np.dot(w_bar, fwd.l)), fwd, w_bar


def normalized_objective_gradient(model: ModelParameters, triplets: Sequence[TripletSample],
                                  normalizers: dict) -> tuple[float, GradientBlock]:
    J, fwd, w_bar = normalized_objective(model, triplets, normalizers)
    emb_block, sel_block = backward_triplets(model, fwd, w_bar, J)
    return J, emb_block + sel_block
