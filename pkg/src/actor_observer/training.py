"""SGD-with-momentum training of the selector-weighted triplet objective."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence, Union

import numpy as np

from .errors import ConfigError, MalformedItemError, ModeError, NumericError
from .mathops import GradientBlock
from .model import (ModelParameters, backward_triplets, classification_forward_backward,
                    forward_triplets)
from .objective import RunningLossState, rescale_gradient_block, running_loss_update
from .sampling import (THIRD, FrameRecord, SamplerConfig, TripletSample, VideoPair,
                       epoch_triplets, split_pairs)
from .selector import DEFAULT_K, SCALE_INIT_SIGMA, AccumulatorBank, triplet_weight

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 15
    base_lr: float = 3e-5
    lr_decay_factor: float = 10.0
    lr_decay_every_epochs: int = 3
    momentum: float = 0.95
    epochs: int = 1
    seed: int = 0
    mixed_mode: bool = False
    mixed_ratio: int = 1  # labeled frames per triplet in mixed batches
    rescale_gradients: bool = True
    delta: float = 1.0
    delta_prime: float = 10.0
    k: float = DEFAULT_K
    sigma_init: str = "first"
    reset_accumulators_each_epoch: bool = False
    hidden_dim: int = 128
    embed_dim: int = 128
    share_trunk: bool = True
    share_ego_selector: bool = True
    scale_init_sigma: float = SCALE_INIT_SIGMA
    selector_weight_sigma: float = 0.01
    n_classes: int = 157
    triplets_per_pair: int = 0  # 0: one draw per third-person frame
    test_fraction: float = 0.2

    def __post_init__(self):
        for name in ("batch_size", "base_lr", "lr_decay_factor", "lr_decay_every_epochs",
                     "mixed_ratio", "hidden_dim", "embed_dim", "n_classes"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in [0, 1)")
        self.sampler()  # validates delta / delta_prime

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(self.delta, self.delta_prime, self.seed)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**values)


def learning_rate(config: TrainConfig, epoch: int) -> float:
    return config.base_lr / config.lr_decay_factor ** (epoch // config.lr_decay_every_epochs)


@dataclass
class OptimizerState:
    velocity: dict[str, np.ndarray]
    learning_rate: float
    momentum: float
    epoch: int = 0
    step: int = 0

    @classmethod
    def for_model(cls, model: ModelParameters, config: TrainConfig) -> "OptimizerState":
        return cls({n: np.zeros_like(a) for n, a in model.named_parameters().items()},
                   learning_rate(config, 0), config.momentum)


@dataclass(frozen=True, eq=False)
class LabeledFrame:
    """A third-person frame with a multi-hot class vector (mixed mode)."""

    frame: FrameRecord
    labels: np.ndarray


Item = Union[TripletSample, LabeledFrame]


@dataclass
class TrainingState:
    model: ModelParameters
    optimizer: OptimizerState
    accumulators: AccumulatorBank
    loss_state: RunningLossState


@dataclass
class StepRecord:
    mean_loss: float  # plain mean of l over the batch's triplets
    weighted_loss: float  # sum p l / sum p over the batch's triplets
    running_loss: float
    class_loss: float
    emb_norm: float
    selector_norm: float
    class_norm: float
    weights: list[float] = field(default_factory=list)


def new_state(config: TrainConfig, feature_dim: int) -> TrainingState:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    model = ModelParameters.initialize(
        feature_dim, config.hidden_dim, config.embed_dim, rng,
        share_trunk=config.share_trunk, share_ego_selector=config.share_ego_selector,
        n_classes=config.n_classes if config.mixed_mode else None,
        scale_init_sigma=config.scale_init_sigma,
        selector_weight_sigma=config.selector_weight_sigma)
    return TrainingState(model, OptimizerState.for_model(model, config),
                         AccumulatorBank(config.k, config.sigma_init),
                         RunningLossState(k=config.k))


def _dump(triplet: TripletSample) -> str:
    return " / ".join(f"{fr.video_id}[{fr.index}]@{fr.timestamp:.3f}"
                      for fr in (triplet.x, triplet.z, triplet.z_prime))


def train_step(state: TrainingState, batch: Sequence[Item],
               config: TrainConfig) -> StepRecord:
    """One optimizer step on a batch of triplets and (mixed mode) labeled frames.

    Order within the step: forward every triplet, fold the selector scores
    and losses into the running accumulators in batch order, then run the
    backward pass against the running loss as it stands after the batch.
    """
    if not batch:
        raise ConfigError("empty batch")
    model = state.model
    triplets = [it for it in batch if isinstance(it, TripletSample)]
    labeled = [it for it in batch if isinstance(it, LabeledFrame)]
    if len(triplets) + len(labeled) != len(batch):
        raise MalformedItemError("batch items must be triplets or labeled frames")
    if labeled and model.classifier is None:
        raise ModeError("labeled frames require mixed mode")
    n = len(batch)

    emb_block, sel_block, cls_block = GradientBlock(), GradientBlock(), GradientBlock()
    mean_loss = weighted_loss = class_loss = float("nan")
    weights: list[float] = []
    if triplets:
        fwd = forward_triplets(model, triplets)
        if not np.all(np.isfinite(fwd.l)):
            bad = int(np.flatnonzero(~np.isfinite(fwd.l))[0])
            raise NumericError(f"non-finite loss on triplet {_dump(triplets[bad])}")
        for i, t in enumerate(triplets):
            p = triplet_weight(state.accumulators.observe(t.x.key, fwd.f["x"][i]),
                               state.accumulators.observe(t.z.key, fwd.f["z"][i]),
                               state.accumulators.observe(t.z_prime.key, fwd.f["zp"][i]))
            if not np.isfinite(p):
                raise NumericError(f"non-finite selector weight on triplet {_dump(t)}")
            _, state.loss_state = running_loss_update(state.loss_state, p, float(fwd.l[i]))
            weights.append(p)
        w = np.asarray(weights)
        emb_block, sel_block = backward_triplets(model, fwd, w / n, state.loss_state.L)
        mean_loss = float(fwd.l.mean())
        weighted_loss = float(np.dot(w, fwd.l) / w.sum())
    if labeled:
        class_loss, cls_block = classification_forward_backward(
            model, [it.frame for it in labeled], np.stack([it.labels for it in labeled]),
            weight=1.0 / n)
        class_loss /= len(labeled)

    ref = emb_block.norm()
    if config.rescale_gradients and ref > 0.0:
        sel_block = rescale_gradient_block(sel_block, ref)
        if cls_block:
            cls_block = rescale_gradient_block(cls_block, ref)
    grad = emb_block + sel_block
    grad.accumulate(cls_block)

    opt = state.optimizer
    params = model.named_parameters()
    for name, arr in params.items():
        g = grad.get(name)
        v = opt.velocity[name]
        v *= opt.momentum
        if g is not None:
            v += g
        if opt.learning_rate != 0.0:
            arr -= opt.learning_rate * v
    model.project()
    opt.step += 1
    return StepRecord(mean_loss, weighted_loss, state.loss_state.L, class_loss,
                      emb_block.norm(), sel_block.norm(), cls_block.norm(), weights)


def mixed_step(state: TrainingState, item: Item | FrameRecord, config: TrainConfig,
               labels=None) -> StepRecord:
    """Single-item mixed-mode step.

    ``item`` is either a full triplet (no labels) or a third-person frame with
    a multi-hot ``labels`` vector; a bare frame may also arrive already wrapped
    as a :class:`LabeledFrame`.
    """
    if not config.mixed_mode or state.model.classifier is None:
        raise ModeError("mixed_step requires mixed mode and a classifier head")
    if isinstance(item, TripletSample):
        if labels is not None:
            raise MalformedItemError("full triplets carry no classification label")
    elif isinstance(item, FrameRecord):
        if labels is None:
            raise MalformedItemError("a lone frame needs a label vector")
        if item.modality != THIRD:
            raise MalformedItemError("labels attach to third-person frames only")
        item = LabeledFrame(item, np.asarray(labels, dtype=np.float64))
    elif not isinstance(item, LabeledFrame):
        raise MalformedItemError(f"unsupported item {type(item).__name__}")
    return train_step(state, [item], config)


def labeled_items(pairs: Sequence[VideoPair], n_classes: int) -> list[LabeledFrame]:
    """Every third-person frame of every pair, tagged with its multi-hot labels."""
    out = []
    for pair in pairs:
        y = pair.frame_labels(n_classes)
        out.extend(LabeledFrame(fr, y[i]) for i, fr in enumerate(pair.third.frames))
    return out


def epoch_items(pairs: Sequence[VideoPair], config: TrainConfig, epoch: int) -> list[Item]:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2, epoch]))
    triplets = epoch_triplets(pairs, config.sampler(), rng, config.triplets_per_pair or None)
    if not config.mixed_mode:
        return list(triplets)
    labeled = labeled_items(pairs, config.n_classes)
    order = rng.permutation(len(labeled))
    labeled = [labeled[i] for i in order]
    items: list[Item] = []
    r = config.mixed_ratio
    for i, t in enumerate(triplets):
        items.append(t)
        if labeled:
            items.extend(labeled[(i * r + j) % len(labeled)] for j in range(r))
    return items


@dataclass
class TrainResult:
    state: TrainingState
    config: TrainConfig
    train_ids: list[str]
    test_ids: list[str]
    history: list[dict] = field(default_factory=list)


def train(config: TrainConfig, pairs: dict[str, VideoPair],
          state: TrainingState | None = None, split: tuple[list, list] | None = None,
          progress=None) -> TrainResult:
    """Run ``config.epochs`` epochs over the training split of ``pairs``."""
    if not pairs:
        raise ConfigError("dataset has no pairs")
    train_ids, test_ids = split or split_pairs(list(pairs), config.test_fraction, config.seed)
    if not train_ids:
        raise ConfigError("empty training split")
    train_pairs = [pairs[i] for i in train_ids]
    feature_dim = train_pairs[0].third.frames[0].features.shape[0]
    state = state or new_state(config, feature_dim)
    history = []
    start = state.optimizer.epoch
    for epoch in range(start, config.epochs):
        state.optimizer.learning_rate = learning_rate(config, epoch)
        if config.reset_accumulators_each_epoch:
            state.accumulators.reset()
        items = epoch_items(train_pairs, config, epoch)
        losses = []
        for b in range(0, len(items), config.batch_size):
            rec = train_step(state, items[b:b + config.batch_size], config)
            if not np.isnan(rec.mean_loss):
                losses.append(rec.mean_loss)
        state.optimizer.epoch = epoch + 1
        summary = {"epoch": epoch, "lr": state.optimizer.learning_rate,
                   "mean_loss": float(np.mean(losses)) if losses else float("nan"),
                   "running_loss": state.loss_state.L, "steps": state.optimizer.step}
        history.append(summary)
        log.info("epoch %(epoch)d lr=%(lr).3g loss=%(mean_loss).4f L=%(running_loss).4f", summary)
        if progress is not None:
            progress(summary)
    return TrainResult(state, config, list(train_ids), list(test_ids), history)
