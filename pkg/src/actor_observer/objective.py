"""Triplet similarity loss, the selector-weighted objective, and its online estimate."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConstraintError, OrderingError
from .mathops import GradientBlock
from .selector import DEFAULT_K


@dataclass(frozen=True)
class TripletLossValue:
    l: float | np.ndarray
    d_pos: float | np.ndarray
    d_neg: float | np.ndarray


def triplet_loss(d_pos, d_neg) -> TripletLossValue:
    """l = e^{d_pos} / (e^{d_pos} + e^{d_neg}), evaluated as a logistic of the gap."""
    dp = np.asarray(d_pos, dtype=np.float64)
    dn = np.asarray(d_neg, dtype=np.float64)
    if np.any(dp < 0) or np.any(dn < 0):
        raise ConstraintError("distances must be non-negative")
    l = expit(dp - dn)
    if l.ndim == 0:
        return TripletLossValue(float(l), float(dp), float(dn))
    return TripletLossValue(l, dp, dn)


def triplet_loss_backward(value: TripletLossValue):
    """(dl/d d_pos, dl/d d_neg)."""
    slope = value.l * (1.0 - value.l)
    return slope, -slope


@dataclass
class RunningLossState:
    """Online normalized-importance-sampling estimate of the weighted loss."""

    L: float = 0.0
    sigma: float = 0.0
    count: int = 0
    k: float = DEFAULT_K

    def __post_init__(self):
        if not 0.0 < self.k <= 1.0:
            raise ConstraintError(f"k must lie in (0, 1], got {self.k}")


def running_loss_update(state: RunningLossState, p: float, l: float) -> tuple[float, RunningLossState]:
    if p <= 0:
        raise ConstraintError("importance weight must be positive")
    if state.count == 0:
        new = RunningLossState(L=float(l), sigma=float(p), count=1, k=state.k)
        return new.L, new
    k = state.k
    sigma = k * p + (1.0 - k) * state.sigma
    # (k p l + (1-k) sigma_prev L_prev) / sigma, rearranged so l == L_prev is a fixed point
    L = state.L + (k * p / sigma) * (l - state.L)
    new = RunningLossState(L=L, sigma=sigma, count=state.count + 1, k=k)
    return L, new


@dataclass(frozen=True)
class WeightedUpstream:
    """Upstream gradients of one weighted triplet at the distance and score nodes."""

    d_pos: float
    d_neg: float
    score: float  # identical for the three frame scores of the triplet


def weighted_backward(p_triplet: float, value: TripletLossValue,
                      L: float | RunningLossState) -> WeightedUpstream:
    """Gradient of ``p * l`` at the distance nodes plus the selector term ``p (l - L)``.

    The running normalizer is treated as a constant, so every one of the three
    frame scores of the triplet receives the same gradient.
    """
    if isinstance(L, RunningLossState):
        if L.count == 0:
            raise OrderingError("running loss must be updated before the backward pass")
        L = L.L
    dl_dpos, dl_dneg = triplet_loss_backward(value)
    return WeightedUpstream(d_pos=p_triplet * dl_dpos, d_neg=p_triplet * dl_dneg,
                            score=p_triplet * (value.l - L))


def rescale_gradient_block(block: GradientBlock, reference_norm: float) -> GradientBlock:
    if reference_norm < 0:
        raise ConstraintError("reference norm must be non-negative")
    norm = block.norm()
    if norm == 0.0:
        return GradientBlock({k: v.copy() for k, v in block.items()})
    return block.scaled(reference_norm / norm)
