"""Dense numeric kernels with hand-written backward passes.

Every kernel accepts either a single vector or a batch of row vectors.  All
arithmetic is float64.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import ConstraintError, NumericError, ShapeError


def as_vector(values) -> np.ndarray:
    """Coerce to a finite float64 array (1-D vector or 2-D row batch)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim not in (1, 2):
        raise ShapeError(f"expected a vector or a batch of vectors, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite entries in vector")
    return arr


@dataclass
class AffineLayer:
    weight: np.ndarray  # (dim_out, dim_in)
    bias: np.ndarray  # (dim_out,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"inconsistent affine shapes {self.weight.shape} / {self.bias.shape}")

    @property
    def dim_in(self) -> int:
        return self.weight.shape[1]

    @property
    def dim_out(self) -> int:
        return self.weight.shape[0]


class GradientBlock(dict):
    """Named parameter gradients; missing names count as zero."""

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.values())))

    def scaled(self, factor: float) -> "GradientBlock":
        return GradientBlock({k: g * factor for k, g in self.items()})

    def accumulate(self, other: Mapping[str, np.ndarray]) -> "GradientBlock":
        """In-place sum; returns self."""
        for k, g in other.items():
            if k in self:
                self[k] = self[k] + g
            else:
                self[k] = np.array(g, dtype=np.float64, copy=True)
        return self

    def __add__(self, other):
        out = GradientBlock({k: v.copy() for k, v in self.items()})
        return out.accumulate(other)

    def flat(self, keys=None) -> np.ndarray:
        keys = sorted(self) if keys is None else keys
        if not keys:
            return np.zeros(0)
        return np.concatenate([np.ravel(self[k]) for k in keys])


def affine_forward(layer: AffineLayer, x) -> np.ndarray:
    x = as_vector(x)
    if x.shape[-1] != layer.dim_in:
        raise ShapeError(f"input dim {x.shape[-1]} != layer dim_in {layer.dim_in}")
    return x @ layer.weight.T + layer.bias


def affine_backward(layer: AffineLayer, x, upstream) -> tuple[GradientBlock, np.ndarray]:
    """Returns ({'weight', 'bias'} gradients, gradient w.r.t. the input).

    For a batch, parameter gradients are summed over rows.
    """
    x = as_vector(x)
    up = as_vector(upstream)
    if x.shape[-1] != layer.dim_in or up.shape[-1] != layer.dim_out or x.ndim != up.ndim:
        raise ShapeError(
            f"affine_backward shapes: input {x.shape}, upstream {up.shape}, "
            f"layer {layer.weight.shape}")
    if x.ndim == 1:
        grad_w = np.outer(up, x)
        grad_b = up.copy()
    else:
        if x.shape[0] != up.shape[0]:
            raise ShapeError("batch sizes of input and upstream differ")
        grad_w = up.T @ x
        grad_b = up.sum(axis=0)
    return GradientBlock(weight=grad_w, bias=grad_b), up @ layer.weight


def l2_distance(a, b) -> np.ndarray | float:
    a, b = as_vector(a), as_vector(b)
    if a.shape != b.shape:
        raise ShapeError(f"l2_distance shape mismatch {a.shape} vs {b.shape}")
    d = np.sqrt(np.sum((a - b) ** 2, axis=-1))
    return float(d) if a.ndim == 1 else d


def l2_distance_backward(a, b, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of upstream * ||a - b||.  Coincident points get the zero subgradient."""
    a, b = as_vector(a), as_vector(b)
    if a.shape != b.shape:
        raise ShapeError(f"l2_distance shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    dist = np.sqrt(np.sum(diff * diff, axis=-1, keepdims=True))
    up = np.asarray(upstream, dtype=np.float64)
    if a.ndim == 2:
        up = up.reshape(-1, 1)
    safe = np.where(dist > 0.0, dist, 1.0)
    grad_a = np.where(dist > 0.0, up * diff / safe, 0.0)
    return grad_a, -grad_a


def scaled_tanh(raw, scale):
    scale_arr = np.asarray(scale, dtype=np.float64)
    if np.any(scale_arr <= 0):
        raise ConstraintError(f"tanh scale must be positive, got {scale}")
    return scale_arr * np.tanh(raw)


def scaled_tanh_backward(raw, scale, upstream=1.0):
    """Returns (d/d raw, d/d scale) of upstream * scale * tanh(raw)."""
    scale_arr = np.asarray(scale, dtype=np.float64)
    if np.any(scale_arr <= 0):
        raise ConstraintError(f"tanh scale must be positive, got {scale}")
    t = np.tanh(raw)
    return upstream * scale_arr * (1.0 - t * t), upstream * t


def finite_difference_check(
    fn: Callable[[], float],
    parameters: Mapping[str, np.ndarray] | np.ndarray,
    analytic: Mapping[str, np.ndarray] | np.ndarray,
    epsilon: float = 1e-4,
) -> float:
    """Max over entries of |analytic - central difference| / max(1, |analytic|).

    ``fn`` is evaluated with the parameter arrays perturbed in place, so it must
    read them by reference.  Every array is restored before returning.
    """
    if epsilon <= 0:
        raise ConstraintError("epsilon must be positive")
    if isinstance(parameters, np.ndarray):
        parameters, analytic = {"_": parameters}, {"_": analytic}
    worst = 0.0
    for name, arr in parameters.items():
        grad = np.asarray(analytic.get(name, np.zeros_like(arr)), dtype=np.float64)
        if grad.shape != arr.shape:
            raise ShapeError(f"analytic gradient for {name!r} has shape {grad.shape}, "
                             f"parameter has {arr.shape}")
        if not arr.flags.c_contiguous:
            raise ShapeError(f"parameter {name!r} must be C-contiguous for in-place perturbation")
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = fn()
            flat[i] = orig - epsilon
            f_minus = fn()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"non-finite objective while perturbing {name}[{i}]")
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]))
            worst = max(worst, err)
    return worst
