"""Training objectives: KL, reconstruction, perceptual, triplet, and the
weighted total.

The triplet loss follows the expert-label setting: no mining, and the hinge
sum is normalized by N+, the number of triplets whose margin constraint is
strictly violated.  ``triplet_loss`` treats N+ as a constant scale factor,
so satisfied triplets contribute exactly zero gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, NumericError
from .nets import LatentCode, PerceptualNet
from .tensor import Tensor


@dataclass
class LossWeights:
    """Objective weights and the triplet margin.

    ``lambda_triplet`` is applied exactly once, inside ``total_loss``;
    ``triplet_loss`` callers feeding ``total_loss`` should therefore request
    the raw (weight=1) triplet term.
    """

    lambda_kl: float = 1e-3
    lambda_recon: float = 1.0
    lambda_triplet: float = 1.0
    lambda_percep: float = 1e-2
    margin: float = 0.2

    def __post_init__(self):
        for name in ("lambda_kl", "lambda_recon", "lambda_triplet", "lambda_percep", "margin"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ContractError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class TripletBatch:
    """Aligned anchor/positive/negative embedding rows, shape (N, dim) each."""

    anchors: Tensor
    positives: Tensor
    negatives: Tensor
    n_plus: int | None = field(default=None, compare=False)

    def __post_init__(self):
        shapes = {self.anchors.shape, self.positives.shape, self.negatives.shape}
        if len(shapes) != 1:
            raise DimensionError(f"triplet members have differing shapes: {shapes}")
        if self.anchors.data.ndim != 2 or self.anchors.shape[0] < 1:
            raise ContractError(f"triplet batch must be non-empty (N, dim), got {self.anchors.shape}")

    @property
    def batch_size(self) -> int:
        return self.anchors.shape[0]


def kl_loss(codes: LatentCode) -> Tensor:
    """Batch mean of 0.5 * sum_i (mu_i^2 + exp(logvar_i) - 1 - logvar_i)."""
    terms = T.sub(T.sub(T.add(T.square(codes.mean), T.exp(codes.logvar)), 1.0), codes.logvar)
    per_image = T.tsum(terms, axis=1)
    # Mathematically >= 0; the clamp only absorbs float32 rounding at the optimum.
    return T.relu(T.mul(T.tmean(per_image), 0.5))


def recon_loss(inputs, recon) -> Tensor:
    """Batch mean of per-image summed squared pixel differences."""
    a = inputs if isinstance(inputs, Tensor) else Tensor(inputs)
    b = recon if isinstance(recon, Tensor) else Tensor(recon)
    if a.shape != b.shape:
        raise DimensionError(f"input {a.shape} and reconstruction {b.shape} differ")
    n = a.shape[0]
    diff = T.square(T.sub(a, b))
    return T.tmean(T.tsum(T.reshape(diff, (n, -1)), axis=1))


def perceptual_loss(net: PerceptualNet, inputs, recon) -> Tensor:
    """Sum over tap layers of the mean squared activation difference.

    Gradients reach the reconstruction (and through it the decoder) but
    never the frozen net parameters.
    """
    a = inputs if isinstance(inputs, Tensor) else Tensor(inputs)
    b = recon if isinstance(recon, Tensor) else Tensor(recon)
    if a.shape != b.shape:
        raise DimensionError(f"input {a.shape} and reconstruction {b.shape} differ")
    taps_in = net.tap_activations(a.detach())
    taps_re = net.tap_activations(b)
    total = None
    for t_in, t_re in zip(taps_in, taps_re):
        layer = T.tmean(T.square(T.sub(t_re, t_in.detach())))
        total = layer if total is None else T.add(total, layer)
    return total


def _hinge_args(anchors: Tensor, positives: Tensor, negatives: Tensor, margin: float) -> Tensor:
    """Per-triplet hinge arguments ||a-p||^2 - ||a-n||^2 + margin.

    The two squared distances cancel almost exactly for near-satisfied
    triplets, so the forward pass accumulates in float64 before storing
    float32; plain float32 elementwise squares would lose ~1e-6 absolute.
    """
    a64 = anchors.data.astype(np.float64)
    p64 = positives.data.astype(np.float64)
    n64 = negatives.data.astype(np.float64)
    args = np.sum((a64 - p64) ** 2, axis=1) - np.sum((a64 - n64) ** 2, axis=1) + margin

    def grad_fn(g):
        g_col = g[:, None].astype(np.float64)
        ga = (2.0 * g_col * (n64 - p64)).astype(np.float32) if anchors.requires_grad else None
        gp = (-2.0 * g_col * (a64 - p64)).astype(np.float32) if positives.requires_grad else None
        gn = (2.0 * g_col * (a64 - n64)).astype(np.float32) if negatives.requires_grad else None
        return ga, gp, gn

    return T._make_node(args.astype(np.float32), (anchors, positives, negatives), grad_fn)


def triplet_loss(batch: TripletBatch, margin: float, weight: float = 1.0) -> tuple[Tensor, int]:
    """Hinge loss over squared distances, normalized by the violation count.

    loss = weight / max(N+, 1) * sum_i [ ||a-p||^2 - ||a-n||^2 + margin ]_+
    where N+ counts strictly positive hinge arguments.  Returns (loss, N+)
    and records N+ on the batch.
    """
    if margin < 0:
        raise ContractError(f"margin must be >= 0, got {margin}")
    args = _hinge_args(batch.anchors, batch.positives, batch.negatives, margin)
    n_plus = int(np.count_nonzero(args.data > 0.0))
    batch.n_plus = n_plus
    hinge_sum = T.tsum(T.relu(args))
    loss = T.mul(hinge_sum, weight / max(n_plus, 1))
    return loss, n_plus


def total_loss(weights: LossWeights, components: dict) -> Tensor:
    """Weighted sum of the named loss components (kl, recon, triplet, percep).

    The triplet component must be the raw (weight=1) term; ``lambda_triplet``
    is applied here so the coefficient acts exactly once.
    """
    pairs = (
        ("kl", weights.lambda_kl),
        ("recon", weights.lambda_recon),
        ("triplet", weights.lambda_triplet),
        ("percep", weights.lambda_percep),
    )
    total = None
    for name, lam in pairs:
        comp = components.get(name, 0.0)
        t = comp if isinstance(comp, Tensor) else Tensor(np.float32(comp))
        if t.data.size != 1:
            raise ContractError(f"loss component {name} must be scalar, got shape {t.shape}")
        if not np.isfinite(t.data).all():
            raise NumericError(f"loss component {name} is not finite")
        term = T.mul(t, lam)
        total = term if total is None else T.add(total, term)
    return total
