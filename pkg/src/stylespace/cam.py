"""Gradient-weighted activation maps for the triplet loss.

For each triplet member the map is built from the gradient of the full
triplet loss with respect to that image's activations at a convolutional
target layer: channel weights are the spatial means of the gradient, the
raw map is the relu of the weight-sum over channels, normalized so an
active map peaks at exactly 1.  Inactive triplets (hinge argument <= 0)
yield all-zero maps plus a flag rather than an error.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import save_image
from .errors import ContractError
from .losses import TripletBatch, triplet_loss
from .nets import PerceptualNet, StyleEncoderHead
from .tensor import Tensor
from .train import Checkpoint, build_models

DEFAULT_LAYERS = {"vae": "conv4", "vae_triplet": "conv4",
                  "frozen_net": "conv5", "frozen_net_triplet": "conv5"}


@dataclass
class ActivationMap:
    image_id: str
    values: np.ndarray  # target-layer resolution, [0, 1], max == 1 unless all zero
    target_layer: str


def _embed_with_taps(models: dict, variant: str, image: np.ndarray):
    """Single-image forward returning (embedding row tensor, taps dict).

    The image enters as a grad-requiring leaf so tap activations receive
    gradients even under the frozen feature net, whose weights never do.
    """
    batch = image[None] if image.ndim == 3 else image
    if variant in ("vae", "vae_triplet"):
        code, taps = models["vae"].encode_with_taps(Tensor(batch, requires_grad=True))
        return code.mean, taps

    pnet: PerceptualNet = models["pnet"]
    params = pnet.parameters()
    taps: dict[str, Tensor] = {}
    h = Tensor(batch, requires_grad=True)
    for i in range(1, 6):
        h = T.relu(T.add(T.conv2d(h, params[f"pnet.conv{i}.w"], stride=2, pad=1),
                         params[f"pnet.conv{i}.b"]))
        taps[f"conv{i}"] = h
    feat = T.add(T.matmul(T.reshape(h, (batch.shape[0], -1)), params["pnet.fc.w"]),
                 params["pnet.fc.b"])
    if variant == "frozen_net_triplet":
        head: StyleEncoderHead = models["head"]
        return head.forward(feat), taps
    return feat, taps


def _triplet_taps(ckpt: Checkpoint, triplet_images: np.ndarray, target_layer: str | None,
                  margin: float):
    if triplet_images.shape[0] != 3:
        raise ContractError(f"grad_cam needs exactly 3 images, got {triplet_images.shape[0]}")
    variant = ckpt.config.model_variant
    layer = target_layer or DEFAULT_LAYERS[variant]
    models = build_models(ckpt)

    embeds, taps = [], []
    for i in range(3):
        emb, tap = _embed_with_taps(models, variant, triplet_images[i])
        if layer not in tap:
            raise ContractError(f"target layer {layer!r} not available; choose from {sorted(tap)}")
        embeds.append(emb)
        taps.append(tap[layer])
    loss, n_plus = triplet_loss(TripletBatch(embeds[0], embeds[1], embeds[2]), margin, 1.0)
    return taps, loss, n_plus, layer


def grad_cam(
    ckpt: Checkpoint,
    triplet_images: np.ndarray,
    image_ids=("anchor", "positive", "negative"),
    target_layer: str | None = None,
    margin: float = 0.2,
):
    """Activation maps for one (anchor, positive, negative) image triplet.

    ``triplet_images`` is a (3, 3, 64, 64) stack.  Returns
    (list of 3 ActivationMaps, inactive flag).
    """
    taps, loss, n_plus, layer = _triplet_taps(ckpt, triplet_images, target_layer, margin)
    spatial = taps[0].shape[2:]
    if n_plus == 0:
        zeros = [ActivationMap(image_ids[i], np.zeros(spatial, dtype=np.float32), layer)
                 for i in range(3)]
        return zeros, True

    loss.backward()
    maps = []
    for i in range(3):
        activation = taps[i]
        grad = activation.grad if activation.grad is not None else np.zeros_like(activation.data)
        weights = grad.mean(axis=(2, 3), dtype=np.float64)  # (1, C)
        raw = np.maximum(
            (weights[:, :, None, None] * activation.data.astype(np.float64)).sum(axis=1), 0.0
        )[0]
        peak = raw.max()
        values = (raw / peak if peak > 0 else raw).astype(np.float32)
        maps.append(ActivationMap(image_ids[i], values, layer))
    return maps, False


def channel_weights(ckpt: Checkpoint, triplet_images: np.ndarray,
                    target_layer: str | None = None, margin: float = 0.2) -> list[np.ndarray]:
    """The per-channel gradient means behind grad_cam, one (C,) row per image."""
    taps, loss, n_plus, _ = _triplet_taps(ckpt, triplet_images, target_layer, margin)
    if n_plus == 0:
        return [np.zeros(t.shape[1], dtype=np.float64) for t in taps]
    loss.backward()
    out = []
    for t in taps:
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        out.append(grad.mean(axis=(2, 3), dtype=np.float64)[0])
    return out


# ---------------------------------------------------------------------------
# export


def upsample_bilinear(values: np.ndarray, size: int = 64) -> np.ndarray:
    """Bilinear resize of an HxW map with half-pixel-centered sampling."""
    h, w = values.shape
    ys = np.clip((np.arange(size) + 0.5) * h / size - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(size) + 0.5) * w / size - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = values[np.ix_(y0, x0)] * (1 - fx) + values[np.ix_(y0, x1)] * fx
    bottom = values[np.ix_(y1, x0)] * (1 - fx) + values[np.ix_(y1, x1)] * fx
    return (top * (1 - fy) + bottom * fy).astype(np.float32)


def _heat_colors(values: np.ndarray) -> np.ndarray:
    """Simple black-red-yellow-white heat ramp, CHW output."""
    v = np.clip(values, 0.0, 1.0)
    r = np.clip(3.0 * v, 0.0, 1.0)
    g = np.clip(3.0 * v - 1.0, 0.0, 1.0)
    b = np.clip(3.0 * v - 2.0, 0.0, 1.0)
    return np.stack([r, g, b])


def export_maps(maps, images: np.ndarray, out_dir, opacity: float = 0.4) -> list[Path]:
    """Write each map as grayscale PNG plus a heat overlay on its source image."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for m, img in zip(maps, images):
        up = upsample_bilinear(m.values, img.shape[-1])
        gray_path = out_dir / f"cam_{m.image_id}_gray.png"
        save_image(up, gray_path)
        overlay = (1.0 - opacity) * img + opacity * _heat_colors(up)
        overlay_path = out_dir / f"cam_{m.image_id}_overlay.png"
        save_image(np.clip(overlay, 0.0, 1.0), overlay_path)
        written += [gray_path, overlay_path]
    return written
