"""Network definitions: convolutional VAE, frozen perceptual net, style head.

All models consume 64x64 RGB images in [0, 1], laid out NCHW.  The VAE
encoder halves resolution four times (3-32-64-128-256 channels) and maps the
flattened 256x4x4 features to per-image mean/log-variance vectors; the
decoder mirrors it with nearest-upsample + conv blocks and a final sigmoid.

The perceptual net stands in for an ImageNet-pretrained feature extractor:
five stride-2 conv blocks with activations exposed after blocks 2 and 4,
flattened into a single linear layer producing a 4096-long feature vector.
Its weights are deterministically He-initialized (seed 7) or loaded from a
checkpoint file, and they never receive gradients.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .tensor import Tensor

IMAGE_SIZE = 64
IMAGE_CHANNELS = 3
FEATURE_LEN = 4096
STYLE_EMBED_LEN = 1024
PERCEPTUAL_SEED = 7
DEFAULT_LATENT_DIM = 128


def _he_conv(rng: np.random.Generator, f: int, c: int, k: int, trainable: bool) -> tuple[Tensor, Tensor]:
    scale = np.sqrt(2.0 / (c * k * k))
    w = (rng.standard_normal((f, c, k, k)) * scale).astype(np.float32)
    b = np.zeros((f, 1, 1), dtype=np.float32)
    return Tensor(w, requires_grad=trainable), Tensor(b, requires_grad=trainable)


def _he_linear(rng: np.random.Generator, n_in: int, n_out: int, trainable: bool) -> tuple[Tensor, Tensor]:
    scale = np.sqrt(2.0 / n_in)
    w = (rng.standard_normal((n_in, n_out)) * scale).astype(np.float32)
    b = np.zeros(n_out, dtype=np.float32)
    return Tensor(w, requires_grad=trainable), Tensor(b, requires_grad=trainable)


def _as_image_batch(images) -> Tensor:
    t = images if isinstance(images, Tensor) else Tensor(images)
    if t.data.ndim != 4 or t.shape[1] != IMAGE_CHANNELS:
        raise DimensionError(f"expected Nx{IMAGE_CHANNELS}x{IMAGE_SIZE}x{IMAGE_SIZE} images, got {t.shape}")
    if t.shape[2] != IMAGE_SIZE or t.shape[3] != IMAGE_SIZE:
        raise DimensionError(f"expected {IMAGE_SIZE}x{IMAGE_SIZE} spatial size, got {t.shape}")
    return t


@dataclass
class LatentCode:
    """Encoder output: per-image mean and log-variance rows, shape (N, latent_dim)."""

    mean: Tensor
    logvar: Tensor

    @property
    def latent_dim(self) -> int:
        return self.mean.shape[1]


class VaeModel:
    """Convolutional VAE over 64x64 RGB images."""

    ENCODER_CHANNELS = (32, 64, 128, 256)

    def __init__(self, latent_dim: int = DEFAULT_LATENT_DIM, seed: int = 0):
        self.latent_dim = latent_dim
        rng = np.random.default_rng(seed)
        self._params: dict[str, Tensor] = {}

        chans = (IMAGE_CHANNELS,) + self.ENCODER_CHANNELS
        for i in range(4):
            w, b = _he_conv(rng, chans[i + 1], chans[i], 3, trainable=True)
            self._params[f"enc.conv{i + 1}.w"] = w
            self._params[f"enc.conv{i + 1}.b"] = b
        flat = self.ENCODER_CHANNELS[-1] * 4 * 4
        for head in ("mu", "logvar"):
            w, b = _he_linear(rng, flat, latent_dim, trainable=True)
            self._params[f"enc.fc_{head}.w"] = w
            self._params[f"enc.fc_{head}.b"] = b

        w, b = _he_linear(rng, latent_dim, flat, trainable=True)
        self._params["dec.fc.w"] = w
        self._params["dec.fc.b"] = b
        dec_chans = (256, 128, 64, 32, IMAGE_CHANNELS)
        for i in range(4):
            w, b = _he_conv(rng, dec_chans[i + 1], dec_chans[i], 3, trainable=True)
            self._params[f"dec.conv{i + 1}.w"] = w
            self._params[f"dec.conv{i + 1}.b"] = b

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def load_parameters(self, values: dict[str, np.ndarray]) -> None:
        for name, tensor in self._params.items():
            if name not in values:
                raise DimensionError(f"missing parameter {name}")
            arr = np.asarray(values[name], dtype=np.float32)
            if arr.shape != tensor.data.shape:
                raise DimensionError(f"parameter {name}: stored {arr.shape} vs model {tensor.data.shape}")
            tensor.data = arr.copy()

    def encode_with_taps(self, images) -> tuple[LatentCode, dict[str, Tensor]]:
        """Encoder forward that also exposes each conv block's activation."""
        x = _as_image_batch(images)
        p = self._params
        taps: dict[str, Tensor] = {}
        h = x
        for i in range(1, 5):
            h = T.relu(T.add(T.conv2d(h, p[f"enc.conv{i}.w"], stride=2, pad=1), p[f"enc.conv{i}.b"]))
            taps[f"conv{i}"] = h
        n = h.shape[0]
        flat = T.reshape(h, (n, -1))
        mean = T.add(T.matmul(flat, p["enc.fc_mu.w"]), p["enc.fc_mu.b"])
        logvar = T.add(T.matmul(flat, p["enc.fc_logvar.w"]), p["enc.fc_logvar.b"])
        return LatentCode(mean=mean, logvar=logvar), taps

    def encode(self, images) -> LatentCode:
        code, _ = self.encode_with_taps(images)
        return code

    def decode(self, z) -> Tensor:
        zt = z if isinstance(z, Tensor) else Tensor(z)
        if zt.data.ndim != 2 or zt.shape[1] != self.latent_dim:
            raise DimensionError(f"expected Nx{self.latent_dim} latents, got {zt.shape}")
        p = self._params
        n = zt.shape[0]
        h = T.relu(T.add(T.matmul(zt, p["dec.fc.w"]), p["dec.fc.b"]))
        h = T.reshape(h, (n, 256, 4, 4))
        for i in range(1, 4):
            h = T.upsample2x(h)
            h = T.relu(T.add(T.conv2d(h, p[f"dec.conv{i}.w"], stride=1, pad=1), p[f"dec.conv{i}.b"]))
        h = T.upsample2x(h)
        h = T.sigmoid(T.add(T.conv2d(h, p["dec.conv4.w"], stride=1, pad=1), p["dec.conv4.b"]))
        return h


class PerceptualNet:
    """Frozen five-block feature network with tap activations and a 4096 feature head."""

    CHANNELS = (16, 32, 64, 128, 256)
    TAP_LAYERS = (2, 4)

    def __init__(self, seed: int = PERCEPTUAL_SEED):
        rng = np.random.default_rng(seed)
        self._params: dict[str, Tensor] = {}
        chans = (IMAGE_CHANNELS,) + self.CHANNELS
        for i in range(5):
            w, b = _he_conv(rng, chans[i + 1], chans[i], 3, trainable=False)
            self._params[f"pnet.conv{i + 1}.w"] = w
            self._params[f"pnet.conv{i + 1}.b"] = b
        flat = self.CHANNELS[-1] * 2 * 2
        w, b = _he_linear(rng, flat, FEATURE_LEN, trainable=False)
        self._params["pnet.fc.w"] = w
        self._params["pnet.fc.b"] = b
        self.tap_layers = list(self.TAP_LAYERS)

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def load_parameters(self, values: dict[str, np.ndarray]) -> None:
        for name, tensor in self._params.items():
            if name not in values:
                raise DimensionError(f"missing parameter {name}")
            arr = np.asarray(values[name], dtype=np.float32)
            if arr.shape != tensor.data.shape:
                raise DimensionError(f"parameter {name}: stored {arr.shape} vs model {tensor.data.shape}")
            tensor.data = arr.copy()

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self._params):
            digest.update(name.encode())
            digest.update(self._params[name].data.tobytes())
        return digest.hexdigest()

    def _blocks(self, images, upto: int) -> tuple[list[Tensor], Tensor]:
        x = _as_image_batch(images)
        p = self._params
        taps: list[Tensor] = []
        h = x
        for i in range(1, upto + 1):
            h = T.relu(T.add(T.conv2d(h, p[f"pnet.conv{i}.w"], stride=2, pad=1), p[f"pnet.conv{i}.b"]))
            if i in self.tap_layers:
                taps.append(h)
        return taps, h

    def tap_activations(self, images) -> list[Tensor]:
        """Activations at the tap layers only (runs just deep enough)."""
        taps, _ = self._blocks(images, max(self.tap_layers))
        return taps

    def block_activations(self, images) -> dict[str, Tensor]:
        """All five block activations, keyed conv1..conv5."""
        x = _as_image_batch(images)
        p = self._params
        out: dict[str, Tensor] = {}
        h = x
        for i in range(1, 6):
            h = T.relu(T.add(T.conv2d(h, p[f"pnet.conv{i}.w"], stride=2, pad=1), p[f"pnet.conv{i}.b"]))
            out[f"conv{i}"] = h
        return out

    def forward(self, images) -> tuple[list[Tensor], Tensor]:
        """Tap activations plus the final 4096-long feature vector per image."""
        taps, h = self._blocks(images, 5)
        n = h.shape[0]
        flat = T.reshape(h, (n, -1))
        feat = T.add(T.matmul(flat, self._params["pnet.fc.w"]), self._params["pnet.fc.b"])
        return taps, feat


class StyleEncoderHead:
    """Two linear layers mapping 4096 features to a 1024 style embedding."""

    HIDDEN = 1024

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        w1, b1 = _he_linear(rng, FEATURE_LEN, self.HIDDEN, trainable=True)
        w2, b2 = _he_linear(rng, self.HIDDEN, STYLE_EMBED_LEN, trainable=True)
        self._params = {"head.fc1.w": w1, "head.fc1.b": b1, "head.fc2.w": w2, "head.fc2.b": b2}
        # Swappable so tests can probe the linear structure of the head.
        self.hidden_activation = T.relu

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def load_parameters(self, values: dict[str, np.ndarray]) -> None:
        for name, tensor in self._params.items():
            if name not in values:
                raise DimensionError(f"missing parameter {name}")
            arr = np.asarray(values[name], dtype=np.float32)
            if arr.shape != tensor.data.shape:
                raise DimensionError(f"parameter {name}: stored {arr.shape} vs model {tensor.data.shape}")
            tensor.data = arr.copy()

    def forward(self, features) -> Tensor:
        f = features if isinstance(features, Tensor) else Tensor(features)
        if f.data.ndim != 2 or f.shape[1] != FEATURE_LEN:
            raise DimensionError(f"expected Nx{FEATURE_LEN} features, got {f.shape}")
        p = self._params
        h = self.hidden_activation(T.add(T.matmul(f, p["head.fc1.w"]), p["head.fc1.b"]))
        return T.add(T.matmul(h, p["head.fc2.w"]), p["head.fc2.b"])


# Spec-facing functional wrappers.


def encode(model: VaeModel, images) -> LatentCode:
    return model.encode(images)


def reparameterize(code: LatentCode, noise) -> Tensor:
    """z = mean + exp(logvar / 2) * noise, differentiable w.r.t. both."""
    noise_arr = np.asarray(noise, dtype=np.float32)
    if noise_arr.shape[-1] != code.latent_dim:
        raise DimensionError(f"noise length {noise_arr.shape} does not match latent dim {code.latent_dim}")
    sigma = T.exp(T.mul(code.logvar, 0.5))
    return T.add(code.mean, T.mul(sigma, Tensor(noise_arr)))


def decode(model: VaeModel, z) -> Tensor:
    return model.decode(z)


def perceptual_features(net: PerceptualNet, images) -> tuple[list[Tensor], Tensor]:
    return net.forward(images)


def style_embed(head: StyleEncoderHead, features) -> Tensor:
    return head.forward(features)
