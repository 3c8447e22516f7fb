"""Training over the four model variants, checkpointing, and evaluation.

Variants
--------
``vae``                 plain VAE batches; triplet labels ignored
``vae_triplet``         whole triplets per batch item; triplet term on the
                        encoder means
``frozen_net``          no training at all; embeddings come straight from the
                        frozen feature net (epochs are ignored, the metric
                        log stays empty)
``frozen_net_triplet``  trains only the style head on triplet loss over the
                        1024-long style embeddings

Checkpoint file format (bit-exact): magic ``STYL``, 1-byte version (=1),
4-byte little-endian tensor count; per tensor: 2-byte name length, UTF-8
name, 1-byte rank, rank x 4-byte little-endian dims, payload of 4-byte
little-endian floats; trailing 8-byte little-endian FNV-1a checksum of all
preceding bytes.  Config snapshot and epoch travel as ``meta/`` tensors.

Metric log: CSV with header ``epoch,kl,recon,triplet,percep,total,n_plus``;
component columns are per-epoch means of the raw (unweighted) values, total
is the weighted objective, n_plus the mean violation count per batch.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import DatasetManifest, TripletLabel, load_images
from .errors import ContractError, DimensionError, FormatError, NumericError
from .losses import LossWeights, TripletBatch, kl_loss, perceptual_loss, recon_loss, total_loss, triplet_loss
from .nets import LatentCode, PerceptualNet, StyleEncoderHead, VaeModel, reparameterize
from .tensor import AdamState, Tensor, adam_step, zero_grad

MODEL_VARIANTS = ("vae", "vae_triplet", "frozen_net", "frozen_net_triplet")

CHECKPOINT_MAGIC = b"STYL"
CHECKPOINT_VERSION = 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64_MASK = (1 << 64) - 1

METRIC_FIELDS = ("epoch", "kl", "recon", "triplet", "percep", "total", "n_plus")


@dataclass
class TrainConfig:
    model_variant: str = "vae_triplet"
    weights: LossWeights = field(default_factory=LossWeights)
    latent_dim: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 40
    batch_size: int = 8  # counted in triplets
    seed: int = 0

    def __post_init__(self):
        if self.model_variant not in MODEL_VARIANTS:
            raise ContractError(f"unknown model variant {self.model_variant!r}; use one of {MODEL_VARIANTS}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ContractError(f"epochs must be >= 0, got {self.epochs}")
        if self.latent_dim < 1:
            raise ContractError(f"latent_dim must be >= 1, got {self.latent_dim}")

    def to_json(self) -> str:
        obj = asdict(self)
        return json.dumps(obj, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        obj = json.loads(text)
        weights = LossWeights(**obj.pop("weights"))
        return cls(weights=weights, **obj)


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config: TrainConfig
    epoch: int

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.epoch == other.epoch
            and self.config == other.config
            and set(self.tensors) == set(other.tensors)
            and all(np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors)
        )


# ---------------------------------------------------------------------------
# checkpoint serialization


def fnv1a64(data: bytes, value: int = _FNV_OFFSET) -> int:
    for b in data:
        value = ((value ^ b) * _FNV_PRIME) & _U64_MASK
    return value


def _encode_tensor(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
    dims = b"".join(struct.pack("<I", d) for d in arr.shape)
    return head + dims + arr.astype("<f4").tobytes()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    entries = dict(ckpt.tensors)
    config_bytes = ckpt.config.to_json().encode("utf-8")
    entries["meta/config_json"] = np.frombuffer(config_bytes, dtype=np.uint8).astype(np.float32)
    entries["meta/epoch"] = np.array([ckpt.epoch], dtype=np.float32)

    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<B", CHECKPOINT_VERSION)
    blob += struct.pack("<I", len(entries))
    for name in sorted(entries):
        blob += _encode_tensor(name, entries[name])
    blob += struct.pack("<Q", fnv1a64(bytes(blob)))
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    if len(blob) < 17:
        raise FormatError(f"{path}: truncated header")
    version = blob[4]
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    stored = struct.unpack("<Q", blob[-8:])[0]
    if fnv1a64(blob[:-8]) != stored:
        raise FormatError(f"{path}: checksum mismatch, file is corrupt")

    count = struct.unpack("<I", blob[5:9])[0]
    offset = 9
    end = len(blob) - 8
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        if offset + 2 > end:
            raise FormatError(f"{path}: truncated tensor table")
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        try:
            name = blob[offset : offset + name_len].decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{path}: tensor name at offset {offset} is not UTF-8") from None
        offset += name_len
        if offset + 1 > end:
            raise FormatError(f"{path}: truncated tensor {name!r}")
        rank = blob[offset]
        offset += 1
        if offset + 4 * rank > end:
            raise FormatError(f"{path}: truncated dims for tensor {name!r}")
        dims = struct.unpack_from(f"<{rank}I", blob, offset) if rank else ()
        offset += 4 * rank
        n_bytes = 4 * math.prod(dims)  # python ints: exact even for absurd dims
        if offset + n_bytes > end:
            raise FormatError(f"{path}: truncated payload for tensor {name!r}")
        arr = np.frombuffer(blob, dtype="<f4", count=n_bytes // 4, offset=offset).reshape(dims)
        tensors[name] = arr.copy()
        offset += n_bytes
    if offset != end:
        raise FormatError(f"{path}: {end - offset} trailing bytes after tensor table")

    try:
        config_arr = tensors.pop("meta/config_json")
        epoch_arr = tensors.pop("meta/epoch")
        config = TrainConfig.from_json(config_arr.astype(np.uint8).tobytes().decode("utf-8"))
    except (KeyError, ValueError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: bad checkpoint metadata: {e}") from None
    return Checkpoint(tensors=tensors, config=config, epoch=int(epoch_arr[0]))


# ---------------------------------------------------------------------------
# model construction / embeddings


def build_models(ckpt: Checkpoint):
    """Instantiate the variant's models and load checkpoint parameters."""
    variant = ckpt.config.model_variant
    if variant in ("vae", "vae_triplet"):
        model = VaeModel(latent_dim=ckpt.config.latent_dim, seed=ckpt.config.seed)
        model.load_parameters(ckpt.tensors)
        return {"vae": model}
    pnet = PerceptualNet()
    pnet.load_parameters({k: v for k, v in ckpt.tensors.items() if k.startswith("pnet.")})
    if variant == "frozen_net":
        return {"pnet": pnet}
    head = StyleEncoderHead(seed=ckpt.config.seed)
    head.load_parameters({k: v for k, v in ckpt.tensors.items() if k.startswith("head.")})
    return {"pnet": pnet, "head": head}


def embedding_length(ckpt: Checkpoint) -> int:
    variant = ckpt.config.model_variant
    if variant in ("vae", "vae_triplet"):
        return ckpt.config.latent_dim
    return 4096 if variant == "frozen_net" else 1024


def embed_images(ckpt: Checkpoint, images: np.ndarray, models=None, chunk: int = 64) -> np.ndarray:
    """Variant-appropriate embedding rows for an (N, 3, 64, 64) image stack.

    VAE variants embed with the encoder mean; ``frozen_net`` uses the raw
    4096 feature vector; ``frozen_net_triplet`` the 1024 style embedding.
    """
    models = models or build_models(ckpt)
    variant = ckpt.config.model_variant
    rows = []
    for start in range(0, images.shape[0], chunk):
        batch = images[start : start + chunk]
        if variant in ("vae", "vae_triplet"):
            rows.append(models["vae"].encode(batch).mean.data)
        else:
            _, feat = models["pnet"].forward(batch)
            if variant == "frozen_net":
                rows.append(feat.data)
            else:
                rows.append(models["head"].forward(feat).data)
    return np.concatenate(rows, axis=0)


# ---------------------------------------------------------------------------
# training


def _label_indices(labels, id_to_idx) -> np.ndarray:
    rows = []
    for lab in labels:
        try:
            rows.append((id_to_idx[lab.anchor], id_to_idx[lab.positive], id_to_idx[lab.negative]))
        except KeyError as e:
            raise ContractError(f"label references id {e} missing from the manifest") from None
    return np.asarray(rows, dtype=np.int64)


def _epoch_row(epoch: int, sums: dict[str, float], steps: int) -> dict[str, float]:
    row = {"epoch": float(epoch)}
    for key in ("kl", "recon", "triplet", "percep", "total", "n_plus"):
        row[key] = sums[key] / max(steps, 1)
    return row


def write_metrics(rows, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(",".join(METRIC_FIELDS) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_metric(row[k], k) for k in METRIC_FIELDS) + "\n")


def _fmt_metric(value: float, key: str) -> str:
    return str(int(value)) if key == "epoch" else f"{value:.6g}"


def train_model(
    config: TrainConfig,
    manifest: DatasetManifest,
    labels: list[TripletLabel] | None = None,
) -> tuple[Checkpoint, list[dict]]:
    """Train the configured variant; returns the checkpoint and per-epoch metrics."""
    variant = config.model_variant
    labels = labels or []
    if variant in ("vae_triplet", "frozen_net_triplet") and not labels:
        raise ContractError(f"variant {variant} needs a non-empty triplet label set")

    if variant == "frozen_net":
        pnet = PerceptualNet()
        tensors = {k: v.data.copy() for k, v in pnet.parameters().items()}
        return Checkpoint(tensors=tensors, config=config, epoch=0), []

    rng = np.random.default_rng(config.seed)
    images = load_images(manifest)
    id_to_idx = {image_id: i for i, image_id in enumerate(manifest.ids())}

    if variant == "frozen_net_triplet":
        return _train_head(config, images, labels, id_to_idx, rng)
    return _train_vae(config, images, labels, id_to_idx, rng)


def _step_params(params: dict[str, Tensor]):
    return [params[k] for k in sorted(params)]


def _grads_for(params: list[Tensor]) -> list[np.ndarray]:
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def _train_vae(config, images, labels, id_to_idx, rng) -> tuple[Checkpoint, list[dict]]:
    model = VaeModel(latent_dim=config.latent_dim, seed=config.seed)
    pnet = PerceptualNet()
    params = _step_params(model.parameters())
    state = AdamState.for_params(params)
    w = config.weights
    use_triplet = config.model_variant == "vae_triplet"
    triplet_rows = _label_indices(labels, id_to_idx) if use_triplet else None

    metrics: list[dict] = []
    for epoch in range(config.epochs):
        sums = dict.fromkeys(("kl", "recon", "triplet", "percep", "total", "n_plus"), 0.0)
        steps = 0
        if use_triplet:
            order = rng.permutation(len(triplet_rows))
            batches = [triplet_rows[order[s : s + config.batch_size]]
                       for s in range(0, len(order), config.batch_size)]
        else:
            order = rng.permutation(images.shape[0])
            per = 3 * config.batch_size
            batches = [order[s : s + per] for s in range(0, len(order), per)]

        for step, batch in enumerate(batches):
            zero_grad(params)
            if use_triplet:
                code_a = model.encode(images[batch[:, 0]])
                code_p = model.encode(images[batch[:, 1]])
                code_n = model.encode(images[batch[:, 2]])
                mean = T.concat([code_a.mean, code_p.mean, code_n.mean], axis=0)
                logvar = T.concat([code_a.logvar, code_p.logvar, code_n.logvar], axis=0)
                code = LatentCode(mean, logvar)
                inputs = np.concatenate([images[batch[:, 0]], images[batch[:, 1]], images[batch[:, 2]]])
                tri_raw, n_plus = triplet_loss(
                    TripletBatch(code_a.mean, code_p.mean, code_n.mean), w.margin, 1.0
                )
            else:
                inputs = images[batch]
                code = model.encode(inputs)
                tri_raw, n_plus = Tensor(np.float32(0.0)), 0

            noise = rng.standard_normal((inputs.shape[0], config.latent_dim)).astype(np.float32)
            z = reparameterize(code, noise)
            recon = model.decode(z)

            comps = {
                "kl": kl_loss(code),
                "recon": recon_loss(inputs, recon),
                "triplet": tri_raw,
                "percep": perceptual_loss(pnet, inputs, recon),
            }
            total = total_loss(w, comps)
            if not np.isfinite(total.data).all():
                raise NumericError(f"non-finite loss at epoch {epoch} step {step}")
            total.backward()
            adam_step(params, _grads_for(params), state,
                      lr=config.lr, beta1=config.beta1, beta2=config.beta2)

            for key, comp in comps.items():
                sums[key] += comp.item()
            sums["total"] += total.item()
            sums["n_plus"] += float(n_plus)
            steps += 1
        metrics.append(_epoch_row(epoch, sums, steps))

    tensors = {k: v.data.copy() for k, v in model.parameters().items()}
    return Checkpoint(tensors=tensors, config=config, epoch=config.epochs), metrics


def _train_head(config, images, labels, id_to_idx, rng) -> tuple[Checkpoint, list[dict]]:
    pnet = PerceptualNet()
    head = StyleEncoderHead(seed=config.seed)
    params = _step_params(head.parameters())
    state = AdamState.for_params(params)
    w = config.weights
    triplet_rows = _label_indices(labels, id_to_idx)

    # The net is frozen, so the 4096 features are computed once up front.
    feats = np.concatenate(
        [pnet.forward(images[s : s + 64])[1].data for s in range(0, images.shape[0], 64)]
    )

    metrics: list[dict] = []
    for epoch in range(config.epochs):
        sums = dict.fromkeys(("kl", "recon", "triplet", "percep", "total", "n_plus"), 0.0)
        steps = 0
        order = rng.permutation(len(triplet_rows))
        for s in range(0, len(order), config.batch_size):
            batch = triplet_rows[order[s : s + config.batch_size]]
            zero_grad(params)
            emb_a = head.forward(feats[batch[:, 0]])
            emb_p = head.forward(feats[batch[:, 1]])
            emb_n = head.forward(feats[batch[:, 2]])
            tri_raw, n_plus = triplet_loss(TripletBatch(emb_a, emb_p, emb_n), w.margin, 1.0)
            total = total_loss(w, {"triplet": tri_raw})
            if not np.isfinite(total.data).all():
                raise NumericError(f"non-finite loss at epoch {epoch} step {s // config.batch_size}")
            total.backward()
            adam_step(params, _grads_for(params), state,
                      lr=config.lr, beta1=config.beta1, beta2=config.beta2)
            sums["triplet"] += tri_raw.item()
            sums["total"] += total.item()
            sums["n_plus"] += float(n_plus)
            steps += 1
        metrics.append(_epoch_row(epoch, sums, steps))

    tensors = {k: v.data.copy() for k, v in pnet.parameters().items()}
    tensors.update({k: v.data.copy() for k, v in head.parameters().items()})
    return Checkpoint(tensors=tensors, config=config, epoch=config.epochs), metrics


# ---------------------------------------------------------------------------
# evaluation


def triplet_satisfaction(embeddings: dict[str, np.ndarray], labels, margin: float) -> float:
    """Fraction of labels with ||e_a-e_p||^2 - ||e_a-e_n||^2 + margin <= 0."""
    if not labels:
        raise ContractError("cannot evaluate an empty label set")
    satisfied = 0
    for lab in labels:
        try:
            a = embeddings[lab.anchor].astype(np.float64)
            p = embeddings[lab.positive].astype(np.float64)
            n = embeddings[lab.negative].astype(np.float64)
        except KeyError as e:
            raise ContractError(f"label references id {e} with no embedding") from None
        if np.sum((a - p) ** 2) - np.sum((a - n) ** 2) + margin <= 0.0:
            satisfied += 1
    return satisfied / len(labels)


def eval_triplet_satisfaction(
    ckpt: Checkpoint, manifest: DatasetManifest, labels, margin: float
) -> float:
    """Triplet satisfaction over the variant's embeddings of manifest images."""
    wanted = sorted({i for lab in labels for i in (lab.anchor, lab.positive, lab.negative)})
    images = load_images(manifest, ids=wanted)
    vectors = embed_images(ckpt, images)
    return triplet_satisfaction(dict(zip(wanted, vectors)), labels, margin)
