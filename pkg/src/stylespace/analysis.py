"""Latent-space analysis: embedding export, PCA, exact t-SNE, k-NN artist
classification, and latent interpolation.

Export formats: embeddings as newline-delimited JSON records
``{id, variant, vector}`` (plus ``artist`` when known, so classification can
run from the embedding file alone); 2-D projections as CSV with header
``id,artist,x,y``; interpolation frames as ``frame_{index}_{t:.3}.png``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DatasetManifest, load_image, save_image
from .errors import ContractError, DimensionError, FormatError
from .train import Checkpoint, build_models, embed_images

TSNE_DEFAULT_PERPLEXITY = 30.0
TSNE_PCA_DIMS = 50


@dataclass
class StyleEmbedding:
    image_id: str
    model_variant: str
    vector: np.ndarray
    artist: str | None = None


@dataclass
class ProjectionPoint:
    image_id: str
    artist: str
    x: float
    y: float


# ---------------------------------------------------------------------------
# dataset embedding


def embed_dataset(ckpt: Checkpoint, manifest: DatasetManifest):
    """One embedding per manifest image.

    Unreadable images are reported in the returned error list; the rest of
    the collection is still produced.  Returns (embeddings, errors).
    """
    models = build_models(ckpt)
    variant = ckpt.config.model_variant
    loaded: list[tuple[str, str, np.ndarray]] = []
    errors: list[tuple[str, str]] = []
    for rec in manifest.records:
        try:
            loaded.append((rec.id, rec.artist, load_image(manifest.resolve_path(rec))))
        except OSError as e:
            errors.append((rec.id, str(e)))

    embeddings: list[StyleEmbedding] = []
    chunk = 64
    for start in range(0, len(loaded), chunk):
        part = loaded[start : start + chunk]
        stack = np.stack([img for _, _, img in part])
        vectors = embed_images(ckpt, stack, models=models)
        for (image_id, artist, _), vec in zip(part, vectors):
            embeddings.append(StyleEmbedding(image_id, variant, vec.copy(), artist))
    return embeddings, errors


def save_embeddings(embeddings, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for e in embeddings:
            obj = {"id": e.image_id, "variant": e.model_variant,
                   "vector": [round(float(v), 8) for v in np.asarray(e.vector).ravel()]}
            if e.artist is not None:
                obj["artist"] = e.artist
            fh.write(json.dumps(obj) + "\n")


def load_embeddings(path) -> list[StyleEmbedding]:
    path = Path(path)
    out: list[StyleEmbedding] = []
    lengths: set[int] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                vec = np.asarray(obj["vector"], dtype=np.float32)
                out.append(StyleEmbedding(str(obj["id"]), str(obj["variant"]), vec,
                                          obj.get("artist")))
            except (KeyError, ValueError, json.JSONDecodeError) as e:
                raise FormatError(f"{path}:{lineno}: bad embedding record: {e}") from None
            lengths.add(vec.shape[0])
    if len(lengths) > 1:
        raise FormatError(f"{path}: embeddings have mixed lengths {sorted(lengths)}")
    return out


# ---------------------------------------------------------------------------
# PCA


def pca(x: np.ndarray, k: int):
    """Principal components via eigendecomposition of the covariance matrix.

    Returns (components k x d orthonormal, projected n x k, explained
    variance, non-increasing).  Component signs follow a deterministic
    convention: the largest-magnitude coordinate of each component is made
    positive.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"pca expects a 2-D matrix, got shape {x.shape}")
    n, d = x.shape
    if n < 2:
        raise ContractError(f"pca needs n >= 2 rows, got {n}")
    if not 1 <= k <= min(n, d):
        raise ContractError(f"k must lie in [1, min(n, d)] = [1, {min(n, d)}], got {k}")

    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:k]
    components = eigvecs[:, order].T
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    explained = np.maximum(eigvals[order], 0.0)
    projected = centered @ components.T
    return components, projected, explained


# ---------------------------------------------------------------------------
# exact t-SNE


def tsne_affinities(x: np.ndarray, perplexity: float, tol: float = 1e-4):
    """Conditional affinities with per-point sigmas binary-searched so each
    row's Shannon entropy (bits) matches log2(perplexity) within ``tol``.

    Returns (conditional P with zero diagonal and rows summing to 1,
    per-point entropies in bits).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    target = np.log2(perplexity)

    p = np.zeros((n, n))
    entropies = np.empty(n)
    for i in range(n):
        d_row = np.delete(d2[i], i)
        beta_lo, beta_hi = 0.0, np.inf
        beta = 1.0
        row = None
        for _ in range(200):
            w = np.exp(-beta * (d_row - d_row.min()))
            total = w.sum()
            row = w / total
            nz = row[row > 0]
            entropy = float(-np.sum(nz * np.log2(nz)))
            if abs(entropy - target) <= tol:
                break
            if entropy > target:
                beta_lo = beta
                beta = beta * 2.0 if beta_hi == np.inf else (beta + beta_hi) / 2.0
            else:
                beta_hi = beta
                beta = beta / 2.0 if beta_lo == 0.0 else (beta + beta_lo) / 2.0
        entropies[i] = entropy
        p[i, np.arange(n) != i] = row
    return p, entropies


def _tsne_kl(p_joint: np.ndarray, y: np.ndarray) -> float:
    num = 1.0 / (1.0 + np.sum((y[:, None, :] - y[None, :, :]) ** 2, axis=2))
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), 1e-12)
    mask = p_joint > 0
    return float(np.sum(p_joint[mask] * np.log(p_joint[mask] / q[mask])))


def tsne(
    x: np.ndarray,
    perplexity: float | None = None,
    iterations: int = 1000,
    seed: int = 0,
    learning_rate: float = 200.0,
    early_exaggeration: float = 12.0,
    exaggeration_iters: int = 250,
):
    """Exact O(n^2) t-SNE to 2-D.

    High-dimensional input is first reduced with PCA to at most 50 dims.
    The default perplexity of 30 is clamped to (n-1)/3; an explicit
    perplexity that violates n > 3*perplexity is an error.  The early
    exaggeration phase never exceeds a quarter of the run, so short runs
    still finish on the true objective.  Returns (coordinates n x 2, info
    dict with kl_initial/kl_final/entropies).
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if perplexity is None:
        perplexity = min(TSNE_DEFAULT_PERPLEXITY, (n - 1) / 3.0)
    if n <= 3 * perplexity:
        raise ContractError(f"perplexity {perplexity} too large for n={n} (need n > 3*perplexity)")
    if perplexity < 1.0:
        raise ContractError(f"perplexity must be >= 1, got {perplexity}")

    if d > TSNE_PCA_DIMS and n > TSNE_PCA_DIMS:
        _, x, _ = pca(x, TSNE_PCA_DIMS)

    cond, entropies = tsne_affinities(x, perplexity)
    p_joint = (cond + cond.T) / (2.0 * n)
    p_joint = np.maximum(p_joint, 1e-12)
    np.fill_diagonal(p_joint, 0.0)

    rng = np.random.default_rng(seed)
    y = rng.standard_normal((n, 2)) * 1e-4
    kl_initial = _tsne_kl(p_joint, y)

    stop_exaggeration = min(exaggeration_iters, iterations // 4)
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    for it in range(iterations):
        exaggerate = early_exaggeration if it < stop_exaggeration else 1.0
        momentum = 0.5 if it < stop_exaggeration else 0.8

        diff = y[:, None, :] - y[None, :, :]
        num = 1.0 / (1.0 + np.sum(diff**2, axis=2))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)
        coeff = (exaggerate * p_joint - q) * num
        grad = 4.0 * np.einsum("ij,ijk->ik", coeff, diff)

        # per-coordinate adaptive gains, as in the reference implementation
        same_sign = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        velocity = momentum * velocity - learning_rate * gains * grad
        y = y + velocity
        y = y - y.mean(axis=0)

    info = {"kl_initial": kl_initial, "kl_final": _tsne_kl(p_joint, y), "entropies": entropies,
            "perplexity": perplexity}
    return y, info


def project_embeddings(embeddings, perplexity=None, iterations=1000, seed=0):
    """PCA + t-SNE pipeline from StyleEmbedding rows to ProjectionPoint rows."""
    x = np.stack([np.asarray(e.vector, dtype=np.float64) for e in embeddings])
    y, info = tsne(x, perplexity=perplexity, iterations=iterations, seed=seed)
    points = [
        ProjectionPoint(e.image_id, e.artist or "", float(cx), float(cy))
        for e, (cx, cy) in zip(embeddings, y)
    ]
    return points, info


def top_artists(embeddings, n: int = 5) -> list[str]:
    """Most represented artists, descending by count with lexicographic tie-break."""
    counts: dict[str, int] = {}
    for e in embeddings:
        if e.artist:
            counts[e.artist] = counts.get(e.artist, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [artist for artist, _ in ranked[:n]]


def save_projection(points, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("id,artist,x,y\n")
        for p in points:
            fh.write(f"{p.image_id},{p.artist},{p.x:.6f},{p.y:.6f}\n")


# ---------------------------------------------------------------------------
# k-NN classification


def knn_classify(train_x, train_labels, test_x, k: int, test_labels=None):
    """Majority vote over the k Euclidean-nearest train rows.

    Vote ties break toward the label with smaller mean distance within the
    neighbour set, then lexicographically.  Returns (predictions, accuracy)
    where accuracy is None without test labels.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    train_labels = list(train_labels)
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if len(train_labels) != train_x.shape[0] or train_x.shape[0] == 0:
        raise ContractError("train embeddings and labels must align and be non-empty")
    if train_x.ndim != 2 or test_x.ndim != 2 or train_x.shape[1] != test_x.shape[1]:
        raise DimensionError(f"embedding lengths differ: {train_x.shape} vs {test_x.shape}")

    k_eff = min(k, train_x.shape[0])
    sq_tr = np.sum(train_x * train_x, axis=1)
    predictions: list[str] = []
    chunk = 256
    for start in range(0, test_x.shape[0], chunk):
        part = test_x[start : start + chunk]
        d2 = np.maximum(
            np.sum(part * part, axis=1)[:, None] + sq_tr[None, :] - 2.0 * (part @ train_x.T), 0.0
        )
        near = np.argsort(d2, axis=1, kind="stable")[:, :k_eff]
        for row_d2, idx in zip(d2, near):
            votes: dict[str, list[float]] = {}
            for j in idx:
                votes.setdefault(train_labels[j], []).append(float(row_d2[j]))
            best = min(
                votes.items(),
                key=lambda kv: (-len(kv[1]), float(np.mean(kv[1])), kv[0]),
            )
            predictions.append(best[0])

    accuracy = None
    if test_labels is not None:
        test_labels = list(test_labels)
        if len(test_labels) != len(predictions):
            raise ContractError("test label count does not match test embeddings")
        accuracy = float(np.mean([p == t for p, t in zip(predictions, test_labels)]))
    return predictions, accuracy


# ---------------------------------------------------------------------------
# latent interpolation


def interpolate(ckpt: Checkpoint, source_image: np.ndarray, target_image: np.ndarray, steps: int):
    """Decode latents linearly interpolated between two images' encoder means.

    Returns a list of (t, frame) pairs for t evenly spaced in [0, 1].
    Frames are decoded one latent at a time so the endpoints are bitwise
    equal to direct reconstructions.
    """
    if ckpt.config.model_variant not in ("vae", "vae_triplet"):
        raise ContractError(
            f"variant {ckpt.config.model_variant} has no decoder; interpolation needs a VAE checkpoint"
        )
    if steps < 2:
        raise ContractError(f"steps must be >= 2, got {steps}")
    models = build_models(ckpt)
    vae = models["vae"]
    z_src = vae.encode(source_image[None] if source_image.ndim == 3 else source_image).mean.data[0]
    z_tgt = vae.encode(target_image[None] if target_image.ndim == 3 else target_image).mean.data[0]

    frames = []
    for t in np.linspace(0.0, 1.0, steps):
        t32 = np.float32(t)
        z_t = (np.float32(1.0) - t32) * z_src + t32 * z_tgt
        frame = vae.decode(z_t[None]).data[0]
        frames.append((float(t), frame))
    return frames


def save_interpolation_frames(frames, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for index, (t, frame) in enumerate(frames):
        save_image(frame, out_dir / f"frame_{index}_{t:.3}.png")
