#!/usr/bin/env python3
"""Analyze a trained style space: embeddings, PCA, t-SNE, zero-shot k-NN.

Run demos/03_train_vae_triplet.py first; this reuses its checkpoint and
corpus.
"""

from pathlib import Path

import numpy as np

from stylespace import analysis, data, train

out = Path("demo_output/train")
if not (out / "model.ckpt").exists():
    raise SystemExit("run demos/03_train_vae_triplet.py first")

ckpt = train.load_checkpoint(out / "model.ckpt")

# Regenerate the corpus manifest deterministically (same seed as demo 03).
manifest, params = data.gen_synthetic(n_images=90, n_style_classes=6, seed=3, out_dir=out)
train_m, test_m = data.split(manifest, test_fraction=0.2, seed=3)

embeddings, errors = analysis.embed_dataset(ckpt, manifest)
assert not errors
analysis.save_embeddings(embeddings, out / "all.emb")
print(f"{len(embeddings)} embeddings of length {embeddings[0].vector.shape[0]}")

# PCA: how concentrated is the style variance?
x = np.stack([e.vector for e in embeddings])
_, projected, explained = analysis.pca(x, k=8)
share = explained / explained.sum()
print("top-8 PCA variance shares:", np.round(share, 3))

# Exact t-SNE to 2-D (PCA pre-reduction happens inside).
points, info = analysis.project_embeddings(embeddings, perplexity=12, iterations=400, seed=0)
analysis.save_projection(points, out / "projection.csv")
print(f"t-SNE: KL {info['kl_initial']:.3f} -> {info['kl_final']:.3f}, "
      f"projection -> {out / 'projection.csv'}")

# Zero-shot artist classification: train/test split by image, 1-NN vote.
train_ids = set(train_m.ids())
train_e = [e for e in embeddings if e.image_id in train_ids]
test_e = [e for e in embeddings if e.image_id not in train_ids]
_, accuracy = analysis.knn_classify(
    np.stack([e.vector for e in train_e]), [e.artist for e in train_e],
    np.stack([e.vector for e in test_e]), k=1,
    test_labels=[e.artist for e in test_e],
)
print(f"1-NN zero-shot class accuracy: {accuracy:.3f}  (chance {1 / 6:.3f})")
