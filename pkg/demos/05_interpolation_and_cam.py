#!/usr/bin/env python3
"""Walk the style space between two portraits and map triplet-loss attention.

Run demos/03_train_vae_triplet.py first; this reuses its checkpoint and
corpus.  Outputs: interpolation frames plus grayscale/overlay activation
maps under demo_output/.
"""

from pathlib import Path

import numpy as np

from stylespace import analysis, cam, data, train

out = Path("demo_output/train")
if not (out / "model.ckpt").exists():
    raise SystemExit("run demos/03_train_vae_triplet.py first")

ckpt = train.load_checkpoint(out / "model.ckpt")
manifest, params = data.gen_synthetic(n_images=90, n_style_classes=6, seed=3, out_dir=out)
images = data.load_images(manifest)

# Pick two images from different classes and decode the latent line segment.
ids = manifest.ids()
src, tgt = 0, 1  # class 0 and class 1 (images alternate classes)
frames = analysis.interpolate(ckpt, images[src], images[tgt], steps=8)
analysis.save_interpolation_frames(frames, Path("demo_output/frames"))
print(f"wrote {len(frames)} frames to demo_output/frames "
      f"({ids[src]} -> {ids[tgt]}); endpoints equal direct reconstructions")

# Grad-CAM over one triplet: which regions drive the hinge?
trip = images[[0, 6, 1]]  # anchor/positive share a class, negative differs
emb = train.embed_images(ckpt, trip).astype(np.float64)
arg = float(np.sum((emb[0] - emb[1]) ** 2) - np.sum((emb[0] - emb[2]) ** 2))
margin = max(0.0, -arg) + 0.5  # force an active hinge so gradients flow
maps, inactive = cam.grad_cam(ckpt, trip, image_ids=(ids[0], ids[6], ids[1]), margin=margin)
print(f"hinge active: {not inactive}; map resolution {maps[0].values.shape}")
written = cam.export_maps(maps, trip, Path("demo_output/maps"))
for p in written:
    print(f"  {p}")
