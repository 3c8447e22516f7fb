#!/usr/bin/env python3
"""Pilot run backing the end-to-end acceptance thresholds.

Drives the full CLI pipeline on the synthetic corpus (600 images, 6 style
classes, variant vae_triplet, 40 epochs, seed 1) and reports the two
headline numbers against their thresholds:

    held-out oracle-triplet satisfaction >= 0.75   (chance 0.5)
    1-NN zero-shot class accuracy        >= 0.50   (chance ~0.167)

Last recorded pilot on a single CPU core: satisfaction 0.9444, 1-NN
accuracy 1.0000, training wall time ~13 min.

Usage: python3 scripts/pilot.py [workdir]

The workdir defaults to a fresh temporary directory; pass one to keep the
artifacts (checkpoint, metric log, embeddings) for inspection.  Each stage
runs as its own subprocess, exactly like a scripted shell pipeline.
"""

from __future__ import annotations

import os
import subprocess
import sys
import tempfile
import time
from pathlib import Path

SATISFACTION_THRESHOLD = 0.75
KNN_THRESHOLD = 0.50

N_IMAGES = 600
N_CLASSES = 6
EPOCHS = 40
SEED = 1
TEST_FRACTION = 0.15
BATCH_SIZE = 8


def run(argv: list[str]) -> dict[str, str]:
    """One pipeline stage in a subprocess; returns its key=value summary."""
    env = dict(os.environ)
    # keep big numpy buffers on the heap; training churns hundreds of MB/step
    env.setdefault("MALLOC_MMAP_MAX_", "0")
    env.setdefault("MALLOC_TRIM_THRESHOLD_", "-1")
    result = subprocess.run([sys.executable, "-m", "stylespace.cli", *argv],
                            capture_output=True, text=True, env=env)
    sys.stdout.write(result.stdout)
    sys.stdout.flush()
    if result.returncode != 0:
        sys.stderr.write(result.stderr)
        raise SystemExit(f"pipeline step failed (exit {result.returncode}): {argv}")
    line = result.stdout.strip().splitlines()[-1]
    return dict(pair.split("=", 1) for pair in line.split())


def pilot(root: Path) -> dict[str, float]:
    d = root / "data"
    started = time.time()

    run(["synth-data", "--n", str(N_IMAGES), "--classes", str(N_CLASSES),
         "--seed", str(SEED), "--test-fraction", str(TEST_FRACTION), "--out", str(d)])
    run(["make-triplets", "--manifest", str(d / "manifest_train.jsonl"),
         "--seed", str(SEED), "--out", str(root / "train_triplets.jsonl")])
    run(["oracle-label", "--triplets", str(root / "train_triplets.jsonl"),
         "--params", str(d / "params.jsonl"), "--out", str(root / "train_labels.jsonl")])

    t_train = time.time()
    run(["train", "--manifest", str(d / "manifest_train.jsonl"),
         "--labels", str(root / "train_labels.jsonl"), "--variant", "vae_triplet",
         "--epochs", str(EPOCHS), "--batch-size", str(BATCH_SIZE), "--seed", str(SEED),
         "--out", str(root / "model.ckpt"), "--metrics", str(root / "metrics.csv")])
    train_minutes = (time.time() - t_train) / 60

    run(["make-triplets", "--manifest", str(d / "manifest_test.jsonl"),
         "--seed", str(SEED + 1), "--out", str(root / "test_triplets.jsonl")])
    run(["oracle-label", "--triplets", str(root / "test_triplets.jsonl"),
         "--params", str(d / "params.jsonl"), "--out", str(root / "test_labels.jsonl")])

    rate = float(run(["eval-triplets", "--checkpoint", str(root / "model.ckpt"),
                      "--manifest", str(d / "manifest_test.jsonl"),
                      "--labels", str(root / "test_labels.jsonl")])["rate"])

    run(["embed", "--checkpoint", str(root / "model.ckpt"),
         "--manifest", str(d / "manifest_train.jsonl"), "--out", str(root / "train.emb")])
    run(["embed", "--checkpoint", str(root / "model.ckpt"),
         "--manifest", str(d / "manifest_test.jsonl"), "--out", str(root / "test.emb")])
    accuracy = float(run(["classify", "--train", str(root / "train.emb"),
                          "--test", str(root / "test.emb"), "--k", "1"])["accuracy"])

    total_minutes = (time.time() - started) / 60
    return {"satisfaction": rate, "knn_accuracy": accuracy,
            "train_minutes": train_minutes, "total_minutes": total_minutes}


def main() -> int:
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="pilot-"))
    root.mkdir(parents=True, exist_ok=True)
    print(f"pilot workdir: {root}", flush=True)
    results = pilot(root)
    ok_rate = results["satisfaction"] >= SATISFACTION_THRESHOLD
    ok_knn = results["knn_accuracy"] >= KNN_THRESHOLD
    print(f"held-out triplet satisfaction: {results['satisfaction']:.4f} "
          f"(threshold {SATISFACTION_THRESHOLD}) -> {'PASS' if ok_rate else 'FAIL'}")
    print(f"1-NN zero-shot accuracy:       {results['knn_accuracy']:.4f} "
          f"(threshold {KNN_THRESHOLD}) -> {'PASS' if ok_knn else 'FAIL'}")
    print(f"training wall time: {results['train_minutes']:.1f} min "
          f"(whole pilot {results['total_minutes']:.1f} min)")
    return 0 if (ok_rate and ok_knn) else 1


if __name__ == "__main__":
    sys.exit(main())
