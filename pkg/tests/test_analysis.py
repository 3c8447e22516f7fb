"""Analysis tests: PCA, t-SNE, k-NN, embeddings, interpolation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stylespace import analysis, data, train
from stylespace.errors import ContractError, DimensionError
from stylespace.train import TrainConfig

# ---------------------------------------------------------------------------
# PCA


def test_pca_degenerate_line():
    rng = np.random.default_rng(0)
    t = rng.standard_normal(40)
    direction = np.array([1.0, -2.0, 0.5])
    x = np.outer(t, direction) + 7.0
    components, projected, explained = analysis.pca(x, 2)
    assert explained[0] / explained.sum() >= 0.9999
    assert projected.shape == (40, 2)


def test_pca_orthonormal_components():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((30, 6))
    components, _, explained = analysis.pca(x, 4)
    gram = components @ components.T
    assert np.allclose(gram, np.eye(4), atol=1e-6)
    assert np.all(np.diff(explained) <= 1e-12)


def test_pca_full_rank_reconstruction():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((25, 5))
    components, projected, _ = analysis.pca(x, 5)
    recon = projected @ components + x.mean(axis=0)
    rel = np.linalg.norm(recon - x) / np.linalg.norm(x)
    assert rel <= 1e-5


def test_pca_sign_convention_deterministic():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((20, 4))
    a = analysis.pca(x, 3)
    b = analysis.pca(x.copy(), 3)
    assert np.array_equal(a[0], b[0])
    for row in a[0]:
        assert row[np.argmax(np.abs(row))] > 0


def test_pca_rejects_bad_k():
    x = np.zeros((5, 3))
    with pytest.raises(ContractError):
        analysis.pca(x, 0)
    with pytest.raises(ContractError):
        analysis.pca(x, 4)
    with pytest.raises(ContractError):
        analysis.pca(np.zeros((1, 3)), 1)


def test_pca_then_knn_matches_raw_space():
    # full-rank projection preserves distances, hence k-NN decisions
    rng = np.random.default_rng(4)
    x_train = rng.standard_normal((40, 6))
    labels = [str(i % 4) for i in range(40)]
    x_test = rng.standard_normal((15, 6))
    components, _, _ = analysis.pca(np.vstack([x_train, x_test]), 6)
    mu = np.vstack([x_train, x_test]).mean(axis=0)
    pro_train = (x_train - mu) @ components.T
    pro_test = (x_test - mu) @ components.T
    for k in (1, 3):
        raw, _ = analysis.knn_classify(x_train, labels, x_test, k)
        low, _ = analysis.knn_classify(pro_train, labels, pro_test, k)
        assert raw == low


# ---------------------------------------------------------------------------
# t-SNE


def two_blobs(n=60, d=8, gap=12.0, seed=0):
    rng = np.random.default_rng(seed)
    half = n // 2
    a = rng.standard_normal((half, d))
    b = rng.standard_normal((n - half, d))
    b[:, 0] += gap
    labels = np.array([0] * half + [1] * (n - half))
    return np.vstack([a, b]), labels


def test_tsne_affinity_contracts():
    x, _ = two_blobs(n=40)
    perplexity = 10.0
    p, entropies = analysis.tsne_affinities(x, perplexity)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)
    assert np.allclose(entropies, np.log2(perplexity), atol=1e-4)
    assert np.allclose(np.diag(p), 0.0)
    joint = (p + p.T) / (2 * x.shape[0])
    assert np.allclose(joint, joint.T)


def test_tsne_two_blob_separability():
    x, labels = two_blobs(n=60)
    y, info = analysis.tsne(x, perplexity=10, iterations=500, seed=0)
    assert y.shape == (60, 2)
    assert info["kl_final"] < info["kl_initial"]
    # separable by a linear threshold along the class-centroid axis
    mu0, mu1 = y[labels == 0].mean(axis=0), y[labels == 1].mean(axis=0)
    axis = mu1 - mu0
    proj = y @ axis
    threshold = (mu0 @ axis + mu1 @ axis) / 2
    pred = (proj > threshold).astype(int)
    accuracy = max((pred == labels).mean(), (1 - pred == labels).mean())
    assert accuracy >= 0.95


def test_tsne_deterministic():
    x, _ = two_blobs(n=40)
    y1, _ = analysis.tsne(x, perplexity=8, iterations=120, seed=3)
    y2, _ = analysis.tsne(x, perplexity=8, iterations=120, seed=3)
    assert np.array_equal(y1, y2)


def test_tsne_rejects_large_perplexity():
    x, _ = two_blobs(n=30)
    with pytest.raises(ContractError):
        analysis.tsne(x, perplexity=10.0)


def test_tsne_high_dim_goes_through_pca():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((60, 128))
    x[:20, :3] += 9.0
    x[20:40, 3:6] -= 9.0
    y, info = analysis.tsne(x, perplexity=8, iterations=300, seed=1)
    assert y.shape == (60, 2)
    assert np.all(np.isfinite(y))
    assert info["kl_final"] < info["kl_initial"]


# ---------------------------------------------------------------------------
# k-NN


def test_knn_identity_point():
    train_x = np.array([[0.0, 0.0], [5.0, 5.0], [9.0, 0.0]])
    labels = ["a", "b", "c"]
    preds, _ = analysis.knn_classify(train_x, labels, np.array([[5.0, 5.0]]), k=1)
    assert preds == ["b"]


def test_knn_majority_vote():
    train_x = np.array([[0.0], [0.1], [0.2], [5.0]])
    labels = ["a", "a", "b", "b"]
    preds, _ = analysis.knn_classify(train_x, labels, np.array([[0.05]]), k=3)
    assert preds == ["a"]


def test_knn_tie_breaks_by_mean_distance_then_label():
    train_x = np.array([[0.0], [1.0], [2.0], [3.0]])
    preds, _ = analysis.knn_classify(train_x, ["b", "a", "a", "b"], np.array([[1.5]]), k=4)
    assert preds == ["a"]  # same votes, 'a' members are nearer on average
    train_x = np.array([[1.0], [-1.0]])
    preds, _ = analysis.knn_classify(train_x, ["z", "q"], np.array([[0.0]]), k=2)
    assert preds == ["q"]  # full tie falls back to lexicographic order


def test_knn_accuracy():
    train_x = np.array([[0.0], [10.0]])
    preds, acc = analysis.knn_classify(train_x, ["a", "b"], np.array([[1.0], [9.0], [11.0]]),
                                       k=1, test_labels=["a", "a", "b"])
    assert preds == ["a", "b", "b"]
    assert acc == pytest.approx(2 / 3)


def test_knn_rejects_mismatched_dims():
    with pytest.raises(DimensionError):
        analysis.knn_classify(np.zeros((2, 3)), ["a", "b"], np.zeros((1, 4)), k=1)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 100.0), st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_knn_invariant_to_scale_and_translation(scale, shift_xy):
    rng = np.random.default_rng(17)
    train_x = rng.standard_normal((20, 2))
    labels = [str(i % 3) for i in range(20)]
    test_x = rng.standard_normal((8, 2))
    shift = np.array(shift_xy)
    base, _ = analysis.knn_classify(train_x, labels, test_x, k=3)
    moved, _ = analysis.knn_classify(scale * train_x + shift, labels, scale * test_x + shift, k=3)
    assert base == moved


def test_knn_singleton_chance_level():
    # 943 one-member classes with shuffled labels stay at ~1/943 accuracy
    rng = np.random.default_rng(99)
    n = 943
    x = rng.standard_normal((n, 16))
    labels = [f"artist{i:04d}" for i in range(n)]
    trials = 20
    accs = []
    for t in range(trials):
        shuffled = list(labels)
        rng.shuffle(shuffled)
        _, acc = analysis.knn_classify(x, labels, x, k=1, test_labels=shuffled)
        accs.append(acc)
    p = 1.0 / n
    se = np.sqrt(p * (1 - p) / (trials * n))
    assert abs(np.mean(accs) - p) <= 3 * se


# ---------------------------------------------------------------------------
# embeddings and interpolation


@pytest.fixture(scope="module")
def vae_setup(tmp_path_factory):
    out = tmp_path_factory.mktemp("an")
    manifest, params = data.gen_synthetic(8, 2, seed=3, out_dir=out)
    triplets = data.make_triplets(manifest, seed=3)
    labels = [data.oracle_label(t, params) for t in triplets]
    cfg = TrainConfig(model_variant="vae_triplet", latent_dim=8, epochs=1, batch_size=4, seed=2)
    ckpt, _ = train.train_model(cfg, manifest, labels)
    return manifest, ckpt


def test_embed_dataset_totality(vae_setup):
    manifest, ckpt = vae_setup
    embeddings, errors = analysis.embed_dataset(ckpt, manifest)
    assert errors == []
    assert len(embeddings) == len(manifest)
    assert all(e.vector.shape == (8,) for e in embeddings)
    assert all(e.model_variant == "vae_triplet" for e in embeddings)


def test_embed_dataset_reports_unreadable(vae_setup, tmp_path):
    manifest, ckpt = vae_setup
    broken = data.DatasetManifest(
        manifest.records + [data.ImageRecord("ghost", "missing.png", "3")], manifest.base_dir
    )
    embeddings, errors = analysis.embed_dataset(ckpt, broken)
    assert len(embeddings) == len(manifest)
    assert len(errors) == 1 and errors[0][0] == "ghost"


def test_embeddings_file_round_trip(vae_setup, tmp_path):
    manifest, ckpt = vae_setup
    embeddings, _ = analysis.embed_dataset(ckpt, manifest)
    path = tmp_path / "e.jsonl"
    analysis.save_embeddings(embeddings, path)
    loaded = analysis.load_embeddings(path)
    assert [e.image_id for e in loaded] == [e.image_id for e in embeddings]
    assert [e.artist for e in loaded] == [e.artist for e in embeddings]
    for a, b in zip(loaded, embeddings):
        assert np.allclose(a.vector, b.vector, atol=1e-6)


def test_interpolation_endpoints_bitwise(vae_setup):
    manifest, ckpt = vae_setup
    imgs = data.load_images(manifest)
    frames = analysis.interpolate(ckpt, imgs[0], imgs[1], steps=5)
    models = train.build_models(ckpt)
    vae = models["vae"]
    direct_src = vae.decode(vae.encode(imgs[0][None]).mean.data).data[0]
    direct_tgt = vae.decode(vae.encode(imgs[1][None]).mean.data).data[0]
    assert frames[0][0] == 0.0 and frames[-1][0] == 1.0
    assert np.array_equal(frames[0][1], direct_src)
    assert np.array_equal(frames[-1][1], direct_tgt)


def test_interpolation_midpoint_linearity(vae_setup):
    manifest, ckpt = vae_setup
    imgs = data.load_images(manifest)
    models = train.build_models(ckpt)
    vae = models["vae"]
    z0 = vae.encode(imgs[0][None]).mean.data[0]
    z1 = vae.encode(imgs[1][None]).mean.data[0]
    frames = analysis.interpolate(ckpt, imgs[0], imgs[1], steps=3)
    mid = frames[1]
    assert mid[0] == pytest.approx(0.5)
    z_mid = (z0.astype(np.float64) + z1.astype(np.float64)) / 2
    recon_mid = vae.decode(z_mid.astype(np.float32)[None]).data[0]
    assert np.max(np.abs(recon_mid - mid[1])) <= 1e-7


def test_interpolation_rejects_head_checkpoints(vae_setup, tmp_path):
    manifest, _ = vae_setup
    cfg = TrainConfig(model_variant="frozen_net", latent_dim=8, epochs=0, seed=0)
    ckpt, _ = train.train_model(cfg, manifest, None)
    imgs = data.load_images(manifest)
    with pytest.raises(ContractError):
        analysis.interpolate(ckpt, imgs[0], imgs[1], steps=3)
    vae_ckpt = vae_setup[1]
    with pytest.raises(ContractError):
        analysis.interpolate(vae_ckpt, imgs[0], imgs[1], steps=1)


def test_interpolation_frame_files(vae_setup, tmp_path):
    manifest, ckpt = vae_setup
    imgs = data.load_images(manifest)
    frames = analysis.interpolate(ckpt, imgs[0], imgs[1], steps=4)
    analysis.save_interpolation_frames(frames, tmp_path / "frames")
    names = sorted(p.name for p in (tmp_path / "frames").glob("*.png"))
    assert names[0] == "frame_0_0.0.png"
    assert any(n.startswith("frame_3_1.0") for n in names)
    assert len(names) == 4


def test_projection_csv(tmp_path):
    points = [analysis.ProjectionPoint("a", "x", 0.25, -1.5),
              analysis.ProjectionPoint("b", "y", 1.0, 2.0)]
    path = tmp_path / "p.csv"
    analysis.save_projection(points, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "id,artist,x,y"
    assert lines[1].startswith("a,x,0.25")


def test_top_artists_ordering():
    embs = [analysis.StyleEmbedding(str(i), "vae", np.zeros(2), artist)
            for i, artist in enumerate(["b", "b", "a", "a", "c"])]
    assert analysis.top_artists(embs, 2) == ["a", "b"]
    assert analysis.top_artists(embs, 5) == ["a", "b", "c"]
