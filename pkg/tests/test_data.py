"""Data module tests: cleaning, ingestion, splits, synthetic corpus, triplets."""

import numpy as np
import pytest

from stylespace import data
from stylespace.errors import ContractError, DataError, FormatError

# ---------------------------------------------------------------------------
# cleaning


def test_clean_artist_normalizes():
    assert data.clean_artist(" Vincent  van GOGH ") == data.clean_artist("vincent van gogh")
    assert data.clean_artist("vincent van gogh") == "vincent van gogh"


def test_clean_artist_idempotent():
    once = data.clean_artist("  El   GRECO ")
    assert data.clean_artist(once) == once


DATE_FIXTURES = [
    ("c. 1888", 1888),
    ("1888", 1888),
    ("1888-90", 1888),
    ("ca 1550", 1550),
    ("about 950", 950),
    ("19th century", None),
    ("", None),
    ("MDCCCLXXXVIII", None),
    ("12345", None),
    ("painted in 1632.", 1632),
    ("c.1888-1890", 1888),
    ("999", 999),
    ("64", None),
    ("year 2020!", 2020),
    ("(1877)", 1877),
    ("circa 1700s", 1700),
    ("A.D. 800", 800),
    ("between 1500 and 1510", 1500),
    ("late 1400s", 1400),
    ("undated", None),
]


@pytest.mark.parametrize("raw,want", DATE_FIXTURES)
def test_parse_year_fixtures(raw, want):
    assert data.parse_year(raw) == want


# ---------------------------------------------------------------------------
# ingestion


@pytest.fixture
def corpus(tmp_path):
    img_dir = tmp_path / "imgs"
    img_dir.mkdir()
    rng = np.random.default_rng(0)
    names = ["a.png", "b.png", "c.png"]
    for name in names:
        data.save_image(rng.random((3, 64, 64)).astype(np.float32), img_dir / name)
    meta = tmp_path / "meta.csv"
    meta.write_text(
        "id,path,artist,date\n"
        "p1,a.png, Vincent  van GOGH ,c. 1888\n"
        "p2,b.png,vincent van gogh,1890\n"
        "p2,b.png,duplicate row,1890\n"
        "p3,missing.png,gone,1900\n"
        "p4,c.png,  ,1900\n"
        "p5,c.png,El Greco,16th century\n"
    )
    return img_dir, meta


def test_ingest_cleans_and_skips(corpus, caplog):
    img_dir, meta = corpus
    manifest = data.ingest(img_dir, meta)
    assert manifest.ids() == ["p1", "p2", "p5"]
    by_id = manifest.by_id()
    assert by_id["p1"].artist == by_id["p2"].artist == "vincent van gogh"
    assert by_id["p1"].period == 1888
    assert by_id["p5"].period is None


def test_ingest_zero_rows_fatal(tmp_path):
    meta = tmp_path / "meta.csv"
    meta.write_text("id,path,artist,date\nx,nope.png,a,1900\n")
    with pytest.raises(DataError):
        data.ingest(tmp_path, meta)


def test_ingest_idempotent_round_trip(corpus, tmp_path):
    img_dir, meta = corpus
    manifest = data.ingest(img_dir, meta)
    out = img_dir / "re.csv"
    data.export_metadata_csv(manifest, out)
    again = data.ingest(img_dir, out)
    assert again.records == manifest.records


def test_manifest_round_trip(corpus, tmp_path):
    img_dir, meta = corpus
    manifest = data.ingest(img_dir, meta)
    path = img_dir / "manifest.jsonl"
    data.save_manifest(manifest, path)
    loaded = data.load_manifest(path)
    assert loaded.records == manifest.records
    assert loaded.base_dir == img_dir


# ---------------------------------------------------------------------------
# split


def make_manifest(n):
    recs = [data.ImageRecord(id=f"img{i:03d}", path=f"{i}.png", artist=str(i % 5)) for i in range(n)]
    return data.DatasetManifest(recs, base_dir=None)


def test_split_fractions():
    train, test = data.split(make_manifest(100), 0.2, seed=0)
    assert len(train) == 80
    assert len(test) == 20


def test_split_deterministic():
    a = data.split(make_manifest(50), 0.3, seed=7)
    b = data.split(make_manifest(50), 0.3, seed=7)
    assert a[0].ids() == b[0].ids()
    assert a[1].ids() == b[1].ids()


def test_split_is_partition():
    m = make_manifest(33)
    train, test = data.split(m, 0.25, seed=3)
    assert set(train.ids()) | set(test.ids()) == set(m.ids())
    assert set(train.ids()) & set(test.ids()) == set()


def test_split_rejects_tiny_manifest():
    with pytest.raises(DataError):
        data.split(make_manifest(1), 0.5, seed=0)
    with pytest.raises(ContractError):
        data.split(make_manifest(10), 1.5, seed=0)


# ---------------------------------------------------------------------------
# synthetic corpus


def test_style_distance_is_metric_like():
    rng = np.random.default_rng(1)
    p = data.SyntheticStyleParams(0, rng.random((3, 3)), 0.5, 0.2, "plain")
    q = data.SyntheticStyleParams(1, rng.random((3, 3)), 0.8, 0.1, "textured")
    assert data.style_distance(p, p) == 0.0
    assert data.style_distance(p, q) == data.style_distance(q, p)
    assert data.style_distance(p, q) > 0.0


def test_gen_synthetic_corpus(tmp_path):
    manifest, params = data.gen_synthetic(24, 4, seed=5, out_dir=tmp_path)
    assert len(manifest) == 24
    assert len(params) == 24
    for rec in manifest.records:
        assert manifest.resolve_path(rec).exists()
        assert rec.artist == str(params[rec.id].class_id)
    mask = data.load_background_mask(tmp_path, manifest.records[0].id)
    assert mask.shape == (64, 64)
    assert 0.3 < mask.mean() < 0.95
    imgs = data.load_images(manifest)
    assert imgs.shape == (24, 3, 64, 64)
    assert imgs.min() >= 0.0 and imgs.max() <= 1.0


def test_gen_synthetic_classes_separated(tmp_path):
    # within-class style distances must sit below cross-class ones on average
    _, params = data.gen_synthetic(60, 6, seed=1, out_dir=tmp_path)
    values = list(params.values())
    within, across = [], []
    for i in range(len(values)):
        for j in range(i + 1, len(values)):
            d = data.style_distance(values[i], values[j])
            (within if values[i].class_id == values[j].class_id else across).append(d)
    assert np.mean(within) < np.mean(across)
    assert np.mean(within) < np.min(np.mean(across)) * 0.8


def test_gen_synthetic_deterministic_bytes(tmp_path):
    m1, _ = data.gen_synthetic(6, 3, seed=9, out_dir=tmp_path / "a")
    m2, _ = data.gen_synthetic(6, 3, seed=9, out_dir=tmp_path / "b")
    for r1, r2 in zip(m1.records, m2.records):
        assert m1.resolve_path(r1).read_bytes() == m2.resolve_path(r2).read_bytes()


def test_gen_synthetic_rejects_bad_counts(tmp_path):
    with pytest.raises(ContractError):
        data.gen_synthetic(3, 4, seed=0, out_dir=tmp_path)
    with pytest.raises(ContractError):
        data.gen_synthetic(10, 1, seed=0, out_dir=tmp_path)


def test_params_table_round_trip(tmp_path):
    _, params = data.gen_synthetic(6, 3, seed=2, out_dir=tmp_path)
    path = tmp_path / "params.jsonl"
    data.save_params_table(params, path)
    loaded = data.load_params_table(path)
    assert set(loaded) == set(params)
    for k in params:
        assert loaded[k].class_id == params[k].class_id
        assert loaded[k].background_kind == params[k].background_kind
        assert np.allclose(loaded[k].palette, params[k].palette, atol=1e-5)


# ---------------------------------------------------------------------------
# triplets


def test_make_triplets_one_per_anchor():
    m = make_manifest(10)
    triplets = data.make_triplets(m, seed=0)
    assert len(triplets) == 10
    assert [t.anchor for t in triplets] == m.ids()
    for t in triplets:
        assert len({t.anchor, t.option_a, t.option_b}) == 3


def test_make_triplets_deterministic():
    m = make_manifest(12)
    assert data.make_triplets(m, seed=4) == data.make_triplets(m, seed=4)
    assert data.make_triplets(m, seed=4) != data.make_triplets(m, seed=5)


def test_make_triplets_needs_three():
    with pytest.raises(DataError):
        data.make_triplets(make_manifest(2), seed=0)


def _params(pal_val, kind="plain"):
    return data.SyntheticStyleParams(0, np.full((3, 3), pal_val), 0.5, 0.2, kind)


def test_oracle_label_prefers_closer():
    table = {"a": _params(0.5), "near": _params(0.55), "far": _params(0.9)}
    lab = data.oracle_label(data.UnlabeledTriplet("a", "near", "far"), table)
    assert lab.positive == "near"
    assert lab.negative == "far"
    assert lab.annotator == "oracle"


def test_oracle_label_tie_is_lexicographic():
    table = {"a": _params(0.5), "x1": _params(0.7), "x2": _params(0.7)}
    lab = data.oracle_label(data.UnlabeledTriplet("a", "x2", "x1"), table)
    assert lab.positive == "x1"


def test_oracle_label_order_independent():
    table = {"a": _params(0.5), "b": _params(0.6), "c": _params(0.8)}
    one = data.oracle_label(data.UnlabeledTriplet("a", "b", "c"), table)
    two = data.oracle_label(data.UnlabeledTriplet("a", "c", "b"), table)
    assert one.positive == two.positive == "b"


def test_oracle_label_rejects_unknown():
    with pytest.raises(ContractError):
        data.oracle_label(data.UnlabeledTriplet("a", "b", "c"), {"a": _params(0.5)})


def test_oracle_consistency_with_raw_params(tmp_path):
    manifest, params = data.gen_synthetic(30, 5, seed=3, out_dir=tmp_path)
    triplets = data.make_triplets(manifest, seed=3)
    for t in triplets:
        lab = data.oracle_label(t, params)
        d_pos = data.style_distance(params[t.anchor], params[lab.positive])
        d_neg = data.style_distance(params[t.anchor], params[lab.negative])
        assert d_pos <= d_neg


# ---------------------------------------------------------------------------
# label files


def test_label_file_round_trip(tmp_path):
    m = make_manifest(5)
    path = tmp_path / "labels.jsonl"
    labs = [
        data.TripletLabel("img000", "img001", "img002", "oracle", 0),
        data.TripletLabel("img001", "img003", "img004", "me", 123),
    ]
    for lab in labs:
        data.append_label(lab, path)
    loaded = data.load_labels(path, manifest=m)
    assert loaded == labs


def test_label_load_rejects_unknown_ids(tmp_path):
    path = tmp_path / "labels.jsonl"
    data.append_label(data.TripletLabel("nope", "img001", "img002", "x", 0), path)
    with pytest.raises(FormatError):
        data.load_labels(path, manifest=make_manifest(5))


def test_label_load_rejects_repeated_ids(tmp_path):
    path = tmp_path / "labels.jsonl"
    data.append_label(data.TripletLabel("img000", "img000", "img002", "x", 0), path)
    with pytest.raises(FormatError):
        data.load_labels(path, manifest=make_manifest(5))


def test_triplet_file_round_trip(tmp_path):
    path = tmp_path / "triplets.jsonl"
    ts = [data.UnlabeledTriplet("a", "b", "c"), data.UnlabeledTriplet("b", "c", "a")]
    data.save_triplets(ts, path)
    assert data.load_triplets(path) == ts
