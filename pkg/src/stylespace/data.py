"""Corpus handling: ingestion, splits, triplets, and a synthetic portrait
generator whose style parameters give an analytic triplet oracle.

File formats
------------
Manifest: newline-delimited JSON, one object per line with keys
``id, path, artist, period`` (``period`` null when unknown).  Paths are
stored relative to the manifest's directory.

Triplet labels: newline-delimited JSON with keys
``anchor, positive, negative, annotator, labeled_at`` (integer seconds).
The label file is append-only.

Metadata for ingestion: CSV with header columns ``id,path,artist,date``.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractError, DataError, FormatError

log = logging.getLogger("stylespace.data")

IMAGE_SIZE = 64
BACKGROUND_KINDS = ("plain", "gradient", "textured")
# Weighted style metric over normalized parameter blocks.
STYLE_WEIGHTS = {"palette": 0.5, "stroke": 0.2, "noise": 0.2, "background": 0.1}

_YEAR_RE = re.compile(r"(?<!\d)(\d{3,4})(?!\d)")


@dataclass
class ImageRecord:
    id: str
    path: str
    artist: str
    period: int | None = None


@dataclass
class DatasetManifest:
    records: list[ImageRecord]
    base_dir: Path

    def __len__(self) -> int:
        return len(self.records)

    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def by_id(self) -> dict[str, ImageRecord]:
        return {r.id: r for r in self.records}

    def resolve_path(self, record: ImageRecord) -> Path:
        p = Path(record.path)
        return p if p.is_absolute() else self.base_dir / p


@dataclass
class TripletLabel:
    anchor: str
    positive: str
    negative: str
    annotator: str
    labeled_at: int


@dataclass
class UnlabeledTriplet:
    anchor: str
    option_a: str
    option_b: str


@dataclass
class SyntheticStyleParams:
    """Generator parameters for one synthetic portrait."""

    class_id: int
    palette: np.ndarray  # 3 RGB base colors, values in [0, 1], shape (3, 3)
    stroke_scale: float  # (0, 1]
    noise_amplitude: float  # [0, 1]
    background_kind: str

    def to_json(self) -> dict:
        return {
            "class_id": self.class_id,
            "palette": np.asarray(self.palette, dtype=float).round(6).tolist(),
            "stroke_scale": round(float(self.stroke_scale), 6),
            "noise_amplitude": round(float(self.noise_amplitude), 6),
            "background_kind": self.background_kind,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticStyleParams":
        return cls(
            class_id=int(obj["class_id"]),
            palette=np.asarray(obj["palette"], dtype=np.float64),
            stroke_scale=float(obj["stroke_scale"]),
            noise_amplitude=float(obj["noise_amplitude"]),
            background_kind=str(obj["background_kind"]),
        )


# ---------------------------------------------------------------------------
# metadata cleaning


def clean_artist(raw: str) -> str:
    """Trim, casefold, and collapse internal whitespace."""
    return " ".join(raw.split()).casefold()


def parse_year(raw: str) -> int | None:
    """First standalone 3-4 digit run in the string, else None."""
    if raw is None:
        return None
    m = _YEAR_RE.search(str(raw))
    return int(m.group(1)) if m else None


# ---------------------------------------------------------------------------
# manifest and label IO


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for r in manifest.records:
            fh.write(json.dumps(asdict(r)) + "\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    records: list[ImageRecord] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rec = ImageRecord(
                    id=str(obj["id"]),
                    path=str(obj["path"]),
                    artist=str(obj["artist"]),
                    period=None if obj.get("period") is None else int(obj["period"]),
                )
            except (KeyError, ValueError, json.JSONDecodeError) as e:
                raise FormatError(f"{path}:{lineno}: bad manifest record: {e}") from None
            if rec.id in seen:
                raise FormatError(f"{path}:{lineno}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    if not records:
        raise DataError(f"manifest {path} holds no records")
    return DatasetManifest(records=records, base_dir=path.parent)


def append_label(label: TripletLabel, path) -> None:
    with Path(path).open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(asdict(label)) + "\n")


def save_labels(labels, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for lab in labels:
            fh.write(json.dumps(asdict(lab)) + "\n")


def load_labels(path, manifest: DatasetManifest | None = None) -> list[TripletLabel]:
    """Load labels; with a manifest given, validate that each label references
    three existing, distinct ids."""
    path = Path(path)
    known = set(manifest.ids()) if manifest is not None else None
    labels: list[TripletLabel] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                lab = TripletLabel(
                    anchor=str(obj["anchor"]),
                    positive=str(obj["positive"]),
                    negative=str(obj["negative"]),
                    annotator=str(obj["annotator"]),
                    labeled_at=int(obj["labeled_at"]),
                )
            except (KeyError, ValueError, json.JSONDecodeError) as e:
                raise FormatError(f"{path}:{lineno}: bad label record: {e}") from None
            trio = (lab.anchor, lab.positive, lab.negative)
            if len(set(trio)) != 3:
                raise FormatError(f"{path}:{lineno}: label ids are not distinct: {trio}")
            if known is not None and not set(trio) <= known:
                raise FormatError(f"{path}:{lineno}: label references unknown ids: {trio}")
            labels.append(lab)
    return labels


def save_triplets(triplets, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(json.dumps(asdict(t)) + "\n")


def load_triplets(path) -> list[UnlabeledTriplet]:
    path = Path(path)
    out: list[UnlabeledTriplet] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append(UnlabeledTriplet(str(obj["anchor"]), str(obj["option_a"]), str(obj["option_b"])))
            except (KeyError, json.JSONDecodeError) as e:
                raise FormatError(f"{path}:{lineno}: bad triplet record: {e}") from None
    return out


def save_params_table(params: dict[str, SyntheticStyleParams], path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for image_id in sorted(params):
            row = {"id": image_id, **params[image_id].to_json()}
            fh.write(json.dumps(row) + "\n")


def load_params_table(path) -> dict[str, SyntheticStyleParams]:
    path = Path(path)
    out: dict[str, SyntheticStyleParams] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out[str(obj["id"])] = SyntheticStyleParams.from_json(obj)
            except (KeyError, ValueError, json.JSONDecodeError) as e:
                raise FormatError(f"{path}:{lineno}: bad params record: {e}") from None
    return out


# ---------------------------------------------------------------------------
# ingestion


def ingest(image_dir, metadata_file) -> DatasetManifest:
    """Build a manifest from a metadata CSV, cleaning artists and dates.

    Rows whose image file is missing, whose id repeats, or whose artist is
    empty after cleaning are skipped with a warning.  Zero usable rows is
    fatal.
    """
    image_dir = Path(image_dir)
    metadata_file = Path(metadata_file)
    if not metadata_file.exists():
        raise DataError(f"metadata file {metadata_file} does not exist")

    records: list[ImageRecord] = []
    seen: set[str] = set()
    with metadata_file.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"id", "path", "artist", "date"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise DataError(f"metadata needs columns {sorted(required)}, got {reader.fieldnames}")
        for rownum, row in enumerate(reader, 2):
            image_id = (row["id"] or "").strip()
            rel_path = (row["path"] or "").strip()
            artist = clean_artist(row["artist"] or "")
            if not image_id:
                log.warning("row %d: missing id, skipped", rownum)
                continue
            if image_id in seen:
                log.warning("row %d: duplicate id %r, skipped", rownum, image_id)
                continue
            if not artist:
                log.warning("row %d: empty artist after cleaning, skipped", rownum)
                continue
            full = Path(rel_path)
            if not (full if full.is_absolute() else image_dir / full).exists():
                log.warning("row %d: image %s not found, skipped", rownum, rel_path)
                continue
            seen.add(image_id)
            records.append(ImageRecord(id=image_id, path=rel_path, artist=artist,
                                       period=parse_year(row["date"])))
    if not records:
        raise DataError(f"no usable rows in {metadata_file}")
    return DatasetManifest(records=records, base_dir=image_dir)


def export_metadata_csv(manifest: DatasetManifest, path) -> None:
    """Write a manifest back out in the ingestion CSV schema."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "path", "artist", "date"])
        for r in manifest.records:
            writer.writerow([r.id, r.path, r.artist, "" if r.period is None else str(r.period)])


def split(manifest: DatasetManifest, test_fraction: float, seed: int) -> tuple[DatasetManifest, DatasetManifest]:
    """Deterministic disjoint/exhaustive split by image."""
    if not 0.0 < test_fraction < 1.0:
        raise ContractError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if len(manifest) < 2:
        raise DataError(f"cannot split a manifest of {len(manifest)} records")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(manifest.records))
    n_test = int(len(manifest) * test_fraction)
    test_idx = set(order[:n_test].tolist())
    train = [r for i, r in enumerate(manifest.records) if i not in test_idx]
    test = [r for i, r in enumerate(manifest.records) if i in test_idx]
    return (DatasetManifest(train, manifest.base_dir), DatasetManifest(test, manifest.base_dir))


# ---------------------------------------------------------------------------
# images


def load_image(path) -> np.ndarray:
    """PNG/JPEG file to a float32 CHW array in [0, 1], resized to 64x64."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.size != (IMAGE_SIZE, IMAGE_SIZE):
            im = im.resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def load_images(manifest: DatasetManifest, ids=None) -> np.ndarray:
    """Stack of (N, 3, 64, 64) images in manifest order (or given id order)."""
    by_id = manifest.by_id()
    wanted = manifest.ids() if ids is None else list(ids)
    out = np.empty((len(wanted), 3, IMAGE_SIZE, IMAGE_SIZE), dtype=np.float32)
    for i, image_id in enumerate(wanted):
        rec = by_id.get(image_id)
        if rec is None:
            raise DataError(f"id {image_id!r} not in manifest")
        out[i] = load_image(manifest.resolve_path(rec))
    return out


def save_image(arr: np.ndarray, path) -> None:
    """Float CHW (or HW) array in [0, 1] to PNG."""
    a = np.asarray(arr)
    if a.ndim == 3:
        a = a.transpose(1, 2, 0)
    data = np.clip(np.round(a * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path, format="PNG")


# ---------------------------------------------------------------------------
# style metric


def style_distance(p: SyntheticStyleParams, q: SyntheticStyleParams) -> float:
    """Weighted L2 over normalized parameter coordinates.

    Palette coordinates (9 values in [0,1]) enter as their mean squared
    difference; background kind enters as the discrete 0/1 metric.
    """
    pal = float(np.mean((np.asarray(p.palette, dtype=np.float64) - np.asarray(q.palette, dtype=np.float64)) ** 2))
    stroke = (p.stroke_scale - q.stroke_scale) ** 2
    noise = (p.noise_amplitude - q.noise_amplitude) ** 2
    bg = 0.0 if p.background_kind == q.background_kind else 1.0
    w = STYLE_WEIGHTS
    return float(
        np.sqrt(w["palette"] * pal + w["stroke"] * stroke + w["noise"] * noise + w["background"] * bg)
    )


# ---------------------------------------------------------------------------
# synthetic portraits


def _render_portrait(params: SyntheticStyleParams, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Render one 64x64 portrait; returns (CHW float image, HW background mask)."""
    size = IMAGE_SIZE
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    face, garment, bg = (np.asarray(c, dtype=np.float64) for c in params.palette)

    img = np.empty((size, size, 3), dtype=np.float64)
    if params.background_kind == "plain":
        img[:] = bg
    elif params.background_kind == "gradient":
        shade = (1.0 - 0.5 * yy / (size - 1))[..., None]
        img[:] = bg * shade
    else:  # textured
        wave = 0.10 * np.sin(2.0 * np.pi * (xx + yy) / 8.0)[..., None]
        img[:] = np.clip(bg + wave, 0.0, 1.0)

    # brush frequency follows stroke_scale: coarser strokes at larger scale
    period = 1.5 + 8.0 * params.stroke_scale
    stripes = np.sin(2.0 * np.pi * xx / period)

    head = ((xx - 32.0) / 12.0) ** 2 + ((yy - 26.0) / 15.0) ** 2 <= 1.0
    torso = (((xx - 32.0) / 21.0) ** 2 + ((yy - 64.0) / 20.0) ** 2 <= 1.0) & ~head

    garment_px = np.clip(garment[None, :] * (1.0 + 0.25 * stripes[torso, None]), 0.0, 1.0)
    img[torso] = garment_px
    face_shade = 1.0 - 0.15 * (yy[head] - 11.0) / 30.0
    face_px = np.clip(face[None, :] * face_shade[:, None] * (1.0 + 0.10 * stripes[head, None]), 0.0, 1.0)
    img[head] = face_px

    # simple features so faces carry structure: eyes and mouth
    for ex in (27, 37):
        img[23:25, ex : ex + 2] = face * 0.25
    img[32:33, 29:36] = face * 0.45

    img += params.noise_amplitude * 0.12 * rng.standard_normal((size, size, 3))
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return img.transpose(2, 0, 1), ~(head | torso)


def _sample_class_params(rng: np.random.Generator, n_classes: int) -> list[SyntheticStyleParams]:
    """Class centroids, rejection-sampled for pairwise style separation."""
    centroids: list[SyntheticStyleParams] = []
    min_sep = 0.22
    for c in range(n_classes):
        for attempt in range(200):
            cand = SyntheticStyleParams(
                class_id=c,
                palette=rng.uniform(0.08, 0.92, size=(3, 3)),
                stroke_scale=float(rng.uniform(0.15, 0.95)),
                noise_amplitude=float(rng.uniform(0.05, 0.45)),
                background_kind=BACKGROUND_KINDS[int(rng.integers(0, 3))],
            )
            sep = min((style_distance(cand, other) for other in centroids), default=np.inf)
            if sep >= min_sep * (0.98**attempt):
                centroids.append(cand)
                break
        else:
            raise DataError(f"could not separate {n_classes} style classes")
    return centroids


def _jitter_params(centroid: SyntheticStyleParams, rng: np.random.Generator) -> SyntheticStyleParams:
    return SyntheticStyleParams(
        class_id=centroid.class_id,
        palette=np.clip(centroid.palette + rng.normal(0.0, 0.02, size=(3, 3)), 0.0, 1.0),
        stroke_scale=float(np.clip(centroid.stroke_scale + rng.normal(0.0, 0.02), 0.05, 1.0)),
        noise_amplitude=float(np.clip(centroid.noise_amplitude + rng.normal(0.0, 0.015), 0.0, 1.0)),
        background_kind=centroid.background_kind,
    )


def gen_synthetic(
    n_images: int, n_style_classes: int, seed: int, out_dir
) -> tuple[DatasetManifest, dict[str, SyntheticStyleParams]]:
    """Generate a synthetic portrait corpus with known style parameters.

    Writes ``images/{id}.png`` and ``masks/{id}.png`` (background masks)
    under ``out_dir``; classes are balanced (image i belongs to class
    i mod n_style_classes) and the artist label is the class id.
    """
    if n_style_classes < 2 or n_images < n_style_classes:
        raise ContractError(
            f"need n_images >= n_style_classes >= 2, got {n_images}, {n_style_classes}"
        )
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
        (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output directory {out_dir}: {e}") from None

    root = np.random.default_rng(seed)
    centroids = _sample_class_params(root, n_style_classes)

    records: list[ImageRecord] = []
    params_table: dict[str, SyntheticStyleParams] = {}
    width = max(5, len(str(n_images - 1)))
    for i in range(n_images):
        image_id = f"img{i:0{width}d}"
        child = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        params = _jitter_params(centroids[i % n_style_classes], child)
        img, bg_mask = _render_portrait(params, child)
        save_image(img, out_dir / "images" / f"{image_id}.png")
        save_image(bg_mask.astype(np.float32), out_dir / "masks" / f"{image_id}.png")
        records.append(
            ImageRecord(id=image_id, path=f"images/{image_id}.png", artist=str(params.class_id))
        )
        params_table[image_id] = params
    return DatasetManifest(records=records, base_dir=out_dir), params_table


def load_background_mask(out_dir, image_id: str) -> np.ndarray:
    """Boolean HW mask (True = background) written by gen_synthetic."""
    with Image.open(Path(out_dir) / "masks" / f"{image_id}.png") as im:
        return np.asarray(im.convert("L")) > 127


# ---------------------------------------------------------------------------
# triplets


def make_triplets(manifest: DatasetManifest, seed: int) -> list[UnlabeledTriplet]:
    """One triplet per image as anchor; candidates drawn uniformly without
    replacement from the remaining images, deterministic given seed."""
    ids = manifest.ids()
    if len(ids) < 3:
        raise DataError(f"need at least 3 images for triplets, got {len(ids)}")
    rng = np.random.default_rng(seed)
    triplets: list[UnlabeledTriplet] = []
    for i, anchor in enumerate(ids):
        choices = rng.choice(len(ids) - 1, size=2, replace=False)
        others = [j if j < i else j + 1 for j in choices.tolist()]
        triplets.append(UnlabeledTriplet(anchor, ids[others[0]], ids[others[1]]))
    return triplets


def oracle_label(
    triplet: UnlabeledTriplet, params_table: dict[str, SyntheticStyleParams]
) -> TripletLabel:
    """Label a synthetic triplet from the analytic style metric.

    The candidate closer to the anchor becomes the positive; exact ties go
    to the lexicographically smaller id.  Oracle labels carry a fixed
    timestamp of 0 so labeling is reproducible.
    """
    for image_id in (triplet.anchor, triplet.option_a, triplet.option_b):
        if image_id not in params_table:
            raise ContractError(f"id {image_id!r} has no synthetic style parameters")
    anchor = params_table[triplet.anchor]
    d_a = style_distance(anchor, params_table[triplet.option_a])
    d_b = style_distance(anchor, params_table[triplet.option_b])
    if d_a < d_b or (d_a == d_b and triplet.option_a < triplet.option_b):
        positive, negative = triplet.option_a, triplet.option_b
    else:
        positive, negative = triplet.option_b, triplet.option_a
    return TripletLabel(anchor=triplet.anchor, positive=positive, negative=negative,
                        annotator="oracle", labeled_at=0)
