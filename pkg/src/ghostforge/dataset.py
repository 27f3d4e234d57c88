"""Training-pair generation: image ingestion, simulated reconstructions, splits, caching."""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gftn
from .errors import ConfigError, ContractError, DataError, LoadError, ShapeError, StaleCacheError
from .fileio import atomic_write_bytes, atomic_write_text, dump_json, read_gray
from .optics import NO_NOISE, NoiseModel, Pattern, measure_sequence, pattern_stack
from .parallel import ordered_map
from .recon import NULL_TOLERANCE, differential_cgi, normalize_unit

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".pgm", ".png", ".ppm", ".pnm", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
MANIFEST_NAME = "manifest.json"
PAIRS_NAME = "pairs.gftn"
NORMALIZATION = "per-image-minmax"
CACHE_VERSION = 1


@dataclass
class PairRecord:
    id: str
    noisy: np.ndarray = field(repr=False)
    clean: np.ndarray = field(repr=False)
    degenerate: bool = False


@dataclass
class DatasetManifest:
    source_dir: str
    image_count: int
    resolution: int
    pattern_seed: int
    n_patterns: int
    split_seed: int
    train_count: int
    validation_count: int
    test_count: int
    normalization: str = NORMALIZATION
    selection_seed: int = 0
    noise: dict = field(default_factory=lambda: NO_NOISE.to_dict())
    ids: list[str] = field(default_factory=list)
    degenerate: list[str] = field(default_factory=list)
    splits: dict = field(default_factory=dict)
    pairs_sha256: str = ""
    version: int = CACHE_VERSION

    def __post_init__(self):
        if self.train_count + self.validation_count + self.test_count != self.image_count:
            raise ConfigError("split counts do not sum to the image count")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# ingestion


def _area_matrix(src: int, dst: int) -> np.ndarray:
    """(dst, src) weights averaging source cells over each destination cell."""
    m = np.zeros((dst, src))
    scale = src / dst
    for j in range(dst):
        lo, hi = j * scale, (j + 1) * scale
        for i in range(int(math.floor(lo)), min(src, int(math.ceil(hi)))):
            overlap = min(hi, i + 1) - max(lo, i)
            if overlap > 0:
                m[j, i] = overlap
        m[j] /= m[j].sum()
    return m


def area_resize(img: np.ndarray, height: int, width: int | None = None) -> np.ndarray:
    """Box-filter (area-average) resampling to ``height x width``."""
    width = height if width is None else width
    img = np.asarray(img, dtype=np.float64)
    if img.shape == (height, width):
        return img.copy()
    return _area_matrix(img.shape[0], height) @ img @ _area_matrix(img.shape[1], width).T


def list_images(directory: str | Path) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"image directory {d} does not exist")
    return sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def ingest(directory: str | Path, resolution: int, seed: int = 0, limit: int | None = None) -> list[tuple[str, np.ndarray]]:
    """Load up to ``limit`` images as ``resolution x resolution`` grayscale grids in [0, 1].

    Files are sorted by name and then put in a seeded random order, so the
    same seed always selects the same images in the same order. Unreadable
    files are skipped with a warning.

    Raises:
        DataError: the directory is missing or no image could be read.
    """
    if resolution < 1:
        raise ConfigError(f"resolution must be >= 1, got {resolution}")
    files = list_images(directory)
    order = np.random.Generator(np.random.Philox(key=seed)).permutation(len(files))
    out: list[tuple[str, np.ndarray]] = []
    for k in order:
        if limit is not None and len(out) >= limit:
            break
        path = files[k]
        try:
            gray = read_gray(path)
        except Exception as exc:  # PIL raises a variety of types for bad files
            log.warning("skipping unreadable image %s: %s", path.name, exc)
            continue
        out.append((path.stem, np.clip(area_resize(gray, resolution), 0.0, 1.0)))
    if not out:
        raise DataError(f"no usable images in {directory}")
    return out


# ---------------------------------------------------------------------------
# pairs


def _object_noise(noise: NoiseModel, k: int) -> NoiseModel:
    if not noise.active:
        return noise
    return NoiseModel(noise.kind, noise.sigma, (noise.seed << 32) + k)


def make_pair(obj_id: str, obj: np.ndarray, patterns: Sequence[Pattern], n: int, noise: NoiseModel = NO_NOISE) -> PairRecord:
    recs = measure_sequence(obj, patterns, noise, threads=1)
    noisy, degenerate = normalize_unit(differential_cgi(patterns, recs, n), NULL_TOLERANCE)
    return PairRecord(obj_id, noisy, np.asarray(obj, dtype=np.float64).copy(), degenerate)


def generate_pairs(objects: Sequence, pattern_seed: int, n: int, noise: NoiseModel = NO_NOISE,
                   threads: int | None = None) -> list[PairRecord]:
    """One (normalised reconstruction, original) pair per object.

    ``objects`` holds grids or ``(id, grid)`` tuples; all must share one
    square resolution. Every object is measured with the same pattern
    sequence. Objects with a constant reconstruction are kept but flagged.
    """
    items = [(o if isinstance(o, tuple) else (f"obj{k:05d}", o)) for k, o in enumerate(objects)]
    if not items:
        return []
    if n < 1:
        raise ConfigError(f"N must be >= 1, got {n}")
    shapes = {np.shape(o) for _, o in items}
    if len(shapes) != 1:
        raise ShapeError(f"objects have mixed shapes: {sorted(shapes)}")
    h, w = shapes.pop()
    stack = pattern_stack(pattern_seed, n, h, w)
    patterns = [Pattern(i, stack[i]) for i in range(n)]

    def one(k: int) -> PairRecord:
        obj_id, obj = items[k]
        try:
            return make_pair(obj_id, obj, patterns, n, _object_noise(noise, k))
        except DataError as exc:
            raise type(exc)(f"object {obj_id}: {exc}") from exc

    pairs = ordered_map(one, range(len(items)), threads)
    for p in pairs:
        if p.degenerate:
            log.warning("object %s reconstructs to a constant image", p.id)
    return pairs


# ---------------------------------------------------------------------------
# splitting


def split_counts(total: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) > 1 + 1e-9 or sum(ratios) <= 0:
        raise ConfigError(f"ratios must be three non-negative numbers summing to at most 1, got {ratios}")
    n_train = int(round(ratios[0] * total))
    n_val = min(int(round(ratios[1] * total)), total - n_train)
    if abs(sum(ratios) - 1.0) < 1e-9:
        n_test = total - n_train - n_val
    else:
        n_test = min(int(round(ratios[2] * total)), total - n_train - n_val)
    for name, r, c in zip(("train", "validation", "test"), ratios, (n_train, n_val, n_test)):
        if r > 0 and c == 0:
            log.warning("%s ratio %.3g leaves an empty %s partition for %d items", name, r, name, total)
    return n_train, n_val, n_test


def split(pairs: Sequence, ratios: Sequence[float] = (10 / 11, 0.0, 1 / 11), seed: int = 0):
    """Seeded shuffle into disjoint (train, validation, test) lists."""
    items = list(pairs)
    n_train, n_val, n_test = split_counts(len(items), ratios)
    perm = np.random.Generator(np.random.Philox(key=seed)).permutation(len(items))
    shuffled = [items[k] for k in perm]
    return (shuffled[:n_train], shuffled[n_train:n_train + n_val],
            shuffled[n_train + n_val:n_train + n_val + n_test])


# ---------------------------------------------------------------------------
# persistence


@dataclass
class Dataset:
    manifest: DatasetManifest
    pairs: list[PairRecord]

    def by_id(self) -> dict[str, PairRecord]:
        return {p.id: p for p in self.pairs}

    def subset(self, name: str) -> list[PairRecord]:
        index = self.by_id()
        return [index[i] for i in self.manifest.splits.get(name, [])]

    def stacks(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        items = self.subset(name)
        res = self.manifest.resolution
        if not items:
            return np.zeros((0, res, res)), np.zeros((0, res, res))
        return np.stack([p.noisy for p in items]), np.stack([p.clean for p in items])


def build_dataset(directory: str | Path, resolution: int = 32, n_patterns: int = 500, pattern_seed: int = 0,
                  selection_seed: int = 0, split_seed: int = 0, limit: int | None = 220,
                  ratios: Sequence[float] = (10 / 11, 0.0, 1 / 11), noise: NoiseModel = NO_NOISE,
                  threads: int | None = None) -> Dataset:
    objects = ingest(directory, resolution, selection_seed, limit)
    ids = [i for i, _ in objects]
    if len(set(ids)) != len(ids):
        raise DataError("image file stems are not unique")
    pairs = generate_pairs(objects, pattern_seed, n_patterns, noise, threads)
    train_set, val_set, test_set = split(pairs, ratios, split_seed)
    manifest = DatasetManifest(
        source_dir=str(directory), image_count=len(pairs), resolution=resolution, pattern_seed=pattern_seed,
        n_patterns=n_patterns, split_seed=split_seed, train_count=len(train_set), validation_count=len(val_set),
        test_count=len(test_set), selection_seed=selection_seed, noise=noise.to_dict(), ids=ids,
        degenerate=[p.id for p in pairs if p.degenerate],
        splits={"train": [p.id for p in train_set], "validation": [p.id for p in val_set],
                "test": [p.id for p in test_set]},
    )
    return Dataset(manifest, pairs)


def _pairs_payload(pairs: Sequence[PairRecord], resolution: int) -> bytes:
    buf = io.BytesIO()
    shape = (0, resolution, resolution)
    gftn.write_tensor(buf, np.stack([p.noisy for p in pairs]) if pairs else np.zeros(shape))
    gftn.write_tensor(buf, np.stack([p.clean for p in pairs]) if pairs else np.zeros(shape))
    return buf.getvalue()


def persist(directory: str | Path, data: Dataset) -> None:
    """Write ``pairs.gftn`` then ``manifest.json`` (with the payload hash)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    payload = _pairs_payload(data.pairs, data.manifest.resolution)
    data.manifest.pairs_sha256 = hashlib.sha256(payload).hexdigest()
    atomic_write_bytes(d / PAIRS_NAME, payload)
    atomic_write_text(d / MANIFEST_NAME, dump_json(data.manifest.to_dict()))


def load_manifest(directory: str | Path) -> DatasetManifest:
    path = Path(directory) / MANIFEST_NAME
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise LoadError(f"malformed manifest {path}: {exc}") from exc
    try:
        manifest = DatasetManifest(**raw)
    except (TypeError, ConfigError) as exc:
        raise LoadError(f"invalid manifest {path}: {exc}") from exc
    if manifest.version != CACHE_VERSION:
        raise LoadError(f"unsupported dataset cache version {manifest.version}")
    return manifest


def load(directory: str | Path) -> Dataset:
    """Load and verify a cached dataset.

    Raises:
        LoadError: missing, truncated or structurally inconsistent files.
        StaleCacheError: the payload hash differs from the manifest's.
    """
    d = Path(directory)
    manifest = load_manifest(d)
    try:
        payload = (d / PAIRS_NAME).read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read {d / PAIRS_NAME}: {exc}") from exc
    tensors = gftn.read_all(io.BytesIO(payload))
    if len(tensors) != 2:
        raise LoadError(f"{PAIRS_NAME} holds {len(tensors)} tensors, expected 2")
    noisy, clean = tensors
    res = manifest.resolution
    want = (manifest.image_count, res, res)
    if noisy.shape != want or clean.shape != want or len(manifest.ids) != manifest.image_count:
        raise LoadError(f"{PAIRS_NAME} holds {noisy.shape[0]} pairs of {noisy.shape[1:]}, manifest declares {want}")
    if hashlib.sha256(payload).hexdigest() != manifest.pairs_sha256:
        raise StaleCacheError(f"{PAIRS_NAME} does not match the manifest hash; regenerate the dataset")
    degenerate = set(manifest.degenerate)
    pairs = [PairRecord(i, noisy[k].copy(), clean[k].copy(), i in degenerate) for k, i in enumerate(manifest.ids)]
    known = set(manifest.ids)
    for name, members in manifest.splits.items():
        if not set(members) <= known:
            raise LoadError(f"split {name!r} references unknown ids")
    return Dataset(manifest, pairs)


def check_disjoint(data: Dataset) -> None:
    parts = [set(v) for v in data.manifest.splits.values()]
    for a in range(len(parts)):
        for b in range(a + 1, len(parts)):
            if parts[a] & parts[b]:
                raise ContractError("dataset splits overlap")
