import json
import logging

import numpy as np
import pytest
from PIL import Image

from ghostforge import dataset as ds
from ghostforge.errors import DataError, LoadError, StaleCacheError
from ghostforge.optics import NoiseModel, generate_patterns, measure_sequence
from ghostforge.recon import differential_cgi, normalize_unit
from ghostforge.synth import write_corpus


def write_pgm(path, px):
    px = np.asarray(px, dtype=np.uint8)
    h, w = px.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + px.tobytes())


def test_area_average_downscale(tmp_path):
    write_pgm(tmp_path / "a.pgm", [[0, 0], [255, 255]])
    [(name, img)] = ds.ingest(tmp_path, 1)
    assert name == "a" and img.shape == (1, 1) and img[0, 0] == 0.5


def test_area_resize_fractional():
    img = np.arange(9.0).reshape(3, 3)
    out = ds.area_resize(img, 2)
    # top-left output cell covers rows/cols [0, 1.5): weights 1 and 0.5
    w = np.array([1.0, 0.5, 0.0]) / 1.5
    assert abs(out[0, 0] - w @ img @ w) < 1e-12
    assert abs(out.mean() - img.mean()) < 1e-12


def test_same_resolution_is_pixel_identical(tmp_path):
    px = np.random.default_rng(0).integers(0, 256, (8, 8))
    write_pgm(tmp_path / "b.pgm", px)
    [(_, img)] = ds.ingest(tmp_path, 8)
    assert np.array_equal(img, px / 255.0)


def test_color_uses_rec601(tmp_path):
    Image.fromarray(np.full((4, 4, 3), [255, 0, 0], dtype=np.uint8), mode="RGB").save(tmp_path / "red.png")
    [(_, img)] = ds.ingest(tmp_path, 4)
    np.testing.assert_allclose(img, 0.299)


def test_selection_seeded(tmp_path):
    write_corpus(tmp_path, 12, seed=1)
    a = [n for n, _ in ds.ingest(tmp_path, 8, seed=5, limit=6)]
    b = [n for n, _ in ds.ingest(tmp_path, 8, seed=5, limit=6)]
    c = [n for n, _ in ds.ingest(tmp_path, 8, seed=6, limit=6)]
    assert a == b and len(a) == 6 and a != c


def test_unreadable_skipped_and_empty_dir(tmp_path, caplog):
    write_pgm(tmp_path / "ok.pgm", np.zeros((4, 4)))
    (tmp_path / "broken.png").write_bytes(b"not an image")
    with caplog.at_level(logging.WARNING):
        out = ds.ingest(tmp_path, 4)
    assert [n for n, _ in out] == ["ok"]
    assert "broken" in caplog.text
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(DataError):
        ds.ingest(empty, 4)
    with pytest.raises(DataError):
        ds.ingest(tmp_path / "missing", 4)


def test_generate_pairs_matches_manual_pipeline():
    rng = np.random.default_rng(1)
    objects = [("x", rng.random((6, 6))), ("y", rng.random((6, 6)))]
    pairs = ds.generate_pairs(objects, pattern_seed=13, n=40)
    assert [p.id for p in pairs] == ["x", "y"]
    pats = generate_patterns(13, 40, 6, 6)
    recs = measure_sequence(objects[1][1], pats)
    expected, _ = normalize_unit(differential_cgi(pats, recs, 40))
    assert np.array_equal(pairs[1].noisy, expected)
    assert np.array_equal(pairs[1].clean, objects[1][1])
    for p in pairs:
        assert p.noisy.min() >= 0 and p.noisy.max() <= 1


def test_constant_object_pair_is_flagged():
    pairs = ds.generate_pairs([np.full((5, 5), 0.3), np.random.default_rng(0).random((5, 5))], 1, 20)
    assert len(pairs) == 2
    assert pairs[0].degenerate and np.all(pairs[0].noisy == 0.5)
    assert not pairs[1].degenerate


def test_pairs_thread_independent():
    objects = [np.random.default_rng(k).random((8, 8)) for k in range(5)]
    noise = NoiseModel("additive-gaussian", 0.05, 2)
    a = ds.generate_pairs(objects, 3, 30, noise, threads=1)
    b = ds.generate_pairs(objects, 3, 30, noise, threads=4)
    assert all(np.array_equal(p.noisy, q.noisy) for p, q in zip(a, b))


def test_split_properties():
    items = list(range(20))
    train, val, test = ds.split(items, (1, 0, 0), seed=1)
    assert sorted(train) == items and val == [] and test == []
    a = ds.split(items, (0.6, 0.2, 0.2), seed=3)
    b = ds.split(items, (0.6, 0.2, 0.2), seed=3)
    assert a == b
    assert [len(x) for x in a] == [12, 4, 4]
    sets = [set(x) for x in a]
    assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])
    assert ds.split_counts(220, (10 / 11, 0, 1 / 11)) == (200, 0, 20)


def test_split_partial_and_zero_warning(caplog):
    with caplog.at_level(logging.WARNING):
        train, val, test = ds.split(list(range(5)), (0.5, 0.05, 0.1), seed=0)
    assert len(val) == 0 and "validation" in caplog.text
    assert len(train) + len(val) + len(test) <= 5
    with pytest.raises(Exception):
        ds.split(list(range(5)), (0.8, 0.8, 0.0))


@pytest.fixture
def small_cache(tmp_path):
    corpus = tmp_path / "corpus"
    write_corpus(corpus, 12, seed=2)
    data = ds.build_dataset(corpus, resolution=8, n_patterns=30, limit=10, ratios=(0.6, 0.2, 0.2))
    cache = tmp_path / "cache"
    ds.persist(cache, data)
    return corpus, cache, data


def test_persist_load_round_trip(small_cache):
    _, cache, data = small_cache
    back = ds.load(cache)
    assert back.manifest == data.manifest
    for p, q in zip(data.pairs, back.pairs):
        assert p.id == q.id and p.noisy.tobytes() == q.noisy.tobytes() and p.clean.tobytes() == q.clean.tobytes()
    m = back.manifest
    assert (m.train_count, m.validation_count, m.test_count) == (6, 2, 2)
    ds.check_disjoint(back)
    noisy, clean = back.stacks("train")
    assert noisy.shape == (6, 8, 8)


def test_regeneration_bit_exact(small_cache, tmp_path):
    corpus, cache, data = small_cache
    m = data.manifest
    again = ds.build_dataset(corpus, m.resolution, m.n_patterns, m.pattern_seed, m.selection_seed, m.split_seed,
                             limit=10, ratios=(0.6, 0.2, 0.2))
    ds.persist(tmp_path / "again", again)
    assert (tmp_path / "again" / "pairs.gftn").read_bytes() == (cache / "pairs.gftn").read_bytes()
    assert (tmp_path / "again" / "manifest.json").read_text() == (cache / "manifest.json").read_text()


def test_truncated_cache(small_cache):
    _, cache, _ = small_cache
    raw = (cache / "pairs.gftn").read_bytes()
    (cache / "pairs.gftn").write_bytes(raw[:-17])
    with pytest.raises(LoadError):
        ds.load(cache)


def test_stale_cache(small_cache):
    _, cache, _ = small_cache
    raw = bytearray((cache / "pairs.gftn").read_bytes())
    raw[-1] ^= 0x01
    (cache / "pairs.gftn").write_bytes(bytes(raw))
    with pytest.raises(StaleCacheError):
        ds.load(cache)


def test_manifest_count_mismatch(small_cache):
    _, cache, _ = small_cache
    m = json.loads((cache / "manifest.json").read_text())
    m["image_count"] += 1
    m["train_count"] += 1
    m["ids"].append("ghost")
    (cache / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(LoadError):
        ds.load(cache)


def test_missing_cache(tmp_path):
    with pytest.raises(LoadError):
        ds.load(tmp_path)
